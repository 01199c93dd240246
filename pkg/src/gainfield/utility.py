"""Proportional-fair utility over power gain matrices.

Conventions: X[r, t] is the power gain from transmitter t at receiver
r, so row r is what receiver r hears. Rates are natural-log (nats)
internally; bits appear only in reporting helpers. The log-rate sum
is only differentiable where every direct gain is positive, and the
curvature machinery additionally restricts direct gains to at least
`mu`, the floor below which bounds would blow up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "EmptyDomainError",
    "UtilityParams",
    "CurvatureBounds",
    "user_rate",
    "rates",
    "sum_log_utility",
    "pf_utility",
    "pf_utility_bits",
    "utility_gradient",
    "row_gradient",
    "hessian_receiver",
    "curvature_corner_max",
    "assemble_curvature",
    "global_curvature_bounds",
    "adaptive_curvature_row",
    "adaptive_curvature_bounds",
]

LN2 = float(np.log(2.0))


class DomainError(ValueError):
    """Power gains outside the restricted utility domain."""


class EmptyDomainError(ValueError):
    """Requested direct-gain box is empty (instance incompatible with mu)."""


@dataclass(frozen=True)
class UtilityParams:
    """Noise power and the direct-gain floor of the restricted domain."""

    sigma2: float = 1e-2
    mu: float = 0.1

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square gain matrix, got shape {x.shape}")
    if np.any(x < -1e-12):
        raise DomainError("negative power gain")
    return np.maximum(x, 0.0)


def _receiver_terms(x, sigma2):
    total = x.sum(axis=1) + sigma2
    direct = np.diagonal(x).copy()
    interf = total - direct
    return direct, interf, total


def user_rate(received: np.ndarray, k: int, sigma2: float) -> float:
    """Achievable rate (nats) of receiver k from its receive row."""
    received = np.maximum(np.asarray(received, dtype=np.float64), 0.0)
    interf = received.sum() - received[k] + sigma2
    return float(np.log1p(received[k] / interf))


def rates(x: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-user rates (nats) from the full gain matrix."""
    x = _as_matrix(x)
    direct, interf, _ = _receiver_terms(x, sigma2)
    return np.log1p(direct / interf)


def _check_floor(direct, mu):
    bad = np.nonzero(direct < mu - 1e-12)[0]
    if bad.size:
        raise DomainError(
            f"direct gain of user {bad[0]} is {direct[bad[0]]:.6g}, "
            f"below the floor {mu}"
        )


def sum_log_utility(x: np.ndarray, params: UtilityParams,
                    check_domain: bool = True) -> float:
    """Sum of log rates (nats). Rejects zero rates and, unless
    `check_domain` is off, direct gains below the floor."""
    x = _as_matrix(x)
    direct, interf, _ = _receiver_terms(x, params.sigma2)
    if check_domain:
        _check_floor(direct, params.mu)
    u = np.log1p(direct / interf)
    if np.any(u <= 0.0):
        raise DomainError("zero rate: log utility undefined")
    return float(np.sum(np.log(u)))


def pf_utility(x: np.ndarray, sigma2: float) -> float:
    """Geometric mean of the per-user rates (nats); defined for any
    nonnegative gain matrix, zero when any rate is zero."""
    u = rates(x, sigma2)
    if np.any(u <= 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(u))))


def pf_utility_bits(x: np.ndarray, sigma2: float) -> float:
    """Geometric-mean rate in bits, the headline reporting number."""
    return pf_utility(x, sigma2) / LN2


def utility_gradient(x: np.ndarray, params: UtilityParams,
                     check_domain: bool = True) -> np.ndarray:
    """Gradient of the sum-log utility; entry [r, t] differentiates by
    the gain of transmitter t at receiver r."""
    x = _as_matrix(x)
    direct, interf, total = _receiver_terms(x, params.sigma2)
    if check_domain:
        _check_floor(direct, params.mu)
    if np.any(direct <= 0.0):
        raise DomainError("zero direct gain: gradient undefined")
    u = np.log1p(direct / interf)
    cross = (1.0 / u) * (1.0 / total - 1.0 / interf)
    g = np.repeat(cross[:, None], x.shape[0], axis=1)
    np.fill_diagonal(g, 1.0 / (u * total))
    return g


def row_gradient(row: np.ndarray, own: int, sigma2: float) -> np.ndarray:
    """Partial derivatives of one receiver's log rate by its row of
    gains. row[t] is the gain of transmitter t at this receiver, own
    the receiver's own transmitter index. Agents hold only their own
    row, so this is the piece each one can evaluate locally; stacking
    all rows reproduces `utility_gradient`."""
    row = np.asarray(row, dtype=float)
    direct = row[own]
    if direct <= 0.0:
        raise DomainError("zero direct gain: gradient undefined")
    interf = sigma2 + float(row.sum()) - direct
    total = interf + direct
    u = np.log1p(direct / interf)
    g = np.full(row.shape, (1.0 / u) * (1.0 / total - 1.0 / interf))
    g[own] = 1.0 / (u * total)
    return g


def _families(direct, interf):
    """|second derivative| of one receiver's log rate, all three index
    patterns, as functions of (direct gain, interference)."""
    total = direct + interf
    gam = direct / interf
    u = np.log1p(gam)
    f1 = (1.0 / total**2) * (1.0 / u**2 + 1.0 / u)
    f2 = (1.0 / total**2) * (gam / u**2 - 1.0 / u)
    f3 = (1.0 / u) * (gam / total) ** 2 * (2.0 / gam + 1.0 - 1.0 / u)
    return f1, f2, f3


def hessian_receiver(x: np.ndarray, params: UtilityParams,
                     check_domain: bool = True) -> np.ndarray:
    """Within-receiver second derivatives of the sum-log utility.

    Returns T with T[r, t, s] = d^2 U / (dX[r, t] dX[r, s]); entries
    that pair different receivers are identically zero and omitted.
    """
    x = _as_matrix(x)
    direct, interf, _ = _receiver_terms(x, params.sigma2)
    if check_domain:
        _check_floor(direct, params.mu)
    if np.any(direct <= 0.0):
        raise DomainError("zero direct gain: Hessian undefined")
    f1, f2, f3 = _families(direct, interf)
    n = x.shape[0]
    t = np.empty((n, n, n))
    for r in range(n):
        t[r].fill(f3[r])
        t[r, r, :] = f2[r]
        t[r, :, r] = f2[r]
        t[r, r, r] = -f1[r]
    return t


@dataclass(frozen=True)
class CurvatureBounds:
    """Per-receiver bounds on |second derivatives| over a gain box.

    kb[r, t, s] bounds |d^2 U / (dX[r, t] dX[r, s])| over the box the
    bounds were built from; symmetric in (t, s).
    """

    kb: np.ndarray

    def __post_init__(self):
        self.kb.setflags(write=False)

    @property
    def n_users(self) -> int:
        return self.kb.shape[0]

    def scaled_by_gains(self, gains: np.ndarray) -> "CurvatureBounds":
        """Bounds for unit-normalized gain coordinates: entry [r, t, s]
        picks up the factor gains[t, r] * gains[s, r]."""
        gains = np.asarray(gains, dtype=np.float64)
        g_in = gains.T  # g_in[r, t]: gain of tx t at rx r
        scale = g_in[:, :, None] * g_in[:, None, :]
        return CurvatureBounds(kb=self.kb * scale)


def curvature_corner_max(direct_lo, direct_hi, interf_lo, interf_hi):
    """Family maxima over a (direct, interference) box by evaluating
    all four corners; valid because each family is monotone in each
    coordinate."""
    if direct_lo <= 0 or interf_lo <= 0:
        raise EmptyDomainError("box must have positive lower corners")
    if direct_hi < direct_lo or interf_hi < interf_lo:
        raise EmptyDomainError("empty curvature box")
    corners = [
        _families(np.array([d]), np.array([i]))
        for d in (direct_lo, direct_hi)
        for i in (interf_lo, interf_hi)
    ]
    vals = np.array(corners)[:, :, 0]
    return tuple(np.max(vals, axis=0))


def assemble_curvature(per_receiver) -> CurvatureBounds:
    """Build the full bound tensor from per-receiver (f1, f2, f3)
    scalars: f1 bounds the own-gain second derivative, f2 the mixed
    own/cross entries, f3 the cross/cross entries."""
    n = len(per_receiver)
    kb = np.empty((n, n, n))
    for r, (f1, f2, f3) in enumerate(per_receiver):
        kb[r].fill(f3)
        kb[r, r, :] = f2
        kb[r, :, r] = f2
        kb[r, r, r] = f1
    return CurvatureBounds(kb=kb)


def global_curvature_bounds(gains: np.ndarray,
                            params: UtilityParams) -> CurvatureBounds:
    """Worst-case curvature over the whole feasible gain range.

    Receiver r's direct gain ranges over [mu, gains[r, r]] and its
    interference over [sigma2, sigma2 + sum of incoming cross gains].

    @raise EmptyDomainError: some direct link cannot reach the floor.
    """
    gains = np.asarray(gains, dtype=np.float64)
    n = gains.shape[0]
    per = []
    for r in range(n):
        g_rr = gains[r, r]
        if g_rr < params.mu:
            raise EmptyDomainError(
                f"user {r}: peak direct gain {g_rr:.6g} below floor {params.mu}"
            )
        cross = gains[:, r].sum() - g_rr
        per.append(
            curvature_corner_max(
                params.mu, g_rr, params.sigma2, params.sigma2 + cross
            )
        )
    return assemble_curvature(per)


def adaptive_curvature_row(env_lo_row: np.ndarray, env_hi_row: np.ndarray,
                           own: int, params: UtilityParams):
    """One receiver's (f1, f2, f3) bounds from its own row envelope.

    env_lo_row/env_hi_row hold the smallest/largest gain seen from
    each transmitter at this receiver; `own` indexes the direct link.
    The direct-gain box is clipped to the floor.

    @raise ValueError: inverted envelope (lo > hi beyond 1e-12).
    @raise EmptyDomainError: the direct envelope sits below mu.
    """
    env_lo_row = np.asarray(env_lo_row, dtype=np.float64)
    env_hi_row = np.asarray(env_hi_row, dtype=np.float64)
    if np.any(env_lo_row > env_hi_row + 1e-12):
        raise ValueError("inverted envelope: lo exceeds hi")
    if env_hi_row[own] < params.mu:
        raise EmptyDomainError(
            f"user {own}: direct envelope below the floor {params.mu}"
        )
    d_lo = max(env_lo_row[own], params.mu)
    d_hi = max(env_hi_row[own], d_lo)
    # sum the cross terms directly (not full sum minus own) so rounding
    # cannot invert the corner ordering when the own entry dominates
    mask = np.ones(env_lo_row.shape, dtype=bool)
    mask[own] = False
    cross_lo = float(env_lo_row[mask].sum())
    cross_hi = max(float(env_hi_row[mask].sum()), cross_lo)
    return curvature_corner_max(
        d_lo, d_hi, params.sigma2 + cross_lo, params.sigma2 + cross_hi
    )


def adaptive_curvature_bounds(env_lo: np.ndarray, env_hi: np.ndarray,
                              params: UtilityParams) -> CurvatureBounds:
    """Curvature over the box spanned by observed gain envelopes.

    env_lo/env_hi are (K, K) matrices in receiver-row convention:
    entry [r, t] is the smallest/largest gain from transmitter t seen
    at receiver r. The direct-gain box is clipped to the floor.

    @raise ValueError: inverted envelopes (lo > hi beyond 1e-12).
    @raise EmptyDomainError: a direct envelope sits entirely below mu.
    """
    env_lo = np.asarray(env_lo, dtype=np.float64)
    env_hi = np.asarray(env_hi, dtype=np.float64)
    per = [
        adaptive_curvature_row(env_lo[r], env_hi[r], r, params)
        for r in range(env_lo.shape[0])
    ]
    return assemble_curvature(per)
