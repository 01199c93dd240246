"""Power gain regions of single transmitters.

Transmitter k with outgoing channels h_1..h_K induces the set of gain
vectors x with x_l = h_l^H Q h_l as Q ranges over Hermitian PSD
matrices with trace at most one. The set is compact and convex; its
support function in direction eta is the positive part of the largest
eigenvalue of sum_l eta_l h_l h_l^H, attained by a rank-one maximizer.
This module evaluates gains, support values, weighted projections onto
the region, and the first-order stationarity gap built from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import dominant_eigpair, eig_hermitian, project_psd_trace

__all__ = [
    "ProjectionError",
    "RegionHandle",
    "power_gain",
    "support_function",
    "scaled_projection",
    "stationarity_residual",
]

# Links with squared norm at or below this keep unit scale under
# normalization (nothing meaningful to normalize by).
_EXEMPT_GAIN = 1e-12


class ProjectionError(RuntimeError):
    """Projection solver hit its iteration cap; `residual` is the last
    fixed-point residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class RegionHandle:
    """Precomputed geometry of one transmitter's gain region.

    `scale` divides each gain coordinate; unit scales give raw gains,
    while scale = per-link gains yields the unit-normalized coordinates
    used by the normalization speed-up. `exempt` lists links whose
    scale was left at one because their gain is numerically zero.
    """

    owner: int
    vectors: np.ndarray
    scale: np.ndarray
    outers: np.ndarray = field(init=False)
    gains: np.ndarray = field(init=False)
    exempt: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError(f"expected (K, N) vectors, got shape {v.shape}")
        s = np.asarray(self.scale, dtype=np.float64)
        if s.shape != (v.shape[0],) or np.any(s <= 0):
            raise ValueError("scale must be a positive vector, one per link")
        outers = v[:, :, None] * v[:, None, :].conj() / s[:, None, None]
        gains = np.einsum("li,li->l", v.conj(), v).real
        for arr in (v, s, outers, gains):
            arr.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "outers", outers)
        object.__setattr__(self, "gains", gains)
        # Row-major flattening of the rank-one matrices; gains are then
        # one matrix-vector product per query.
        flat = outers.reshape(v.shape[0], -1).copy()
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)

    @classmethod
    def from_vectors(cls, vectors, owner: int = 0) -> "RegionHandle":
        vectors = np.asarray(vectors, dtype=np.complex128)
        return cls(owner=owner, vectors=vectors,
                   scale=np.ones(vectors.shape[0]))

    @classmethod
    def from_local_csi(cls, csi) -> "RegionHandle":
        return cls.from_vectors(csi.outgoing, owner=csi.k)

    @property
    def n_links(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.vectors.shape[1]

    @property
    def peak_gains(self) -> np.ndarray:
        """Largest reachable value per coordinate (in region units)."""
        return self.gains / self.scale

    def unit_normalized(self) -> "RegionHandle":
        """Same transmitter, gains divided by their per-link maxima."""
        gains = self.gains.copy()
        exempt = tuple(int(i) for i in np.nonzero(gains <= _EXEMPT_GAIN)[0])
        scale = np.where(gains <= _EXEMPT_GAIN, 1.0, gains)
        return RegionHandle(owner=self.owner, vectors=self.vectors,
                            scale=self.scale * scale, exempt=exempt)


def _validate_member(q: np.ndarray, tol: float = 1e-8):
    dev = float(np.max(np.abs(q - q.conj().T)))
    if dev > tol:
        raise ValueError(f"covariance deviates from Hermitian by {dev:.3e}")
    tr = float(np.trace(q).real)
    if tr > 1.0 + tol:
        raise ValueError(f"covariance trace {tr:.8f} exceeds the unit cap")
    w = eig_hermitian(0.5 * (q + q.conj().T))[0]
    if w[-1] < -tol:
        raise ValueError(f"covariance has eigenvalue {w[-1]:.3e} < 0")


def power_gain(q: np.ndarray, region: RegionHandle,
               validate: bool = True) -> np.ndarray:
    """Gain vector x(Q) in region units; clips parasitic negatives."""
    q = np.asarray(q, dtype=np.complex128)
    if validate:
        _validate_member(q)
    x = (region._flat @ q.T.reshape(-1)).real
    return np.maximum(x, 0.0)


def support_function(region: RegionHandle, eta: np.ndarray):
    """Support value max over the region of eta . x, with a maximizer.

    Returns (value, q): the value is max(0, largest eigenvalue of the
    eta-weighted channel sum); q is a rank-one maximizing covariance,
    or the zero matrix when shutting off is optimal.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (region.n_links,):
        raise ValueError(f"direction has shape {eta.shape}, "
                         f"expected ({region.n_links},)")
    s = np.tensordot(eta, region.outers, axes=1)
    lam, v = dominant_eigpair(s)
    if lam <= 0.0:
        n = region.n_antennas
        return 0.0, np.zeros((n, n), dtype=np.complex128)
    return float(lam), np.outer(v, v.conj())


def scaled_projection(z: np.ndarray, weights: np.ndarray,
                      region: RegionHandle, q0: np.ndarray | None = None,
                      tol: float = 1e-6, max_iter: int = 10_000):
    """Weighted projection of z onto the gain region.

    Minimizes sum_l weights[l] * (x_l(Q) - z_l)^2 over feasible Q by a
    monotone accelerated projected-gradient loop with step 1/L, where
    L = 2 sum_l weights[l] * peak_l^2 bounds the quadratic's curvature.
    Terminates when the fixed-point residual
    ||Q - P(Q - grad/L)||_F falls at or below `tol`. Supports warm
    starts through q0.

    @return: (x, q) with x = x(q) the projected gain vector.
    @raise ProjectionError: iteration cap hit before the tolerance.
    """
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    k, n = region.n_links, region.n_antennas
    if z.shape != (k,) or w.shape != (k,):
        raise ValueError("z and weights must have one entry per link")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")

    flat = region._flat
    peak = region.peak_gains
    lip = 2.0 * float(np.sum(w * peak * peak))
    if lip <= 0.0:
        raise ValueError("degenerate region: all links have zero gain")

    # Raw affine gains, no clipping: the extrapolated point may sit
    # outside the cone and the quadratic's gradient must stay exact.
    def gains_of(qm):
        return (flat @ qm.T.reshape(-1)).real

    def value(xg):
        d = xg - z
        return float(np.sum(w * d * d))

    def grad(xg):
        # Same contraction as tensordot over the link axis, via the
        # preflattened rank-one maps; this is the hot line of the loop.
        return ((2.0 * w * (xg - z)) @ flat).reshape(n, n)

    # Gram matrix of the rank-one maps, for the polish step below.
    gram = (flat @ flat.conj().T).real

    def polish(q, xq, fq):
        # Least-norm correction toward gains exactly equal to z. Only
        # meaningful when z is reachable (interior optimum), where the
        # main loop's residual decays slowly; harmless otherwise since
        # acceptance re-checks the true residual.
        c = np.linalg.lstsq(gram, z - xq, rcond=None)[0]
        qp = project_psd_trace(q + (c @ flat).reshape(n, n), 1.0,
                               validate=False)
        xp = gains_of(qp)
        fp = value(xp)
        if fp > fq:
            return None
        pgp = project_psd_trace(qp - grad(xp) / lip, 1.0, validate=False)
        if float(np.linalg.norm(pgp - qp)) > tol:
            return None
        return xp, qp

    if q0 is None:
        q = np.zeros((n, n), dtype=np.complex128)
    else:
        q = project_psd_trace(np.asarray(q0, dtype=np.complex128), 1.0)
    xq = gains_of(q)
    fq = value(xq)
    y, xy = q, xq
    t_acc = 1.0
    res = np.inf
    next_polish = 0
    for it in range(max_iter):
        # Fixed-point residual at the current monotone iterate. The
        # iterates are Hermitian by construction, so the projection's
        # symmetry validation is skipped inside the loop.
        pg = project_psd_trace(q - grad(xq) / lip, 1.0, validate=False)
        res = float(np.linalg.norm(pg - q))
        if res <= tol:
            return np.maximum(xq, 0.0), q
        if res <= 1e3 * tol and it >= next_polish:
            done = polish(q, xq, fq)
            if done is not None:
                xp, qp = done
                return np.maximum(xp, 0.0), qp
            next_polish = it + 10
        # Accelerated candidate. A candidate that fails the monotone
        # test is refused as the iterate but still drives the momentum
        # sequence; dropping it from the extrapolation stalls badly on
        # rank-deficient boundary solutions.
        if y is q:
            cand = pg
        else:
            cand = project_psd_trace(y - grad(xy) / lip, 1.0,
                                     validate=False)
        x_cand = gains_of(cand)
        f_cand = value(x_cand)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        if f_cand <= fq:
            q_new, x_new, f_new = cand, x_cand, f_cand
        else:
            q_new, x_new, f_new = q, xq, fq
        y = (q_new + (t_acc / t_next) * (cand - q_new)
             + ((t_acc - 1.0) / t_next) * (q_new - q))
        xy = gains_of(y)
        q, xq, fq = q_new, x_new, f_new
        t_acc = t_next
    raise ProjectionError("projection did not reach tolerance", res)


def stationarity_residual(x_cols: np.ndarray, grad_cols: np.ndarray,
                          regions) -> float:
    """First-order ascent gap at a joint operating point.

    x_cols[:, k] is transmitter k's gain vector and grad_cols[:, k]
    the utility gradient along it, both expressed in each region's own
    coordinate units. The residual is the largest, over transmitters,
    of (support value in the gradient direction) minus (gradient .
    current point): nonnegative for feasible points, zero exactly at
    points satisfying the first-order optimality condition.
    """
    worst = -np.inf
    for k, region in enumerate(regions):
        eta = grad_cols[:, k]
        val, _ = support_function(region, eta)
        gap = val - float(eta @ x_cols[:, k])
        worst = max(worst, gap)
    return float(worst)
