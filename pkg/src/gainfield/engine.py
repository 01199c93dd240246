"""Scaled projected-ascent step machinery for gain-space updates.

One update moves a transmitter's gain vector x along its utility
gradient, preconditioned by per-coordinate weights, then projects
back onto the transmitter's gain region in the weighted norm. The
weights come from curvature bounds inflated by information staleness;
with step scale below two this makes simultaneous, delayed updates
jointly ascend the utility.
"""

from __future__ import annotations

import numpy as np

from .linalg import eig_hermitian
from .region import RegionHandle, scaled_projection

__all__ = [
    "ExtractionError",
    "check_step_scale",
    "compute_scaling",
    "sgp_step",
    "extract_beamformer",
]


class ExtractionError(RuntimeError):
    """Beamformer recovery failed to stabilize within its caps."""


def check_step_scale(gamma: float, enforce: bool = True) -> float:
    """Validate the step scale: positive always, below two unless the
    stability guard is explicitly waived."""
    if not gamma > 0.0:
        raise ValueError(f"step scale must be positive, got {gamma}")
    if enforce and not gamma < 2.0:
        raise ValueError(
            f"step scale {gamma} breaks the ascent guarantee; scales of "
            "two or more require waiving the guard explicitly")
    return float(gamma)


def compute_scaling(kb: np.ndarray, stale_x: np.ndarray,
                    stale_g: np.ndarray) -> np.ndarray:
    """Per-transmitter diagonal scaling weights.

    kb[r, t, s] bounds the within-receiver second derivatives of the
    utility, symmetric in (t, s). stale_x[a, b] is the age, in update
    periods, of transmitter a's gain information when agent b uses it,
    and stale_g[a, b] the age of receiver a's gradient feedback at
    agent b; both have zero diagonals.

    Returns d with row k holding transmitter k's weights: d[k, l]
    couples coordinate l through every receiver's curvature toward k,
    inflated once per period of staleness on each information path.
    """
    kb = np.asarray(kb, dtype=np.float64)
    stale_x = np.asarray(stale_x, dtype=np.float64)
    stale_g = np.asarray(stale_g, dtype=np.float64)
    if np.any(kb < 0):
        raise ValueError("curvature bounds must be nonnegative")
    if np.any(stale_x < 0) or np.any(stale_g < 0):
        raise ValueError("staleness constants must be nonnegative")
    own = kb.sum(axis=2)                              # own[l, k]
    own_aged = np.einsum("lks,sl->lk", kb, stale_x)
    other = kb.sum(axis=1)                            # other[l, k]
    other_aged = np.einsum("lsk,ls->lk", kb, stale_g)
    d = ((1.0 + stale_g) * own + own_aged + other_aged).T + stale_x * other.T
    if np.any(d <= 0):
        raise ValueError("degenerate scaling: some weight is not positive")
    return d


def sgp_step(x: np.ndarray, grads: np.ndarray, weights: np.ndarray,
             region: RegionHandle, gamma: float,
             q0: np.ndarray | None = None, tol: float = 1e-6,
             max_iter: int = 10_000):
    """One scaled ascent-and-project update for a single transmitter.

    Moves x by gamma * grads / weights coordinatewise, then projects
    back onto the region in the weights-induced norm. All quantities
    live in the region's own coordinate units.

    @return: (x_new, q_new) from the weighted projection.
    """
    z = x + gamma * grads / weights
    return scaled_projection(z, weights, region, q0=q0, tol=tol,
                             max_iter=max_iter)


def _clamp_slab(w, channel, cap):
    """Project w onto {|channel^H w|^2 <= cap}: clamp the coefficient
    along the channel direction, preserving its phase."""
    nrm2 = float(np.vdot(channel, channel).real)
    if nrm2 <= 0.0:
        return w
    t = np.vdot(channel, w)
    mag = abs(t)
    limit = np.sqrt(max(cap, 0.0))
    if mag <= limit:
        return w
    return w + channel * ((limit / mag - 1.0) * t / nrm2)


def _project_intersection(w, channels, caps, tol=1e-13, max_sweeps=2000):
    """Dykstra's alternating projections onto the unit ball intersected
    with the per-channel gain slabs."""
    m = len(channels)
    corrections = [np.zeros_like(w) for _ in range(m + 1)]
    for _ in range(max_sweeps):
        start = w
        for i in range(m + 1):
            shifted = w + corrections[i]
            if i < m:
                w_new = _clamp_slab(shifted, channels[i], caps[i])
            else:
                nrm = float(np.linalg.norm(shifted))
                w_new = shifted / nrm if nrm > 1.0 else shifted
            corrections[i] = shifted - w_new
            w = w_new
        if float(np.linalg.norm(w - start)) <= tol:
            return w
    return w


def extract_beamformer(q: np.ndarray, vectors: np.ndarray, owner: int,
                       rank_tol: float = 1e-6, tol: float = 1e-10,
                       max_iter: int = 100_000) -> np.ndarray:
    """Recover a beamforming vector from a transmit covariance.

    Near rank-one covariances reduce to their dominant component.
    Otherwise the vector maximizing the own-receiver amplitude is
    found subject to keeping every cross link's gain at or below the
    covariance's, and unit power: a fixed-point iteration of project
    onto constraints after a step along the own channel, which halts
    once the iterate stops moving. The result is phased so the own
    channel sees a real, nonnegative amplitude.

    @raise ExtractionError: the iteration cap is hit while the
        iterate is still moving.
    """
    q = np.asarray(q, dtype=np.complex128)
    vectors = np.asarray(vectors, dtype=np.complex128)
    lam, vecs = eig_hermitian(q)
    w = np.sqrt(max(float(lam[0]), 0.0)) * vecs[:, 0]
    own = vectors[owner]
    if lam.shape[0] == 1 or lam[1] <= rank_tol:
        return _phase_align(w, own)
    cross = [vectors[l] for l in range(vectors.shape[0]) if l != owner]
    caps = [float((h.conj() @ q @ h).real) for h in cross]
    step = 0.5 / max(float(np.linalg.norm(own)), 1e-12)
    w = _project_intersection(w, cross, caps)
    for _ in range(max_iter):
        w_next = _project_intersection(w + step * own, cross, caps)
        move = float(np.linalg.norm(w_next - w))
        w = w_next
        if move <= tol:
            return _phase_align(w, own)
    raise ExtractionError(
        f"beamformer iteration still moving by {move:.3e} at the cap")


def _phase_align(w, own):
    amp = np.vdot(own, w)
    mag = abs(amp)
    if mag <= 1e-15:
        return w
    return w * (mag / amp)