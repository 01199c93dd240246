"""Hermitian eigendecomposition and spectral projections.

Everything here is self-contained (no LAPACK): eigendecompositions use
cyclic complex Jacobi rotations with a deterministic sweep order, so
results are bit-reproducible for a given platform and input. Matrices
are small (the intended workloads have N <= 8 antennas), where Jacobi
is both adequate and simple to audit.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "NonHermitianError",
    "eig_hermitian",
    "dominant_eigpair",
    "capped_simplex_projection",
    "project_psd_trace",
]

# Off-diagonal mass below _SWEEP_RTOL * ||A||_F counts as diagonal.
_SWEEP_RTOL = 1e-14
_MAX_SWEEPS = 60


class NonHermitianError(ValueError):
    """Input matrix is not Hermitian within tolerance."""


def _check_hermitian(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    dev = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if dev > 1e-12 * scale:
        raise NonHermitianError(
            f"matrix deviates from Hermitian symmetry by {dev:.3e}"
        )
    return a


def _normalize_phases(v: np.ndarray) -> np.ndarray:
    # Rotate each column so its largest-magnitude entry is real positive.
    for j in range(v.shape[1]):
        col = v[:, j]
        i = int(np.argmax(np.abs(col)))
        piv = col[i]
        if abs(piv) > 0.0:
            col *= piv.conjugate() / abs(piv)
    return v


def _sorted_pairs(w: np.ndarray, v: np.ndarray):
    v = _normalize_phases(v)
    order = sorted(
        range(w.shape[0]),
        key=lambda i: (-w[i], tuple(v[:, i].real.tolist())),
    )
    return w[order].copy(), np.ascontiguousarray(v[:, order])


def _eig2(a00: float, a11: float, a01: complex):
    """Eigen-decompose [[a00, a01], [conj(a01), a11]] exactly.

    One Jacobi rotation diagonalizes a 2x2 Hermitian matrix; this is
    that rotation in closed form. Returns (w, v) with w descending.
    """
    r = abs(a01)
    if r == 0.0:
        w = np.array([a00, a11])
        v = np.eye(2, dtype=np.complex128)
        if a11 > a00:
            w = w[::-1].copy()
            v = v[:, ::-1].copy()
        return w, v
    phase = a01 / r
    two_theta = math.atan2(2.0 * r, a00 - a11)
    c = math.cos(0.5 * two_theta)
    s = math.sin(0.5 * two_theta)
    half_gap = 0.5 * math.hypot(a00 - a11, 2.0 * r)
    mid = 0.5 * (a00 + a11)
    w = np.array([mid + half_gap, mid - half_gap])
    v = np.array(
        [[c, -s * phase], [s * phase.conjugate(), c]], dtype=np.complex128
    )
    return _sorted_pairs(w, v)


def eig_hermitian(a: np.ndarray):
    """Full eigendecomposition of a Hermitian matrix.

    Cyclic Jacobi sweeps in row-major pair order until the off-diagonal
    Frobenius mass falls below 1e-14 of the matrix norm. Eigenvalues are
    returned in descending order with eigenvectors as matching columns;
    ties are broken by lexicographic comparison of eigenvector real
    parts and each eigenvector's largest entry is rotated real-positive,
    which makes the output deterministic.

    @param a: square Hermitian ndarray (complex or real).
    @return: (eigenvalues, eigenvectors) with a == V diag(w) V^H.
    @raise NonHermitianError: symmetry violated beyond 1e-12.
    """
    a = _check_hermitian(a)
    n = a.shape[0]
    if n == 1:
        return np.array([a[0, 0].real]), np.ones((1, 1), dtype=np.complex128)
    if n == 2:
        return _eig2(a[0, 0].real, a[1, 1].real, complex(a[0, 1]))

    work = a.copy()
    v = np.eye(n, dtype=np.complex128)
    norm = float(np.linalg.norm(work))
    if norm == 0.0:
        return np.zeros(n), v
    tol = _SWEEP_RTOL * norm
    for _ in range(_MAX_SWEEPS):
        # Off-diagonal mass measured directly: forming it by subtracting
        # the diagonal mass from the total cancels catastrophically.
        mags = np.abs(work)
        np.fill_diagonal(mags, 0.0)
        if float(np.linalg.norm(mags)) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                r = abs(apq)
                if r <= tol / (n * n):
                    continue
                phase = apq / r
                two_theta = math.atan2(
                    2.0 * r, work[p, p].real - work[q, q].real
                )
                c = math.cos(0.5 * two_theta)
                s = math.sin(0.5 * two_theta)
                # J is identity except in the (p, q) plane.
                jp = np.array([c, s * phase.conjugate()], dtype=np.complex128)
                jq = np.array([-s * phase, c], dtype=np.complex128)
                cols = work[:, [p, q]].copy()
                work[:, p] = cols @ jp
                work[:, q] = cols @ jq
                rows = work[[p, q], :].copy()
                work[p, :] = jp.conjugate() @ rows
                work[q, :] = jq.conjugate() @ rows
                work[p, q] = 0.0
                work[q, p] = 0.0
                vcols = v[:, [p, q]].copy()
                v[:, p] = vcols @ jp
                v[:, q] = vcols @ jq
    w = np.diag(work).real.copy()
    return _sorted_pairs(w, v)


def dominant_eigpair(a: np.ndarray):
    """Largest eigenvalue and a unit eigenvector of a Hermitian matrix."""
    w, v = eig_hermitian(a)
    return float(w[0]), v[:, 0].copy()


def capped_simplex_projection(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection of a real vector onto {w >= 0, sum(w) <= cap}.

    Clips negatives; when the clipped mass still exceeds the cap, applies
    the sort-based simplex threshold so that sum(max(v - tau, 0)) == cap.
    """
    if cap <= 0.0:
        raise ValueError(f"cap must be positive, got {cap}")
    v = np.asarray(v, dtype=np.float64)
    clipped = np.maximum(v, 0.0)
    total = float(clipped.sum())
    if total <= cap:
        return clipped
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - cap
    idx = np.arange(1, u.shape[0] + 1)
    cond = u - css / idx > 0.0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def project_psd_trace(a: np.ndarray, trace_cap: float = 1.0,
                      validate: bool = True) -> np.ndarray:
    """Frobenius-nearest PSD matrix with trace at most `trace_cap`.

    Diagonalizes, projects the eigenvalue vector onto the capped simplex
    {w >= 0, sum(w) <= trace_cap}, and reconstructs. The result is exact
    because the constraint set is unitarily invariant. `validate=False`
    skips the symmetry check for callers whose input is Hermitian by
    construction (the entries are symmetrized either way).

    @raise NonHermitianError: input not Hermitian within 1e-12.
    @raise ValueError: trace_cap <= 0.
    """
    if trace_cap <= 0.0:
        raise ValueError(f"trace_cap must be positive, got {trace_cap}")
    if validate:
        a = _check_hermitian(a)
    else:
        a = np.asarray(a, dtype=np.complex128)
    if a.shape[0] == 2:
        # Scalar fast path; this sits inside iterative projection loops.
        a00 = a[0, 0].real
        a11 = a[1, 1].real
        a01 = complex(0.5 * (a[0, 1] + a[1, 0].conjugate()))
        r = abs(a01)
        half_gap = 0.5 * math.hypot(a00 - a11, 2.0 * r)
        mid = 0.5 * (a00 + a11)
        w_hi = mid + half_gap
        w_lo = mid - half_gap
        if w_lo >= 0.0 and w_hi + w_lo <= trace_cap:
            return np.array([[a00, a01], [a01.conjugate(), a11]])
        # Project (w_hi, w_lo) onto {w >= 0, sum <= cap}: clip, then shift.
        p_hi = max(w_hi, 0.0)
        p_lo = max(w_lo, 0.0)
        if p_hi + p_lo > trace_cap:
            tau_pair = 0.5 * (w_hi + w_lo - trace_cap)
            p_hi = max(w_hi - tau_pair, 0.0)
            p_lo = max(w_lo - tau_pair, 0.0)
            if p_lo == 0.0:
                p_hi = min(w_hi, trace_cap)
        if p_hi == 0.0 and p_lo == 0.0:
            return np.zeros((2, 2), dtype=np.complex128)
        if r == 0.0:
            return np.array([[p_hi if a00 >= a11 else p_lo, 0.0],
                             [0.0, p_lo if a00 >= a11 else p_hi]],
                            dtype=np.complex128)
        phase = a01 / r
        two_theta = math.atan2(2.0 * r, a00 - a11)
        c = math.cos(0.5 * two_theta)
        s = math.sin(0.5 * two_theta)
        # Columns (c, s conj(phase)) and (-s phase, c) rebuild the matrix.
        b00 = p_hi * c * c + p_lo * s * s
        b11 = p_hi * s * s + p_lo * c * c
        b01 = (p_hi - p_lo) * c * s * phase
        return np.array([[b00, b01], [b01.conjugate(), b11]])
    w, v = eig_hermitian(a)
    w_proj = capped_simplex_projection(w, trace_cap)
    b = (v * w_proj) @ v.conj().T
    return 0.5 * (b + b.conj().T)
