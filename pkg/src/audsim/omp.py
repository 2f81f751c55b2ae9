"""Orthogonal matching pursuit for a multiple-measurement observation Y = Phi X + V.

Correlations use the conjugate transpose, ``||phi_q^H R||_2`` over the M
antennas; with complex pilots and channels the plain transpose does not
measure alignment.

The selection path does not depend on the stopping threshold: a run stopped
at ``epsilon`` is the prefix of the unstopped run up to the first iteration
whose maximum correlation falls below ``epsilon``. ``omp_path`` plus
``truncate`` exploits this to evaluate many thresholds from one run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import omp_kernel

# module switch, mainly for tests comparing the compiled and numpy loops
USE_JIT = True

# below this the orthogonalized candidate column is treated as linearly dependent
_DEPENDENT_TOL = 1e-10
# correlations this close to the maximum (relative) count as tied; QPSK pilots
# produce exact ties that rounding would otherwise break arbitrarily
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class KnownK:
    """Stop after ``k`` iterations. ``k=None`` lets the fusion layer use the true count."""
    k: int | None = None


@dataclass(frozen=True)
class ResidualThreshold:
    """Continue while the largest correlation is at least ``epsilon``."""
    epsilon: float


@dataclass(eq=False)
class OmpResult:
    selected: np.ndarray                 # local column indices, selection order
    estimate: np.ndarray                 # (k, M), rows aligned with ``selected``
    residual_norm_history: np.ndarray    # max correlation before each selection
    residual: np.ndarray                 # (T_p, M)
    reselected: bool = False             # stopped because the argmax was already selected
    degenerate: bool = False             # a selected column was linearly dependent
    # thin QR of the selected columns and Q^H Y, kept for cheap prefix estimates
    _q: np.ndarray | None = None
    _r: np.ndarray | None = None
    _qhy: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.selected)


def correlations(residual: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``||phi_q^H R||_2`` for every column q of ``phi``."""
    c = phi.conj().T @ np.atleast_2d(residual.T).T
    return np.sqrt(np.sum(c.real**2 + c.imag**2, axis=1))


def select_user(corr: np.ndarray) -> int:
    """Index of the largest correlation, lowest index on ties."""
    corr = np.asarray(corr)
    j = int(np.argmax(corr))
    return int(np.argmax(corr >= corr[j] * (1.0 - _TIE_RTOL)))


def least_squares_estimate(Y: np.ndarray, phi_sel: np.ndarray,
                           return_rank: bool = False):
    """Minimize ``||Y - phi_sel X||`` (minimum-norm solution if rank deficient).

    Uses the SVD-based LAPACK driver, never the normal equations. With
    ``return_rank`` also returns a flag that is True for rank-deficient input.
    """
    Y = np.asarray(Y)
    one_d = Y.ndim == 1
    if one_d:
        Y = Y[:, None]
    k = phi_sel.shape[1]
    if k == 0:
        X = np.zeros((0, Y.shape[1]), dtype=complex)
        rank = 0
    else:
        X, _, rank, _ = np.linalg.lstsq(phi_sel, Y, rcond=None)
    if one_d:
        X = X[:, 0]
    if return_rank:
        return X, rank < k
    return X


def omp_path(Y: np.ndarray, phi: np.ndarray, max_iters: int | None = None,
             min_corr: float = 0.0, phi_h: np.ndarray | None = None,
             with_estimate: bool = True) -> OmpResult:
    """Run OMP until ``max_iters`` selections, a maximum correlation below
    ``min_corr``, or a repeated selection.

    The least-squares fit is kept as an incrementally grown QR factorization
    (modified Gram-Schmidt with one re-orthogonalization pass), so each
    iteration costs two matrix-vector products with ``phi^H`` instead of a
    full correlation recomputation. ``with_estimate=False`` skips
    the final triangular solve when only the selection path is needed.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, M = Y.shape
    if phi_h is None:
        phi_h = phi.conj().T
    if max_iters is None:
        max_iters = T
    max_iters = min(max_iters, T, phi.shape[1])

    if omp_kernel.AVAILABLE and USE_JIT:
        sel, hist, q, r, z, n, reselected, degenerate = omp_kernel.loop(
            np.ascontiguousarray(Y), np.ascontiguousarray(phi, dtype=complex),
            np.ascontiguousarray(phi_h, dtype=complex), max_iters, float(min_corr),
            _TIE_RTOL, _DEPENDENT_TOL)
    else:
        sel, hist, q, r, z, n, reselected, degenerate = _loop(
            Y, phi, phi_h, max_iters, min_corr)
    sel = sel.astype(np.intp)
    R = Y - q[:, :n] @ z[:n]
    if degenerate:
        est = least_squares_estimate(Y, phi[:, sel])
        R = Y - phi[:, sel] @ est
        return OmpResult(sel, est, hist, R, reselected, True)
    k = len(sel)
    qf, rf, qy = q[:, :k], r[:k, :k], z[:k]
    if k and with_estimate:
        est = solve_triangular(rf, qy, check_finite=False)
    else:
        est = np.zeros((0, M), dtype=complex)
    return OmpResult(sel, est, hist, R, reselected, False, qf, rf, qy)


def _loop(Y, phi, phi_h, max_iters, min_corr):
    """numpy version of the selection loop; see ``omp_kernel`` for the compiled one."""
    T, M = Y.shape
    q = np.empty((T, max_iters), dtype=complex)
    r = np.zeros((max_iters, max_iters), dtype=complex)
    z = np.empty((max_iters, M), dtype=complex)        # Q^H Y
    u = np.empty((phi_h.shape[0], max_iters), dtype=complex)  # phi^H Q
    selected: list[int] = []
    history: list[float] = []
    reselected = degenerate = False
    n = 0
    # phi^H R_k = C0 - U Z; only the squared row norms are tracked, by
    # rank-one downdates (b_k is orthogonal to earlier columns, so b_k^H R = b_k^H Y)
    C0 = phi_h @ Y
    power = np.einsum("qm,qm->q", C0.real, C0.real) + np.einsum("qm,qm->q", C0.imag, C0.imag)
    for _ in range(max_iters):
        j = int(np.argmax(power))
        j = int(np.argmax(power >= power[j] * (1.0 - 2.0 * _TIE_RTOL)))
        top = float(np.sqrt(max(power[j], 0.0)))
        if top < min_corr:
            break
        if j in selected:
            reselected = True
            break
        col = phi[:, j]
        w = col.copy()
        coef = np.zeros(max_iters, dtype=complex)
        if n:
            basis = q[:, :n]
            for _ in range(2):
                h = basis.conj().T @ w
                w -= basis @ h
                coef[:n] += h
        norm = np.sqrt(np.vdot(w, w).real)
        history.append(top)
        selected.append(j)
        if norm <= _DEPENDENT_TOL * max(1.0, np.sqrt(np.vdot(col, col).real)):
            degenerate = True
            continue
        b = w / norm
        q[:, n] = b
        coef[n] = norm
        r[:, len(selected) - 1] = coef
        zk = b.conj() @ Y
        uk = phi_h @ b
        zc = zk.conj()
        cross = C0 @ zc
        if n:
            cross -= u[:, :n] @ (z[:n] @ zc)
        power -= 2.0 * (uk.conj() * cross).real
        power += (uk.real**2 + uk.imag**2) * np.vdot(zk, zk).real
        z[n] = zk
        u[:, n] = uk
        n += 1
    return (np.asarray(selected, dtype=np.intp), np.asarray(history, dtype=float), q, r, z, n,
            reselected, degenerate)


def run_omp(Y: np.ndarray, phi: np.ndarray, stopping, max_iters: int | None = None,
            phi_h: np.ndarray | None = None) -> OmpResult:
    """OMP with either stopping rule.

    ``KnownK(k)`` runs exactly ``min(k, max_iters)`` iterations (fewer only if
    a column would be selected twice). ``ResidualThreshold(eps)`` iterates
    while the largest correlation is at least ``eps``. ``max_iters`` defaults
    to the pilot length.
    """
    T = np.shape(Y)[0]
    cap = T if max_iters is None else min(max_iters, T)
    if isinstance(stopping, KnownK):
        if stopping.k is None:
            raise ValueError("KnownK needs an explicit k at the solver level")
        return omp_path(Y, phi, min(stopping.k, cap), 0.0, phi_h)
    if isinstance(stopping, ResidualThreshold):
        return omp_path(Y, phi, cap, stopping.epsilon, phi_h)
    raise TypeError(f"unknown stopping rule {stopping!r}")


def stop_index(history: np.ndarray, epsilon: float) -> int:
    """Number of iterations a run with threshold ``epsilon`` performs along this path."""
    below = np.flatnonzero(np.asarray(history) < epsilon)
    return int(below[0]) if below.size else len(history)


def prefix_thresholds(history: np.ndarray) -> np.ndarray:
    """Largest threshold that still keeps each path position: running minimum of the history."""
    return np.minimum.accumulate(np.asarray(history, dtype=float)) if len(history) else \
        np.empty(0)


def truncate(result: OmpResult, k: int, Y: np.ndarray | None = None,
             phi: np.ndarray | None = None) -> OmpResult:
    """The result a run stopped after ``k`` iterations of the same path would give.

    The residual is only recomputed when ``Y`` and ``phi`` are supplied.
    """
    k = min(k, result.iterations)
    if k == result.iterations:
        return result
    sel = result.selected[:k]
    if result._r is not None:
        est = solve_triangular(result._r[:k, :k], result._qhy[:k], check_finite=False) if k else \
            np.zeros((0, result.estimate.shape[1]), dtype=complex)
    else:
        est = least_squares_estimate(Y, phi[:, sel])
    R = result.residual
    if Y is not None and phi is not None:
        Y2 = Y if Y.ndim == 2 else Y[:, None]
        R = Y2 - phi[:, sel] @ est
    return OmpResult(sel, est, result.residual_norm_history[:k], R, False,
                     result.degenerate, None if result._q is None else result._q[:, :k],
                     None if result._r is None else result._r[:k, :k],
                     None if result._qhy is None else result._qhy[:k])
