"""Compiled OMP selection loop (used when numba is installed).

Same algorithm and arithmetic order as the numpy loop in ``omp``: incremental
modified Gram-Schmidt with one re-orthogonalization pass and rank-one
downdates of the squared correlation norms. Set ``AUDSIM_NO_JIT=1`` to force
the numpy loop.
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("AUDSIM_NO_JIT"):
        raise ImportError("disabled by AUDSIM_NO_JIT")
    import numba
except ImportError:  # pragma: no cover - depends on the environment
    numba = None

AVAILABLE = numba is not None


def _loop(Y, phi, phi_h, max_iters, min_corr, tie_rtol, dep_tol):
    T, M = Y.shape
    n_all = phi_h.shape[0]
    q = np.zeros((T, max_iters), np.complex128)
    r = np.zeros((max_iters, max_iters), np.complex128)
    z = np.zeros((max_iters, M), np.complex128)
    u = np.zeros((n_all, max_iters), np.complex128)
    sel = np.empty(max_iters, np.int64)
    hist = np.empty(max_iters)
    coef = np.zeros(max_iters, np.complex128)
    C0 = phi_h @ Y
    power = np.empty(n_all)
    for i in range(n_all):
        s = 0.0
        for m in range(M):
            s += C0[i, m].real ** 2 + C0[i, m].imag ** 2
        power[i] = s
    n = 0
    k = 0
    reselected = False
    degenerate = False
    for _ in range(max_iters):
        j = np.argmax(power)
        thr = power[j] * (1.0 - 2.0 * tie_rtol)
        for i in range(n_all):
            if power[i] >= thr:
                j = i
                break
        top = np.sqrt(max(power[j], 0.0))
        if top < min_corr:
            break
        dup = False
        for i in range(k):
            if sel[i] == j:
                dup = True
        if dup:
            reselected = True
            break
        w = phi[:, j].copy()
        coef[:] = 0.0
        for _p in range(2):
            for b in range(n):
                h = 0j
                for t in range(T):
                    h += np.conj(q[t, b]) * w[t]
                for t in range(T):
                    w[t] -= q[t, b] * h
                coef[b] += h
        norm = np.sqrt(np.sum(w.real ** 2 + w.imag ** 2))
        col_norm = np.sqrt(np.sum(phi[:, j].real ** 2 + phi[:, j].imag ** 2))
        hist[k] = top
        sel[k] = j
        k += 1
        if norm <= dep_tol * max(1.0, col_norm):
            degenerate = True
            continue
        bvec = w / norm
        q[:, n] = bvec
        coef[n] = norm
        r[:, k - 1] = coef
        zk = np.conj(bvec) @ Y
        uk = phi_h @ bvec
        zc = np.conj(zk)
        zz = np.sum(zk.real ** 2 + zk.imag ** 2)
        zw = np.zeros(n, np.complex128)
        for b in range(n):
            for m in range(M):
                zw[b] += z[b, m] * zc[m]
        for i in range(n_all):
            cr = 0j
            for m in range(M):
                cr += C0[i, m] * zc[m]
            for b in range(n):
                cr -= u[i, b] * zw[b]
            ui = uk[i]
            power[i] -= 2.0 * (ui.real * cr.real + ui.imag * cr.imag)
            power[i] += (ui.real ** 2 + ui.imag ** 2) * zz
        z[n] = zk
        u[:, n] = uk
        n += 1
    return sel[:k], hist[:k], q, r, z, n, reselected, degenerate


loop = numba.njit(cache=True)(_loop) if AVAILABLE else None
