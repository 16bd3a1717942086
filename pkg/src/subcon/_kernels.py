"""Hot numeric kernels: value-diffusion sweeps and personalized PageRank.

Each kernel has a numba-jitted variant and a pure-numpy fallback. The
backend is chosen once at import time from the SUBCON_BACKEND environment
variable ("numba" or "numpy"; default is numba when importable).
"""
from __future__ import annotations

import os

import numpy as np


def _pick_backend() -> str:
    choice = os.environ.get("SUBCON_BACKEND", "").lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(
            f"SUBCON_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return BACKEND


# ---------------------------------------------------------------------------
# pure-numpy implementations

def nad_sweep_numpy(indptr, indices, u0, eta, iterations):
    m = indptr.shape[0] - 1
    deg = np.diff(indptr)
    rows = np.repeat(np.arange(m), deg)
    live = deg > 0
    inv_deg = np.zeros(m)
    inv_deg[live] = 1.0 / deg[live]
    u = u0.astype(np.float64).copy()
    for _ in range(iterations):
        agg = np.bincount(rows, weights=u[indices], minlength=m)
        # zero-degree nodes keep their value
        u[live] = (1.0 - eta) * u[live] + eta * agg[live] * inv_deg[live]
    return u


def ppr_power_numpy(indptr, indices, seed_node, phi, tol, max_iter):
    m = indptr.shape[0] - 1
    deg = np.diff(indptr).astype(np.float64)
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
    rows = np.repeat(np.arange(m), np.diff(indptr))
    s = np.zeros(m)
    s[seed_node] = 1.0
    resid = np.inf
    for it in range(max_iter):
        y = s * inv_deg
        nxt = np.bincount(rows, weights=y[indices], minlength=m)
        nxt *= 1.0 - phi
        nxt[seed_node] += phi
        resid = np.abs(nxt - s).sum()
        s = nxt
        if resid < tol:
            return s, it + 1, resid
    return s, max_iter, resid


# ---------------------------------------------------------------------------
# numba implementations

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _nad_sweep_nb(indptr, indices, u0, eta, iterations):
        m = indptr.shape[0] - 1
        u = u0.copy()
        new = np.empty(m)
        for _ in range(iterations):
            for i in range(m):
                lo, hi = indptr[i], indptr[i + 1]
                if hi == lo:
                    new[i] = u[i]
                    continue
                acc = 0.0
                for k in range(lo, hi):
                    acc += u[indices[k]]
                new[i] = (1.0 - eta) * u[i] + eta * acc / (hi - lo)
            u, new = new, u
        return u.copy()

    @njit(cache=True)
    def _ppr_power_nb(indptr, indices, seed_node, phi, tol, max_iter):
        m = indptr.shape[0] - 1
        s = np.zeros(m)
        s[seed_node] = 1.0
        y = np.empty(m)
        nxt = np.empty(m)
        resid = np.inf
        iters = 0
        for it in range(max_iter):
            for i in range(m):
                d = indptr[i + 1] - indptr[i]
                y[i] = s[i] / d if d > 0 else 0.0
            for i in range(m):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc += y[indices[k]]
                nxt[i] = (1.0 - phi) * acc
            nxt[seed_node] += phi
            resid = 0.0
            for i in range(m):
                resid += abs(nxt[i] - s[i])
                s[i] = nxt[i]
            iters = it + 1
            if resid < tol:
                break
        return s, iters, resid

    def nad_sweep(indptr, indices, u0, eta, iterations):
        return _nad_sweep_nb(indptr, indices,
                             np.ascontiguousarray(u0, dtype=np.float64),
                             float(eta), int(iterations))

    def ppr_power(indptr, indices, seed_node, phi, tol, max_iter):
        return _ppr_power_nb(indptr, indices, int(seed_node), float(phi),
                             float(tol), int(max_iter))
else:
    nad_sweep = nad_sweep_numpy
    ppr_power = ppr_power_numpy
