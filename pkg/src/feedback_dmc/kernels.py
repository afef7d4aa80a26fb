"""Array kernels with a compiled (numba) path and a plain numpy path.

Set FEEDBACK_DMC_NUMBA=0 to force the numpy implementations.  Both paths
are always importable as ``*_loops`` (compiled when numba is on) and
``*_numpy`` so tests and the benchmark can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("FEEDBACK_DMC_NUMBA", "1") != "0"
TIE_TOL = 1e-12


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


# ----------------------------------------------------------------------
# sum_i w_i * base_i^(-rho) for many rho

def _mgf_sum_loops(log_base, weight, rhos):
    out = np.zeros(rhos.shape[0])
    for r in range(rhos.shape[0]):
        rho = rhos[r]
        acc = 0.0
        for i in range(log_base.shape[0]):
            acc += weight[i] * np.exp(-rho * log_base[i])
        out[r] = acc
    return out


def mgf_sum_numpy(log_base, weight, rhos):
    with np.errstate(over="ignore"):
        return np.exp(-np.outer(rhos, log_base)) @ weight


mgf_sum_loops = _jit(_mgf_sum_loops)


# ----------------------------------------------------------------------
# naive pseudo-posterior update over explicit message arrays

def _naive_rescale_loops(s, t, q, factors):
    m_count = s.shape[0]
    k = q.shape[0]
    edges = np.empty(k + 2)
    edges[0] = 0.0
    edges[1:k + 1] = q
    edges[k + 1] = 1.0
    out = np.empty(m_count)
    for m in range(m_count):
        lo = t[m]
        hi = min(lo + s[m], 1.0)
        j = np.searchsorted(q, lo, side="right")
        if hi <= edges[j + 1]:
            out[m] = s[m] * factors[j]
        else:
            acc = (edges[j + 1] - lo) * factors[j]
            j += 1
            while j <= k and hi > edges[j + 1]:
                acc += (edges[j + 1] - edges[j]) * factors[j]
                j += 1
            acc += (hi - edges[j]) * factors[j]
            out[m] = acc
    return out


def naive_rescale_numpy(s, t, q, factors):
    k = q.shape[0]
    edges = np.concatenate(([0.0], q, [1.0]))
    j = np.searchsorted(q, t, side="right")
    out = s * factors[j]
    hi = np.minimum(t + s, 1.0)
    for m in np.flatnonzero(hi > edges[j + 1]):
        lo, h, jj = t[m], hi[m], j[m]
        acc = (edges[jj + 1] - lo) * factors[jj]
        jj += 1
        while jj <= k and h > edges[jj + 1]:
            acc += (edges[jj + 1] - edges[jj]) * factors[jj]
            jj += 1
        acc += (h - edges[jj]) * factors[jj]
        out[m] = acc
    return out


naive_rescale_loops = _jit(_naive_rescale_loops)


# ----------------------------------------------------------------------
# Monte Carlo single greedy step: S_1/s for random shifts and outputs

def _step_ratios_loops(s, shifts, out_uniforms, bounds, trans, p_y):
    n = shifts.shape[0]
    nx, ny = trans.shape
    cum = np.empty((nx, ny))
    for x in range(nx):
        acc = 0.0
        for y in range(ny):
            acc += trans[x, y]
            cum[x, y] = acc
    ell = np.empty(nx)
    mix = np.empty(ny)
    out = np.empty(n)
    for i in range(n):
        a = shifts[i]
        for x in range(nx):
            lo = bounds[x]
            hi = bounds[x + 1]
            e = max(0.0, min(a + s, hi) - max(a, lo))
            e += max(0.0, min(a + s - 1.0, hi) - max(a - 1.0, lo))
            ell[x] = e
        for y in range(ny):
            acc = 0.0
            for x in range(nx):
                acc += ell[x] / s * trans[x, y]
            mix[y] = acc
        best = -np.inf
        gains = np.full(nx, -np.inf)
        for x in range(nx):
            if ell[x] <= 0.0:
                continue
            g = 0.0
            for y in range(ny):
                if trans[x, y] > 0.0:
                    if mix[y] <= 0.0:
                        g = -np.inf
                        break
                    g += trans[x, y] * np.log(mix[y] / p_y[y])
            gains[x] = g
            if g > best:
                best = g
        xs = 0
        for x in range(nx):
            if ell[x] > 0.0 and (gains[x] >= best - TIE_TOL or best == -np.inf):
                xs = x
                break
        v = out_uniforms[i]
        yy = ny - 1
        for y in range(ny):
            if v < cum[xs, y]:
                yy = y
                break
        while trans[xs, yy] <= 0.0:
            yy -= 1
        out[i] = mix[yy] / p_y[yy]
    return out


def step_ratios_numpy(s, shifts, out_uniforms, bounds, trans, p_y):
    a = shifts[:, None]
    lo, hi = bounds[None, :-1], bounds[None, 1:]
    ell = (np.maximum(0.0, np.minimum(a + s, hi) - np.maximum(a, lo))
           + np.maximum(0.0, np.minimum(a + s - 1.0, hi) - np.maximum(a - 1.0, lo)))
    mix = (ell / s) @ trans
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(mix / p_y)
        terms = np.where(trans[None, :, :] > 0, trans[None, :, :] * log_ratio[:, None, :], 0.0)
    gains = np.where(ell > 0, terms.sum(axis=2), -np.inf)
    best = gains.max(axis=1, keepdims=True)
    ok = (ell > 0) & ((gains >= best - TIE_TOL) | (best == -np.inf))
    xs = np.argmax(ok, axis=1)
    cum = np.cumsum(trans, axis=1)
    ys = (out_uniforms[:, None] >= cum[xs]).sum(axis=1)
    ys = np.minimum(ys, trans.shape[1] - 1)
    # never land on a zero-probability output through rounding at the top
    last_pos = np.array([np.flatnonzero(row > 0)[-1] for row in trans])
    bad = trans[xs, ys] <= 0
    ys[bad] = last_pos[xs[bad]]
    idx = np.arange(len(xs))
    return mix[idx, ys] / p_y[ys]


step_ratios_loops = _jit(_step_ratios_loops)


if USE_NUMBA:
    mgf_sum = mgf_sum_loops
    naive_rescale = naive_rescale_loops
    step_ratios = step_ratios_loops
else:
    mgf_sum = mgf_sum_numpy
    naive_rescale = naive_rescale_numpy
    step_ratios = step_ratios_numpy
