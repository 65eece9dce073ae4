"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The backend is picked once at import time. Set ``STAGEKDE_NUMBA=0`` to force
the numpy path (useful for debugging and for the backend benchmark). Both
flavours are always importable under ``*_numba`` / ``*_numpy`` names so the
test-suite can compare them directly.

Every kernel computes one independent value per dictionary word; no value
depends on how words are split across threads, so results are identical for
any thread count.
"""

import math
import os

import numpy as np

MODE_BETA = 0
MODE_KL = 1

_CHUNK = 256

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
else:
    # replicate workers launch kernels from several Python threads at once, which
    # the workqueue layer does not support; TBB is skipped to avoid version noise
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

USE_NUMBA = numba is not None and os.environ.get("STAGEKDE_NUMBA", "1") != "0"

_LOG_2PI = math.log(2.0 * math.pi)


def set_threads(n):
    """Set the numba worker count, clamped to what the runtime allows.

    Returns the count actually in effect.
    """
    if numba is None:
        return 1
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------------------
# word_xi_means: sum_i wts[i] * xi(phi_w(X_i)) for every word w


def word_xi_means_numpy(centers, hs, X, wts, mode, beta):
    W, d = centers.shape
    out = np.empty(W)
    for start in range(0, W, _CHUNK):
        c = centers[start:start + _CHUNK]
        h2 = hs[start:start + _CHUNK] ** 2
        r2 = ((X[None, :, :] - c[:, None, :]) ** 2).sum(axis=2)
        lp = -r2 / (2.0 * h2[:, None]) - 0.5 * d * (_LOG_2PI + np.log(h2))[:, None]
        if mode == MODE_KL:
            xi = lp
        else:
            xi = np.expm1(beta * lp) / beta
        out[start:start + _CHUNK] = (xi * wts[None, :]).sum(axis=1)
    return out


def _word_xi_means_loops(centers, hs, X, wts, mode, beta):
    W, d = centers.shape
    n = X.shape[0]
    out = np.empty(W)
    for w in numba.prange(W):
        h2 = hs[w] * hs[w]
        norm = 0.5 * d * (_LOG_2PI + math.log(h2))
        acc = 0.0
        for i in range(n):
            r2 = 0.0
            for p in range(d):
                t = X[i, p] - centers[w, p]
                r2 += t * t
            lp = -r2 / (2.0 * h2) - norm
            if mode == MODE_KL:
                acc += wts[i] * lp
            else:
                acc += wts[i] * (math.expm1(beta * lp) / beta)
        out[w] = acc
    return out


# ---------------------------------------------------------------------------
# grid_probe: quadrature of U(xi(candidate)) for every candidate word
#
# beta mode: base is S = sum q psi_l on the grid (psi = phi**beta) and the
#            integrand is ((1-pi) S + pi psi_w) ** ((1+beta)/beta) / (1+beta)
# kl mode:   base is log g on the grid and the integrand is
#            exp((1-pi) log g + pi log phi_w)


def grid_probe_numpy(base, gx, gw, centers, hs, pi, mode, beta):
    W, d = centers.shape
    out = np.empty(W)
    keep = 1.0 - pi
    for w in range(W):
        h2 = hs[w] * hs[w]
        r2 = ((gx - centers[w]) ** 2).sum(axis=1)
        lp = -r2 / (2.0 * h2) - 0.5 * d * (_LOG_2PI + math.log(h2))
        if mode == MODE_KL:
            val = np.exp(keep * base + pi * lp)
        else:
            p = (1.0 + beta) / beta
            val = (keep * base + pi * np.exp(beta * lp)) ** p / (1.0 + beta)
        out[w] = (val * gw).sum()
    return out


def _grid_probe_loops(base, gx, gw, centers, hs, pi, mode, beta):
    W, d = centers.shape
    G = gx.shape[0]
    out = np.empty(W)
    keep = 1.0 - pi
    p = 1.0
    if mode != MODE_KL:
        p = (1.0 + beta) / beta
    scale = 1.0 / (1.0 + beta)
    for w in numba.prange(W):
        h2 = hs[w] * hs[w]
        norm = 0.5 * d * (_LOG_2PI + math.log(h2))
        acc = 0.0
        for g in range(G):
            r2 = 0.0
            for k in range(d):
                t = gx[g, k] - centers[w, k]
                r2 += t * t
            lp = -r2 / (2.0 * h2) - norm
            if mode == MODE_KL:
                acc += gw[g] * math.exp(keep * base[g] + pi * lp)
            else:
                acc += gw[g] * (keep * base[g] + pi * math.exp(beta * lp)) ** p * scale
        out[w] = acc
    return out


# ---------------------------------------------------------------------------
# weighted_triple_row: sum_l q_l * int N(x; c_l, v_l I) N(x; c, v I) N(x; c_w, v_w I) dx


def _iso_pdf_numpy(r2, v, d):
    return np.exp(-r2 / (2.0 * v) - 0.5 * d * (_LOG_2PI + np.log(v)))


def weighted_triple_row_numpy(cl, vl, ql, cc, vc, cw, vw):
    d = cw.shape[1]
    out = np.zeros(cw.shape[0])
    for l in range(cl.shape[0]):
        vs = vl[l] + vc
        first = _iso_pdf_numpy(((cl[l] - cc) ** 2).sum(), vs, d)
        vm = vl[l] * vc / vs
        mean = (vc * cl[l] + vl[l] * cc) / vs
        second = _iso_pdf_numpy(((cw - mean) ** 2).sum(axis=1), vm + vw, d)
        out += ql[l] * first * second
    return out


def _weighted_triple_row_loops(cl, vl, ql, cc, vc, cw, vw):
    W, d = cw.shape
    L = cl.shape[0]
    out = np.zeros(W)
    firsts = np.empty(L)
    vms = np.empty(L)
    means = np.empty((L, d))
    for l in range(L):
        vs = vl[l] + vc
        r2 = 0.0
        for k in range(d):
            t = cl[l, k] - cc[k]
            r2 += t * t
        firsts[l] = ql[l] * math.exp(-r2 / (2.0 * vs) - 0.5 * d * (_LOG_2PI + math.log(vs)))
        vms[l] = vl[l] * vc / vs
        for k in range(d):
            means[l, k] = (vc * cl[l, k] + vl[l] * cc[k]) / vs
    for w in numba.prange(W):
        acc = 0.0
        for l in range(L):
            v = vms[l] + vw[w]
            r2 = 0.0
            for k in range(d):
                t = cw[w, k] - means[l, k]
                r2 += t * t
            acc += firsts[l] * math.exp(-r2 / (2.0 * v) - 0.5 * d * (_LOG_2PI + math.log(v)))
        out[w] = acc
    return out


if numba is not None:
    _jit = numba.njit(parallel=True, cache=True, nogil=True)
    word_xi_means_numba = _jit(_word_xi_means_loops)
    grid_probe_numba = _jit(_grid_probe_loops)
    weighted_triple_row_numba = _jit(_weighted_triple_row_loops)
else:  # pragma: no cover
    word_xi_means_numba = word_xi_means_numpy
    grid_probe_numba = grid_probe_numpy
    weighted_triple_row_numba = weighted_triple_row_numpy


def _pick(fast, slow):
    return fast if USE_NUMBA else slow


def word_xi_means(centers, hs, X, wts, mode, beta):
    f = _pick(word_xi_means_numba, word_xi_means_numpy)
    return f(np.ascontiguousarray(centers, dtype=float), np.ascontiguousarray(hs, dtype=float),
             np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(wts, dtype=float),
             int(mode), float(beta))


def grid_probe(base, gx, gw, centers, hs, pi, mode, beta):
    f = _pick(grid_probe_numba, grid_probe_numpy)
    return f(np.ascontiguousarray(base, dtype=float), np.ascontiguousarray(gx, dtype=float),
             np.ascontiguousarray(gw, dtype=float), np.ascontiguousarray(centers, dtype=float),
             np.ascontiguousarray(hs, dtype=float), float(pi), int(mode), float(beta))


def weighted_triple_row(cl, vl, ql, cc, vc, cw, vw):
    f = _pick(weighted_triple_row_numba, weighted_triple_row_numpy)
    return f(np.ascontiguousarray(cl, dtype=float), np.ascontiguousarray(vl, dtype=float),
             np.ascontiguousarray(ql, dtype=float), np.ascontiguousarray(cc, dtype=float),
             float(vc), np.ascontiguousarray(cw, dtype=float), np.ascontiguousarray(vw, dtype=float))
