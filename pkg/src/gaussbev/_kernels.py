"""Numba kernels behind the BeV rasterizer.

Pixel ``(r, c)`` has its center at continuous coordinate ``(c + 0.5, r + 0.5)``.
Conics are stored as ``(A00, A01, A11)`` of the inverse 2D covariance.
The forward and naive kernels share ``_alpha`` so that, with thresholds
disabled, both produce the same bits.
"""
import numba
import numpy as np
from numba import njit, prange

MAX_THREADS = numba.config.NUMBA_NUM_THREADS


@njit(inline="always")
def _power(px, py, mx, my, a00, a01, a11):
    dx = px - mx
    dy = py - my
    return -0.5 * (a00 * dx * dx + 2.0 * a01 * dx * dy + a11 * dy * dy)


@njit(inline="always")
def _alpha(opacity, power, alpha_max):
    # exp underflows to exactly 0 here; skipping the call changes no bits
    if power < -750.0:
        return 0.0
    a = opacity * np.exp(power)
    if a > alpha_max:
        return alpha_max
    return a


@njit(parallel=True, cache=True)
def forward_tiled(mu, conic, opac, emb, tile_start, tile_end, entry_gauss,
                  height, width, tile, tiles_x, alpha_min, alpha_max, t_stop, out):
    n_tiles = tile_start.shape[0]
    n_ch = emb.shape[1]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        r0 = ty * tile
        c0 = tx * tile
        r1 = min(r0 + tile, height)
        c1 = min(c0 + tile, width)
        s = tile_start[t]
        e = tile_end[t]
        for r in range(r0, r1):
            py = r + 0.5
            for c in range(c0, c1):
                px = c + 0.5
                T = 1.0
                for k in range(s, e):
                    g = entry_gauss[k]
                    p = _power(px, py, mu[g, 0], mu[g, 1], conic[g, 0], conic[g, 1], conic[g, 2])
                    a = _alpha(opac[g], p, alpha_max)
                    if a < alpha_min or a == 0.0:
                        continue
                    w = a * T
                    for ch in range(n_ch):
                        out[r, c, ch] += w * emb[g, ch]
                    T = T * (1.0 - a)
                    if T < t_stop:
                        break


@njit(parallel=True, cache=True)
def forward_naive(mu, conic, opac, emb, height, width, alpha_max, out):
    """Arrays must already be in compositing order."""
    n_ch = emb.shape[1]
    n = opac.shape[0]
    for pix in prange(height * width):
        r = pix // width
        c = pix - r * width
        py = r + 0.5
        px = c + 0.5
        T = 1.0
        for g in range(n):
            p = _power(px, py, mu[g, 0], mu[g, 1], conic[g, 0], conic[g, 1], conic[g, 2])
            a = _alpha(opac[g], p, alpha_max)
            # a == 0 leaves both the sum and T unchanged bit for bit
            if a == 0.0:
                continue
            w = a * T
            for ch in range(n_ch):
                out[r, c, ch] += w * emb[g, ch]
            T = T * (1.0 - a)


@njit(parallel=True, cache=True)
def backward_tiled(mu, conic, opac, emb, tile_start, tile_end, entry_gauss,
                   height, width, tile, tiles_x, alpha_min, alpha_max, t_stop, grad_out,
                   g_mu, g_conic, g_opac, g_emb):
    """Per-entry gradients; every entry belongs to exactly one tile, so writes never race."""
    n_tiles = tile_start.shape[0]
    n_ch = emb.shape[1]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        r0 = ty * tile
        c0 = tx * tile
        r1 = min(r0 + tile, height)
        c1 = min(c0 + tile, width)
        s = tile_start[t]
        e = tile_end[t]
        m = e - s
        k_buf = np.empty(m, dtype=np.int64)
        a_buf = np.empty(m)
        t_buf = np.empty(m)
        g_buf = np.empty(m)
        clamp_buf = np.empty(m, dtype=np.bool_)
        acc = np.empty(n_ch)
        for r in range(r0, r1):
            py = r + 0.5
            for c in range(c0, c1):
                px = c + 0.5
                T = 1.0
                n_used = 0
                for k in range(s, e):
                    g = entry_gauss[k]
                    p = _power(px, py, mu[g, 0], mu[g, 1], conic[g, 0], conic[g, 1], conic[g, 2])
                    a = _alpha(opac[g], p, alpha_max)
                    if a < alpha_min or a == 0.0:
                        continue
                    k_buf[n_used] = k
                    a_buf[n_used] = a
                    t_buf[n_used] = T
                    g_buf[n_used] = np.exp(p)
                    clamp_buf[n_used] = opac[g] * g_buf[n_used] > alpha_max
                    n_used += 1
                    T = T * (1.0 - a)
                    if T < t_stop:
                        break
                for ch in range(n_ch):
                    acc[ch] = 0.0
                for j in range(n_used - 1, -1, -1):
                    k = k_buf[j]
                    g = entry_gauss[k]
                    a = a_buf[j]
                    Ti = t_buf[j]
                    dl_da = 0.0
                    for ch in range(n_ch):
                        go = grad_out[r, c, ch]
                        dl_da += (emb[g, ch] - acc[ch]) * go
                        g_emb[k, ch] += a * Ti * go
                        acc[ch] = a * emb[g, ch] + (1.0 - a) * acc[ch]
                    dl_da *= Ti
                    if clamp_buf[j]:
                        continue
                    G = g_buf[j]
                    g_opac[k] += G * dl_da
                    dl_dp = a * dl_da
                    dx = px - mu[g, 0]
                    dy = py - mu[g, 1]
                    g_mu[k, 0] += dl_dp * (conic[g, 0] * dx + conic[g, 1] * dy)
                    g_mu[k, 1] += dl_dp * (conic[g, 1] * dx + conic[g, 2] * dy)
                    g_conic[k, 0] += -0.5 * dx * dx * dl_dp
                    g_conic[k, 1] += -dx * dy * dl_dp
                    g_conic[k, 2] += -0.5 * dy * dy * dl_dp


@njit(parallel=True, cache=True)
def reduce_entries(starts, ends, order, src, dst):
    """``dst[i] = sum(src[order[starts[i]:ends[i]]])`` summed strictly in order."""
    n = starts.shape[0]
    d = src.shape[1]
    for i in prange(n):
        for j in range(starts[i], ends[i]):
            k = order[j]
            for c in range(d):
                dst[i, c] += src[k, c]
