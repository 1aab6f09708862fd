"""Numba kernels for tile-based alpha compositing and its backward pass.

Tiles are independent: each writes only its own pixels and its own slice of
the (tile, Gaussian) pair list, so results do not depend on scheduling.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# the bundled TBB is too old; prefer OpenMP and fall back to the builtin pool
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


@nb.njit(cache=True)
def bin_tiles(rect, n_tiles):
    """Pair list sorted by tile, then by input order (which is depth order).

    ``rect`` holds inclusive tile bounds (tx0, ty0, tx1, ty1) per Gaussian and
    the number of tile columns is passed implicitly via ``rect[:, 4]``.
    """
    n = rect.shape[0]
    counts = np.zeros(n_tiles + 1, np.int64)
    for i in range(n):
        tx0, ty0, tx1, ty1, ncols = rect[i, 0], rect[i, 1], rect[i, 2], rect[i, 3], rect[i, 4]
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ncols + tx + 1] += 1
    for t in range(n_tiles):
        counts[t + 1] += counts[t]
    fill = counts[:-1].copy()
    pairs = np.empty(counts[n_tiles], np.int64)
    for i in range(n):
        tx0, ty0, tx1, ty1, ncols = rect[i, 0], rect[i, 1], rect[i, 2], rect[i, 3], rect[i, 4]
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * ncols + tx
                pairs[fill[t]] = i
                fill[t] += 1
    return counts, pairs


@nb.njit(cache=True, inline="always")
def _row_span(a, b, c, level, dy, mx):
    """Pixel-x interval where a row can reach alpha >= 1/255 (padded outward)."""
    disc = (b * dy) ** 2 - a * (c * dy * dy - 2.0 * level)
    if disc < 0.0:
        return 1, 0
    r = math.sqrt(disc)
    lo = mx + (-b * dy - r) / a
    hi = mx + (-b * dy + r) / a
    pad = 1e-6 * (1.0 + abs(lo) + abs(hi))
    return int(math.ceil(lo - pad)), int(math.floor(hi + pad))


@nb.njit(cache=True, parallel=True)
def composite_forward(counts, pairs, bbox, mean2d, conic, opacity, color, background, width, height, tile):
    """Front-to-back compositing. Within a tile each Gaussian only visits the
    pixels of its support box ``bbox`` (x0, y0, x1, y1); every pixel still sees
    its Gaussians in depth order."""
    ncols = (width + tile - 1) // tile
    nrows = (height + tile - 1) // tile
    out = np.empty((height, width, 3))
    final_t = np.empty((height, width))
    n_contrib = np.zeros((height, width), np.int64)
    for t in nb.prange(ncols * nrows):
        ty, tx = t // ncols, t % ncols
        start, end = counts[t], counts[t + 1]
        ox, oy = tx * tile, ty * tile
        w, h = min(tile, width - ox), min(tile, height - oy)
        trans = np.ones((h, w))
        acc = np.zeros((h, w, 3))
        done = np.zeros((h, w), np.bool_)
        last = np.full((h, w), start, np.int64)
        for k in range(start, end):
            g = pairs[k]
            xa, xb = max(bbox[g, 0], ox), min(bbox[g, 2], ox + w - 1)
            ya, yb = max(bbox[g, 1], oy), min(bbox[g, 3], oy + h - 1)
            level = math.log(255.0 * opacity[g])
            a, b, c, op = conic[g, 0], conic[g, 1], conic[g, 2], opacity[g]
            mx, my = mean2d[g, 0], mean2d[g, 1]
            for py in range(ya, yb + 1):
                iy = py - oy
                dy = py - my
                lo, hi = _row_span(a, b, c, level, dy, mx)
                for px in range(max(xa, lo), min(xb, hi) + 1):
                    ix = px - ox
                    if done[iy, ix]:
                        continue
                    dx = px - mx
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0:
                        continue
                    alpha = min(ALPHA_MAX, op * math.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    test_t = trans[iy, ix] * (1.0 - alpha)
                    if test_t < T_MIN:
                        done[iy, ix] = True
                        continue
                    wgt = alpha * trans[iy, ix]
                    acc[iy, ix, 0] += color[g, 0] * wgt
                    acc[iy, ix, 1] += color[g, 1] * wgt
                    acc[iy, ix, 2] += color[g, 2] * wgt
                    trans[iy, ix] = test_t
                    last[iy, ix] = k + 1
        for iy in range(h):
            for ix in range(w):
                tr = trans[iy, ix]
                out[oy + iy, ox + ix, 0] = acc[iy, ix, 0] + tr * background[0]
                out[oy + iy, ox + ix, 1] = acc[iy, ix, 1] + tr * background[1]
                out[oy + iy, ox + ix, 2] = acc[iy, ix, 2] + tr * background[2]
                final_t[oy + iy, ox + ix] = tr
                n_contrib[oy + iy, ox + ix] = last[iy, ix]
    return out, final_t, n_contrib


@nb.njit(cache=True, parallel=True)
def composite_backward(counts, pairs, bbox, mean2d, conic, opacity, color, background,
                       width, height, tile, final_t, n_contrib, grad_out):
    """Per-pair gradients: (d mean x, d mean y, d conic a, b, c, d opacity, d rgb).

    Walks each tile back to front, mirroring the forward traversal.
    """
    ncols = (width + tile - 1) // tile
    nrows = (height + tile - 1) // tile
    buf = np.zeros((pairs.shape[0], 9))
    for t in nb.prange(ncols * nrows):
        ty, tx = t // ncols, t % ncols
        start, end = counts[t], counts[t + 1]
        ox, oy = tx * tile, ty * tile
        w, h = min(tile, width - ox), min(tile, height - oy)
        trans = np.empty((h, w))
        # accumulated color of everything behind the current Gaussian
        behind = np.empty((h, w, 3))
        for iy in range(h):
            for ix in range(w):
                tr = final_t[oy + iy, ox + ix]
                trans[iy, ix] = tr
                for ch in range(3):
                    behind[iy, ix, ch] = tr * background[ch]
        for k in range(end - 1, start - 1, -1):
            g = pairs[k]
            a, b, c = conic[g, 0], conic[g, 1], conic[g, 2]
            xa, xb = max(bbox[g, 0], ox), min(bbox[g, 2], ox + w - 1)
            ya, yb = max(bbox[g, 1], oy), min(bbox[g, 3], oy + h - 1)
            level = math.log(255.0 * opacity[g])
            op = opacity[g]
            mx, my = mean2d[g, 0], mean2d[g, 1]
            c0, c1, c2 = color[g, 0], color[g, 1], color[g, 2]
            acc0 = acc1 = acc2 = acc3 = acc4 = acc5 = acc6 = acc7 = acc8 = 0.0
            for py in range(ya, yb + 1):
                iy = py - oy
                dy = py - my
                lo, hi = _row_span(a, b, c, level, dy, mx)
                for px in range(max(xa, lo), min(xb, hi) + 1):
                    if k >= n_contrib[py, px]:
                        continue
                    ix = px - ox
                    dx = px - mx
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0:
                        continue
                    gauss = math.exp(power)
                    raw = op * gauss
                    alpha = min(ALPHA_MAX, raw)
                    if alpha < ALPHA_MIN:
                        continue
                    g0 = grad_out[py, px, 0]
                    g1 = grad_out[py, px, 1]
                    g2 = grad_out[py, px, 2]
                    one_minus = 1.0 - alpha
                    tr = trans[iy, ix] / one_minus
                    trans[iy, ix] = tr
                    wgt = alpha * tr
                    acc6 += g0 * wgt
                    acc7 += g1 * wgt
                    acc8 += g2 * wgt
                    s0, s1, s2 = behind[iy, ix, 0], behind[iy, ix, 1], behind[iy, ix, 2]
                    d_alpha = (g0 * (c0 * tr - s0 / one_minus)
                               + g1 * (c1 * tr - s1 / one_minus)
                               + g2 * (c2 * tr - s2 / one_minus))
                    behind[iy, ix, 0] = s0 + c0 * wgt
                    behind[iy, ix, 1] = s1 + c1 * wgt
                    behind[iy, ix, 2] = s2 + c2 * wgt
                    if raw >= ALPHA_MAX:
                        continue
                    acc5 += d_alpha * gauss
                    d_power = d_alpha * raw
                    acc0 += d_power * (a * dx + b * dy)
                    acc1 += d_power * (b * dx + c * dy)
                    acc2 += -0.5 * d_power * dx * dx
                    acc3 += -d_power * dx * dy
                    acc4 += -0.5 * d_power * dy * dy
            buf[k, 0] = acc0
            buf[k, 1] = acc1
            buf[k, 2] = acc2
            buf[k, 3] = acc3
            buf[k, 4] = acc4
            buf[k, 5] = acc5
            buf[k, 6] = acc6
            buf[k, 7] = acc7
            buf[k, 8] = acc8
    return buf


@nb.njit(cache=True)
def reduce_pairs(pairs, buf, n):
    """Sum per-pair gradients into per-Gaussian slots in fixed pair order."""
    out = np.zeros((n, buf.shape[1]))
    for k in range(pairs.shape[0]):
        g = pairs[k]
        for j in range(buf.shape[1]):
            out[g, j] += buf[k, j]
    return out


@nb.njit(cache=True)
def project_forward(means, rotations, scales, w_rot, w_trans, fx, fy, cx, cy, near, far, dilation):
    """Per-Gaussian camera transform, perspective Jacobian and dilated 2-D covariance."""
    n = means.shape[0]
    cam = np.empty((n, 3))
    mean2d = np.empty((n, 2))
    cov2d = np.empty((n, 2, 2))
    jac = np.zeros((n, 2, 3))
    cov3d = np.empty((n, 3, 3))
    visible = np.empty(n, dtype=np.bool_)
    m = np.empty((2, 3))
    for i in range(n):
        for r in range(3):
            cam[i, r] = (w_rot[r, 0] * means[i, 0] + w_rot[r, 1] * means[i, 1] + w_rot[r, 2] * means[i, 2]
                         + w_trans[r])
        z = cam[i, 2]
        visible[i] = near < z < far
        inv_z = 1.0 / z if visible[i] else 1.0
        mean2d[i, 0] = fx * cam[i, 0] * inv_z + cx
        mean2d[i, 1] = fy * cam[i, 1] * inv_z + cy
        jac[i, 0, 0] = fx * inv_z
        jac[i, 0, 2] = -fx * cam[i, 0] * inv_z * inv_z
        jac[i, 1, 1] = fy * inv_z
        jac[i, 1, 2] = -fy * cam[i, 1] * inv_z * inv_z
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += rotations[i, r, k] * scales[i, k] * scales[i, k] * rotations[i, c, k]
                cov3d[i, r, c] = acc
        for r in range(2):
            for c in range(3):
                m[r, c] = jac[i, r, 0] * w_rot[0, c] + jac[i, r, 1] * w_rot[1, c] + jac[i, r, 2] * w_rot[2, c]
        for r in range(2):
            for c in range(2):
                acc = 0.0
                for a in range(3):
                    for b in range(3):
                        acc += m[r, a] * cov3d[i, a, b] * m[c, b]
                cov2d[i, r, c] = acc
        cov2d[i, 0, 0] += dilation
        cov2d[i, 1, 1] += dilation
    return cam, mean2d, cov2d, jac, cov3d, visible


@nb.njit(cache=True)
def project_backward(idx, per, conic, cam, jac, cov3d, rotations, scales, w_rot, fx, fy, n):
    """Push per-Gaussian pixel-space gradients (mean, conic) back to world mean, rotation and scale.

    ``per`` columns are d/d(mean x, mean y, conic a, conic b, conic c); the conic
    b entry counts both off-diagonal slots.
    """
    g_mean2d = np.zeros((n, 2))
    g_means = np.zeros((n, 3))
    g_rot = np.zeros((n, 3, 3))
    g_scales = np.zeros((n, 3))
    q = np.empty((2, 2))
    gq = np.empty((2, 2))
    tmp = np.empty((2, 2))
    gc2 = np.empty((2, 2))
    m = np.empty((2, 3))
    gc3 = np.empty((3, 3))
    gm = np.empty((2, 3))
    gj = np.empty((2, 3))
    sym = np.empty((3, 3))
    for a in range(idx.shape[0]):
        i = idx[a]
        g_mean2d[i, 0] = per[a, 0]
        g_mean2d[i, 1] = per[a, 1]
        q[0, 0] = conic[a, 0]
        q[0, 1] = conic[a, 1]
        q[1, 0] = conic[a, 1]
        q[1, 1] = conic[a, 2]
        gq[0, 0] = per[a, 2]
        gq[1, 1] = per[a, 4]
        gq[0, 1] = 0.5 * per[a, 3]
        gq[1, 0] = 0.5 * per[a, 3]
        # d cov2d = -Q dQ Q
        for r in range(2):
            for c in range(2):
                tmp[r, c] = q[r, 0] * gq[0, c] + q[r, 1] * gq[1, c]
        for r in range(2):
            for c in range(2):
                gc2[r, c] = -(tmp[r, 0] * q[0, c] + tmp[r, 1] * q[1, c])
        for r in range(2):
            for c in range(3):
                m[r, c] = jac[i, r, 0] * w_rot[0, c] + jac[i, r, 1] * w_rot[1, c] + jac[i, r, 2] * w_rot[2, c]
        # d cov3d = M^T G M
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for u in range(2):
                    for v in range(2):
                        acc += m[u, r] * gc2[u, v] * m[v, c]
                gc3[r, c] = acc
        # d M = 2 G M cov3d, then d J = dM R^T
        for r in range(2):
            for c in range(3):
                acc = 0.0
                for u in range(2):
                    for b in range(3):
                        acc += gc2[r, u] * m[u, b] * cov3d[i, b, c]
                gm[r, c] = 2.0 * acc
        for r in range(2):
            for c in range(3):
                gj[r, c] = gm[r, 0] * w_rot[c, 0] + gm[r, 1] * w_rot[c, 1] + gm[r, 2] * w_rot[c, 2]
        tx, ty = cam[i, 0], cam[i, 1]
        inv_z = 1.0 / cam[i, 2]
        iz2 = inv_z * inv_z
        iz3 = iz2 * inv_z
        gx = per[a, 0] * fx * inv_z - gj[0, 2] * fx * iz2
        gy = per[a, 1] * fy * inv_z - gj[1, 2] * fy * iz2
        gz = (-per[a, 0] * fx * tx * iz2 - per[a, 1] * fy * ty * iz2
              - gj[0, 0] * fx * iz2 - gj[1, 1] * fy * iz2
              + 2.0 * gj[0, 2] * fx * tx * iz3 + 2.0 * gj[1, 2] * fy * ty * iz3)
        for c in range(3):
            g_means[i, c] = gx * w_rot[0, c] + gy * w_rot[1, c] + gz * w_rot[2, c]
        for r in range(3):
            for c in range(3):
                sym[r, c] = gc3[r, c] + gc3[c, r]
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += sym[r, k] * rotations[i, k, c]
                g_rot[i, r, c] = acc * scales[i, c] * scales[i, c]
        for c in range(3):
            acc = 0.0
            for r in range(3):
                inner = 0.0
                for k in range(3):
                    inner += gc3[r, k] * rotations[i, k, c]
                acc += rotations[i, r, c] * inner
            g_scales[i, c] = 2.0 * scales[i, c] * acc
    return g_mean2d, g_means, g_rot, g_scales


@nb.njit(cache=True)
def scatter_rows(index, values, size):
    """``out[index[i]] += values[i]`` over flattened trailing axes, in row order."""
    n = values.shape[0]
    flat = values.reshape(n, -1)
    out = np.zeros((size, flat.shape[1]))
    for i in range(n):
        for j in range(flat.shape[1]):
            out[index[i], j] += flat[i, j]
    return out


@nb.njit(cache=True, inline="always")
def _window_rows(src, g, dst):
    """Correlate every row of ``src`` (k, h, w) with ``g`` under zero padding."""
    half = g.shape[0] // 2
    w = src.shape[2]
    for q in range(src.shape[0]):
        for y in range(src.shape[1]):
            for k in range(-half, half + 1):
                gk = g[k + half]
                for x in range(max(0, -k), min(w, w - k)):
                    dst[q, y, x] += gk * src[q, y, x + k]


@nb.njit(cache=True, inline="always")
def _window_cols(src, g, dst):
    half = g.shape[0] // 2
    h = src.shape[1]
    for q in range(src.shape[0]):
        for y in range(h):
            for k in range(max(-half, -y), min(half, h - 1 - y) + 1):
                gk = g[k + half]
                for x in range(src.shape[2]):
                    dst[q, y, x] += gk * src[q, y + k, x]


@nb.njit(cache=True)
def ssim_target_moments(yp, g):
    """Window mean and mean square of each channel plane of a fixed image, shape (n, 2, h, w)."""
    n, h, w = yp.shape
    out = np.zeros((n, 2, h, w))
    prods = np.empty((2, h, w))
    rows = np.empty((2, h, w))
    for c in range(n):
        for y in range(h):
            for x in range(w):
                prods[0, y, x] = yp[c, y, x]
                prods[1, y, x] = yp[c, y, x] * yp[c, y, x]
        rows[:] = 0.0
        _window_rows(prods, g, rows)
        _window_cols(rows, g, out[c])
    return out


@nb.njit(cache=True)
def ssim_value_grad(xp, yp, ymom, m, g, c1, c2):
    """Weighted SSIM sum and its gradient for channel-first planes ``xp``, ``yp``.

    ``ymom`` comes from :func:`ssim_target_moments` on ``yp``; ``m`` (h, w) holds
    the per-pixel weight already divided by the total.
    """
    n, h, w = xp.shape
    value = 0.0
    grad = np.empty((n, h, w))
    prods = np.empty((3, h, w))
    rows = np.empty((3, h, w))
    mom = np.empty((3, h, w))
    for c in range(n):
        for y in range(h):
            for x in range(w):
                a = xp[c, y, x]
                prods[0, y, x] = a
                prods[1, y, x] = a * a
                prods[2, y, x] = a * yp[c, y, x]
        rows[:] = 0.0
        mom[:] = 0.0
        _window_rows(prods, g, rows)
        _window_cols(rows, g, mom)
        for y in range(h):
            for x in range(w):
                mx = mom[0, y, x]
                my = ymom[c, 0, y, x]
                a1 = 2.0 * mx * my + c1
                a2 = 2.0 * (mom[2, y, x] - mx * my) + c2
                b1 = mx * mx + my * my + c1
                b2 = (mom[1, y, x] - mx * mx) + (ymom[c, 1, y, x] - my * my) + c2
                inv = 1.0 / (b1 * b2)
                s = a1 * a2 * inv
                wt = m[y, x]
                value += wt * s
                d_sxx = wt * (-s / b2)
                d_sxy = wt * (2.0 * a1 * inv)
                prods[0, y, x] = wt * (2.0 * my * a2 * inv - s * 2.0 * mx / b1) - 2.0 * mx * d_sxx - my * d_sxy
                prods[1, y, x] = d_sxx
                prods[2, y, x] = d_sxy
        rows[:] = 0.0
        mom[:] = 0.0
        _window_rows(prods, g, rows)
        _window_cols(rows, g, mom)
        for y in range(h):
            for x in range(w):
                grad[c, y, x] = mom[0, y, x] + 2.0 * xp[c, y, x] * mom[1, y, x] + yp[c, y, x] * mom[2, y, x]
    return value, grad
