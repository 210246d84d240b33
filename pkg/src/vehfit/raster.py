"""Compiled kernels for the image and grid based energy terms: exact
rectangle/cell overlap areas and splatted wireframe rasters compared with
heatmaps by the Bhattacharyya coefficient."""

import numpy as np
from numba import njit


@njit(cache=True)
def polygon_area(poly, n):
    """Shoelace area of the first ``n`` vertices of ``poly`` (absolute value)."""
    acc = 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return abs(acc) * 0.5


@njit(cache=True)
def _clip_half(src, n, dst, axis, bound, keep_below):
    """One Sutherland-Hodgman pass against ``x[axis] <= bound`` (or ``>=``)."""
    m = 0
    if n == 0:
        return 0
    for i in range(n):
        cx, cy = src[i, 0], src[i, 1]
        px, py = src[(i - 1) % n, 0], src[(i - 1) % n, 1]
        c = src[i, axis]
        p = src[(i - 1) % n, axis]
        c_in = c <= bound if keep_below else c >= bound
        p_in = p <= bound if keep_below else p >= bound
        if c_in != p_in:
            s = (bound - p) / (c - p)
            dst[m, 0] = px + s * (cx - px)
            dst[m, 1] = py + s * (cy - py)
            m += 1
        if c_in:
            dst[m, 0] = cx
            dst[m, 1] = cy
            m += 1
    return m


@njit(cache=True)
def clip_area(poly, xmin, xmax, ymin, ymax):
    """Area of the convex polygon ``poly`` inside the axis-aligned box."""
    a = np.empty((poly.shape[0] + 8, 2))
    b = np.empty_like(a)
    n = poly.shape[0]
    a[:n] = poly
    n = _clip_half(a, n, b, 0, xmin, False)
    n = _clip_half(b, n, a, 0, xmax, True)
    n = _clip_half(a, n, b, 1, ymin, False)
    n = _clip_half(b, n, a, 1, ymax, True)
    if n < 3:
        return 0.0
    return polygon_area(a, n)


@njit(cache=True)
def overlap_sum(corners, origin_x, origin_y, cell, weights):
    """``sum_g weights[g] * area(rectangle & cell g)`` for one convex quad."""
    nx, ny = weights.shape
    lo_x = corners[:, 0].min()
    hi_x = corners[:, 0].max()
    lo_y = corners[:, 1].min()
    hi_y = corners[:, 1].max()
    i0 = max(0, int(np.floor((lo_x - origin_x) / cell)))
    i1 = min(nx - 1, int(np.floor((hi_x - origin_x) / cell)))
    j0 = max(0, int(np.floor((lo_y - origin_y) / cell)))
    j1 = min(ny - 1, int(np.floor((hi_y - origin_y) / cell)))
    acc = 0.0
    for i in range(i0, i1 + 1):
        x0 = origin_x + i * cell
        for j in range(j0, j1 + 1):
            w = weights[i, j]
            if w == 0.0:
                continue
            y0 = origin_y + j * cell
            acc += w * clip_area(corners, x0, x0 + cell, y0, y0 + cell)
    return acc


@njit(cache=True)
def overlap_sum_batch(corners, origin_x, origin_y, cell, weights):
    out = np.empty(corners.shape[0])
    for k in range(corners.shape[0]):
        out[k] = overlap_sum(corners[k], origin_x, origin_y, cell, weights)
    return out


@njit(cache=True)
def splat_segments(pts, visible, side_mask, side, sigma_u, sigma_v, buf, step):
    """Accumulate a Gaussian-blurred line image of the visible pieces of the
    edges on ``side``: every piece is sampled at spacing <= ``step`` px and
    each sample deposits a separable Gaussian kernel weighted by its length.

    ``pts`` holds (n_edges, n_pieces + 1, 2) image positions of piece bounds.
    """
    h, w = buf.shape
    ru = int(np.ceil(3.0 * sigma_u))
    rv = int(np.ceil(3.0 * sigma_v))
    gx = np.empty(2 * ru + 1)
    gy = np.empty(2 * rv + 1)
    for e in range(pts.shape[0]):
        if not side_mask[e, side]:
            continue
        for k in range(pts.shape[1] - 1):
            if not visible[e, k]:
                continue
            u0, v0 = pts[e, k, 0], pts[e, k, 1]
            u1, v1 = pts[e, k + 1, 0], pts[e, k + 1, 1]
            length = np.sqrt((u1 - u0) ** 2 + (v1 - v0) ** 2)
            ns = int(np.ceil(length / step)) + 1
            wgt = max(length, step) / ns
            for s in range(ns):
                f = (s + 0.5) / ns
                u = u0 + f * (u1 - u0)
                v = v0 + f * (v1 - v0)
                cu = int(np.floor(u + 0.5))
                cv = int(np.floor(v + 0.5))
                if cu + ru < 0 or cu - ru >= w or cv + rv < 0 or cv - rv >= h:
                    continue
                for a in range(2 * ru + 1):
                    du = cu - ru + a - u
                    gx[a] = np.exp(-0.5 * du * du / (sigma_u * sigma_u))
                for b in range(2 * rv + 1):
                    dv = cv - rv + b - v
                    gy[b] = wgt * np.exp(-0.5 * dv * dv / (sigma_v * sigma_v))
                for b in range(2 * rv + 1):
                    y = cv - rv + b
                    if y < 0 or y >= h:
                        continue
                    for a in range(2 * ru + 1):
                        x = cu - ru + a
                        if 0 <= x < w:
                            buf[y, x] += gy[b] * gx[a]


@njit(cache=True)
def wireframe_bc_batch(pts, visible, side_mask, sigma_u, sigma_v, sqrt_q, step):
    """Bhattacharyya coefficient per particle and side between the splatted
    model wireframe and the (normalised, square-rooted) heatmap ``sqrt_q``.

    Entries are -1 where the side is skipped (no model raster mass or an
    empty heatmap).
    """
    n = pts.shape[0]
    n_sides, h, w = sqrt_q.shape
    out = -np.ones((n, n_sides))
    buf = np.zeros((h, w))
    q_mass = np.zeros(n_sides)
    for sd in range(n_sides):
        q_mass[sd] = sqrt_q[sd].sum()
    for k in range(n):
        for sd in range(n_sides):
            if q_mass[sd] == 0.0:
                continue
            buf[:, :] = 0.0
            splat_segments(pts[k], visible[k], side_mask, sd, sigma_u[k], sigma_v[k], buf, step[k])
            total = buf.sum()
            if total <= 0.0:
                continue
            acc = 0.0
            for y in range(h):
                for x in range(w):
                    if buf[y, x] > 0.0:
                        acc += np.sqrt(buf[y, x] / total) * sqrt_q[sd, y, x]
            out[k, sd] = acc
    return out


@njit(cache=True)
def bilinear_sample(img, u, v):
    """Bilinear lookup with zero outside the image (pixel centres at integers)."""
    h, w = img.shape
    out = np.zeros(u.shape[0])
    for i in range(u.shape[0]):
        x = u[i]
        y = v[i]
        if not (x > -1.0 and x < w and y > -1.0 and y < h):
            continue
        x0 = int(np.floor(x))
        y0 = int(np.floor(y))
        fx = x - x0
        fy = y - y0
        acc = 0.0
        for dy in range(2):
            yy = y0 + dy
            if yy < 0 or yy >= h:
                continue
            wy = fy if dy else 1.0 - fy
            for dx in range(2):
                xx = x0 + dx
                if xx < 0 or xx >= w:
                    continue
                wx = fx if dx else 1.0 - fx
                acc += wy * wx * img[yy, xx]
        out[i] = acc
    return out
