"""Point-to-triangle-mesh distances, an AABB tree for nearest-surface queries,
and segment/ray intersection tests used for visibility reasoning."""

import numpy as np
from numba import njit

LEAF_SIZE = 4


@njit(cache=True)
def closest_point_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle ``abc`` (Voronoi-region walk)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()

    bp = p - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab

    cp = p - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)

    denom = va + vb + vc
    if denom <= 0.0:
        # degenerate (zero-area) triangle: fall back to the nearest edge point
        best = a.copy()
        bd = 1e300
        for q0, q1 in ((a, b), (b, c), (c, a)):
            e = q1 - q0
            ee = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
            s = 0.0
            if ee > 0.0:
                s = ((p[0] - q0[0]) * e[0] + (p[1] - q0[1]) * e[1] + (p[2] - q0[2]) * e[2]) / ee
                s = min(1.0, max(0.0, s))
            q = q0 + s * e
            dq = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
            if dq < bd:
                bd = dq
                best = q
        return best
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w


@njit(cache=True, inline="always")
def _seg_d2(px, py, pz, ax, ay, az, bx, by, bz):
    ex, ey, ez = bx - ax, by - ay, bz - az
    ee = ex * ex + ey * ey + ez * ez
    s = 0.0
    if ee > 0.0:
        s = min(1.0, max(0.0, ((px - ax) * ex + (py - ay) * ey + (pz - az) * ez) / ee))
    qx, qy, qz = ax + s * ex - px, ay + s * ey - py, az + s * ez - pz
    return qx * qx + qy * qy + qz * qz


@njit(cache=True)
def tri_dist2_scalar(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Squared point-triangle distance without temporaries (hot path of the
    tree query; same region logic as :func:`closest_point_on_triangle`)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = apx - v * abx, apy - v * aby, apz - v * abz
        return qx * qx + qy * qy + qz * qz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = apx - w * acx, apy - w * acy, apz - w * acz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bpx - w * (cx - bx)
        qy = bpy - w * (cy - by)
        qz = bpz - w * (cz - bz)
        return qx * qx + qy * qy + qz * qz
    denom = va + vb + vc
    if denom <= 0.0:
        return min(_seg_d2(px, py, pz, ax, ay, az, bx, by, bz),
                   min(_seg_d2(px, py, pz, bx, by, bz, cx, cy, cz),
                       _seg_d2(px, py, pz, cx, cy, cz, ax, ay, az)))
    v = vb / denom
    w = vc / denom
    qx = apx - abx * v - acx * w
    qy = apy - aby * v - acy * w
    qz = apz - abz * v - acz * w
    return qx * qx + qy * qy + qz * qz


@njit(cache=True)
def _tri_dist2(p, verts, tri):
    q = closest_point_on_triangle(p, verts[tri[0]], verts[tri[1]], verts[tri[2]])
    return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2


@njit(cache=True)
def brute_force_distances(points, verts, tris):
    """Reference distances: minimum over every triangle, no pruning."""
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        best = np.inf
        for k in range(tris.shape[0]):
            d2 = _tri_dist2(points[i], verts, tris[k])
            if d2 < best:
                best = d2
        out[i] = np.sqrt(best)
    return out


@njit(cache=True)
def build_aabb_tree(verts, tris):
    """Top-down median-split AABB tree over triangles.

    Returns ``(box_min, box_max, left, right, start, count, order)``; leaves
    have ``left == -1`` and cover ``order[start:start+count]``.
    """
    nt = tris.shape[0]
    cent = np.empty((nt, 3))
    tmin = np.empty((nt, 3))
    tmax = np.empty((nt, 3))
    for k in range(nt):
        for j in range(3):
            a = verts[tris[k, 0], j]
            b = verts[tris[k, 1], j]
            c = verts[tris[k, 2], j]
            tmin[k, j] = min(a, min(b, c))
            tmax[k, j] = max(a, max(b, c))
            cent[k, j] = (a + b + c) / 3.0
    order = np.arange(nt)
    max_nodes = 2 * nt + 1
    box_min = np.empty((max_nodes, 3))
    box_max = np.empty((max_nodes, 3))
    left = -np.ones(max_nodes, dtype=np.int64)
    right = -np.ones(max_nodes, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)

    n_nodes = 1
    start[0] = 0
    count[0] = nt
    stack = np.empty(max_nodes, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        c = count[node]
        for j in range(3):
            lo = np.inf
            hi = -np.inf
            for k in range(s, s + c):
                t = order[k]
                if tmin[t, j] < lo:
                    lo = tmin[t, j]
                if tmax[t, j] > hi:
                    hi = tmax[t, j]
            box_min[node, j] = lo
            box_max[node, j] = hi
        if c <= LEAF_SIZE:
            continue
        # split along the widest centroid extent
        axis = 0
        width = -1.0
        for j in range(3):
            lo = np.inf
            hi = -np.inf
            for k in range(s, s + c):
                v = cent[order[k], j]
                lo = min(lo, v)
                hi = max(hi, v)
            if hi - lo > width:
                width = hi - lo
                axis = j
        keys = np.empty(c)
        for k in range(c):
            keys[k] = cent[order[s + k], axis]
        perm = np.argsort(keys, kind="mergesort")
        seg = order[s:s + c].copy()
        for k in range(c):
            order[s + k] = seg[perm[k]]
        half = c // 2
        lch = n_nodes
        rch = n_nodes + 1
        n_nodes += 2
        left[node] = lch
        right[node] = rch
        start[lch] = s
        count[lch] = half
        start[rch] = s + half
        count[rch] = c - half
        stack[sp] = lch
        sp += 1
        stack[sp] = rch
        sp += 1
    return (box_min[:n_nodes], box_max[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], order)


@njit(cache=True)
def _box_dist2(p, bmin, bmax):
    d = 0.0
    for j in range(3):
        if p[j] < bmin[j]:
            d += (bmin[j] - p[j]) ** 2
        elif p[j] > bmax[j]:
            d += (p[j] - bmax[j]) ** 2
    return d


@njit(cache=True)
def tree_distances(points, verts, tris, box_min, box_max, left, right, start, count, order):
    """Nearest-surface distances using the AABB tree (exact, pruned search)."""
    n = points.shape[0]
    out = np.empty(n)
    stack = np.empty(128, dtype=np.int64)
    for i in range(n):
        p = points[i]
        best = np.inf
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist2(p, box_min[node], box_max[node]) >= best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    t = order[k]
                    a = tris[t, 0]
                    b = tris[t, 1]
                    c = tris[t, 2]
                    d2 = tri_dist2_scalar(p[0], p[1], p[2], verts[a, 0], verts[a, 1], verts[a, 2],
                                          verts[b, 0], verts[b, 1], verts[b, 2],
                                          verts[c, 0], verts[c, 1], verts[c, 2])
                    if d2 < best:
                        best = d2
                continue
            l = left[node]
            r = right[node]
            dl = _box_dist2(p, box_min[l], box_max[l])
            dr = _box_dist2(p, box_min[r], box_max[r])
            # push the farther child first so the nearer one is expanded next
            if dl < dr:
                stack[sp] = r
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = r
            sp += 2
        out[i] = np.sqrt(best)
    return out


@njit(cache=True)
def mesh_distances(points, verts, tris):
    """Build a tree for ``verts`` and query ``points`` in one call."""
    bmin, bmax, left, right, start, count, order = build_aabb_tree(verts, tris)
    return tree_distances(points, verts, tris, bmin, bmax, left, right, start, count, order)


@njit(cache=True)
def _ray_triangle(ox, oy, oz, dx, dy, dz, verts, a, b, c):
    """Moller-Trumbore; returns the ray parameter or inf when missed."""
    ax, ay, az = verts[a, 0], verts[a, 1], verts[a, 2]
    e1x, e1y, e1z = verts[b, 0] - ax, verts[b, 1] - ay, verts[b, 2] - az
    e2x, e2y, e2z = verts[c, 0] - ax, verts[c, 1] - ay, verts[c, 2] - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return np.inf
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 0.0:
        return np.inf
    return t


@njit(cache=True)
def first_hits(origins, dirs, verts, tris):
    """Ray parameter of the first hit per ray (inf if none).  ``origins`` may
    hold a single row shared by all rays."""
    n = dirs.shape[0]
    out = np.full(n, np.inf)
    shared = origins.shape[0] == 1
    for i in range(n):
        j = 0 if shared else i
        best = np.inf
        for k in range(tris.shape[0]):
            t = _ray_triangle(origins[j, 0], origins[j, 1], origins[j, 2], dirs[i, 0], dirs[i, 1], dirs[i, 2],
                              verts, tris[k, 0], tris[k, 1], tris[k, 2])
            if t < best:
                best = t
        out[i] = best
    return out


@njit(cache=True)
def segments_visible(eye, targets, verts, tris, tol):
    """True where the segment eye->target is not blocked by the mesh.

    Hits closer than ``tol`` (metres) to the target are ignored so points
    lying on the surface are not occluded by their own faces.
    """
    n = targets.shape[0]
    out = np.ones(n, dtype=np.bool_)
    for i in range(n):
        dx = targets[i, 0] - eye[0]
        dy = targets[i, 1] - eye[1]
        dz = targets[i, 2] - eye[2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        if length <= tol:
            continue
        limit = 1.0 - tol / length
        for k in range(tris.shape[0]):
            t = _ray_triangle(eye[0], eye[1], eye[2], dx, dy, dz, verts, tris[k, 0], tris[k, 1], tris[k, 2])
            if t < limit:
                out[i] = False
                break
    return out


class AABBTree:
    """Axis-aligned bounding-box hierarchy over a fixed triangle mesh."""

    def __init__(self, verts, tris):
        self.verts = np.ascontiguousarray(verts, dtype=np.float64)
        self.tris = np.ascontiguousarray(tris, dtype=np.int64)
        if len(self.tris) == 0:
            raise ValueError("mesh has no triangles")
        self._nodes = build_aabb_tree(self.verts, self.tris)

    @property
    def n_nodes(self):
        return len(self._nodes[0])

    def distances(self, points):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return tree_distances(pts, self.verts, self.tris, *self._nodes)


def point_mesh_distance(points, verts, tris, method="tree"):
    """Smallest distance from each point to the triangle mesh ``(verts, tris)``.

    ``method`` is ``"tree"`` (AABB accelerated) or ``"brute"`` (loop over all
    triangles, the reference).
    """
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.int64)
    if len(tris) == 0:
        raise ValueError("mesh has no triangles")
    if method == "brute":
        return brute_force_distances(pts, verts, tris)
    if method == "tree":
        return mesh_distances(pts, verts, tris)
    raise ValueError(f"unknown method {method!r}")


@njit(cache=True)
def refit_boxes(verts, tris, box_min, box_max, left, right, start, count, order):
    """Recompute node boxes in place for moved vertices, keeping the hierarchy.

    Children always have larger indices than their parent, so a reverse sweep
    visits every child before its parent.
    """
    for node in range(box_min.shape[0] - 1, -1, -1):
        if left[node] < 0:
            for j in range(3):
                lo = np.inf
                hi = -np.inf
                for k in range(start[node], start[node] + count[node]):
                    t = order[k]
                    for v in range(3):
                        x = verts[tris[t, v], j]
                        if x < lo:
                            lo = x
                        if x > hi:
                            hi = x
                box_min[node, j] = lo
                box_max[node, j] = hi
        else:
            l = left[node]
            r = right[node]
            for j in range(3):
                box_min[node, j] = min(box_min[l, j], box_min[r, j])
                box_max[node, j] = max(box_max[l, j], box_max[r, j])


@njit(cache=True)
def batch_distances(points, verts, tris, box_min, box_max, left, right, start, count, order):
    """Distances of ``points[i]`` to the mesh with vertices ``verts[i]``.

    The hierarchy of a template mesh is reused and only its boxes are refit,
    which stays exact (boxes always bound their triangles) and is far cheaper
    than a rebuild when the deformation is small.
    """
    n = points.shape[0]
    out = np.empty((n, points.shape[1]))
    bmin = box_min.copy()
    bmax = box_max.copy()
    for i in range(n):
        refit_boxes(verts[i], tris, bmin, bmax, left, right, start, count, order)
        out[i] = tree_distances(points[i], verts[i], tris, bmin, bmax, left, right, start, count, order)
    return out
