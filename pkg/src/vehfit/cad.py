"""Procedural stand-in for a labelled CAD vehicle collection.

Every vehicle is a loft of ``N_STATIONS`` cross-section rings (12 vertices
each, mirror symmetric about the body x/z plane) plus 24 wheel keypoints that
are not part of the triangulation, giving 144 keypoints in total.  Extents per
type are drawn around hand-set means using the per-type standard deviations
of the vehicle-dimension statistics the collection is meant to imitate.

Body frame: x forward, y left, z up, origin at the centre of the footprint on
the ground.
"""

from dataclasses import dataclass, field

import numpy as np

from .topology import Topology

TYPES = ("compact", "sedan", "suv", "estate", "sports", "truck", "van")
TYPE_LABELS = {
    "compact": "Compact Car",
    "sedan": "Sedan",
    "suv": "SUV",
    "estate": "Estate Car",
    "sports": "Sports Car",
    "truck": "Truck",
    "van": "Van",
}

N_STATIONS = 10
RING = 12  # vertices per station ring: 6 left (bottom..top) then 6 right (top..bottom)
N_WHEEL_KP = 24
N_KEYPOINTS = N_STATIONS * RING + N_WHEEL_KP

# mean (length, width, height) per type and std devs per type
TYPE_MEAN_DIMS = {
    "compact": (3.85, 1.74, 1.45),
    "sedan": (4.45, 1.80, 1.42),
    "suv": (4.35, 1.85, 1.64),
    "estate": (4.45, 1.79, 1.47),
    "sports": (4.10, 1.82, 1.23),
    "truck": (5.05, 1.86, 1.72),
    "van": (4.40, 1.83, 1.55),
}
TYPE_STD_DIMS = {
    "compact": (0.21, 0.05, 0.10),
    "estate": (0.24, 0.07, 0.06),
    "sedan": (0.19, 0.04, 0.05),
    "suv": (0.39, 0.07, 0.14),
    "van": (0.82, 0.28, 0.28),
    "sports": (0.22, 0.04, 0.13),
    "truck": (0.26, 0.19, 0.12),
}
TYPE_COUNTS = {"compact": 6, "sedan": 6, "suv": 6, "estate": 5, "sports": 4, "truck": 4, "van": 5}


@dataclass(frozen=True)
class Silhouette:
    """Side profile of one vehicle type.

    ``stations`` are distances from the front as a fraction of the length,
    ``tops`` the height of each ring's top edge as a fraction of the height.
    """

    stations: tuple
    tops: tuple
    belt: float
    clearance: float
    axles: tuple  # (front, rear) as fraction of length from the front


SILHOUETTES = {
    "sedan": Silhouette((0, .03, .28, .42, .52, .62, .72, .85, .97, 1.0),
                        (.55, .66, .70, 1.0, 1.0, 1.0, .98, .72, .70, .58), .52, .15, (.17, .80)),
    "compact": Silhouette((0, .03, .25, .42, .55, .68, .85, .93, .98, 1.0),
                          (.52, .62, .66, 1.0, 1.0, .99, .96, .75, .66, .55), .52, .15, (.16, .83)),
    "estate": Silhouette((0, .03, .26, .40, .55, .70, .88, .95, .985, 1.0),
                         (.55, .66, .70, 1.0, 1.0, 1.0, .98, .80, .70, .58), .52, .15, (.17, .80)),
    "suv": Silhouette((0, .03, .22, .35, .50, .65, .88, .95, .985, 1.0),
                      (.58, .66, .70, 1.0, 1.0, 1.0, .99, .85, .72, .62), .55, .20, (.17, .80)),
    "sports": Silhouette((0, .04, .38, .52, .60, .68, .78, .90, .98, 1.0),
                         (.48, .58, .62, 1.0, 1.0, .98, .90, .72, .70, .55), .50, .12, (.18, .80)),
    "truck": Silhouette((0, .03, .24, .34, .42, .48, .52, .56, .98, 1.0),
                        (.55, .66, .70, 1.0, 1.0, 1.0, .98, .62, .62, .58), .50, .22, (.16, .78)),
    "van": Silhouette((0, .02, .10, .25, .45, .65, .90, .96, .99, 1.0),
                      (.55, .62, .72, 1.0, 1.0, 1.0, 1.0, .95, .90, .85), .50, .18, (.13, .82)),
}


def ring_index(station, side, level):
    """Keypoint index of ring vertex ``level`` (0 bottom .. 5 crown) on
    ``side`` ('L' or 'R') of ``station``."""
    if side == "L":
        return station * RING + level
    return station * RING + (RING - 1 - level)


def wheel_index(wheel, part):
    """Wheels are ordered FL, FR, RL, RR; parts center, top, front, back,
    bottom, arch."""
    return N_STATIONS * RING + 6 * wheel + part


WHEEL_PARTS = ("center", "top", "front", "back", "bottom", "arch")


def _ring(y_half, z_clear, z_belt, z_top):
    t = np.clip((z_top - z_belt) / 0.7, 0.0, 1.0)
    w_top = y_half * (0.93 - 0.15 * t)
    y_sh = y_half - 0.3 * (y_half - w_top)
    crown = 0.02 + 0.015 * t
    left = [
        (0.88 * y_half, z_clear),
        (y_half, z_clear + 0.3 * (z_belt - z_clear)),
        (y_half, z_belt),
        (y_sh, z_belt + 0.35 * (z_top - z_belt)),
        (w_top, z_top),
        (0.35 * w_top, z_top + crown),
    ]
    right = [(-y, z) for (y, z) in reversed(left)]
    return np.array(left + right)


def build_keypoints(kind, length, width, height, jitter=None):
    """144 body-frame keypoints for one vehicle of silhouette ``kind``."""
    sil = SILHOUETTES[kind]
    stations = np.array(sil.stations, dtype=float)
    tops = np.array(sil.tops, dtype=float)
    if jitter is not None:
        inner = stations[1:-1] + jitter[: N_STATIONS - 2]
        stations[1:-1] = np.maximum.accumulate(np.clip(inner, 0.01, 0.99))
        stations[1:-1] += np.arange(1, N_STATIONS - 1) * 1e-4
        tops = tops + jitter[N_STATIONS - 2: 2 * N_STATIONS - 2]
    y_half = width / 2.0
    pts = np.zeros((N_KEYPOINTS, 3))
    for s in range(N_STATIONS):
        x = length / 2.0 - stations[s] * length
        z_top = max(tops[s] * height, sil.clearance + 0.35)
        z_belt = min(sil.belt * height, z_top - 0.12)
        ring = _ring(y_half, sil.clearance, z_belt, z_top)
        pts[s * RING:(s + 1) * RING, 0] = x
        pts[s * RING:(s + 1) * RING, 1] = ring[:, 0]
        pts[s * RING:(s + 1) * RING, 2] = ring[:, 1]

    radius = 0.31 + 0.05 * (height - 1.45)
    yw = y_half + 0.005
    axle_x = [length / 2.0 - sil.axles[0] * length, length / 2.0 - sil.axles[1] * length]
    for w, (ax, side) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1)]):
        cx = axle_x[ax]
        cy = side * yw
        offsets = [(0, 0), (0, radius), (radius, 0), (-radius, 0), (0, -radius + 0.02), (0, radius + 0.08)]
        for part, (dx, dz) in enumerate(offsets):
            pts[wheel_index(w, part)] = (cx + dx, cy, radius + dz)
    return pts


def mirror_map():
    """Index of the left/right mirrored counterpart of every keypoint."""
    m = np.arange(N_KEYPOINTS)
    for s in range(N_STATIONS):
        for level in range(6):
            a = ring_index(s, "L", level)
            b = ring_index(s, "R", level)
            m[a], m[b] = b, a
    for w_l, w_r in ((0, 1), (2, 3)):
        for part in range(6):
            a, b = wheel_index(w_l, part), wheel_index(w_r, part)
            m[a], m[b] = b, a
    return m


def build_topology():
    """Mesh, side wireframes, appearance keypoints and named groups."""
    tris = []
    for s in range(N_STATIONS - 1):
        for k in range(RING):
            a = s * RING + k
            b = s * RING + (k + 1) % RING
            c = (s + 1) * RING + k
            d = (s + 1) * RING + (k + 1) % RING
            if k < RING // 2:
                tris.append((a, b, d))
                tris.append((a, d, c))
            else:
                # mirrored diagonal keeps the surface left/right symmetric
                tris.append((a, b, c))
                tris.append((b, d, c))
    for s in (0, N_STATIONS - 1):
        base = s * RING
        for k in range(1, RING - 1):
            tris.append((base, base + k, base + k + 1))

    def L(s, lv):
        return ring_index(s, "L", lv)

    def R(s, lv):
        return ring_index(s, "R", lv)

    def top_cross(s):
        return [(L(s, 4), L(s, 5)), (L(s, 5), R(s, 5)), (R(s, 5), R(s, 4))]

    def ring_edges(s):
        return [(s * RING + k, s * RING + (k + 1) % RING) for k in range(RING)]

    def long_edges(side, level):
        f = L if side == "L" else R
        return [(f(s, level), f(s + 1, level)) for s in range(N_STATIONS - 1)]

    def pillars(side, stations):
        f = L if side == "L" else R
        out = []
        for s in stations:
            out += [(f(s, 2), f(s, 3)), (f(s, 3), f(s, 4))]
        return out

    def wheel_loop(w):
        c, t, fr, bk, bt = (wheel_index(w, p) for p in range(5))
        return [(fr, t), (t, bk), (bk, bt), (bt, fr)]

    wire = {}
    for side, wheels in (("L", (0, 2)), ("R", (1, 3))):
        edges = long_edges(side, 1) + long_edges(side, 2) + long_edges(side, 4)
        edges += pillars(side, (2, 3, 6, 7))
        for w in wheels:
            edges += wheel_loop(w)
        wire["left" if side == "L" else "right"] = edges
    wire["front"] = (ring_edges(0) + top_cross(1) + top_cross(2) + top_cross(3)
                     + [(L(2, 4), L(3, 4)), (R(2, 4), R(3, 4))])
    last = N_STATIONS - 1
    wire["back"] = (ring_edges(last) + top_cross(last - 1) + top_cross(7) + top_cross(6)
                    + [(L(6, 4), L(7, 4)), (R(6, 4), R(7, 4))])

    app = [wheel_index(w, 0) for w in range(4)]
    for s, lv in ((0, 2), (0, 1), (1, 4), (2, 4), (3, 4), (4, 2), (6, 4), (7, 4), (8, 4),
                  (9, 2), (9, 1), (5, 2), (3, 2), (7, 2)):
        app += [L(s, lv), R(s, lv)]
    app += [wheel_index(w, 1) for w in range(4)]

    groups = {
        "wheel_centers_left": [wheel_index(0, 0), wheel_index(2, 0)],
        "wheel_centers_right": [wheel_index(1, 0), wheel_index(3, 0)],
    }
    return Topology(
        n_keypoints=N_KEYPOINTS,
        triangles=np.array(tris, dtype=np.int64),
        wireframe={k: np.array(v, dtype=np.int64) for k, v in wire.items()},
        appearance=np.array(app, dtype=np.int64),
        mirror=mirror_map(),
        groups={k: np.array(v, dtype=np.int64) for k, v in groups.items()},
    )


@dataclass
class CadModel:
    name: str
    type_label: str
    keypoints: np.ndarray = field(repr=False)


def generate_family(seed=2020, counts=None):
    """Deterministic collection of labelled keypoint sets (36 by default)."""
    counts = counts or TYPE_COUNTS
    rng = np.random.default_rng(seed)
    models = []
    for kind in TYPES:
        mean = np.array(TYPE_MEAN_DIMS[kind])
        std = np.array(TYPE_STD_DIMS[kind])
        for i in range(counts.get(kind, 0)):
            dims = mean + std * rng.standard_normal(3)
            dims = np.maximum(dims, (3.2, 1.5, 1.05))
            jitter = np.concatenate([
                0.012 * rng.standard_normal(N_STATIONS - 2),
                0.012 * rng.standard_normal(N_STATIONS),
            ])
            pts = build_keypoints(kind, *dims, jitter=jitter)
            models.append(CadModel(f"{kind}_{i:02d}", kind, pts))
    return models


def body_extents(points):
    """Length, width, height of the axis-aligned body box of keypoints."""
    ext = points.max(axis=0) - points.min(axis=0)
    height = points[:, 2].max()
    return float(ext[0]), float(ext[1]), float(height)
