"""Synthetic stand-in for the detector and the multi-branch CNN.

Given a ground-truth vehicle state it produces the stereo point cloud, the
detection boxes, keypoint and wireframe heatmaps for both images and the
viewpoint and type distributions, with controllable noise.
"""

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import norm

from . import meshdist
from .scene import FLAG_CODES, GroundPlane, triangulate
from .shape_model import place
from .state import VehicleState, wrap_deg
from .topology import SIDES

CROP = 224
HMAP_MAGIC = b"HMAP"


class ObservationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    sigma_disp: float = 1.0       # px, disparity noise
    kp_blob_px: float = 3.0
    wf_blob_px: float = 2.0
    kp_peak: float = 0.95
    wf_peak: float = 0.95
    view_sigma_deg: float = 15.0
    type_eps: float = 0.3

    @classmethod
    def zero(cls):
        """No disparity noise, one-hot viewpoint and type distributions."""
        return cls(sigma_disp=0.0, view_sigma_deg=0.0, type_eps=0.0)


# ------------------------------------------------------------------ heatmaps

@dataclass
class HeatmapStack:
    """``values`` has shape (channels, height, width), entries in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ObservationError("heatmap stack must be (channels, height, width)")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ObservationError("heatmap values must lie in [0, 1]")

    @property
    def channels(self):
        return self.values.shape[0]

    def write(self, path):
        c, h, w = self.values.shape
        with open(path, "wb") as fh:
            fh.write(HMAP_MAGIC + struct.pack("<III", w, h, c))
            fh.write(self.values.astype("<f4").tobytes())

    @classmethod
    def read(cls, path):
        buf = Path(path).read_bytes()
        if buf[:4] != HMAP_MAGIC:
            raise ObservationError(f"{path}: not a HMAP file")
        w, h, c = struct.unpack("<III", buf[4:16])
        if len(buf) != 16 + 4 * w * h * c:
            raise ObservationError(f"{path}: size does not match header")
        return cls(np.frombuffer(buf[16:], dtype="<f4").reshape(c, h, w).copy())


@dataclass
class ViewpointDistribution:
    """Probabilities of flat bins centred at ``k * bin_width`` degrees."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ObservationError("viewpoint distribution must be non-negative and sum to 1")

    @property
    def bin_width(self):
        return 360.0 / len(self.probs)

    @property
    def centers(self):
        return np.arange(len(self.probs)) * self.bin_width

    def bin_of(self, angle):
        """Index of the nearest bin centre."""
        return np.rint(wrap_deg(angle) / self.bin_width).astype(np.int64) % len(self.probs)

    def prob(self, angle):
        return self.probs[self.bin_of(angle)]

    def mode(self):
        return float(self.centers[int(np.argmax(self.probs))])

    @classmethod
    def wrapped_gaussian(cls, mean_deg, sigma_deg, n_bins=36):
        """Wrapped normal density integrated over each bin; ``sigma = 0``
        gives a one-hot vector at the bin containing the mean."""
        width = 360.0 / n_bins
        if sigma_deg <= 0:
            p = np.zeros(n_bins)
            p[int(np.rint(wrap_deg(mean_deg) / width)) % n_bins] = 1.0
            return cls(p)
        lo = np.arange(n_bins) * width - width / 2
        # offset of each bin edge from the mean, folded over enough windings
        p = np.zeros(n_bins)
        for k in range(-3, 4):
            a = (lo - mean_deg + 360.0 * k) / sigma_deg
            p += norm.cdf(a + width / sigma_deg) - norm.cdf(a)
        return cls(p / p.sum())


@dataclass
class TypeDistribution:
    probs: np.ndarray
    names: tuple

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.names = tuple(self.names)
        if len(self.probs) != len(self.names):
            raise ObservationError("type probabilities and names differ in length")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ObservationError("type distribution must be non-negative and sum to 1")

    def most_likely(self):
        return self.names[int(np.argmax(self.probs))]

    @classmethod
    def confident(cls, true_type, names, eps):
        names = tuple(names)
        p = np.full(len(names), eps / (len(names) - 1))
        p[names.index(true_type)] = 1.0 - eps
        return cls(p, names)


# ------------------------------------------------------------------ bundle

@dataclass
class ObservationBundle:
    points: np.ndarray            # X_v, camera frame
    box_left: tuple               # (x0, y0, x1, y1) px
    box_right: tuple
    kp_left: HeatmapStack
    kp_right: HeatmapStack
    wf_left: HeatmapStack
    wf_right: HeatmapStack
    viewpoint: ViewpointDistribution
    types: TypeDistribution

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.box_left = tuple(float(v) for v in self.box_left)
        self.box_right = tuple(float(v) for v in self.box_right)

    def validate(self, rig):
        if len(self.points) == 0:
            raise ObservationError("no vehicle points")
        for x0, y0, x1, y1 in (self.box_left, self.box_right):
            if not (0 <= x0 < x1 <= rig.width and 0 <= y0 < y1 <= rig.height):
                raise ObservationError("detection box outside the image")
        return self

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "points.txt", self.points, fmt="%.9f")
        for name in ("kp_left", "kp_right", "wf_left", "wf_right"):
            getattr(self, name).write(d / f"{name}.hmap")
        lines = [
            "box_left " + " ".join(repr(v) for v in self.box_left),
            "box_right " + " ".join(repr(v) for v in self.box_right),
            "viewpoint " + " ".join(repr(float(v)) for v in self.viewpoint.probs),
            "type_names " + " ".join(self.types.names),
            "type_probs " + " ".join(repr(float(v)) for v in self.types.probs),
        ]
        (d / "bundle.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = {}
        try:
            for line in (d / "bundle.txt").read_text().splitlines():
                key, *vals = line.split()
                meta[key] = vals
            pts = np.loadtxt(d / "points.txt", ndmin=2)
            maps = {n: HeatmapStack.read(d / f"{n}.hmap") for n in ("kp_left", "kp_right", "wf_left", "wf_right")}
            return cls(
                points=pts,
                box_left=[float(v) for v in meta["box_left"]],
                box_right=[float(v) for v in meta["box_right"]],
                viewpoint=ViewpointDistribution([float(v) for v in meta["viewpoint"]]),
                types=TypeDistribution([float(v) for v in meta["type_probs"]], meta["type_names"]),
                **maps,
            )
        except (OSError, KeyError, ValueError) as exc:
            raise ObservationError(f"{d}: cannot load observation bundle ({exc})") from exc


# ------------------------------------------------------------------ geometry helpers

def viewpoint_of(state):
    """Viewpoint (deg) of a vehicle at ``state``: the direction towards the
    camera in the body frame, counter-clockwise from the forward axis."""
    rho = np.degrees(np.arctan2(-state.t[1], state.t[0]))
    return wrap_deg(180.0 - state.theta - rho)


def heading_from_viewpoint(viewpoint_deg, t):
    rho = np.degrees(np.arctan2(-t[1], t[0]))
    return wrap_deg(180.0 - viewpoint_deg - rho)


def crop_coords(uv, box, size=CROP):
    """Image pixels to continuous crop indices (pixel centres at integers)."""
    x0, y0, x1, y1 = box
    cu = (uv[..., 0] - x0) / (x1 - x0) * size - 0.5
    cv = (uv[..., 1] - y0) / (y1 - y0) * size - 0.5
    return np.stack([cu, cv], axis=-1)


def edge_piece_points(n_pieces):
    """Fractions along an edge where pieces start, and their midpoints."""
    bounds = np.linspace(0.0, 1.0, n_pieces + 1)
    return bounds, 0.5 * (bounds[:-1] + bounds[1:])


# ------------------------------------------------------------------ visibility LUT

@dataclass
class VisibilityLUT:
    """Self-occlusion of the mean model seen from a street-level camera at
    every tabulated viewpoint."""

    resolution_deg: float
    keypoints: np.ndarray      # (n_bins, C_K) bool
    pieces: np.ndarray         # (n_bins, n_edges, n_pieces) bool
    edges: np.ndarray          # (n_edges, 2)
    edge_sides: np.ndarray     # (n_edges, 4) bool
    distance: float
    eye_height: float

    @property
    def n_bins(self):
        return self.keypoints.shape[0]

    def bin_of(self, viewpoint_deg):
        return np.rint(wrap_deg(viewpoint_deg) / self.resolution_deg).astype(np.int64) % self.n_bins


def eye_position(viewpoint_deg, distance, height):
    a = np.radians(viewpoint_deg)
    return np.array([distance * np.cos(a), distance * np.sin(a), height])


def direct_visibility(verts, tris, eye, targets, tol=1e-3):
    return meshdist.segments_visible(np.asarray(eye, float), np.ascontiguousarray(targets, dtype=float),
                                     np.ascontiguousarray(verts, dtype=float), tris, tol)


def visibility_lut(model, resolution_deg=1.0, distance=10.0, eye_height=1.65, n_pieces=4):
    topo = model.topology
    verts = model.mean
    tris = np.ascontiguousarray(topo.triangles)
    edges, sides = topo.edges()
    _, mids = edge_piece_points(n_pieces)
    a = verts[edges[:, 0]]
    b = verts[edges[:, 1]]
    piece_pts = (a[:, None, :] + mids[None, :, None] * (b - a)[:, None, :]).reshape(-1, 3)
    n_bins = int(round(360.0 / resolution_deg))
    kp = np.zeros((n_bins, model.n_keypoints), dtype=bool)
    pc = np.zeros((n_bins, len(edges), n_pieces), dtype=bool)
    targets = np.vstack([verts, piece_pts])
    for k in range(n_bins):
        eye = eye_position(k * resolution_deg, distance, eye_height)
        vis = direct_visibility(verts, tris, eye, targets)
        kp[k] = vis[: model.n_keypoints]
        pc[k] = vis[model.n_keypoints:].reshape(len(edges), n_pieces)
    return VisibilityLUT(resolution_deg, kp, pc, edges, sides, distance, eye_height)


_LUT_CACHE = {}


def cached_lut(model, resolution_deg=1.0):
    key = (id(model), resolution_deg)
    entry = _LUT_CACHE.get(key)
    if entry is None or entry[0] is not model:
        entry = (model, visibility_lut(model, resolution_deg))
        _LUT_CACHE[key] = entry
    return entry[1]


# ------------------------------------------------------------------ rendering

def _blob_map(center, sigma, peak, size=CROP):
    idx = np.arange(size)
    gx = np.exp(-0.5 * ((idx - center[0]) / sigma) ** 2)
    gy = np.exp(-0.5 * ((idx - center[1]) / sigma) ** 2)
    return peak * np.outer(gy, gx)


def _raster_segments(segments, size=CROP):
    """Binary raster of 2D segments ``(n, 2, 2)`` given in crop indices."""
    img = np.zeros((size, size))
    for p, q in segments:
        n = int(np.ceil(np.hypot(*(q - p)) * 4)) + 2
        s = np.linspace(0.0, 1.0, n)[:, None]
        pts = np.rint(p + s * (q - p)).astype(int)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < size) & (pts[:, 1] >= 0) & (pts[:, 1] < size)
        img[pts[ok, 1], pts[ok, 0]] = 1.0
    return img


def _projected_box(rig, pts, image):
    uv = rig.project(pts, image)
    x0, y0 = np.floor(uv.min(axis=0))
    x1, y1 = np.ceil(uv.max(axis=0)) + 1
    return uv, (x0, y0, x1, y1)


def in_image(box, rig):
    x0, y0, x1, y1 = box
    return x0 >= 0 and y0 >= 0 and x1 <= rig.width and y1 <= rig.height


def render_observations(truth, model, rig, plane, noise, rng, true_type=None, n_pieces=4, point_budget=1500):
    """Observation bundle for a vehicle in state ``truth``.

    Returns the bundle plus the object points (camera frame) hit by pixel rays,
    which the scene generator reuses for the free-space grid.
    """
    topo = model.topology
    tris = np.ascontiguousarray(topo.triangles)
    body = model.synthesize(truth.gamma)
    cam_kp = place(body, truth, plane)
    verts = np.ascontiguousarray(cam_kp)
    if np.any(cam_kp[:, 2] <= 0.5):
        raise ObservationError("vehicle behind or too close to the camera")

    eyes = {"left": np.zeros(3), "right": np.array([rig.baseline, 0.0, 0.0])}
    uv, boxes = {}, {}
    for img in eyes:
        uv[img], boxes[img] = _projected_box(rig, cam_kp, img)
        if not in_image(boxes[img], rig):
            raise ObservationError("vehicle truncated by the image border")

    # --- X_v: pixel rays through the left box hitting the vehicle surface
    x0, y0, x1, y1 = boxes["left"]
    stride = max(1, int(np.sqrt((x1 - x0) * (y1 - y0) / point_budget)))
    us, vs = np.meshgrid(np.arange(x0, x1, stride) + 0.5, np.arange(y0, y1, stride) + 0.5)
    us, vs = us.ravel(), vs.ravel()
    dirs = rig.ray(us, vs)
    hit_t = meshdist.first_hits(np.zeros((1, 3)), np.ascontiguousarray(dirs), verts, tris)
    hit = np.isfinite(hit_t)
    if not hit.any():
        raise ObservationError("no vehicle surface visible")
    surface = dirs[hit] * hit_t[hit, None]
    disp = rig.disparity(surface)
    if noise.sigma_disp > 0:
        disp = disp + rng.normal(0.0, noise.sigma_disp, len(disp))
    ok = disp > 0.5
    x_v = triangulate(us[hit][ok], vs[hit][ok], disp[ok], rig)

    # --- keypoint heatmaps at visible appearance keypoints
    app = topo.appearance
    edges, sides = topo.edges()
    bounds, _ = edge_piece_points(n_pieces)
    ea, eb = cam_kp[edges[:, 0]], cam_kp[edges[:, 1]]
    samples = ea[:, None, :] + bounds[None, :, None] * (eb - ea)[:, None, :]   # (E, n_pieces+1, 3)
    mids = 0.5 * (samples[:, :-1] + samples[:, 1:])
    maps = {}
    any_visible = False
    for img, eye in eyes.items():
        box = boxes[img]
        vis = direct_visibility(verts, tris, eye, cam_kp[app], tol=1e-3)
        any_visible |= bool(vis.any())
        cc = crop_coords(uv[img][app], box)
        kp = np.zeros((len(app), CROP, CROP))
        for c in np.flatnonzero(vis):
            kp[c] = _blob_map(cc[c], noise.kp_blob_px, noise.kp_peak)
        piece_vis = direct_visibility(verts, tris, eye, mids.reshape(-1, 3), tol=1e-3).reshape(len(edges), n_pieces)
        sample_cc = crop_coords(rig.project(samples.reshape(-1, 3), img), box).reshape(len(edges), n_pieces + 1, 2)
        wf = np.zeros((len(SIDES), CROP, CROP))
        for w in range(len(SIDES)):
            segs = [sample_cc[e, k:k + 2] for e in np.flatnonzero(sides[:, w]) for k in range(n_pieces) if piece_vis[e, k]]
            if not segs:
                continue
            blurred = gaussian_filter(_raster_segments(segs), noise.wf_blob_px, mode="constant")
            if blurred.max() > 0:
                wf[w] = noise.wf_peak * blurred / blurred.max()
        maps[img] = (HeatmapStack(np.clip(kp, 0, 1)), HeatmapStack(np.clip(wf, 0, 1)))
    if not any_visible:
        raise ObservationError("degenerate viewpoint: no visible keypoints")

    vp = ViewpointDistribution.wrapped_gaussian(viewpoint_of(truth), noise.view_sigma_deg)
    types = TypeDistribution.confident(true_type or model.type_names[0], model.type_names, noise.type_eps)
    bundle = ObservationBundle(
        points=x_v,
        box_left=boxes["left"], box_right=boxes["right"],
        kp_left=maps["left"][0], kp_right=maps["right"][0],
        wf_left=maps["left"][1], wf_right=maps["right"][1],
        viewpoint=vp, types=types,
    )
    return bundle, surface


# ------------------------------------------------------------------ scene synthesis

@dataclass(frozen=True)
class SceneSpec:
    t_forward: tuple = (8.0, 22.0)
    t_left: tuple = (-6.0, 6.0)
    gamma_jitter: float = 0.3
    camera_height: float = 1.65
    ground_range: float = 30.0
    ground_halfwidth: float = 15.0
    ground_col_stride: int = 8
    ground_row_stride: int = 2
    types: tuple = None           # restrict truth types; None = all


@dataclass
class SyntheticFrame:
    truth: VehicleState
    true_type: str
    points: np.ndarray   # full point cloud (camera frame)
    flags: np.ndarray    # ground / object labels
    bundle: ObservationBundle
    plane: GroundPlane = field(repr=False)


def _ground_points(rig, plane, verts, tris, spec, sigma_disp, rng):
    """Stereo points on the road surface not occluded by the vehicle."""
    vs, us = np.mgrid[int(np.ceil(rig.cy)) + 1: rig.height: spec.ground_row_stride,
                      0: rig.width: spec.ground_col_stride]
    us = us.ravel() + 0.5
    vs = vs.ravel() + 0.5
    dirs = rig.ray(us, vs)
    denom = dirs @ plane.normal
    with np.errstate(divide="ignore"):
        t = -plane.offset / denom
    pts = dirs * t[:, None]
    keep = (denom < 0) & (pts[:, 2] <= spec.ground_range) & (np.abs(pts[:, 0]) <= spec.ground_halfwidth)
    dirs, t, us, vs = dirs[keep], t[keep], us[keep], vs[keep]
    hits = meshdist.first_hits(np.zeros((1, 3)), np.ascontiguousarray(dirs), verts, tris)
    free = ~(hits < t)
    pts = dirs[free] * t[free, None]
    disp = rig.disparity(pts)
    if sigma_disp > 0:
        disp = disp + rng.normal(0.0, sigma_disp, len(disp))
    ok = disp > 0.5
    return triangulate(us[free][ok], vs[free][ok], disp[ok], rig)


def sample_frame(model, rig, noise, rng, spec=SceneSpec(), max_tries=200):
    """Random vehicle state, fully visible in both images, and its observations."""
    plane = GroundPlane.canonical(spec.camera_height)
    types = spec.types or model.type_names
    tris = np.ascontiguousarray(model.topology.triangles)
    for _ in range(max_tries):
        ty = types[rng.integers(len(types))]
        gamma = np.clip(model.mode(ty) + rng.normal(0.0, spec.gamma_jitter, model.n_s), -3.0, 3.0)
        truth = VehicleState(
            t=(rng.uniform(*spec.t_forward), rng.uniform(*spec.t_left)),
            theta=rng.uniform(0.0, 360.0),
            gamma=gamma,
        )
        try:
            bundle, surface = render_observations(truth, model, rig, plane, noise, rng, ty)
        except ObservationError:
            continue
        verts = np.ascontiguousarray(place(model.synthesize(truth.gamma), truth, plane))
        ground = _ground_points(rig, plane, verts, tris, spec, noise.sigma_disp, rng)
        points = np.vstack([ground, bundle.points])
        flags = np.concatenate([np.full(len(ground), FLAG_CODES["ground"]),
                                np.full(len(bundle.points), FLAG_CODES["object"])])
        return SyntheticFrame(truth, ty, points, flags, bundle, plane)
    raise ObservationError("could not place a fully visible vehicle")


def with_noise(spec=None, **overrides):
    return replace(spec or NoiseSpec(), **overrides)
