"""Stereo camera model, RANSAC ground plane and the free-space grid map.

Camera frame: origin at the left projection centre, X right, Y down, Z along
the viewing direction; images are rectified so epipolar lines are rows.
"""

from dataclasses import dataclass, field

import numpy as np

UNKNOWN = np.nan
FLAG_CODES = {"ground": 0, "object": 1, "unlabeled": 2}


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class StereoRig:
    focal_px: float = 721.0
    cx: float = 609.6
    cy: float = 172.9
    baseline: float = 0.54
    width: int = 1242
    height: int = 375

    def __post_init__(self):
        if self.focal_px <= 0 or self.baseline <= 0:
            raise SceneError("focal length and baseline must be positive")

    def project(self, points, image="left"):
        """Pixel coordinates (u, v) of camera-frame points in either image."""
        p = np.atleast_2d(np.asarray(points, float))
        shift = self.baseline if image == "right" else 0.0
        u = self.focal_px * (p[:, 0] - shift) / p[:, 2] + self.cx
        v = self.focal_px * p[:, 1] / p[:, 2] + self.cy
        return np.stack([u, v], axis=1)

    def disparity(self, points):
        p = np.atleast_2d(np.asarray(points, float))
        return self.focal_px * self.baseline / p[:, 2]

    def ray(self, u, v):
        """Unnormalised viewing ray (Z component 1) through left pixel (u, v)."""
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        return np.stack([(u - self.cx) / self.focal_px, (v - self.cy) / self.focal_px, np.ones_like(u)], axis=-1)


def triangulate(u, v, disparity, rig):
    """3D point(s) in the camera frame from left pixel and disparity."""
    d = np.asarray(disparity, float)
    if np.any(d <= 0):
        raise SceneError("non-positive disparity: point behind camera")
    z = rig.focal_px * rig.baseline / d
    x = (np.asarray(u, float) - rig.cx) * z / rig.focal_px
    y = (np.asarray(v, float) - rig.cy) * z / rig.focal_px
    return np.stack([x, y, z], axis=-1)


def depth_sigma(z, rig, sigma_disp=1.0):
    """First-order depth uncertainty Z^2 * sigma_d / (f * B)."""
    z = np.asarray(z, float)
    if np.any(z <= 0):
        raise SceneError("depth must be positive")
    out = z * z * sigma_disp / (rig.focal_px * rig.baseline)
    return out if out.ndim else float(out)


@dataclass
class GroundPlane:
    """Plane ``n . X + d = 0`` with ``n`` the unit normal pointing to the camera
    side (so ``d`` is the camera height above the plane)."""

    normal: np.ndarray
    offset: float
    ground_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)
    object_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        norm = np.linalg.norm(n)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise SceneError("plane normal must be unit length")
        self.normal = n
        self.offset = float(self.offset)
        # in-plane axes: forward = camera Z projected into the plane, left = n x forward
        fwd = np.array([0.0, 0.0, 1.0]) - n[2] * n
        if np.linalg.norm(fwd) < 1e-6:
            fwd = np.array([1.0, 0.0, 0.0]) - n[0] * n
        fwd /= np.linalg.norm(fwd)
        left = np.cross(n, fwd)
        self.basis = np.stack([fwd, left, n], axis=1)
        self.origin = -self.offset * n

    @classmethod
    def canonical(cls, camera_height=1.65):
        return cls(np.array([0.0, -1.0, 0.0]), camera_height)

    def signed_distance(self, points):
        return np.atleast_2d(points) @ self.normal + self.offset

    def to_plane(self, points):
        """In-plane (forward, left) coordinates of the orthogonal projection."""
        return ((np.atleast_2d(points) - self.origin) @ self.basis)[:, :2]

    def from_plane(self, coords, height=0.0):
        c = np.atleast_2d(coords)
        h = np.broadcast_to(np.asarray(height, float), (len(c),))
        return self.origin + c[:, :1] * self.basis[:, 0] + c[:, 1:2] * self.basis[:, 1] + h[:, None] * self.normal


def _plane_from_points(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n /= norm
    return n, -float(n @ p0)


def _least_squares_plane(points):
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ c)


def fit_ground_plane(points, inlier_tol=0.05, iterations=500, seed=0):
    """RANSAC plane over sampled point triples, refined by least squares on the
    consensus set; the normal is oriented towards the camera."""
    pts = np.asarray(points, float)
    if len(pts) < 3:
        raise SceneError("need at least 3 points")
    # canonical order so the consensus does not depend on input ordering
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise SceneError("points are collinear")
    rng = np.random.default_rng(seed)
    best_count, best = -1, None
    if len(pts) == 3:
        best = _plane_from_points(*pts)
    else:
        for _ in range(iterations):
            idx = rng.choice(len(pts), 3, replace=False)
            plane = _plane_from_points(*pts[idx])
            if plane is None:
                continue
            count = np.count_nonzero(np.abs(pts @ plane[0] + plane[1]) <= inlier_tol)
            if count > best_count:
                best_count, best = count, plane
    if best is None:
        raise SceneError("no non-degenerate sample found")
    inliers = np.abs(pts @ best[0] + best[1]) <= inlier_tol
    if inliers.sum() >= 3:
        refined = _least_squares_plane(pts[inliers])
        refit = np.abs(pts @ refined[0] + refined[1]) <= inlier_tol
        if refit.sum() >= inliers.sum():
            best, inliers = refined, refit
    n, d = best
    if d < 0:
        n, d = -n, -d
    n = n / np.linalg.norm(n)
    return GroundPlane(n, d, ground_points=pts[inliers], object_points=pts[~inliers])


@dataclass
class FreeSpaceGrid:
    """Ground-plane grid; ``rho`` holds the free-space probability of each
    cell, NaN where no point was observed."""

    cell: float
    origin: np.ndarray      # in-plane coordinates of the lower corner of cell (0, 0)
    n_ground: np.ndarray    # (nx, ny)
    n_object: np.ndarray

    def __post_init__(self):
        total = self.n_ground + self.n_object
        with np.errstate(invalid="ignore", divide="ignore"):
            self.rho = np.where(total > 0, self.n_ground / np.maximum(total, 1), UNKNOWN)

    @property
    def shape(self):
        return self.n_ground.shape

    def unknown(self):
        return np.isnan(self.rho)

    def rho_for_prior(self):
        """Free-space probabilities with unknown cells set to 0."""
        return np.nan_to_num(self.rho, nan=0.0)

    def cell_centers(self):
        nx, ny = self.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.cell
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.cell
        return np.meshgrid(xs, ys, indexing="ij")

    def to_csv(self, path):
        cx, cy = self.cell_centers()
        with open(path, "w") as fh:
            fh.write("x,y,n_ground,n_object,rho\n")
            for i, j in np.ndindex(self.shape):
                r = self.rho[i, j]
                fh.write(f"{cx[i, j]:.4f},{cy[i, j]:.4f},{self.n_ground[i, j]},{self.n_object[i, j]},"
                         f"{'unknown' if np.isnan(r) else f'{r:.6f}'}\n")


def build_free_space(plane, ground_points, object_points, cell=0.25, extent=None, margin=2.0):
    """Count ground/object point projections per cell.

    ``extent`` is ``(xmin, xmax, ymin, ymax)`` in plane coordinates; by default
    it covers all projected points plus ``margin`` metres.
    """
    g = plane.to_plane(ground_points) if len(ground_points) else np.zeros((0, 2))
    o = plane.to_plane(object_points) if len(object_points) else np.zeros((0, 2))
    if extent is None:
        allp = np.vstack([g, o])
        if len(allp) == 0:
            raise SceneError("no points to build a grid from")
        lo = allp.min(axis=0) - margin
        hi = allp.max(axis=0) + margin
        extent = (lo[0], hi[0], lo[1], hi[1])
    xmin, xmax, ymin, ymax = extent
    if xmax <= xmin or ymax <= ymin or cell <= 0:
        raise SceneError("grid extent and cell size must be positive")
    nx = int(np.ceil((xmax - xmin) / cell))
    ny = int(np.ceil((ymax - ymin) / cell))
    origin = np.array([xmin, ymin])

    def counts(p):
        idx = np.floor((p - origin) / cell).astype(np.int64)
        ok = (idx[:, 0] >= 0) & (idx[:, 0] < nx) & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
        c = np.zeros((nx, ny), dtype=np.int64)
        np.add.at(c, (idx[ok, 0], idx[ok, 1]), 1)
        return c

    return FreeSpaceGrid(cell, origin, counts(g), counts(o))


@dataclass
class StereoScene:
    rig: StereoRig
    plane: GroundPlane
    grid: FreeSpaceGrid

    @classmethod
    def from_points(cls, rig, points, flags=None, cell=0.25, inlier_tol=0.05, iterations=500, seed=0):
        """Build plane and grid from a point cloud.  Points flagged ground or
        object are used as labelled; if any are unlabeled RANSAC decides."""
        points = np.asarray(points, float)
        if flags is not None and np.all(np.asarray(flags) != FLAG_CODES["unlabeled"]):
            flags = np.asarray(flags)
            gp = points[flags == FLAG_CODES["ground"]]
            n, d = _least_squares_plane(gp)
            if d < 0:
                n, d = -n, -d
            plane = GroundPlane(n / np.linalg.norm(n), d, gp, points[flags == FLAG_CODES["object"]])
        else:
            plane = fit_ground_plane(points, inlier_tol, iterations, seed)
        grid = build_free_space(plane, plane.ground_points, plane.object_points, cell)
        return cls(rig, plane, grid)


# ------------------------------------------------------------------ file IO

def write_scene_file(path, rig, points, flags=None):
    """Text scene: rig parameters then ``x y z flag`` point records."""
    flags = np.full(len(points), FLAG_CODES["unlabeled"]) if flags is None else np.asarray(flags)
    names = {v: k for k, v in FLAG_CODES.items()}
    with open(path, "w") as fh:
        fh.write(f"rig focal={rig.focal_px!r} cx={rig.cx!r} cy={rig.cy!r} baseline={rig.baseline!r} "
                 f"width={rig.width} height={rig.height}\n")
        fh.write(f"points {len(points)}\n")
        for p, f in zip(points, flags):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {names[int(f)]}\n")


def read_scene_file(path):
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "rig":
            raise SceneError(f"{path}: missing rig header")
        kv = dict(item.split("=", 1) for item in header[1:])
        rig = StereoRig(float(kv["focal"]), float(kv["cx"]), float(kv["cy"]), float(kv["baseline"]),
                        int(kv["width"]), int(kv["height"]))
        count_line = fh.readline().split()
        if len(count_line) != 2 or count_line[0] != "points":
            raise SceneError(f"{path}: missing point count")
        n = int(count_line[1])
        pts = np.zeros((n, 3))
        flags = np.zeros(n, dtype=np.int64)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != 4 or parts[3] not in FLAG_CODES:
                raise SceneError(f"{path}: malformed point record {i}")
            pts[i] = [float(v) for v in parts[:3]]
            flags[i] = FLAG_CODES[parts[3]]
    return rig, pts, flags
