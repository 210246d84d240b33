"""Per-term negative log posterior of a vehicle state and its batched evaluation.

Sign convention: every field of :class:`EnergyReport` is the energy
contribution (negative log term).  The keypoint and wireframe contributions
are rewards and therefore <= 0; the remaining terms are >= 0.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import meshdist, raster
from .observer import CROP, cached_lut, crop_coords, edge_piece_points
from .scene import depth_sigma
from .state import wrap_deg

TERMS = ("e3d", "e_kp", "e_wf", "e_pos", "e_ori", "e_shape")
H_CLAMP = 1.0 - 1e-6
P_FLOOR = 1e-9


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class ModelVariant:
    name: str
    use_3d: bool = True
    use_kp: bool = False
    use_wf: bool = False
    use_pos: bool = False
    use_ori: bool = False
    shape: str = "mean"        # "mean" | "category" | "none"

    def enabled(self, term):
        return {
            "e3d": self.use_3d, "e_kp": self.use_kp, "e_wf": self.use_wf,
            "e_pos": self.use_pos, "e_ori": self.use_ori, "e_shape": self.shape != "none",
        }[term]


VARIANTS = {
    "base": ModelVariant("base"),
    "base-s": ModelVariant("base-s", shape="category"),
    "base-s-p-o": ModelVariant("base-s-p-o", use_pos=True, use_ori=True, shape="category"),
    "base-k-w": ModelVariant("base-k-w", use_kp=True, use_wf=True),
    "full": ModelVariant("full", use_kp=True, use_wf=True, use_pos=True, use_ori=True, shape="category"),
}


def get_variant(name):
    try:
        return VARIANTS[name]
    except KeyError:
        raise EnergyError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass(frozen=True)
class EnergyConfig:
    sigma_disp: float = 1.0          # px, disparity uncertainty assumed by the 3D likelihood
    sigma_m: float = 0.10            # m, wireframe blur at the model
    max_points: int = 300            # X_v subsample used by the 3D term
    wf_pool: int = 4                 # wireframe likelihood evaluated at CROP / wf_pool
    lut_resolution: float = 1.0
    mean_penalty: str = "printed"    # "printed": (g/(2s))^2 ; "gaussian": g^2/(2 s^2)
    weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass
class EnergyReport:
    e3d: float = 0.0
    e_kp: float = 0.0
    e_wf: float = 0.0
    e_pos: float = 0.0
    e_ori: float = 0.0
    e_shape: float = 0.0
    total: float = 0.0
    n_points: int = 0
    n_visible: float = 0.0

    @staticmethod
    def csv_header():
        return ",".join(f.name for f in fields(EnergyReport))

    def csv_row(self):
        return ",".join(repr(getattr(self, f.name)) for f in fields(self))

    def term_sum(self):
        return sum(getattr(self, t) for t in TERMS)


# ------------------------------------------------------------------ scalar term definitions

def huber(d, sigma):
    """Huber distance: d^2 inside the threshold, 2 sigma d - sigma^2 beyond."""
    d = np.abs(np.asarray(d, float))
    sigma = np.asarray(sigma, float)
    return np.where(d <= sigma, d * d, 2.0 * sigma * d - sigma * sigma)


def e3d_from_distances(distances, sigmas):
    distances = np.asarray(distances, float)
    if distances.shape[-1] == 0:
        raise EnergyError("no vehicle points")
    return np.mean(huber(distances, sigmas) / (2.0 * np.asarray(sigmas) ** 2), axis=-1)


def keypoint_energy(values, delta):
    """``values`` and ``delta`` have shape (..., 2, C): heatmap reads and
    visibility per image.  U is the mean visible count of the two images."""
    h = np.minimum(np.clip(values, 0.0, None), H_CLAMP)
    delta = np.asarray(delta, float)
    u = delta.sum(axis=(-2, -1)) / 2.0
    s = np.sum(delta * np.log1p(-h), axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(u > 0, s / (2.0 * np.where(u > 0, u, 1.0)), 0.0), u


def bhattacharyya(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    return float(np.sum(np.sqrt(p / p.sum() * q / q.sum())))


def wireframe_energy(bc):
    """``bc``: coefficients per image and side; negative entries are skipped."""
    bc = np.asarray(bc, float)
    used = bc >= 0
    return 0.5 * np.sum(np.where(used, np.log1p(-np.minimum(np.where(used, bc, 0.0), H_CLAMP)), 0.0), axis=-1)


def free_space_weights(grid):
    """-log(1 - rho) per cell, with unknown cells contributing nothing."""
    rho = np.minimum(grid.rho_for_prior(), H_CLAMP)
    return -np.log1p(-rho)


def position_weight(distance, cell, rig, sigma_disp=1.0):
    return np.minimum(1.0, cell / depth_sigma(np.maximum(distance, 1e-6), rig, sigma_disp))


def orientation_energy(model_vp, viewpoint):
    p = np.maximum(viewpoint.prob(model_vp), P_FLOOR)
    cos_term = np.maximum((1.0 + np.cos(np.radians(viewpoint.mode() - model_vp))) / 2.0, P_FLOOR)
    return 0.0 - np.log(p) - np.log(cos_term)


def category_shape_energy(gamma, modes, type_probs, sdevs):
    g = np.atleast_2d(gamma)
    diff = modes[None, :, :] - g[:, None, :]                        # (n, types, n_s)
    per_type = np.sum(diff ** 2 / (2.0 * sdevs ** 2), axis=-1)      # (n, types)
    return per_type @ type_probs / g.shape[1]


def mean_shape_energy(gamma, sdevs, form="printed"):
    g = np.atleast_2d(gamma)
    if form == "printed":
        vals = (g / (2.0 * sdevs)) ** 2
    elif form == "gaussian":
        vals = g ** 2 / (2.0 * sdevs ** 2)
    else:
        raise EnergyError(f"unknown mean penalty form {form!r}")
    return vals.sum(axis=1) / g.shape[1]


def model_viewpoint(theta, t):
    """Viewpoint of the model from its heading and in-plane position."""
    rho = np.degrees(np.arctan2(-np.asarray(t)[..., 1], np.asarray(t)[..., 0]))
    return wrap_deg(180.0 - np.asarray(theta) - rho)


# ------------------------------------------------------------------ evaluator

def _pool(stack, k):
    c, h, w = stack.shape
    return stack.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))


@dataclass
class EnergyModel:
    """Energy of candidate states for one observed vehicle.

    Holds read-only precomputations; :meth:`evaluate_batch` is the hot path
    used by the sampler.
    """

    model: object
    scene: object          # StereoScene
    bundle: object         # ObservationBundle
    variant: ModelVariant
    config: EnergyConfig = field(default_factory=EnergyConfig)
    lut: object = None

    def __post_init__(self):
        cfg = self.config
        rig = self.scene.rig
        plane = self.scene.plane
        pts = self.bundle.points
        if len(pts) == 0:
            raise EnergyError("no vehicle points")
        if len(pts) > cfg.max_points:
            # canonical order first so the subsample does not depend on input order
            pts = pts[np.lexsort(pts.T[::-1])]
            pts = pts[np.linspace(0, len(pts) - 1, cfg.max_points).round().astype(int)]
        self.points = pts
        self.sigmas = depth_sigma(pts[:, 2], rig, cfg.sigma_disp)
        self._local = (pts - plane.origin) @ plane.basis
        if self.lut is None and (self.variant.use_kp or self.variant.use_wf):
            self.lut = cached_lut(self.model, cfg.lut_resolution)
        topo = self.model.topology
        self._tris = np.ascontiguousarray(topo.triangles)
        self._tree = meshdist.build_aabb_tree(np.ascontiguousarray(self.model.mean), self._tris)
        self._app = topo.appearance
        self._edges, self._sides = topo.edges()
        self._bounds, _ = edge_piece_points(self.lut.pieces.shape[2] if self.lut is not None else 4)
        b = self.bundle
        self._boxes = (b.box_left, b.box_right)
        self._kp = (b.kp_left.values.astype(float), b.kp_right.values.astype(float))
        pool = cfg.wf_pool
        self._sqrt_q = []
        for stack in (b.wf_left.values, b.wf_right.values):
            pooled = _pool(stack.astype(float), pool)
            mass = pooled.sum(axis=(1, 2), keepdims=True)
            self._sqrt_q.append(np.sqrt(np.where(mass > 0, pooled / np.where(mass > 0, mass, 1.0), 0.0)))
        self._weights_grid = free_space_weights(self.scene.grid)
        self._type_probs = np.array([b.types.probs[b.types.names.index(t)] for t in self.model.type_names])
        w = np.asarray(cfg.weights, float)
        if w.shape != (len(TERMS),):
            raise EnergyError(f"weights must have {len(TERMS)} entries")
        self._w = w

    # ---------------------------------------------------------- helpers
    def _place_batch(self, body, t, theta):
        """Body points (n, k, 3) to camera coordinates for n states."""
        c, s = np.cos(np.radians(theta)), np.sin(np.radians(theta))
        x = c[:, None] * body[..., 0] - s[:, None] * body[..., 1] + t[:, 0:1]
        y = s[:, None] * body[..., 0] + c[:, None] * body[..., 1] + t[:, 1:2]
        local = np.stack([x, y, body[..., 2]], axis=-1)
        return local @ self.scene.plane.basis.T + self.scene.plane.origin

    def _project(self, cam, image):
        rig = self.scene.rig
        shift = rig.baseline if image else 0.0
        z = cam[..., 2]
        u = rig.focal_px * (cam[..., 0] - shift) / z + rig.cx
        v = rig.focal_px * cam[..., 1] / z + rig.cy
        return np.stack([u, v], axis=-1)

    # ---------------------------------------------------------- terms
    def term_3d(self, verts, t, theta):
        c, s = np.cos(np.radians(theta)), np.sin(np.radians(theta))
        dx = self._local[None, :, 0] - t[:, 0:1]
        dy = self._local[None, :, 1] - t[:, 1:2]
        body = np.empty((len(t), len(self.points), 3))
        body[..., 0] = c[:, None] * dx + s[:, None] * dy
        body[..., 1] = -s[:, None] * dx + c[:, None] * dy
        body[..., 2] = self._local[None, :, 2]
        d = meshdist.batch_distances(body, np.ascontiguousarray(verts), self._tris, *self._tree)
        return e3d_from_distances(d, self.sigmas[None, :])

    def term_keypoint(self, cam_app, vp_bin):
        delta_lut = self.lut.keypoints[vp_bin][:, self._app]                 # (n, C_A)
        vals = np.zeros((len(vp_bin), 2, len(self._app)))
        delta = np.zeros_like(vals)
        for i in range(2):
            cc = crop_coords(self._project(cam_app, i), self._boxes[i])
            inside = np.all((cc > -0.5) & (cc < CROP - 0.5), axis=-1) & (cam_app[..., 2] > 0)
            delta[:, i] = delta_lut & inside
            for c in range(len(self._app)):
                vals[:, i, c] = raster.bilinear_sample(self._kp[i][c], cc[:, c, 0].copy(), cc[:, c, 1].copy())
        return keypoint_energy(vals, delta)

    def term_wireframe(self, cam_kp, vp_bin, depth):
        cfg = self.config
        rig = self.scene.rig
        pool = cfg.wf_pool
        ea = cam_kp[:, self._edges[:, 0]]
        eb = cam_kp[:, self._edges[:, 1]]
        samples = ea[:, :, None, :] + self._bounds[None, None, :, None] * (eb - ea)[:, :, None, :]
        visible = np.ascontiguousarray(self.lut.pieces[vp_bin])
        sigma_img = rig.focal_px * cfg.sigma_m / np.maximum(depth, 1e-3)
        bcs = []
        for i in range(2):
            x0, y0, x1, y1 = self._boxes[i]
            cc = crop_coords(self._project(samples, i), self._boxes[i])
            pooled = (cc + 0.5) / pool - 0.5
            su = np.maximum(sigma_img * CROP / (x1 - x0) / pool, 0.3)
            sv = np.maximum(sigma_img * CROP / (y1 - y0) / pool, 0.3)
            bcs.append(raster.wireframe_bc_batch(np.ascontiguousarray(pooled), visible, self._sides,
                                                 su, sv, self._sqrt_q[i], np.minimum(1.0, 0.8 * np.minimum(su, sv))))
        return wireframe_energy(np.concatenate(bcs, axis=1))

    def term_position(self, body, t, theta, depth):
        grid = self.scene.grid
        xy = body[..., :2]
        lo = xy.min(axis=1)
        hi = xy.max(axis=1)
        rect = np.stack([lo, np.stack([hi[:, 0], lo[:, 1]], 1), hi, np.stack([lo[:, 0], hi[:, 1]], 1)], axis=1)
        c, s = np.cos(np.radians(theta)), np.sin(np.radians(theta))
        corners = np.empty_like(rect)
        corners[..., 0] = c[:, None] * rect[..., 0] - s[:, None] * rect[..., 1] + t[:, 0:1]
        corners[..., 1] = s[:, None] * rect[..., 0] + c[:, None] * rect[..., 1] + t[:, 1:2]
        area = np.prod(hi - lo, axis=1)
        acc = raster.overlap_sum_batch(np.ascontiguousarray(corners), grid.origin[0], grid.origin[1],
                                       grid.cell, self._weights_grid)
        lam = position_weight(depth, grid.cell, self.scene.rig, self.config.sigma_disp)
        return lam * acc / area

    def term_shape(self, gamma):
        sdevs = self.model.sdevs
        if self.variant.shape == "category":
            return category_shape_energy(gamma, self.model.modes, self._type_probs, sdevs)
        return mean_shape_energy(gamma, sdevs, self.config.mean_penalty)

    # ---------------------------------------------------------- public API
    def evaluate_batch(self, X):
        """Energies for an (n, 3 + n_s) array of state vectors ``(t1, t2,
        theta, gamma...)``.  Returns a dict of per-term arrays plus "total"
        and "n_visible"."""
        X = np.atleast_2d(np.asarray(X, float))
        n = len(X)
        t, theta, gamma = X[:, :2], X[:, 2], X[:, 3:]
        v = self.variant
        body = self.model.synthesize_many(gamma)
        out = {term: np.zeros(n) for term in TERMS}
        out["n_visible"] = np.zeros(n)
        need_cam = v.use_kp or v.use_wf
        centre = self.scene.plane.origin + np.c_[t, np.zeros(n)] @ self.scene.plane.basis.T
        depth = centre[:, 2]
        vp = model_viewpoint(theta, t)
        if v.use_3d:
            out["e3d"] = self.term_3d(body, t, theta)
        if need_cam:
            cam = self._place_batch(body, t, theta)
            vp_bin = self.lut.bin_of(vp)
            if v.use_kp:
                out["e_kp"], out["n_visible"] = self.term_keypoint(cam[:, self._app], vp_bin)
            if v.use_wf:
                out["e_wf"] = self.term_wireframe(cam, vp_bin, depth)
        if v.use_pos:
            out["e_pos"] = self.term_position(body, t, theta, depth)
        if v.use_ori:
            out["e_ori"] = orientation_energy(vp, self.bundle.viewpoint)
        if v.shape != "none":
            out["e_shape"] = self.term_shape(gamma)
        for k, term in enumerate(TERMS):
            out[term] = self._w[k] * out[term]
        total = np.zeros(n)
        for term in TERMS:
            total = total + out[term]
        out["total"] = total
        return out

    def evaluate(self, state):
        res = self.evaluate_batch(state.to_vector()[None])
        return EnergyReport(**{term: float(res[term][0]) for term in TERMS},
                            total=float(res["total"][0]), n_points=len(self.points),
                            n_visible=float(res["n_visible"][0]))


def total_energy(bundle, state, model, scene, variant, config=EnergyConfig(), lut=None):
    """One-off evaluation; build an :class:`EnergyModel` to evaluate many states."""
    if isinstance(variant, str):
        variant = get_variant(variant)
    return EnergyModel(model, scene, bundle, variant, config, lut).evaluate(state)
