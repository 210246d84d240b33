"""Sequential Monte Carlo minimisation of the state energy."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .energy import TERMS, EnergyConfig, EnergyModel, EnergyReport, get_variant
from .observer import heading_from_viewpoint
from .state import GAMMA_CAP, VehicleState


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmcConfig:
    n_p: int = 200
    n_it: int = 10
    n_b: int = 10
    shrink: float = 0.85
    theta_range: float = 180.0    # deg, half width of the initial interval
    t_range: float = 1.5          # m
    gamma_range: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n_p <= 0 or self.n_b <= 0 or self.n_it < 0:
            raise ValueError("particle counts must be positive")
        if self.n_p % self.n_b:
            raise ValueError("n_p must be divisible by n_b")
        if self.n_b > self.n_p:
            raise ValueError("n_b cannot exceed n_p")
        if not 0.0 < self.shrink <= 1.0:
            raise ValueError("shrink must lie in (0, 1]")

    def half_widths(self, n_s):
        return np.array([self.t_range, self.t_range, self.theta_range] + [self.gamma_range] * n_s)


@dataclass
class Particle:
    state: VehicleState
    energy: float
    generation: int


@dataclass
class SmcTrace:
    """Best energy and state vector after every iteration (one row each),
    the seeds chosen at every iteration and the number of evaluations."""

    best_energy: np.ndarray
    best_x: np.ndarray
    seeds: list = field(default_factory=list)
    evaluations: int = 0


@dataclass
class SmcResult:
    best: Particle
    report: EnergyReport
    trace: SmcTrace
    particles: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)
    term_trace: list = field(default_factory=list)


def _sample_box(rng, centers, half, n_each, wrap, lo, hi):
    """``n_each`` uniform draws in ``center +/- half`` for every centre row."""
    c = np.repeat(centers, n_each, axis=0)
    x = c + rng.uniform(-1.0, 1.0, c.shape) * half
    x[:, wrap] = np.mod(x[:, wrap], 360.0)
    return np.clip(x, lo, hi)


def smc_minimize(energy_fn, x0, half_widths, config, wrap=None, lower=None, upper=None):
    """Generic sampler.

    ``energy_fn`` maps an (n, d) array to n energies.  The initial set is
    ``x0`` plus ``n_p - 1`` uniform draws around it; each iteration keeps the
    ``n_b`` lowest-energy particles as seeds and adds ``n_p / n_b`` offspring
    per seed drawn from intervals shrunk by ``shrink ** j``.  Seeds stay in the
    set, so the best energy never increases.

    Returns ``(X, E, trace)`` for the final particle set.
    """
    rng = np.random.default_rng(config.seed)
    x0 = np.asarray(x0, float)
    d = len(x0)
    half = np.asarray(half_widths, float)
    wrap = np.zeros(d, bool) if wrap is None else np.asarray(wrap, bool)
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(d, np.inf) if upper is None else np.asarray(upper, float)

    X = np.vstack([x0[None], _sample_box(rng, x0[None], half, config.n_p - 1, wrap, lower, upper)])
    E = np.asarray(energy_fn(X), float)
    evaluations = len(X)
    if not np.any(np.isfinite(E)):
        raise InferenceError("degenerate observations: all initial energies infinite")
    per_seed = config.n_p // config.n_b
    best_e, best_x, seeds_log = [], [], []
    for j in range(1, config.n_it + 1):
        order = np.argsort(E, kind="stable")[: config.n_b]
        seeds, seed_e = X[order], E[order]
        seeds_log.append(seeds.copy())
        children = _sample_box(rng, seeds, half * config.shrink ** j, per_seed, wrap, lower, upper)
        child_e = np.asarray(energy_fn(children), float)
        evaluations += len(children)
        if not np.any(np.isfinite(child_e)) and not np.any(np.isfinite(seed_e)):
            raise InferenceError(f"degenerate observations: all energies infinite in iteration {j}")
        X = np.vstack([seeds, children])
        E = np.concatenate([seed_e, child_e])
        k = int(np.argmin(E))
        best_e.append(E[k])
        best_x.append(X[k].copy())
    trace = SmcTrace(np.array(best_e), np.array(best_x).reshape(-1, d), seeds_log, evaluations)
    return X, E, trace


def min_area_rectangle(points2d):
    """Centre, (length, width) and angle (deg) of the minimum-area enclosing
    rectangle of 2D points (rotating calipers over hull edges)."""
    pts = np.asarray(points2d, float)
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return (lo + hi) / 2, hi - lo, 0.0
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    angles = np.arctan2(edges[:, 1], edges[:, 0])
    best = None
    for a in angles:
        c, s = np.cos(a), np.sin(a)
        rot = hull @ np.array([[c, -s], [s, c]])
        lo, hi = rot.min(axis=0), rot.max(axis=0)
        area = np.prod(hi - lo)
        if best is None or area < best[0] - 1e-12:
            center = np.array([[c, -s], [s, c]]) @ ((lo + hi) / 2)
            best = (area, center, hi - lo, np.degrees(a))
    return best[1], best[2], best[3]


def initialize(bundle, model, scene, config=SmcConfig()):
    """Most likely seed state and the initial particle set around it."""
    if len(bundle.points) == 0:
        raise InferenceError("no vehicle points")
    centre, _, _ = min_area_rectangle(scene.plane.to_plane(bundle.points))
    theta = heading_from_viewpoint(bundle.viewpoint.mode(), centre)
    gamma = model.mode(bundle.types.most_likely())
    seed = VehicleState(t=centre, theta=theta, gamma=np.clip(gamma, -GAMMA_CAP, GAMMA_CAP))
    rng = np.random.default_rng(config.seed)
    d = 3 + model.n_s
    wrap = np.zeros(d, bool)
    wrap[2] = True
    lower, upper = _bounds(model.n_s)
    x0 = seed.to_vector()
    X = np.vstack([x0[None], _sample_box(rng, x0[None], config.half_widths(model.n_s), config.n_p - 1,
                                         wrap, lower, upper)])
    return seed, X


def _bounds(n_s):
    lower = np.r_[-np.inf, -np.inf, -np.inf, np.full(n_s, -GAMMA_CAP)]
    upper = np.r_[np.inf, np.inf, np.inf, np.full(n_s, GAMMA_CAP)]
    return lower, upper


def run(bundle, model, scene, variant="full", config=SmcConfig(), energy_config=EnergyConfig(), lut=None):
    """Fit one vehicle; returns an :class:`SmcResult`."""
    if isinstance(variant, str):
        variant = get_variant(variant)
    em = EnergyModel(model, scene, bundle, variant, energy_config, lut)
    seed, _ = initialize(bundle, model, scene, config)
    wrap = np.zeros(3 + model.n_s, bool)
    wrap[2] = True
    lower, upper = _bounds(model.n_s)
    X, E, trace = smc_minimize(lambda x: em.evaluate_batch(x)["total"], seed.to_vector(),
                               config.half_widths(model.n_s), config, wrap, lower, upper)
    k = int(np.argmin(E))
    state = VehicleState.from_vector(X[k])
    report = em.evaluate(state)
    terms = [em.evaluate(VehicleState.from_vector(x)) for x in trace.best_x]
    return SmcResult(Particle(state, float(E[k]), config.n_it), report, trace, X, E, terms)


def write_trace(result, path, vehicle_id=None):
    """Per-iteration CSV: best energy, its term breakdown and state."""
    n_s = result.trace.best_x.shape[1] - 3
    cols = ["iteration"] + list(TERMS) + ["total", "t1", "t2", "theta"] + [f"gamma{i + 1}" for i in range(n_s)]
    if vehicle_id is not None:
        cols.insert(0, "vehicle")
    lines = [",".join(cols)]
    for j, (rep, x) in enumerate(zip(result.term_trace, result.trace.best_x), 1):
        row = [str(j)] + [repr(getattr(rep, t)) for t in TERMS] + [repr(rep.total)] + [repr(float(v)) for v in x]
        if vehicle_id is not None:
            row.insert(0, str(vehicle_id))
        lines.append(",".join(row))
    mode = "a" if vehicle_id is not None and path.exists() else "w"
    with open(path, mode) as fh:
        if mode == "a":
            lines = lines[1:]
        fh.write("\n".join(lines) + "\n")
