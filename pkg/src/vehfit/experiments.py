"""Closed-loop helpers shared by the experiment scripts and the acceptance suite.

Frames carry full heatmap stacks (about 16 MB each), so loops stream them:
each frame is generated, fitted with every requested variant, evaluated and
dropped.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import islice

import numpy as np
from scipy.stats import bootstrap

from .energy import EnergyModel, get_variant
from .inference import SmcConfig, run
from .metrics import evaluate_pair
from .observer import NoiseSpec, SceneSpec, sample_frame
from .scene import GroundPlane, StereoRig, StereoScene
from .state import VehicleState


@dataclass
class LoopConfig:
    n: int = 100
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec.zero)
    scene: SceneSpec = field(default_factory=SceneSpec)
    smc: SmcConfig = field(default_factory=SmcConfig)
    workers: int = 1


@dataclass
class FitOutcome:
    state: VehicleState
    energy: float
    best_trace: np.ndarray
    seconds: float


@dataclass
class LoopResult:
    truths: list
    types: list
    outcomes: dict   # variant -> [FitOutcome]
    records: dict    # variant -> [EvalRecord]

    def seconds(self, variant):
        return float(sum(o.seconds for o in self.outcomes[variant]))


def iter_frames(model, cfg, rig=None):
    """``cfg.n`` synthetic vehicles from one generator seeded by ``cfg.seed``."""
    rig = rig or StereoRig()
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.n):
        yield sample_frame(model, rig, cfg.noise, rng, cfg.scene)


def frame_at(model, cfg, index, rig=None):
    return next(islice(iter_frames(model, replace(cfg, n=index + 1), rig), index, None))


def _fit(job):
    frame, model, variant, smc, rig = job
    t0 = time.perf_counter()
    scene = StereoScene.from_points(rig, frame.points, frame.flags)
    res = run(frame.bundle, model, scene, variant, smc)
    return FitOutcome(res.best.state, res.best.energy, res.trace.best_energy, time.perf_counter() - t0)


def run_closed_loop(model, cfg, variants=("full",), rig=None, plane=None):
    """Generate, fit and evaluate ``cfg.n`` vehicles.

    Vehicle ``i`` uses sampler seed ``cfg.smc.seed + i`` for every variant, so
    results do not depend on ``cfg.workers``.
    """
    rig = rig or StereoRig()
    plane = plane or GroundPlane.canonical()
    out = LoopResult([], [], {v: [] for v in variants}, {v: [] for v in variants})
    frames = iter_frames(model, cfg, rig)
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        i = 0
        while True:
            chunk = list(islice(frames, max(1, cfg.workers)))
            if not chunk:
                break
            for v in variants:
                jobs = [(f, model, v, replace(cfg.smc, seed=cfg.smc.seed + i + k), rig) for k, f in enumerate(chunk)]
                fits = list(pool.map(_fit, jobs)) if pool else [_fit(j) for j in jobs]
                for k, (f, o) in enumerate(zip(chunk, fits)):
                    out.outcomes[v].append(o)
                    out.records[v].append(evaluate_pair(f"v{i + k:04d}", o.state, f.truth, model, plane))
            out.truths += [f.truth for f in chunk]
            out.types += [f.true_type for f in chunk]
            i += len(chunk)
    finally:
        if pool:
            pool.shutdown()
    return out


def recovery_rate(records, t_tol=0.25, theta_tol=5.0):
    ok = [r.d_t < t_tol and r.d_theta < theta_tol for r in records]
    return float(np.mean(ok))


def paired_mean_difference(a, b, seed=0, n_resamples=10_000, confidence=0.95):
    """Bootstrap interval of ``mean(a) - mean(b)`` over paired samples."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    res = bootstrap((a, b), lambda x, y, axis=-1: np.mean(x, axis=axis) - np.mean(y, axis=axis),
                    paired=True, n_resamples=n_resamples, confidence_level=confidence,
                    rng=np.random.default_rng(seed))
    ci = res.confidence_interval
    return float(np.mean(a) - np.mean(b)), (float(ci.low), float(ci.high))


def perturbation_check(frame, model, variant="full", n=1000, seed=0, rig=None, dt=0.5, dtheta=10.0, dgamma=1.0):
    """Energy of the true state and the lowest energy among ``n`` uniform
    perturbations of it."""
    rig = rig or StereoRig()
    scene = StereoScene.from_points(rig, frame.points, frame.flags)
    em = EnergyModel(model, scene, frame.bundle, get_variant(variant))
    x = frame.truth.to_vector()
    half = np.r_[dt, dt, dtheta, np.full(len(x) - 3, dgamma)]
    X = x + np.random.default_rng(seed).uniform(-1.0, 1.0, (n, len(x))) * half
    X[:, 2] = np.mod(X[:, 2], 360.0)
    truth_e = float(em.evaluate_batch(x[None])["total"][0])
    return truth_e, float(em.evaluate_batch(X)["total"].min())
