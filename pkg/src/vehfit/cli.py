"""Command line entry points: learn-asm, gen-scene, fit, eval, export.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import assets, metrics
from .energy import TERMS, VARIANTS, EnergyError
from .inference import InferenceError, SmcConfig, run, write_trace
from .observer import NoiseSpec, ObservationBundle, ObservationError, SceneSpec, sample_frame
from .scene import GroundPlane, SceneError, StereoRig, StereoScene, read_scene_file, write_scene_file
from .shape_model import (ShapeModelError, fit_rmse, learn_asm, load_bundle, place, read_training_set,
                          save_bundle)
from .state import VehicleState
from .topology import TopologyError, read_topology

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    asm: str = None
    scene_dir: str = None
    out: str = "out"
    variant: str = "full"
    seed: int = 0
    smc: SmcConfig = field(default_factory=SmcConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    workers: int = 1
    trace: bool = False


# ------------------------------------------------------------------ config files

def read_config(path):
    """Flat ``key = value`` lines; ``#`` comments; keys use flag names with
    dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _load_model(path):
    if path is None:
        return assets.default_model()
    try:
        return load_bundle(path)
    except OSError as exc:
        raise DataError(f"cannot read ASM bundle {path}: {exc}") from exc


def _noise_from_args(args):
    base = NoiseSpec.zero() if getattr(args, "noise_zero", False) else NoiseSpec()
    over = {}
    for f in fields(NoiseSpec):
        val = getattr(args, f"noise_{f.name}", None)
        if val is not None:
            over[f.name] = float(val)
    return replace(base, **over)


def _smc_from_args(args, seed):
    try:
        return SmcConfig(n_p=int(args.np), n_it=int(args.nit), n_b=int(args.nb), shrink=float(args.shrink), seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _required(args, name):
    val = getattr(args, name, None)
    if val in (None, ""):
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return val


def _seed(args):
    if args.seed is None:
        if os.environ.get("CI"):
            raise UsageError("--seed is mandatory when CI is set")
        return 0
    return int(args.seed)


# ------------------------------------------------------------------ truth / fit tables

def _state_columns(n_s):
    return ["t1", "t2", "theta"] + [f"gamma{i + 1}" for i in range(n_s)]


def write_states(path, rows, extra_cols=()):
    """``rows``: (vehicle id, state, dict of extra columns)."""
    n_s = rows[0][1].n_s if rows else 3
    cols = ["vehicle"] + _state_columns(n_s) + list(extra_cols)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for vid, st, extra in rows:
            vals = [vid] + [repr(float(v)) for v in st.to_vector()] + [str(extra[c]) for c in extra_cols]
            fh.write(",".join(vals) + "\n")


def read_states(path):
    """Map vehicle id -> (VehicleState, dict of the remaining columns)."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty table")
    header = lines[0].split(",")
    if header[:4] != ["vehicle", "t1", "t2", "theta"]:
        raise DataError(f"{path}: unexpected header")
    n_s = sum(1 for h in header if h.startswith("gamma"))
    out = {}
    for n, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}:{n}: expected {len(header)} fields")
        try:
            vec = np.array([float(v) for v in parts[1:4 + n_s]])
            st = VehicleState(t=vec[:2], theta=vec[2], gamma=vec[3:])
        except ValueError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
        out[parts[0]] = (st, dict(zip(header[4 + n_s:], parts[4 + n_s:])))
    return out


# ------------------------------------------------------------------ commands

def cmd_learn_asm(args):
    train = Path(args.train) if args.train else assets.data_path("cad_keypoints.txt")
    files = sorted(Path(train).glob("*.txt")) if Path(train).is_dir() else [train]
    try:
        samples = [s for f in files for s in read_training_set(f)]
        topo = read_topology(args.topology) if args.topology else assets.default_topology()
    except (OSError, TopologyError, ShapeModelError) as exc:
        raise DataError(str(exc)) from exc
    if not samples:
        raise DataError(f"no training samples in {train}")
    model = learn_asm(samples, int(args.n_keep), topo)
    out = Path(_required(args, "out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(model, out)
    ks = [k for k in range(0, model.n_all + 1) if k <= 5 or k == model.n_all or k % 5 == 0]
    print("type," + ",".join(f"k{k}" for k in ks))
    for i, name in enumerate(model.type_names):
        print(name + "," + ",".join(f"{fit_rmse(model, model.type_means[i], k):.4f}" for k in ks))
    print(f"wrote {out} (C_K={model.n_keypoints}, n_all={model.n_all}, n_s={model.n_s})")
    return EXIT_OK


def cmd_gen_scene(args):
    seed = _seed(args)
    model = _load_model(args.asm)
    noise = _noise_from_args(args)
    rig = StereoRig()
    types = tuple(args.types.split(",")) if args.types else None
    if types and any(t not in model.type_names for t in types):
        raise UsageError(f"unknown type in --types; choose from {','.join(model.type_names)}")
    spec = SceneSpec(types=types)
    out = Path(_required(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows, ids = [], []
    for i in range(int(args.n)):
        vid = f"v{i:04d}"
        frame = sample_frame(model, rig, noise, rng, spec)
        vdir = out / vid
        vdir.mkdir(exist_ok=True)
        write_scene_file(vdir / "scene.txt", rig, frame.points, frame.flags)
        frame.bundle.save(vdir / "obs")
        rows.append((vid, frame.truth, {"type": frame.true_type}))
        ids.append(vid)
    write_states(out / "truth.csv", rows, ("type",))
    (out / "manifest.txt").write_text("".join(f"{v}\n" for v in ids))
    print(f"generated {len(ids)} vehicles in {out}")
    return EXIT_OK


def _fit_one(job):
    cfg, vid = job
    model = _load_model(cfg.asm)
    vdir = Path(cfg.scene_dir) / vid
    try:
        rig, pts, flags = read_scene_file(vdir / "scene.txt")
        bundle = ObservationBundle.load(vdir / "obs").validate(rig)
        scene = StereoScene.from_points(rig, pts, flags)
    except (OSError, SceneError, ObservationError) as exc:
        raise DataError(f"{vid}: {exc}") from exc
    res = run(bundle, model, scene, cfg.variant, cfg.smc)
    return vid, replace(res, particles=None, energies=None)


def run_config_from_args(args):
    seed = _seed(args)
    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; choose from {', '.join(VARIANTS)}")
    return RunConfig(asm=args.asm, scene_dir=_required(args, "scene_dir"), out=_required(args, "out"),
                     variant=args.variant, seed=seed, smc=_smc_from_args(args, seed),
                     workers=max(1, int(args.workers)), trace=bool(args.trace))


def cmd_fit(args):
    cfg = run_config_from_args(args)
    manifest = Path(cfg.scene_dir) / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"{manifest} not found")
    ids = manifest.read_text().split()
    # vehicle i uses seed + i, so results do not depend on the worker count
    jobs = [(replace(cfg, smc=replace(cfg.smc, seed=cfg.seed + i)), vid) for i, vid in enumerate(ids)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_fit_one, jobs))
    else:
        results = [_fit_one(j) for j in jobs]
    cols = list(TERMS) + ["total"]
    rows = [(vid, r.best.state, {c: repr(getattr(r.report, c)) for c in cols}) for vid, r in results]
    write_states(out / "fits.csv", rows, cols)
    if cfg.trace:
        path = out / "trace.csv"
        if path.exists():
            path.unlink()
        for vid, r in results:
            write_trace(r, path, vid)
    print(f"fitted {len(results)} vehicles with variant {cfg.variant}; results in {out}")
    return EXIT_OK


def cmd_eval(args):
    fits = read_states(_required(args, "fits"))
    truth = read_states(_required(args, "truth"))
    missing = sorted(set(truth) - set(fits))
    if missing:
        raise DataError(f"fits lack vehicles: {', '.join(missing[:5])}")
    model = _load_model(args.asm)
    plane = GroundPlane.canonical()
    records = [metrics.evaluate_pair(vid, fits[vid][0], truth[vid][0], model, plane, args.flip_tolerant)
               for vid in truth]
    out = Path(_required(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_records(records, out / "metrics.csv")
    summary = metrics.summarize(records)
    metrics.write_summary(summary, out / "summary.csv")
    text = "\n".join(f"{k:>22s}  {v:10.4f}" for k, v in summary.items())
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def draw_line(img, p, q, color):
    n = int(np.ceil(np.hypot(*(np.subtract(q, p))))) * 2 + 2
    s = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.rint(np.asarray(p) + s * (np.subtract(q, p))).astype(int)
    h, w = img.shape[:2]
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    img[pts[ok, 1], pts[ok, 0]] = color


def write_ppm(path, img):
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_mesh(path, points, tris):
    with open(path, "w") as fh:
        for p in points:
            fh.write(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        for a, b, c in tris:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def overlay(model, state, rig, plane):
    """Left-image raster with the placed model's wireframe drawn in."""
    img = np.zeros((rig.height, rig.width, 3), dtype=np.uint8)
    cam = place(model.synthesize(state.gamma), state, plane)
    uv = rig.project(cam)
    colors = {"front": (255, 64, 64), "back": (64, 64, 255), "left": (64, 255, 64), "right": (255, 255, 64)}
    for side, edges in model.topology.wireframe.items():
        for a, b in edges:
            draw_line(img, uv[a], uv[b], colors[side])
    return img, uv


def cmd_export(args):
    model = _load_model(args.asm)
    fits = read_states(_required(args, "fits"))
    vid = args.vehicle or next(iter(fits))
    if vid not in fits:
        raise DataError(f"vehicle {vid} not in {args.fits}")
    state = fits[vid][0]
    rig = StereoRig()
    plane = GroundPlane.canonical()
    if args.scene_dir:
        try:
            rig, pts, flags = read_scene_file(Path(args.scene_dir) / vid / "scene.txt")
            plane = StereoScene.from_points(rig, pts, flags).plane
        except (OSError, SceneError) as exc:
            raise DataError(str(exc)) from exc
    out = Path(_required(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(out / f"{vid}_mesh.obj", model.synthesize(state.gamma), model.topology.triangles)
    img, _ = overlay(model, state, rig, plane)
    write_ppm(out / f"{vid}_overlay.ppm", img)
    print(f"wrote {out / (vid + '_mesh.obj')} and {out / (vid + '_overlay.ppm')}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_smc_flags(p):
    p.add_argument("--variant", default="full", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--np", default=SmcConfig.n_p, help="particles per iteration")
    p.add_argument("--nit", default=SmcConfig.n_it, help="iterations")
    p.add_argument("--nb", default=SmcConfig.n_b, help="seed particles kept per iteration")
    p.add_argument("--shrink", default=SmcConfig.shrink, help="interval shrink factor per iteration")
    p.add_argument("--trace", action="store_true", help="write per-iteration trace.csv")
    p.add_argument("--workers", default=1, help="parallel vehicle fits")


def _add_noise_flags(p):
    p.add_argument("--noise-zero", action="store_true", help="start from the noise-free setting")
    for f in fields(NoiseSpec):
        p.add_argument(f"--noise-{f.name.replace('_', '-')}", dest=f"noise_{f.name}", default=None,
                       help=f"default {f.default}")


def build_parser(defaults=None):
    """Argument parser; ``defaults`` (from a config file) override the
    built-in flag defaults of every subcommand."""
    ap = argparse.ArgumentParser(prog="vehfit", description="Deformable vehicle model fitting to stereo observations.")
    ap.add_argument("--config", help="flat key=value file with defaults for the flags")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-asm", help="learn an ASM bundle from keypoint training sets")
    p.add_argument("--train", help="training file or directory of *.txt files (default: shipped CAD set)")
    p.add_argument("--topology", help="topology file (default: shipped)")
    p.add_argument("--n-keep", default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_learn_asm)

    p = sub.add_parser("gen-scene", help="synthesise scenes, observations and ground truth")
    p.add_argument("--n", default=10)
    p.add_argument("--seed", default=None)
    p.add_argument("--asm")
    p.add_argument("--types", help="comma separated truth types (default: all)")
    p.add_argument("--out")
    _add_noise_flags(p)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("fit", help="fit every vehicle of a generated scene directory")
    p.add_argument("--scene-dir")
    p.add_argument("--asm")
    p.add_argument("--seed", default=None)
    p.add_argument("--out")
    _add_smc_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="metrics of fitted states against ground truth")
    p.add_argument("--fits")
    p.add_argument("--truth")
    p.add_argument("--asm")
    p.add_argument("--flip-tolerant", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="mesh file and wireframe overlay of a fitted vehicle")
    p.add_argument("--fits")
    p.add_argument("--vehicle")
    p.add_argument("--scene-dir")
    p.add_argument("--asm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    if defaults:
        for sp in sub.choices.values():
            sp.set_defaults(**defaults)
    return ap


def _parse(argv):
    args = build_parser().parse_args(argv)
    if not args.config:
        return args
    cfg = read_config(args.config)
    unknown = set(cfg) - set(vars(args))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return build_parser(cfg).parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ObservationError, SceneError, TopologyError, metrics.MetricsError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ShapeModelError, InferenceError, EnergyError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
