import numpy as np
import pytest

from vehfit import assets, metrics
from vehfit.cli import (
    EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, overlay, read_config, read_states, write_states,
)
from vehfit.scene import GroundPlane, StereoRig
from vehfit.shape_model import load_bundle, place
from vehfit.state import VehicleState

FAST = ["--np", "20", "--nb", "2", "--nit", "3"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-scene", "--n", "3", "--seed", "5", "--out", str(root / "scenes")]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def fitted(scenes):
    out = scenes / "fit"
    args = ["fit", "--scene-dir", str(scenes / "scenes"), "--seed", "1", "--out", str(out), "--trace"]
    assert main(args + FAST) == EXIT_OK
    return out


def _sub_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(ab @ ab, 1e-12), 0, 1)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


# ---------------------------------------------------------------- learn-asm

def test_learn_asm_bundle_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.asm", tmp_path / "b.asm"
    assert main(["learn-asm", "--out", str(a)]) == EXIT_OK
    table = capsys.readouterr().out
    assert table.startswith("type,k0,") and "sedan," in table
    assert main(["learn-asm", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    model = load_bundle(a)
    np.testing.assert_array_equal(model.eigenvectors, assets.default_model().eigenvectors)


def test_learn_asm_rejects_too_many_modes(tmp_path):
    assert main(["learn-asm", "--n-keep", "500", "--out", str(tmp_path / "x.asm")]) == EXIT_NUMERIC
    assert main(["learn-asm", "--train", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "x.asm")]) == EXIT_DATA


# ---------------------------------------------------------------- gen-scene

def test_gen_scene_is_seed_deterministic(scenes, tmp_path):
    assert main(["gen-scene", "--n", "3", "--seed", "5", "--out", str(tmp_path / "again")]) == EXIT_OK
    for name in ("truth.csv", "manifest.txt", "v0001/scene.txt", "v0002/obs/kp_left.hmap"):
        assert (tmp_path / "again" / name).read_bytes() == (scenes / "scenes" / name).read_bytes()


def test_gen_scene_empty(tmp_path):
    assert main(["gen-scene", "--n", "0", "--seed", "1", "--out", str(tmp_path / "e")]) == EXIT_OK
    assert (tmp_path / "e" / "manifest.txt").read_text() == ""


def test_seed_is_mandatory_in_ci(tmp_path, monkeypatch):
    monkeypatch.setenv("CI", "1")
    assert main(["gen-scene", "--n", "1", "--out", str(tmp_path / "ci")]) == EXIT_USAGE
    assert main(["gen-scene", "--n", "0", "--seed", "3", "--out", str(tmp_path / "ci")]) == EXIT_OK


def test_unknown_type_is_a_usage_error(tmp_path):
    assert main(["gen-scene", "--n", "1", "--seed", "1", "--types", "tank", "--out", str(tmp_path)]) == EXIT_USAGE


def test_truth_table_round_trip(scenes, tmp_path):
    truth = read_states(scenes / "scenes" / "truth.csv")
    assert sorted(truth) == ["v0000", "v0001", "v0002"]
    rows = [(vid, st, extra) for vid, (st, extra) in truth.items()]
    write_states(tmp_path / "t.csv", rows, ("type",))
    assert (tmp_path / "t.csv").read_text() == (scenes / "scenes" / "truth.csv").read_text()
    assert read_states(tmp_path / "t.csv") == truth


def test_malformed_tables(tmp_path):
    (tmp_path / "bad.csv").write_text("vehicle,x,y\n")
    with pytest.raises(Exception):
        read_states(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text("vehicle,t1,t2,theta,gamma1\nv,1,2\n")
    with pytest.raises(Exception):
        read_states(tmp_path / "short.csv")


# ---------------------------------------------------------------- fit

def test_fit_outputs_and_trace(fitted):
    fits = read_states(fitted / "fits.csv")
    assert sorted(fits) == ["v0000", "v0001", "v0002"]
    assert {"e3d", "total"} <= set(next(iter(fits.values()))[1])
    lines = (fitted / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 3
    for vid in fits:
        assert sum(line.startswith(vid + ",") for line in lines) == 3


def test_fit_is_deterministic_across_workers(scenes, fitted, tmp_path):
    args = ["fit", "--scene-dir", str(scenes / "scenes"), "--seed", "1", "--out", str(tmp_path)]
    assert main(args + FAST + ["--workers", "2"]) == EXIT_OK
    assert (tmp_path / "fits.csv").read_bytes() == (fitted / "fits.csv").read_bytes()


def test_fit_usage_and_data_errors(scenes, tmp_path):
    base = ["fit", "--scene-dir", str(scenes / "scenes"), "--seed", "1", "--out", str(tmp_path)]
    assert main(base + ["--variant", "turbo"]) == EXIT_USAGE
    assert main(base + ["--np", "25", "--nb", "2"]) == EXIT_USAGE
    assert main(["fit", "--scene-dir", str(tmp_path / "none"), "--seed", "1", "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["fit", "--seed", "1", "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_file_supplies_defaults(scenes, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# fast run\nnp = 20\nnb = 2\nnit = 1\nvariant = base\n")
    assert read_config(cfg)["variant"] == "base"
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "fit", "--scene-dir", str(scenes / "scenes"), "--seed", "1",
                 "--out", str(out), "--trace"]) == EXIT_OK
    assert len((out / "trace.csv").read_text().splitlines()) == 1 + 3
    cfg.write_text("warp = 9\n")
    assert main(["--config", str(cfg), "eval"]) == EXIT_USAGE


# ---------------------------------------------------------------- eval

def test_eval_perfect_fits(scenes, tmp_path):
    truth = scenes / "scenes" / "truth.csv"
    assert main(["eval", "--fits", str(truth), "--truth", str(truth), "--out", str(tmp_path)]) == EXIT_OK
    header, values = (tmp_path / "summary.csv").read_text().splitlines()
    summary = dict(zip(header.split(","), map(float, values.split(","))))
    for key in ("t_25", "t_50", "t_75", "theta_5", "theta_10", "theta_22.5", "joint_t75_theta5"):
        assert summary[key] == 100.0
    assert summary["d_t_median"] == 0.0 and summary["keypoint_rms"] == 0.0


def test_eval_summary_recomputes_from_records(scenes, fitted, tmp_path):
    args = ["eval", "--fits", str(fitted / "fits.csv"), "--truth", str(scenes / "scenes" / "truth.csv")]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_OK
    records = metrics.read_records(tmp_path / "metrics.csv")
    again = metrics.summarize(records)
    header, values = (tmp_path / "summary.csv").read_text().splitlines()
    written = dict(zip(header.split(","), map(float, values.split(","))))
    assert set(written) == set(again)
    for k, v in again.items():
        assert written[k] == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_eval_missing_vehicle(scenes, tmp_path):
    truth = read_states(scenes / "scenes" / "truth.csv")
    rows = [(vid, st, {}) for vid, (st, _) in list(truth.items())[:2]]
    write_states(tmp_path / "partial.csv", rows)
    args = ["eval", "--fits", str(tmp_path / "partial.csv"), "--truth", str(scenes / "scenes" / "truth.csv")]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_DATA
    assert main(["eval", "--fits", str(tmp_path / "absent.csv"), "--truth", str(tmp_path / "partial.csv"),
                 "--out", str(tmp_path)]) == EXIT_DATA


# ---------------------------------------------------------------- export

def test_export_mean_model_mesh(tmp_path, model):
    st = VehicleState((12.0, 0.5), 40.0, np.zeros(model.n_s))
    write_states(tmp_path / "f.csv", [("m", st, {})])
    assert main(["export", "--fits", str(tmp_path / "f.csv"), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "m_mesh.obj").read_text().splitlines()
    verts = np.array([[float(x) for x in ln.split()[1:]] for ln in lines if ln.startswith("v ")])
    faces = np.array([[int(x) for x in ln.split()[1:]] for ln in lines if ln.startswith("f ")])
    assert len(verts) + len(faces) == len(lines)
    np.testing.assert_allclose(verts, model.mean, atol=1e-6)
    assert faces.min() == 1 and faces.max() <= len(verts)
    np.testing.assert_array_equal(faces - 1, model.topology.triangles)
    raw = (tmp_path / "m_overlay.ppm").read_bytes()
    rig = StereoRig()
    head = f"P6\n{rig.width} {rig.height}\n255\n".encode()
    assert raw.startswith(head) and len(raw) == len(head) + rig.width * rig.height * 3
    assert main(["export", "--fits", str(tmp_path / "f.csv"), "--vehicle", "zz", "--out", str(tmp_path)]) == EXIT_DATA


def test_overlay_edges_follow_projection(model):
    rig, plane = StereoRig(), GroundPlane.canonical()
    st = VehicleState((11.0, -1.0), 120.0, model.mode("van"))
    img, _ = overlay(model, st, rig, plane)
    assert img.shape == (rig.height, rig.width, 3)
    # independent projection of the placed model
    cam = place(model.synthesize(st.gamma), st, plane)
    uv = np.stack([rig.focal_px * cam[:, 0] / cam[:, 2] + rig.cx, rig.focal_px * cam[:, 1] / cam[:, 2] + rig.cy], 1)
    edges = np.array([e for es in model.topology.wireframe.values() for e in es])
    ys, xs = np.nonzero(img.any(axis=2))
    lit = np.stack([xs, ys], 1).astype(float)
    assert len(lit) > 500
    nearest = np.min([_sub_segment_distance(lit, uv[a], uv[b]) for a, b in edges], axis=0)
    assert nearest.max() <= 1.0
    # and every edge midpoint has a lit pixel within 1 px
    mids = (uv[edges[:, 0]] + uv[edges[:, 1]]) / 2
    for m in mids:
        assert np.min(np.hypot(*(lit - m).T)) <= 1.0
