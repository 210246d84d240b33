"""Evaluation statistics for fitted vehicle states."""

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .meshdist import point_mesh_distance
from .shape_model import place
from .state import angle_diff_deg

MAD_SCALE = 1.4826
T_THRESHOLDS = (0.25, 0.50, 0.75)        # m
THETA_THRESHOLDS = (5.0, 10.0, 22.5)     # deg


class MetricsError(ValueError):
    pass


@dataclass
class EvalRecord:
    vehicle: str
    d_t: float
    d_theta: float
    lateral: float
    longitudinal: float
    d_length: float
    d_width: float
    d_height: float
    d_rms: float
    distance: float
    difficulty: str = ""
    surface_rmse: float = float("nan")


def orientation_error(est_deg, ref_deg, flip_tolerant=False):
    """Absolute heading difference in [0, 180]; with ``flip_tolerant`` a
    front/back confusion counts as no error."""
    d = angle_diff_deg(est_deg, ref_deg)
    return np.minimum(d, 180.0 - d) if flip_tolerant else d


def split_lateral_longitudinal(error, view_dir):
    """Longitudinal part is the projection on the unit viewing direction,
    lateral the remaining in-plane component."""
    e = np.asarray(error, float)
    v = np.asarray(view_dir, float)
    if not np.isclose(np.linalg.norm(v), 1.0, atol=1e-9):
        raise MetricsError("viewing direction must be a unit vector")
    lon = float(e @ v)
    lat = float(np.linalg.norm(e - lon * v))
    return lat, abs(lon)


def perpendicular_error(theta_err_deg, distance):
    if np.any(np.asarray(distance) <= 0):
        raise MetricsError("distance must be positive")
    out = np.asarray(distance) * np.tan(np.radians(theta_err_deg))
    return out if np.ndim(out) else float(out)


def robust_stats(errors):
    e = np.asarray(errors, float)
    if e.size == 0:
        raise MetricsError("no errors given")
    med = float(np.median(e))
    return {"median": med, "sigma_mad": MAD_SCALE * float(np.median(np.abs(e - med)))}


def percentile_metrics(records):
    """Percentage of vehicles under each position and orientation threshold,
    plus the joint 0.75 m / 5 deg rate."""
    if not records:
        raise MetricsError("no records given")
    dt = np.array([r.d_t for r in records])
    dth = np.array([r.d_theta for r in records])
    out = {f"t_{int(round(th * 100))}": 100.0 * np.mean(dt < th) for th in T_THRESHOLDS}
    out.update({f"theta_{th:g}": 100.0 * np.mean(dth < th) for th in THETA_THRESHOLDS})
    out["joint_t75_theta5"] = 100.0 * np.mean((dt < T_THRESHOLDS[-1]) & (dth < THETA_THRESHOLDS[0]))
    return out


def d_rms(est_points, ref_points):
    a = np.asarray(est_points, float)
    b = np.asarray(ref_points, float)
    if a.shape != b.shape:
        raise MetricsError("keypoint counts differ")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def keypoint_rms(est_sets, ref_sets):
    """Dataset keypoint error: root of the mean squared per-vehicle d_rms."""
    if len(est_sets) != len(ref_sets) or not est_sets:
        raise MetricsError("need matching, non-empty lists of keypoint sets")
    per = np.array([d_rms(a, b) for a, b in zip(est_sets, ref_sets)])
    return float(np.sqrt(np.mean(per ** 2)))


def surface_rmse(points, verts, tris):
    pts = np.asarray(points, float)
    if len(pts) == 0:
        raise MetricsError("empty point cloud")
    d = point_mesh_distance(pts, verts, tris)
    return float(np.sqrt(np.mean(d ** 2)))


def box_dimensions(points):
    """Length, width and height of the body-frame keypoint box."""
    p = np.asarray(points, float)
    ext = p.max(axis=0) - p.min(axis=0)
    return float(ext[0]), float(ext[1]), float(p[:, 2].max())


def difficulty(distance):
    if distance < 10.0:
        return "easy"
    return "moderate" if distance < 15.0 else "hard"


def evaluate_pair(vehicle, est, ref, model, plane, flip_tolerant=False, ref_cloud=None):
    """Record for one fitted state ``est`` against reference state ``ref``.

    ``ref_cloud`` (camera frame) optionally adds the RMSE of its distances to
    the fitted surface.
    """
    err = np.subtract(est.t, ref.t)
    ref_cam = plane.from_plane(np.array(ref.t))[0]
    dist = float(np.linalg.norm(ref_cam))
    # the camera foot point is the plane origin, so the in-plane viewing ray is t itself
    view = np.array(ref.t) / np.linalg.norm(ref.t)
    lat, lon = split_lateral_longitudinal(err, view)
    est_pts = model.synthesize(est.gamma)
    ref_pts = model.synthesize(ref.gamma)
    le, we, he = box_dimensions(est_pts)
    lr, wr, hr = box_dimensions(ref_pts)
    return EvalRecord(
        vehicle=str(vehicle),
        d_t=float(np.linalg.norm(err)),
        d_theta=float(orientation_error(est.theta, ref.theta, flip_tolerant)),
        lateral=lat, longitudinal=lon,
        d_length=abs(le - lr), d_width=abs(we - wr), d_height=abs(he - hr),
        d_rms=d_rms(est_pts, ref_pts),
        distance=dist,
        difficulty=difficulty(dist),
        surface_rmse=(surface_rmse(ref_cloud, place(est_pts, est, plane), model.topology.triangles)
                      if ref_cloud is not None else float("nan")),
    )


def summarize(records):
    """Percentages, robust statistics and dataset keypoint error."""
    out = percentile_metrics(records)
    for key in ("d_t", "d_theta", "lateral", "longitudinal", "d_length", "d_width", "d_height"):
        s = robust_stats([getattr(r, key) for r in records])
        out[f"{key}_median"] = s["median"]
        out[f"{key}_sigma_mad"] = s["sigma_mad"]
    out["keypoint_rms"] = float(np.sqrt(np.mean([r.d_rms ** 2 for r in records])))
    out["n"] = len(records)
    return out


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(records[0])) if records else list(EvalRecord.__annotations__))
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_records(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        kw = {k: (v if k in ("vehicle", "difficulty") else float(v)) for k, v in row.items()}
        out.append(EvalRecord(**kw))
    return out


def write_summary(summary, path):
    keys = list(summary)
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(repr(float(summary[k])) for k in keys) + "\n")
