"""Subcategory-aware Active Shape Model: learning, per-type modes, synthesis,
placement on the ground plane and the binary ASM bundle format."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .topology import SIDES, Topology

EIG_TOL = 1e-6  # relative to the largest standard deviation (round-off floor of eigh)
BUNDLE_MAGIC = b"ASM1"


class ShapeModelError(ValueError):
    pass


@dataclass
class KeypointSet:
    points: np.ndarray
    type_label: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeModelError("keypoints must be an (C_K, 3) array")
        if not np.all(np.isfinite(self.points)):
            raise ShapeModelError("keypoints must be finite")

    def symmetry_violation(self, mirror):
        mirrored = self.points[mirror] * np.array([1.0, -1.0, 1.0])
        return float(np.max(np.linalg.norm(self.points - mirrored, axis=1)))


@dataclass
class DeformableVehicleModel:
    mean: np.ndarray            # (C_K, 3)
    eigenvectors: np.ndarray    # (n_all, 3*C_K), rows orthonormal
    eigen_sdevs: np.ndarray     # (n_all,), descending
    n_s: int
    type_names: tuple
    modes: np.ndarray           # (n_types, n_s)
    type_means: np.ndarray      # (n_types, C_K, 3)
    topology: Topology = field(repr=False)

    @property
    def n_keypoints(self):
        return self.mean.shape[0]

    @property
    def n_all(self):
        return len(self.eigen_sdevs)

    @property
    def sdevs(self):
        """Standard deviations of the deformation modes used for fitting."""
        return self.eigen_sdevs[: self.n_s]

    @property
    def jacobian(self):
        """(3*C_K, n_s) partial derivatives of the synthesised shape."""
        return (self.eigenvectors[: self.n_s] * self.sdevs[:, None]).T

    def mode(self, type_name):
        return self.modes[self.type_names.index(type_name)]

    def residual(self, type_name):
        """Part of a type mean the n_s-component model cannot represent."""
        i = self.type_names.index(type_name)
        fitted = self.mean.ravel() + self.jacobian @ self.modes[i]
        return (fitted - self.type_means[i].ravel()).reshape(-1, 3)

    def synthesize(self, gamma):
        return synthesize(self, gamma)

    def synthesize_many(self, gammas):
        """Vectorised synthesis for an (n, n_s) array of shape vectors."""
        g = np.atleast_2d(gammas)
        flat = self.mean.ravel() + (g * self.sdevs) @ self.eigenvectors[: self.n_s]
        return flat.reshape(len(g), -1, 3)


def principal_components(data):
    """PCA of row-sample matrix ``data`` via the (population) covariance.

    Returns mean, eigenvectors as rows and standard deviations, sorted by
    decreasing variance; negative round-off eigenvalues are clipped to 0.
    Each eigenvector's largest-magnitude entry is made positive.
    """
    data = np.asarray(data, dtype=float)
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / len(data)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T.copy()
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), pivot])
    signs[signs == 0] = 1.0
    vecs *= signs[:, None]
    return mean, vecs, np.sqrt(vals)


def learn_asm(samples, n_keep=3, topology=None):
    """Learn mean, eigenbasis and per-type modes from labelled keypoint sets."""
    if not samples:
        raise ShapeModelError("no training samples")
    n_kp = samples[0].points.shape[0]
    if any(s.points.shape[0] != n_kp for s in samples):
        raise ShapeModelError("training samples have different keypoint counts")
    if topology is not None and topology.n_keypoints != n_kp:
        raise ShapeModelError("topology keypoint count does not match samples")
    data = np.stack([s.points.ravel() for s in samples])
    mean, vecs, sdevs = principal_components(data)
    keep = sdevs > EIG_TOL * max(sdevs.max(), 1e-300)
    if sdevs.max() <= 0.0 or keep.sum() < n_keep:
        raise ShapeModelError("degenerate training set: fewer than n_keep nonzero eigenvalues")
    type_names = tuple(dict.fromkeys(s.type_label for s in samples))
    grouped = {t: [s for s in samples if s.type_label == t] for t in type_names}
    model = DeformableVehicleModel(
        mean=mean.reshape(-1, 3),
        eigenvectors=vecs[keep],
        eigen_sdevs=sdevs[keep],
        n_s=n_keep,
        type_names=type_names,
        modes=np.zeros((len(type_names), n_keep)),
        type_means=np.stack([np.mean([s.points for s in grouped[t]], axis=0) for t in type_names]),
        topology=topology,
    )
    modes = learn_modes(model, grouped)
    model.modes = np.stack([modes[t] for t in type_names])
    return model


def learn_modes(model, grouped):
    """Least-squares shape vector reproducing each type's mean shape.

    ``grouped`` maps type name to a list of KeypointSet (or an array of
    points already averaged).
    """
    A = model.jacobian
    AtA = A.T @ A
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise ShapeModelError("Jacobian is rank deficient")
    modes = {}
    for name, members in grouped.items():
        if isinstance(members, np.ndarray):
            target = members
        else:
            target = np.mean([m.points for m in members], axis=0)
        rhs = A.T @ (target.ravel() - model.mean.ravel())
        modes[name] = np.linalg.solve(AtA, rhs)
    return modes


def synthesize(model, gamma):
    """Deformed keypoints ``m + sum_s gamma_s sigma_s e_s`` as (C_K, 3)."""
    gamma = np.asarray(gamma, dtype=float).ravel()
    if len(gamma) != model.n_s:
        raise ShapeModelError(f"expected {model.n_s} shape parameters, got {len(gamma)}")
    return model.synthesize_many(gamma[None])[0]


def fit_rmse(model, target, n_components):
    """RMS keypoint distance after projecting ``target`` onto the first
    ``n_components`` deformation modes (least squares)."""
    k = n_components
    A = (model.eigenvectors[:k] * model.eigen_sdevs[:k, None]).T
    delta = np.asarray(target, float).ravel() - model.mean.ravel()
    if k == 0:
        resid = delta
    else:
        g, *_ = np.linalg.lstsq(A, delta, rcond=None)
        resid = delta - A @ g
    return float(np.sqrt(np.mean(np.sum(resid.reshape(-1, 3) ** 2, axis=1))))


def rotation_z(theta_deg):
    c, s = np.cos(np.radians(theta_deg)), np.sin(np.radians(theta_deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def place(points, state, plane):
    """Body-frame points to camera coordinates: rotate by the heading about the
    plane normal, shift by ``t`` within the plane, then map plane to camera."""
    R = rotation_z(state.theta)
    local = np.asarray(points, float) @ R.T + np.array([state.t[0], state.t[1], 0.0])
    return local @ plane.basis.T + plane.origin


def unplace(points, state, plane):
    """Inverse of :func:`place`."""
    R = rotation_z(state.theta)
    local = (np.asarray(points, float) - plane.origin) @ plane.basis
    return (local - np.array([state.t[0], state.t[1], 0.0])) @ R


# ---------------------------------------------------------------- file formats

def write_training_set(samples, path):
    with open(path, "w") as fh:
        for s in samples:
            coords = " ".join(f"{v:.17g}" for v in s.points.ravel())
            fh.write(f"{s.type_label} {coords}\n")


def read_training_set(path):
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            vals = np.array([float(v) for v in parts[1:]])
            if len(vals) % 3:
                raise ShapeModelError(f"{path}:{lineno}: coordinate count not a multiple of 3")
            samples.append(KeypointSet(vals.reshape(-1, 3), parts[0]))
    return samples


def _pack_index_block(arr):
    arr = np.asarray(arr, dtype="<u4").ravel()
    return struct.pack("<I", len(arr)) + arr.tobytes()


def _pack_str(s):
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def save_bundle(model, path):
    """Write the self-describing little-endian ASM bundle."""
    topo = model.topology
    out = [BUNDLE_MAGIC,
           struct.pack("<IIII", model.n_keypoints, model.n_all, model.n_s, len(model.type_names))]
    out += [_pack_str(t) for t in model.type_names]
    for block in (model.mean, model.eigenvectors, model.eigen_sdevs, model.modes, model.type_means):
        out.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    out.append(_pack_index_block(topo.triangles))
    for side in SIDES:
        out.append(_pack_index_block(topo.wireframe[side]))
    out.append(_pack_index_block(topo.appearance))
    out.append(_pack_index_block(topo.mirror))
    out.append(struct.pack("<I", len(topo.groups)))
    for name, idx in topo.groups.items():
        out += [_pack_str(name), _pack_index_block(idx)]
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_bundle(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != BUNDLE_MAGIC:
        raise ShapeModelError(f"{path}: not an ASM1 bundle")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ShapeModelError(f"{path}: truncated bundle")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    def take_str():
        (n,) = struct.unpack("<H", take(2))
        return take(n).decode()

    def take_f8(*shape):
        n = int(np.prod(shape))
        return np.frombuffer(take(8 * n), dtype="<f8").astype(float).reshape(shape)

    def take_idx(cols=None):
        (n,) = struct.unpack("<I", take(4))
        arr = np.frombuffer(take(4 * n), dtype="<u4").astype(np.int64)
        return arr.reshape(-1, cols) if cols else arr

    n_kp, n_all, n_s, n_types = struct.unpack("<IIII", take(16))
    names = tuple(take_str() for _ in range(n_types))
    mean = take_f8(n_kp, 3)
    vecs = take_f8(n_all, 3 * n_kp)
    sdevs = take_f8(n_all)
    modes = take_f8(n_types, n_s)
    type_means = take_f8(n_types, n_kp, 3)
    tris = take_idx(3)
    wire = {side: take_idx(2) for side in SIDES}
    app = take_idx()
    mirror = take_idx()
    (n_groups,) = struct.unpack("<I", take(4))
    groups = {}
    for _ in range(n_groups):
        name = take_str()
        groups[name] = take_idx()
    if pos != len(buf):
        raise ShapeModelError(f"{path}: trailing bytes in bundle")
    topo = Topology(n_kp, tris, wire, app, mirror, groups).validate()
    return DeformableVehicleModel(mean, vecs, sdevs, n_s, names, modes, type_means, topo)
