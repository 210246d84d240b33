from dataclasses import dataclass

import numpy as np

GAMMA_CAP = 6.0


def wrap_deg(angle):
    """Wrap degrees to [0, 360)."""
    out = np.mod(angle, 360.0)
    # np.mod(-1e-17, 360) == 360.0 in floating point
    return np.where(out >= 360.0, 0.0, out) if np.ndim(out) else (0.0 if out >= 360.0 else float(out))


def angle_diff_deg(a, b):
    """Absolute angular difference in [0, 180]."""
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b) + 180.0, 360.0) - 180.0)
    return d if np.ndim(d) else float(d)


@dataclass(frozen=True)
class VehicleState:
    """Position ``t`` on the ground plane (m, plane axes forward/left), heading
    ``theta`` about the plane normal (deg, counter-clockwise from the forward
    axis), and shape vector ``gamma``."""

    t: tuple
    theta: float
    gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "theta", wrap_deg(float(self.theta)))
        g = tuple(float(v) for v in np.ravel(self.gamma))
        if any(abs(v) > GAMMA_CAP for v in g):
            raise ValueError(f"shape parameter outside sanity cap +/-{GAMMA_CAP}")
        object.__setattr__(self, "gamma", g)
        if len(self.t) != 2:
            raise ValueError("t must have two in-plane components")

    @property
    def n_s(self):
        return len(self.gamma)

    def to_vector(self):
        return np.array([*self.t, self.theta, *self.gamma])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(t=(v[0], v[1]), theta=v[2], gamma=np.clip(v[3:], -GAMMA_CAP, GAMMA_CAP))
