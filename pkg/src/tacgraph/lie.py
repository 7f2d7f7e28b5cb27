"""SE(3) poses stored as unit quaternion + translation.

Tangent vectors are ordered ``(omega, v)``: rotation first (rad), then
translation (m).  Solver updates use right perturbation,
``retract(p, xi) = p * exp(xi)``.
"""

from dataclasses import dataclass, field

import numpy as np

LOG_PI_MARGIN = 1e-6


class LogNearPi(ValueError):
    """Rotation angle too close to pi for a well-defined logarithm."""


def cross(a, b):
    """``np.cross`` for (..., 3) arrays without its axis-shuffling overhead."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return np.array(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t``.  Immutable; quaternion renormalised on construction."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        n = np.sqrt(q @ q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and nonzero")
        q = q / n
        t = np.asarray(self.t, dtype=float).reshape(3).copy()
        q.flags.writeable = False
        t.flags.writeable = False
        R = quat_to_matrix(q)
        R.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "R", R)

    @classmethod
    def _make(cls, q, t):
        # trusted fast path: q is a finite float (4,) array, t a float (3,) array
        q = q / np.sqrt(q @ q)
        q.flags.writeable = False
        t.flags.writeable = False
        R = quat_to_matrix(q)
        R.flags.writeable = False
        p = object.__new__(cls)
        object.__setattr__(p, "q", q)
        object.__setattr__(p, "t", t)
        object.__setattr__(p, "R", R)
        return p

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)):
        return cls(exp(np.concatenate([np.asarray(rotvec, float), np.zeros(3)])).q, t)

    @classmethod
    def from_translation(cls, t):
        return cls(t=t)

    @classmethod
    def from_list(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError(f"pose needs 7 numbers [qw,qx,qy,qz,tx,ty,tz], got shape {values.shape}")
        return cls(values[:4], values[4:])

    def to_list(self):
        return [float(v) for v in np.concatenate([self.q, self.t])]

    @property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @property
    def angle(self):
        """Rotation angle in [0, pi]."""
        return 2.0 * np.arctan2(np.linalg.norm(self.q[1:]), abs(self.q[0]))

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return inverse(self)

    def act(self, x):
        return act(self, x)

    def __repr__(self):
        q = np.array2string(self.q, precision=6)
        t = np.array2string(self.t, precision=6)
        return f"Pose(q={q}, t={t})"


def compose(a, b):
    return Pose._make(quat_mul(a.q, b.q), a.R @ b.t + a.t)


def inverse(p):
    q_inv = p.q * np.array([1.0, -1.0, -1.0, -1.0])
    return Pose(q_inv, -(p.R.T @ p.t))


def act(p, x):
    """Apply ``p`` to a point (3,) or an array of points (N, 3)."""
    x = np.asarray(x, dtype=float)
    return x @ p.R.T + p.t


def _so3_coeffs(theta):
    # A = sin/theta, B = (1 - cos)/theta^2, C = (theta - sin)/theta^3
    if theta < 1e-4:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / (theta * theta), (theta - s) / theta**3


def exp(xi):
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = np.sqrt(w @ w)
    half = 0.5 * theta
    if theta < 1e-4:
        k = 0.5 - theta * theta / 48.0
    else:
        k = np.sin(half) / theta
    q = np.concatenate([[np.cos(half)], k * w])
    _, B, C = _so3_coeffs(theta)
    W = skew(w)
    V = np.eye(3) + B * W + C * (W @ W)
    return Pose(q, V @ v)


def log(p):
    q = p.q if p.q[0] >= 0 else -p.q
    qv = q[1:]
    s = np.sqrt(qv @ qv)
    theta = 2.0 * np.arctan2(s, q[0])
    if theta >= np.pi - LOG_PI_MARGIN:
        raise LogNearPi(f"rotation angle {theta:.9f} rad is within {LOG_PI_MARGIN} of pi")
    if s < 1e-8:
        w = (2.0 / q[0]) * (1.0 - s * s / (3.0 * q[0] * q[0])) * qv
    else:
        w = (theta / s) * qv
    W = skew(w)
    if theta < 1e-4:
        d = 1.0 / 12.0 + theta * theta / 720.0
    else:
        d = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)
    V_inv = np.eye(3) - 0.5 * W + d * (W @ W)
    return np.concatenate([w, V_inv @ p.t])


def retract(p, xi):
    return compose(p, exp(xi))


def rot_x(angle):
    return Pose.from_rotvec([angle, 0.0, 0.0])


def rot_y(angle):
    return Pose.from_rotvec([0.0, angle, 0.0])


def rot_z(angle):
    return Pose.from_rotvec([0.0, 0.0, angle])


def trans(x=0.0, y=0.0, z=0.0):
    return Pose(t=[x, y, z])


def random_pose(rng, max_angle=np.pi, max_trans=1.0):
    """Random pose with rotation angle below ``max_angle`` (uniform axis)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Pose(exp(np.concatenate([angle * axis, np.zeros(3)])).q, rng.uniform(-max_trans, max_trans, 3))
