"""Residuals, Jacobians and total cost of the pose/contact MAP problem.

Frames: the rest pose ``o_r`` maps object coordinates into the gripper frame;
the initial cloud ``P`` lives in the t=0 gripper frame; contact points and
forces are world-frame; wrenches are gripper-frame ``[force, torque]``.
All Jacobians with respect to the rest pose are taken for a right
perturbation ``o_r * exp(xi)`` with ``xi = (omega, v)``.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry.mesh import PointCloud
from .lie import Pose, compose, cross, inverse, skew

MAX_DELTA_ANGLE = 0.5
MAX_DELTA_TRANS = 0.05


class MissingVariable(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class TimestepObservation:
    g: Pose
    delta: Pose
    wrench: np.ndarray
    contact: bool

    def __post_init__(self):
        w = np.asarray(self.wrench, dtype=float).reshape(6).copy()
        w.flags.writeable = False
        object.__setattr__(self, "wrench", w)
        object.__setattr__(self, "contact", bool(self.contact))
        if self.delta.angle > MAX_DELTA_ANGLE or np.linalg.norm(self.delta.t) > MAX_DELTA_TRANS:
            raise ValueError("in-hand displacement outside the small-displacement bound")
        object.__setattr__(self, "_grasp", compose(self.g, self.delta))

    @property
    def grasp_pose(self):
        """``g_t * delta_t``: maps rest-pose gripper coordinates to world."""
        return self._grasp


class VariableKey(NamedTuple):
    kind: str
    t: int = -1

    def __repr__(self):
        return self.kind if self.t < 0 else f"{self.kind}[{self.t}]"


REST_POSE = VariableKey("rest_pose")


def point_key(t):
    return VariableKey("contact_point", t)


def force_key(t):
    return VariableKey("contact_force", t)


class Values(dict):
    """Variable assignment: one rest pose plus (point, force) per contact timestep."""

    @property
    def rest_pose(self):
        return self[REST_POSE]

    def contact_steps(self):
        return sorted(k.t for k in self if k.kind == "contact_point")

    def contact(self, t):
        try:
            return self[point_key(t)], self[force_key(t)]
        except KeyError as exc:
            raise MissingVariable(f"no contact variables for t={t}") from exc

    def with_contact(self, t, c, f):
        out = Values(self)
        out[point_key(t)] = np.asarray(c, dtype=float).copy()
        out[force_key(t)] = np.asarray(f, dtype=float).copy()
        return out

    def check(self):
        if REST_POSE not in self:
            raise MissingVariable("rest pose missing")
        pts = {k.t for k in self if k.kind == "contact_point"}
        frc = {k.t for k in self if k.kind == "contact_force"}
        if pts != frc:
            raise MissingVariable(f"contact points and forces disagree: {sorted(pts ^ frc)}")


@dataclass(frozen=True)
class NoiseModel:
    """Per-factor standard deviations (diagonal covariances)."""

    sigma_h1: float = 0.002
    sigma_h2: float = 0.001
    sigma_h3: float = 0.001
    sigma_force: float = 0.3
    sigma_torque: float = 0.03
    # covariance of the wrench used for contact detection, kept separate from h4
    detect_force: float = 0.1
    detect_torque: float = 0.01
    epsilon: float = 4.5

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def h4_sigmas(self):
        return np.r_[np.full(3, self.sigma_force), np.full(3, self.sigma_torque)]

    @property
    def detect_sigmas(self):
        return np.r_[np.full(3, self.detect_force), np.full(3, self.detect_torque)]


def object_pose_at(rest_pose, obs):
    """``o_t = g_t * delta_t * o_r``."""
    return compose(obs.grasp_pose, rest_pose)


def _rest_jac_object_frame(y, grad):
    """d SDF(exp(-xi) y) / dxi for object-frame points y."""
    return np.hstack([cross(grad, y), -grad])


def h1_geometric_consistency(rest_pose, cloud, object_mesh, jacobian=False):
    """Signed distance of each cloud point, mapped into the object frame, to the object."""
    pts = cloud.require("gripper") if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    y = (pts - rest_pose.t) @ rest_pose.R
    d, g = object_mesh.sdf(y)
    if not jacobian:
        return d
    return d, _rest_jac_object_frame(y, g)


def h2_nonpenetration(rest_pose, obs, object_points, env_mesh, jacobian=False):
    """``min(0, SDF_env)`` of object-surface samples posed at ``g delta o_r``."""
    T = object_pose_at(rest_pose, obs)
    x = object_points @ T.R.T + T.t
    # points outside the environment's bounding box are strictly outside it
    lo, hi = env_mesh.bounds
    near = np.flatnonzero(np.all((x >= lo) & (x <= hi), axis=1))
    r = np.zeros(len(x))
    J = np.zeros((len(x), 6)) if jacobian else None
    if len(near):
        d, g = env_mesh.sdf(x[near])
        inside = d < 0.0
        idx = near[inside]
        r[idx] = d[inside]
        if jacobian and len(idx):
            gp = g[inside] @ T.R  # gradient pulled back into the object frame
            J[idx] = np.hstack([cross(object_points[idx], gp), gp])
    return (r, J) if jacobian else r


def h3_contact_kinematics(rest_pose, c, obs, env_mesh, object_mesh, jacobian=False):
    """Contact point distance to the environment and to the posed object."""
    c = np.asarray(c, dtype=float)
    T = object_pose_at(rest_pose, obs)
    y = T.R.T @ (c - T.t)
    de, ge = env_mesh.sdf(c[None])
    do, go = object_mesh.sdf(y[None])
    r = np.array([de[0], do[0]])
    if not jacobian:
        return r
    J_rest = np.zeros((2, 6))
    J_rest[1] = _rest_jac_object_frame(y[None], go)[0]
    J_c = np.vstack([ge[0], go[0] @ T.R.T])
    return r, J_rest, J_c


def contact_jacobian_wrench(c, f, g):
    """Gripper-frame wrench ``[f_g, p x f_g]`` of world force ``f`` applied at world point ``c``."""
    p = g.R.T @ (np.asarray(c, dtype=float) - g.t)
    fg = g.R.T @ np.asarray(f, dtype=float)
    return np.r_[fg, cross(p, fg)]


def h4_force_balance(c, f, obs, jacobian=False):
    r = contact_jacobian_wrench(c, f, obs.g) - obs.wrench
    if not jacobian:
        return r
    Rt = obs.g.R.T
    p = Rt @ (np.asarray(c, dtype=float) - obs.g.t)
    fg = Rt @ np.asarray(f, dtype=float)
    J_c = np.vstack([np.zeros((3, 3)), -skew(fg) @ Rt])
    J_f = np.vstack([Rt, skew(p) @ Rt])
    return r, J_c, J_f


def detect_contact(wrench, noise, epsilon=None):
    """True when the Mahalanobis norm of the wrench exceeds epsilon (strictly)."""
    eps = noise.epsilon if epsilon is None else epsilon
    if not eps > 0:
        raise ValueError("epsilon must be > 0")
    z = np.asarray(wrench, dtype=float) / noise.detect_sigmas
    return bool(np.sqrt(z @ z) > eps)


# -- factor objects -----------------------------------------------------------


class Factor:
    """A whitened residual block over a few variables."""

    keys: tuple = ()
    name = "factor"

    def whitened(self, values, jacobian=False):
        raise NotImplementedError

    def cost(self, values):
        r = self.whitened(values)
        return float(r @ r)


@dataclass(frozen=True, eq=False)
class GeometricFactor(Factor):
    cloud: np.ndarray
    object_mesh: object
    sigma: float
    name = "h1"
    keys = (REST_POSE,)

    def whitened(self, values, jacobian=False):
        out = h1_geometric_consistency(values.rest_pose, self.cloud, self.object_mesh, jacobian)
        if not jacobian:
            return out / self.sigma
        r, J = out
        return r / self.sigma, {REST_POSE: J / self.sigma}


@dataclass(frozen=True, eq=False)
class NonPenetrationFactor(Factor):
    t: int
    obs: TimestepObservation
    object_points: np.ndarray
    env_mesh: object
    sigma: float
    name = "h2"
    keys = (REST_POSE,)

    def whitened(self, values, jacobian=False):
        out = h2_nonpenetration(values.rest_pose, self.obs, self.object_points, self.env_mesh, jacobian)
        if not jacobian:
            return out / self.sigma
        r, J = out
        return r / self.sigma, {REST_POSE: J / self.sigma}


@dataclass(frozen=True, eq=False)
class ContactKinematicsFactor(Factor):
    t: int
    obs: TimestepObservation
    env_mesh: object
    object_mesh: object
    sigma: float
    name = "h3"

    @property
    def keys(self):
        return (REST_POSE, point_key(self.t))

    def whitened(self, values, jacobian=False):
        c, _ = values.contact(self.t)
        out = h3_contact_kinematics(values.rest_pose, c, self.obs, self.env_mesh, self.object_mesh, jacobian)
        if not jacobian:
            return out / self.sigma
        r, Jr, Jc = out
        return r / self.sigma, {REST_POSE: Jr / self.sigma, point_key(self.t): Jc / self.sigma}


@dataclass(frozen=True, eq=False)
class ForceBalanceFactor(Factor):
    t: int
    obs: TimestepObservation
    sigmas: np.ndarray
    name = "h4"

    @property
    def keys(self):
        return (point_key(self.t), force_key(self.t))

    def whitened(self, values, jacobian=False):
        c, f = values.contact(self.t)
        out = h4_force_balance(c, f, self.obs, jacobian)
        if not jacobian:
            return out / self.sigmas
        r, Jc, Jf = out
        s = self.sigmas[:, None]
        return r / self.sigmas, {point_key(self.t): Jc / s, force_key(self.t): Jf / s}


@dataclass(frozen=True, eq=False)
class FactorGraphState:
    """Geometry, observations and noise defining one MAP problem.

    ``cloud`` is the initial point cloud in the t=0 gripper frame and
    ``object_points`` the object-frame surface samples used for
    non-penetration.  Immutable; ``extended`` returns a new state.
    """

    object_mesh: object
    env_mesh: object
    cloud: np.ndarray
    object_points: np.ndarray
    observations: tuple = ()
    noise: NoiseModel = field(default_factory=NoiseModel)
    factor_order: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "cloud", np.asarray(self.cloud, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "object_points", np.asarray(self.object_points, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "observations", tuple(self.observations))
        if len(self.cloud) < 1:
            raise ValueError("initial point cloud is empty")
        object.__setattr__(self, "factors", self._build_factors())

    def _build_factors(self):
        nm = self.noise
        out = [GeometricFactor(self.cloud, self.object_mesh, nm.sigma_h1)]
        for t, obs in enumerate(self.observations):
            step = [NonPenetrationFactor(t, obs, self.object_points, self.env_mesh, nm.sigma_h2)]
            if obs.contact:
                step.append(ContactKinematicsFactor(t, obs, self.env_mesh, self.object_mesh, nm.sigma_h3))
                step.append(ForceBalanceFactor(t, obs, nm.h4_sigmas))
            if self.factor_order == "reversed":
                step.reverse()
            out.extend(step)
        return tuple(out)

    @property
    def contact_steps(self):
        return [t for t, o in enumerate(self.observations) if o.contact]

    def extended(self, obs):
        return replace(self, observations=self.observations + (obs,))

    def truncated(self, n):
        return replace(self, observations=self.observations[:n])

    def with_noise(self, noise):
        return replace(self, noise=noise)


def _check_values(state, values):
    values.check()
    have = set(values.contact_steps())
    need = set(state.contact_steps)
    if need - have:
        raise MissingVariable(f"contact timesteps without c_t/f_t: {sorted(need - have)}")


def cost_breakdown(state, values):
    """Whitened squared cost per factor type."""
    _check_values(state, values)
    out = {"h1": 0.0, "h2": 0.0, "h3": 0.0, "h4": 0.0}
    for fac in state.factors:
        out[fac.name] += fac.cost(values)
    return out


def total_cost(state, values):
    """H: sum of whitened squared residuals over all active factors."""
    return sum(cost_breakdown(state, values).values())
