"""Quasi-static single-contact simulator for an elastically grasped object.

Each timestep is solved independently (the grasp has no memory): the object
is posed at ``g_t * delta * o_r``, the deepest object-surface sample inside
the environment gets a penalty force ``k_pen * depth`` along the environment
normal, the resulting grasp wrench deflects the grasp through a diagonal
compliance, and this repeats to a fixed point.

The penalty leaves the object slightly inside the environment.  The
recorded state is the rigid limit of that solution: the gripper pose (and
with it the object and contact point) is backed off along the contact
normal by the penetration depth.  A pure translation of gripper and contact
point together leaves the grasp-frame wrench unchanged, so forces, wrenches
and displacements stay consistent while the recorded geometry touches
without penetrating.
"""

from dataclasses import dataclass, field

import numpy as np

from .factors import TimestepObservation, contact_jacobian_wrench
from .geometry.mesh import sample_surface
from .lie import Pose, compose, cross, exp


class SimulationError(RuntimeError):
    pass


class NoConvergence(SimulationError):
    pass


class InitialPenetration(SimulationError):
    pass


class EmptyPatch(SimulationError):
    pass


@dataclass(frozen=True)
class ComplianceModel:
    """Diagonal grasp stiffness in the gripper frame."""

    translational: tuple = (2e3, 2e3, 2e3)  # N/m
    rotational: tuple = (20.0, 20.0, 20.0)  # N m / rad

    def __post_init__(self):
        if min(self.translational) <= 0 or min(self.rotational) <= 0:
            raise ValueError("stiffnesses must be > 0")

    @property
    def stiffness(self):
        return np.diag(np.r_[self.translational, self.rotational])

    def displacement(self, wrench):
        """In-hand displacement produced by a gripper-frame wrench ``[f, tau]``."""
        w = np.asarray(wrench, dtype=float)
        return exp(np.r_[w[3:] / np.asarray(self.rotational), w[:3] / np.asarray(self.translational)])

    def point_compliance(self, p, n):
        """Displacement along ``n`` at gripper point ``p`` per unit force along ``n``."""
        tau = cross(p, n)
        omega = tau / np.asarray(self.rotational)
        v = n / np.asarray(self.translational)
        return float(n @ (cross(omega, p) + v))


@dataclass(frozen=True)
class ContactParams:
    k_pen: float = 1e4
    force_threshold: float = 0.05
    max_iters: int = 200
    tol: float = 1e-6


@dataclass(frozen=True)
class SimNoise:
    cloud: float = 5e-4
    delta_trans: float = 1e-4
    delta_rot: float = 1e-3
    force: float = 0.1
    torque: float = 0.01

    @classmethod
    def noiseless(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PatchSpec:
    """Two finger pads, gripper frame: ``size`` along gripper x and z, centred at ``center``."""

    size: tuple = (0.024, 0.018)
    center: tuple = (0.0, 0.0)
    depth: float = 1e-3
    samples: int = 4000


@dataclass(frozen=True)
class ViewSpec:
    viewpoint: tuple = (0.4, -0.4, 0.3)
    samples: int = 1500


@dataclass(frozen=True, eq=False)
class StepTruth:
    object_pose: Pose
    delta: Pose
    wrench: np.ndarray
    contact: bool
    point: np.ndarray = None
    force: np.ndarray = None
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class SimResult:
    observations: tuple
    truth: tuple
    trajectory: tuple
    tactile_cloud: np.ndarray
    visual_cloud: np.ndarray = None
    meta: dict = field(default_factory=dict)


def _posed(points, pose):
    return points @ pose.R.T + pose.t


DEPTH_TIE = 1e-9  # samples this close to the deepest count as tied; lowest index wins


def _deepest(d):
    return int(np.flatnonzero(d <= d.min() + DEPTH_TIE)[0])


def resolve_contact(object_points, env_mesh, rest_pose, g, compliance, params=ContactParams()):
    """Fixed point of the penalty contact / grasp compliance loop at one gripper pose.

    The wrench update is under-relaxed by ``1 / (1 + k_pen * c)``, with ``c``
    the grasp compliance at the current contact along its normal; this is
    the Newton step for the scalar depth equation and keeps the stiff
    penalty from oscillating.
    """
    w = np.zeros(6)
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        delta = compliance.displacement(w)
        x = _posed(object_points, compose(g, compose(delta, rest_pose)))
        d, grad, _, _, _ = env_mesh.query(x)
        i = _deepest(d)
        if d[i] >= 0.0:
            w_new = np.zeros(6)
            alpha = 1.0
        else:
            f = params.k_pen * (-d[i]) * grad[i]
            w_new = contact_jacobian_wrench(x[i], f, g)
            p_g = g.R.T @ (x[i] - g.t)
            n_g = g.R.T @ grad[i]
            alpha = 1.0 / (1.0 + params.k_pen * compliance.point_compliance(p_g, n_g))
        change = w_new - w
        w = w + alpha * change
        if np.linalg.norm(change) < params.tol:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"contact fixed point did not settle in {params.max_iters} iterations")

    delta = compliance.displacement(w)
    x = _posed(object_points, compose(g, compose(delta, rest_pose)))
    d, grad, _, _, _ = env_mesh.query(x)
    i = _deepest(d)
    pen = max(-d.min(), 0.0)
    force = params.k_pen * pen * grad[i]
    contact = bool(np.linalg.norm(force) > params.force_threshold)
    if not contact:
        delta = Pose.identity()
        x = _posed(object_points, compose(g, rest_pose))
        d, grad, _, _, _ = env_mesh.query(x)
        i = _deepest(d)
        pen = max(-d.min(), 0.0)
        force = np.zeros(3)
    shift = pen * grad[i] if pen > 0 else np.zeros(3)
    g_rec = Pose(g.q, g.t + shift)
    point = x[i] + shift
    wrench = contact_jacobian_wrench(point, force, g_rec) if contact else np.zeros(6)
    obj = compose(g_rec, compose(delta, rest_pose))
    if pen > 0:
        d_after, _ = env_mesh.sdf(_posed(object_points, obj))
        if d_after.min() < -1e-9:
            raise NoConvergence("contact is not a single point: backing off left samples inside the environment")
    return g_rec, StepTruth(obj, delta, wrench, contact, point if contact else None, force if contact else None, it)


def render_tactile_cloud(object_mesh, rest_pose, patch, n=None, sigma=0.0, seed=0):
    """Object-surface samples under the two finger pads, in the gripper frame."""
    rng = np.random.default_rng(seed)
    n = patch.samples if n is None else n
    pts = _posed(sample_surface(object_mesh, n, int(rng.integers(2**31))).points, rest_pose)
    y_all = _posed(object_mesh.vertices, rest_pose)[:, 1]
    y_lo, y_hi = y_all.min(), y_all.max()
    hx, hz = 0.5 * patch.size[0], 0.5 * patch.size[1]
    in_rect = (np.abs(pts[:, 0] - patch.center[0]) <= hx) & (np.abs(pts[:, 2] - patch.center[1]) <= hz)
    on_pad = (pts[:, 1] <= y_lo + patch.depth) | (pts[:, 1] >= y_hi - patch.depth)
    keep = pts[in_rect & on_pad]
    if len(keep) == 0:
        raise EmptyPatch("no object surface under the finger pads")
    if sigma > 0:
        keep = keep + rng.normal(0.0, sigma, keep.shape)
    return keep


def render_visual_cloud(object_mesh, world_pose, viewpoint, n, sigma=0.0, seed=0):
    """Surface samples whose outward normal faces the viewpoint, world frame."""
    rng = np.random.default_rng(seed)
    pts = sample_surface(object_mesh, n, int(rng.integers(2**31))).points
    _, _, _, face, _ = object_mesh.query(pts)
    x = _posed(pts, world_pose)
    nrm = object_mesh.face_normals[face] @ world_pose.R.T
    facing = np.einsum("ij,ij->i", nrm, np.asarray(viewpoint, dtype=float) - x) > 0
    x = x[facing]
    if sigma > 0:
        x = x + rng.normal(0.0, sigma, x.shape)
    return x


def simulate(
    object_mesh,
    env_mesh,
    rest_pose,
    trajectory,
    compliance=ComplianceModel(),
    noise=SimNoise(),
    seed=0,
    object_points=None,
    contact=ContactParams(),
    patch=PatchSpec(),
    view=None,
):
    """Observations and ground truth for a gripper trajectory.

    ``object_points`` are the object-frame surface samples used for contact
    detection; the estimator must use the same set for its non-penetration
    term for ground truth to be exactly feasible.
    """
    if object_points is None:
        object_points = sample_surface(object_mesh, 500, 0).points
    ss = np.random.SeedSequence(seed)
    s_tac, s_vis, s_obs = ss.spawn(3)
    rng = np.random.default_rng(s_obs)

    g0 = trajectory[0]
    d0, _ = env_mesh.sdf(_posed(object_points, compose(g0, rest_pose)))
    if d0.min() <= 1e-3:
        raise InitialPenetration(f"object starts {d0.min() * 1e3:.3f} mm from the environment (needs > 1 mm)")

    observations, truth, recorded = [], [], []
    for g in trajectory:
        g_rec, st = resolve_contact(object_points, env_mesh, rest_pose, g, compliance, contact)
        # noise draws happen every step so streams stay aligned across noise levels
        wn = rng.normal(size=6) * np.r_[np.full(3, noise.force), np.full(3, noise.torque)]
        dn = rng.normal(size=6) * np.r_[np.full(3, noise.delta_rot), np.full(3, noise.delta_trans)]
        delta_obs = compose(exp(dn), st.delta) if np.any(dn) else st.delta
        observations.append(TimestepObservation(g_rec, delta_obs, st.wrench + wn, st.contact))
        truth.append(st)
        recorded.append(g_rec)

    tactile = render_tactile_cloud(object_mesh, rest_pose, patch, sigma=noise.cloud, seed=s_tac)
    visual = None
    if view is not None:
        visual = render_visual_cloud(
            object_mesh, compose(recorded[0], rest_pose), view.viewpoint, view.samples, noise.cloud, seed=s_vis
        )
    return SimResult(tuple(observations), tuple(truth), tuple(recorded), tactile, visual)


def ground_truth_contact_index(force, torque, candidates):
    """Index of the candidate minimising ``|tau - C_l x f|`` (lowest index on ties)."""
    f = np.asarray(force, dtype=float)
    if not np.linalg.norm(f) > 0:
        raise ValueError("force must be nonzero")
    C = np.asarray(candidates, dtype=float).reshape(-1, 3)
    if len(C) < 1:
        raise ValueError("need at least one candidate")
    err = np.linalg.norm(np.asarray(torque, dtype=float) - cross(C, f), axis=1)
    return int(np.argmin(err))


def ground_truth_contact_from_ft(force, torque, candidates):
    """Candidate contact point best explaining a measured force/torque pair."""
    C = np.asarray(candidates, dtype=float).reshape(-1, 3)
    return C[ground_truth_contact_index(force, torque, C)]
