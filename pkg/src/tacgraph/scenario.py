"""Scenarios: one grasped object, a poke trajectory, observations and ground truth.

A scenario is stored as a single JSON document (``"schema": 1``).  Meshes
are referenced, not embedded: ``builtin:<name>`` or a path to an OBJ file.
Poses are 7-lists ``[qw, qx, qy, qz, tx, ty, tz]``.
"""

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, EstimatorConfig, GenConfig
from .factors import TimestepObservation
from .geometry.mesh import load_mesh, sample_surface
from .lie import Pose, compose, inverse, rot_x, rot_y, rot_z
from .sim import NoConvergence, simulate

GRIPPER_GRASP_AXIS = np.array([0.0, 1.0, 0.0])
# gripper z points from the palm to the fingertips, i.e. down when hovering
GRIPPER_BASE = rot_x(np.pi)


class ScenarioError(ValueError):
    pass


@functools.lru_cache(maxsize=32)
def _load_cached(ref):
    return load_mesh(ref)


def get_mesh(ref, base_dir=None):
    """Load (and cache) a mesh reference; relative paths resolve against ``base_dir``."""
    ref = str(ref)
    if not ref.startswith("builtin:") and base_dir is not None and not Path(ref).is_absolute():
        cand = Path(base_dir) / ref
        if cand.exists():
            ref = str(cand.resolve())
    return _load_cached(ref)


def align_to_grasp(axis):
    """Rotation taking the object-frame unit ``axis`` onto the gripper grasp axis."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    c = float(a @ GRIPPER_GRASP_AXIS)
    if c > 1.0 - 1e-12:
        return Pose.identity()
    if c < -1.0 + 1e-12:
        return rot_z(np.pi)
    k = np.cross(a, GRIPPER_GRASP_AXIS)
    k = k / np.linalg.norm(k)
    return Pose.from_rotvec(k * np.arccos(np.clip(c, -1.0, 1.0)))


def grasp_rest_pose(object_mesh, axis, yaw, offset=(0.0, 0.0)):
    """Rest pose with ``axis`` along the grasp axis, turned by ``yaw`` about it.

    The object centroid sits at the grasp centre shifted by ``offset``
    along gripper x and z.
    """
    R = compose(Pose.from_rotvec(GRIPPER_GRASP_AXIS * yaw), align_to_grasp(axis)).R
    t = -R @ object_mesh.centroid + np.array([offset[0], 0.0, offset[1]])
    return Pose.from_rt(R, t)


def _min_clearance(points, env_mesh, pose):
    d, _ = env_mesh.sdf(points @ pose.R.T + pose.t)
    return float(d.min())


def place_at_clearance(object_points, env_mesh, rest_pose, R_g, xy, clearance, max_iters=50):
    """Gripper pose with orientation ``R_g`` above ``xy`` whose object clears the environment by ``clearance``.

    Moves along world z; the minimum signed distance has unit slope there
    for a horizontal support, so this converges in a couple of steps.
    """
    z = 1.0
    for _ in range(max_iters):
        g = Pose.from_rt(R_g, [xy[0], xy[1], z])
        d = _min_clearance(object_points, env_mesh, compose(g, rest_pose))
        if abs(d - clearance) < 1e-12:
            break
        z += clearance - d
    return Pose.from_rt(R_g, [xy[0], xy[1], z])


def poke_trajectory(object_points, env_mesh, rest_pose, traj_cfg):
    """Gripper poses: hover, then (hover, press) for every poke.

    A press is placed where the rigidly held object would reach ``depth``
    below the environment surface; compliance makes the realised
    penetration smaller.
    """
    out = []
    for k, poke in enumerate(traj_cfg.pokes):
        a, b = np.deg2rad(poke.tilt_deg)
        R_g = compose(rot_y(b), compose(rot_x(a), GRIPPER_BASE)).R
        hover = place_at_clearance(object_points, env_mesh, rest_pose, R_g, traj_cfg.position_xy, traj_cfg.hover_clearance_m)
        press = place_at_clearance(object_points, env_mesh, rest_pose, R_g, traj_cfg.position_xy, -poke.depth_m)
        if k == 0:
            out.append(hover)
        out += [hover, press]
    return out


def _pose_list(p):
    return p.to_list()


def _cloud_list(x):
    return None if x is None else np.asarray(x, dtype=float).tolist()


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    object_name: str
    object_mesh: str
    env_mesh: str
    observations: tuple
    tactile_cloud: np.ndarray  # t=0 gripper frame
    visual_cloud: np.ndarray = None  # world frame
    samples_n: int = 500
    samples_seed: int = 0
    canonical_axes: tuple = ((0.0, 1.0, 0.0),)
    seed: int = 0
    noise: dict = field(default_factory=dict)
    compliance: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    truth: dict = None
    base_dir: str = None

    def __post_init__(self):
        if len(self.observations) < 1:
            raise ScenarioError("scenario needs at least one timestep")
        object.__setattr__(self, "tactile_cloud", np.asarray(self.tactile_cloud, dtype=float).reshape(-1, 3))
        if self.visual_cloud is not None:
            object.__setattr__(self, "visual_cloud", np.asarray(self.visual_cloud, dtype=float).reshape(-1, 3))

    # -- derived ---------------------------------------------------------------

    @property
    def trajectory(self):
        return [o.g for o in self.observations]

    @property
    def object(self):
        return get_mesh(self.object_mesh, self.base_dir)

    @property
    def env(self):
        return get_mesh(self.env_mesh, self.base_dir)

    @property
    def object_points(self):
        return sample_surface(self.object, self.samples_n, self.samples_seed).points

    @property
    def estimator_config(self):
        return EstimatorConfig.model_validate(self.estimator)

    def initial_cloud(self, mode="tactile"):
        """Initial cloud P in the t=0 gripper frame for ``tactile`` or ``vision+tactile``."""
        if mode == "tactile":
            return self.tactile_cloud
        if mode == "vision+tactile":
            if self.visual_cloud is None or len(self.visual_cloud) == 0:
                raise ScenarioError(f"{self.id}: no visual cloud for mode {mode!r}")
            g0 = self.observations[0].g
            return np.vstack([self.tactile_cloud, (self.visual_cloud - g0.t) @ g0.R])
        raise ScenarioError(f"unknown mode {mode!r}")

    @property
    def true_rest_pose(self):
        return None if self.truth is None else Pose.from_list(self.truth["rest_pose"])

    # -- serialisation ---------------------------------------------------------

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "id": self.id,
            "seed": self.seed,
            "object": {
                "name": self.object_name,
                "mesh": self.object_mesh,
                "canonical_axes": [list(a) for a in self.canonical_axes],
                "samples": {"n": self.samples_n, "seed": self.samples_seed},
            },
            "environment": self.env_mesh,
            "noise": self.noise,
            "compliance": self.compliance,
            "estimator": self.estimator,
            "observations": [
                {"g": _pose_list(o.g), "delta": _pose_list(o.delta), "wrench": o.wrench.tolist(), "contact": o.contact}
                for o in self.observations
            ],
            "clouds": {"tactile": _cloud_list(self.tactile_cloud), "visual": _cloud_list(self.visual_cloud)},
            "ground_truth": self.truth,
        }

    @classmethod
    def from_dict(cls, d, base_dir=None):
        if d.get("schema") != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}")
        try:
            obs = tuple(
                TimestepObservation(Pose.from_list(o["g"]), Pose.from_list(o["delta"]), o["wrench"], o["contact"])
                for o in d["observations"]
            )
            ob = d["object"]
            return cls(
                id=d["id"],
                object_name=ob["name"],
                object_mesh=ob["mesh"],
                env_mesh=d["environment"],
                observations=obs,
                tactile_cloud=d["clouds"]["tactile"],
                visual_cloud=d["clouds"].get("visual"),
                samples_n=int(ob["samples"]["n"]),
                samples_seed=int(ob["samples"]["seed"]),
                canonical_axes=tuple(tuple(a) for a in ob["canonical_axes"]),
                seed=int(d.get("seed", 0)),
                noise=d.get("noise", {}),
                compliance=d.get("compliance", {}),
                estimator=d.get("estimator", {}),
                truth=d.get("ground_truth"),
                base_dir=base_dir,
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc!r}") from None

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=str(path.parent))


def _truth_block(rest_pose, sim, grasp):
    contacts = []
    for t, st in enumerate(sim.truth):
        if st.contact:
            contacts.append({"t": t, "point": st.point.tolist(), "force": st.force.tolist()})
    return {
        "rest_pose": rest_pose.to_list(),
        "object_poses": [st.object_pose.to_list() for st in sim.truth],
        "deltas": [st.delta.to_list() for st in sim.truth],
        "contacts": contacts,
        "grasp": grasp,
    }


def generate_scenario(cfg, obj, index, max_attempts=20):
    """Draw a grasp, build the poke trajectory and simulate it.

    Grasps whose contact fixed point does not settle to a single point are
    redrawn (up to ``max_attempts``).
    """
    mesh_ref, axes = obj.resolved()
    M_o = get_mesh(mesh_ref)
    M_e = get_mesh(cfg.environment)
    P_obj = sample_surface(M_o, cfg.object_samples.n, cfg.object_samples.seed).points
    ss = np.random.SeedSequence([cfg.seed, index, sum(obj.name.encode())])
    last = None
    for attempt in range(max_attempts):
        s_grasp, s_sim = ss.spawn(2)
        rng = np.random.default_rng(s_grasp)
        axis_idx = int(rng.integers(len(axes))) if cfg.grasp.flip else 0
        half = np.deg2rad(cfg.grasp.yaw_range_deg) / 2
        yaw = float(rng.uniform(-half, half))
        off = rng.uniform(-cfg.grasp.offset_range_m, cfg.grasp.offset_range_m, 2)
        o_r = grasp_rest_pose(M_o, axes[axis_idx], yaw, off)
        traj = poke_trajectory(P_obj, M_e, o_r, cfg.trajectory)
        seed = int(s_sim.generate_state(1)[0])
        try:
            sim = simulate(
                M_o,
                M_e,
                o_r,
                traj,
                compliance=cfg.compliance.to_model(),
                noise=cfg.noise.to_sim(),
                seed=seed,
                object_points=P_obj,
                contact=cfg.contact.to_params(),
                patch=cfg.tactile.to_spec(),
                view=cfg.visual.to_spec(),
            )
        except NoConvergence as exc:
            last = exc
            continue
        grasp = {"axis_index": axis_idx, "yaw": yaw, "offset": off.tolist(), "attempt": attempt}
        return Scenario(
            id=f"{obj.name}-{index:04d}",
            object_name=obj.name,
            object_mesh=mesh_ref,
            env_mesh=cfg.environment,
            observations=sim.observations,
            tactile_cloud=sim.tactile_cloud,
            visual_cloud=sim.visual_cloud,
            samples_n=cfg.object_samples.n,
            samples_seed=cfg.object_samples.seed,
            canonical_axes=tuple(tuple(a) for a in axes),
            seed=seed,
            noise=cfg.noise.model_dump(),
            compliance=cfg.compliance.model_dump(),
            estimator=cfg.estimator.model_dump(),
            truth=_truth_block(o_r, sim, grasp),
        )
    raise NoConvergence(f"{obj.name}-{index:04d}: no valid grasp in {max_attempts} attempts ({last})")


def generate_all(cfg):
    """All scenarios of a config: ``count`` per object, in object then index order."""
    if not isinstance(cfg, GenConfig):
        cfg = GenConfig.model_validate(cfg)
    return [generate_scenario(cfg, obj, i) for obj in cfg.object_list() for i in range(cfg.count)]


def relative_pose(a, b):
    return compose(inverse(a), b)
