"""Multi-hypothesis rest-pose estimation and the ICP baseline.

Each particle is an initial rest pose refined by ICP and then solved
independently over the whole trajectory; the particle with the lowest final
cost is selected.  Weights ``exp(-H)`` are recorded per timestep for
diagnostics only, there is no resampling.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .factors import REST_POSE, FactorGraphState, Values, detect_contact, object_pose_at
from .geometry.icp import IcpParams, icp_register
from .lie import Pose, compose
from .scenario import align_to_grasp, GRIPPER_GRASP_AXIS
from .solver import SingularSystem, SolverParams, extend_and_resolve, initialize_contact, solve

TIE_TOL = 1e-12


class AllParticlesFailed(RuntimeError):
    pass


@dataclass(eq=False)
class Hypothesis:
    id: int
    initial: Pose
    report: object = None
    costs: list = field(default_factory=list)  # H after each timestep
    error: str = None

    @property
    def cost(self):
        return self.costs[-1] if self.costs and self.error is None else np.inf

    @property
    def weight(self):
        return float(np.exp(-self.cost))

    @property
    def weights(self):
        return [float(np.exp(-h)) for h in self.costs]


@dataclass(frozen=True, eq=False)
class EstimationResult:
    method: str
    rest_pose: Pose
    object_poses: tuple
    contacts: dict  # t -> (c, f), world frame
    cost: float
    selected: int
    particles: tuple  # Hypothesis
    runtime: float = 0.0

    def particle_summary(self):
        return [
            {
                "id": h.id,
                "initial": h.initial.to_list(),
                "costs": [float(c) for c in h.costs],
                "log_weights": [float(-c) for c in h.costs],
                "error": h.error,
            }
            for h in self.particles
        ]


def _rotation_about(axis, angle):
    a = np.asarray(axis, dtype=float)
    return Pose.from_rotvec(a / np.linalg.norm(a) * angle)


def particle_seeds(K, canonical_axes, grasp_axis=GRIPPER_GRASP_AXIS, sweep_range=np.pi / 2, sweep_center=0.0):
    """K orientation seeds: canonical axes crossed with a sweep about the grasp axis.

    Seed ``j`` uses axis ``j % n_axes`` and sweep slot ``j // n_axes``; the
    slots are ``center + (i - n // 2) * range / n`` so the centre is always
    one of them.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    axes = [np.asarray(a, dtype=float) for a in canonical_axes] or [np.asarray(grasp_axis, float)]
    n_ang = -(-K // len(axes))
    seeds = []
    for j in range(K):
        i = j // len(axes)
        theta = sweep_center + (i - n_ang // 2) * sweep_range / n_ang
        R0 = align_to_grasp(axes[j % len(axes)])
        if not np.allclose(grasp_axis, GRIPPER_GRASP_AXIS):
            # re-target the alignment at a non-default grasp axis
            R0 = compose(Pose.from_rt(_axis_frame(grasp_axis)), R0)
        seeds.append(compose(_rotation_about(grasp_axis, theta), R0))
    return seeds


def _axis_frame(axis):
    """Rotation taking the default grasp axis onto ``axis``."""
    return align_to_grasp(axis).inverse().R


def sample_initial_particles(
    P,
    object_mesh,
    grasp_axis=GRIPPER_GRASP_AXIS,
    K=8,
    seed=0,
    canonical_axes=None,
    sweep_range=np.pi / 2,
    sweep_center=None,
    icp_params=None,
):
    """ICP-refined rest-pose particles.

    Translations start with the object centroid on the cloud centroid.
    Without ``sweep_center`` the sweep phase is drawn from ``seed``.
    Returns ``(poses, fitness)``.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    if len(P) < 1:
        raise ValueError("initial point cloud is empty")
    if sweep_center is None:
        sweep_center = float(np.random.default_rng(seed).uniform(-0.5, 0.5) * sweep_range)
    axes = canonical_axes if canonical_axes is not None else [grasp_axis]
    poses, fits = [], []
    for R0 in particle_seeds(K, axes, grasp_axis, sweep_range, sweep_center):
        init = Pose(R0.q, P.mean(axis=0) - R0.R @ object_mesh.centroid)
        res = icp_register(P, object_mesh, init, icp_params)
        poses.append(res.pose)
        fits.append(res.fitness)
    return poses, np.array(fits)


def _observations(scenario, noise, use_detection):
    obs = scenario.observations
    if use_detection:
        obs = tuple(replace(o, contact=detect_contact(o.wrench, noise)) for o in obs)
    return obs


def _select(costs):
    costs = np.asarray(costs, dtype=float)
    if not np.isfinite(costs).any():
        return -1
    best = np.min(costs)
    return int(np.flatnonzero(costs <= best + TIE_TOL)[0])


def _initial_poses(scenario, cfg, P, K, initial_poses):
    if initial_poses is not None:
        return list(initial_poses)
    poses, _ = sample_initial_particles(
        P,
        scenario.object,
        GRIPPER_GRASP_AXIS,
        K,
        seed=scenario.seed,
        canonical_axes=scenario.canonical_axes,
        sweep_range=np.deg2rad(cfg.sweep_range_deg),
        sweep_center=np.deg2rad(cfg.sweep_center_deg) if cfg.sweep_center_deg is not None else None,
        icp_params=cfg.icp.to_params(),
    )
    return poses


def solve_particle(hyp, base_state, observations, params):
    """Solve one particle incrementally, recording H after every timestep."""
    state = replace(base_state, observations=observations[:1])
    init = Values({REST_POSE: hyp.initial})
    if observations[0].contact:
        c, f = initialize_contact(hyp.initial, observations[0], state.object_points, state.env_mesh, state.noise)
        init = init.with_contact(0, c, f)
    try:
        rep = solve(state, init, params)
        hyp.costs.append(rep.cost)
        for obs in observations[1:]:
            state = state.extended(obs)
            rep = extend_and_resolve(rep, state, params)
            hyp.costs.append(rep.cost)
    except SingularSystem as exc:
        hyp.error = str(exc)
        return exc
    hyp.report = rep
    return None


def run_tacgraph(scenario, K=None, params=None, mode="tactile", config=None, initial_poses=None):
    """Full multi-hypothesis estimate for a scenario."""
    t0 = time.perf_counter()
    cfg = config or scenario.estimator_config
    K = K or (len(initial_poses) if initial_poses is not None else cfg.particles)
    params = params or cfg.solver.to_params()
    noise = cfg.noise_model.to_model()
    P = scenario.initial_cloud(mode)
    obs = _observations(scenario, noise, cfg.detect_contact)
    base = FactorGraphState(scenario.object, scenario.env, P, scenario.object_points, (), noise)
    hyps = [Hypothesis(k, p) for k, p in enumerate(_initial_poses(scenario, cfg, P, K, initial_poses))]
    last_err = None
    for h in hyps:
        err = solve_particle(h, base, obs, params)
        last_err = err or last_err
    k = _select([h.cost for h in hyps])
    if k < 0:
        raise AllParticlesFailed("every particle's solve failed") from last_err
    best = hyps[k].report.values
    o_r = best.rest_pose
    contacts = {t: best.contact(t) for t in best.contact_steps()}
    return EstimationResult(
        "tacgraph",
        o_r,
        tuple(object_pose_at(o_r, o) for o in obs),
        contacts,
        hyps[k].cost,
        k,
        tuple(hyps),
        time.perf_counter() - t0,
    )


def run_icp_baseline(scenario, K=None, mode="tactile", config=None, initial_poses=None):
    """ICP rest pose (best fitness over the same particle seeds) plus nearest-point contacts."""
    t0 = time.perf_counter()
    cfg = config or scenario.estimator_config
    K = K or cfg.particles
    noise = cfg.noise_model.to_model()
    P = scenario.initial_cloud(mode)
    M_o, M_e = scenario.object, scenario.env
    obs = _observations(scenario, noise, cfg.detect_contact)
    if initial_poses is None:
        poses, fits = sample_initial_particles(
            P,
            M_o,
            GRIPPER_GRASP_AXIS,
            K,
            seed=scenario.seed,
            canonical_axes=scenario.canonical_axes,
            sweep_range=np.deg2rad(cfg.sweep_range_deg),
            sweep_center=np.deg2rad(cfg.sweep_center_deg) if cfg.sweep_center_deg is not None else None,
            icp_params=cfg.icp.to_params(),
        )
    else:
        poses = list(initial_poses)
        fits = np.array([icp_register(P, M_o, p, cfg.icp.to_params()).fitness for p in poses])
    k = _select(fits)
    o_r = poses[k]
    pts = scenario.object_points
    contacts = {}
    poses_t = []
    for t, o in enumerate(obs):
        T = object_pose_at(o_r, o)
        poses_t.append(T)
        if o.contact:
            x = pts @ T.R.T + T.t
            d, _ = M_e.sdf(x)
            contacts[t] = (x[int(np.argmin(d))], o.g.R @ o.wrench[:3])
    hyps = tuple(Hypothesis(i, p, costs=[float(f)]) for i, (p, f) in enumerate(zip(poses, fits)))
    return EstimationResult("icp", o_r, tuple(poses_t), contacts, float(fits[k]), k, hyps, time.perf_counter() - t0)


def run_method(scenario, method, mode="tactile", config=None):
    if method == "tacgraph":
        return run_tacgraph(scenario, mode=mode, config=config)
    if method == "icp":
        return run_icp_baseline(scenario, mode=mode, config=config)
    raise ValueError(f"unknown method {method!r}")


__all__ = [
    "AllParticlesFailed",
    "EstimationResult",
    "Hypothesis",
    "IcpParams",
    "SolverParams",
    "particle_seeds",
    "run_icp_baseline",
    "run_method",
    "run_tacgraph",
    "sample_initial_particles",
]
