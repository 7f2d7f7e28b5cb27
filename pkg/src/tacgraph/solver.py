"""Levenberg-Marquardt over the rest pose (on SE(3)) and contact vectors.

Incremental use re-solves the full batch problem after each new timestep,
warm-started from the previous solution.
"""

from dataclasses import dataclass, field

import numpy as np

from .factors import REST_POSE, NoiseModel, Values, _check_values, force_key, object_pose_at, point_key
from .lie import cross, retract


class SingularSystem(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SolverParams:
    max_iters: int = 100
    damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    rel_cost_tol: float = 1e-9
    step_tol: float = 1e-10
    max_damping: float = 1e8

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True, eq=False)
class SolveReport:
    values: Values
    cost: float
    iterations: int
    converged: bool
    trace: tuple = field(default=())


def _layout(values):
    slots = {REST_POSE: slice(0, 6)}
    i = 6
    for t in values.contact_steps():
        slots[point_key(t)] = slice(i, i + 3)
        slots[force_key(t)] = slice(i + 3, i + 6)
        i += 6
    return slots, i


def linearize(state, values):
    """Whitened residual stack and dense Jacobian."""
    slots, n = _layout(values)
    rs, Js = [], []
    for fac in state.factors:
        r, blocks = fac.whitened(values, jacobian=True)
        J = np.zeros((len(r), n))
        for key, B in blocks.items():
            J[:, slots[key]] = B
        rs.append(r)
        Js.append(J)
    return np.concatenate(rs), np.vstack(Js), slots


def _cost(state, values):
    return float(sum(f.cost(values) for f in state.factors))


def _apply(values, step, slots):
    out = Values()
    for key, val in values.items():
        s = slots[key]
        out[key] = retract(val, step[s]) if key == REST_POSE else val + step[s]
    return out


def solve(state, init, params=None):
    """Minimise the total cost from ``init``; returns the best values seen."""
    params = params or SolverParams()
    _check_values(state, init)
    values = Values(init)
    cost = _cost(state, values)
    trace = [cost]
    lam = params.damping
    converged = False
    it = 0
    while it < params.max_iters:
        it += 1
        if cost <= 1e-30:
            converged = True
            break
        r, J, slots = linearize(state, values)
        g = J.T @ r
        A = J.T @ J
        improved = False
        factored = False
        while lam <= params.max_damping:
            try:
                L = np.linalg.cholesky(A + lam * np.eye(len(g)))
            except np.linalg.LinAlgError:
                lam *= params.damping_up
                continue
            step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
            if not np.all(np.isfinite(step)):
                lam *= params.damping_up
                continue
            factored = True
            if np.max(np.abs(step)) < params.step_tol:
                converged = True
                break
            cand = _apply(values, step, slots)
            cand_cost = _cost(state, cand)
            if cand_cost <= cost:
                improved = True
                break
            lam *= params.damping_up
        if converged:
            break
        if not improved:
            if not factored:
                raise SingularSystem("damped normal equations could not be factorised at any damping")
            # no descent step left at any damping: a local minimum to working precision
            converged = True
            break
        rel = (cost - cand_cost) / max(cost, 1e-300)
        values, cost = cand, cand_cost
        trace.append(cost)
        lam = max(lam * params.damping_down, 1e-12)
        if rel < params.rel_cost_tol:
            converged = True
            break
    return SolveReport(values, cost, it, converged, tuple(trace))


def _line_hit(env_mesh, p0, u, s0, max_iters=20, reach=0.02):
    """Root of the environment SDF along ``p0 + s u`` near ``s0`` (Newton), or None."""
    s = s0
    for _ in range(max_iters):
        d, g = env_mesh.sdf((p0 + s * u)[None])
        if abs(d[0]) < 1e-12:
            break
        slope = float(g[0] @ u)
        if abs(slope) < 0.1:
            return None
        s -= d[0] / slope
        if abs(s - s0) > reach:
            return None
    else:
        return None
    return p0 + s * u


def initialize_contact(rest_pose, obs, object_points, env_mesh, noise=None, window=5e-3, strategy="wrench"):
    """Initial (point, force) for a new contact timestep.

    ``strategy="closest"`` returns the midpoint of the closest pair between
    the posed object samples and the environment.  The default ``"wrench"``
    uses the measured torque as well.  Candidates are the posed object samples within ``window`` of the
    deepest one; each is scored by its whitened distance to the environment
    plus the torque it would leave unexplained for the measured force.  The
    point is where the wrench's line of action (``p x f = tau``) meets the
    environment near the best candidate, falling back to the midpoint
    between that candidate and its closest environment point.  The force is
    the measured force in the world frame.
    """
    noise = noise or NoiseModel()
    T = object_pose_at(rest_pose, obs)
    x = object_points @ T.R.T + T.t
    d, _, cp, _, _ = env_mesh.query(x)
    f = obs.g.R @ obs.wrench[:3]
    if strategy == "closest":
        i = int(np.argmin(d))
        return 0.5 * (x[i] + cp[i]), f
    if strategy != "wrench":
        raise ValueError(f"unknown contact initialisation {strategy!r}")
    cand = np.flatnonzero(d <= d.min() + window)
    fg, tau = obs.wrench[:3], obs.wrench[3:]
    Rg = obs.g.R
    p = (x[cand] - obs.g.t) @ Rg
    tau_err = np.linalg.norm(tau - cross(p, fg), axis=1) / noise.sigma_torque
    score = tau_err**2 + (d[cand] / noise.sigma_h3) ** 2
    i = cand[int(np.argmin(score))]
    c = 0.5 * (x[i] + cp[i])
    nf = np.linalg.norm(fg)
    if nf > 0:
        u = Rg @ (fg / nf)
        p0 = Rg @ (cross(fg, tau) / nf**2) + obs.g.t
        hit = _line_hit(env_mesh, p0, u, float((x[i] - p0) @ u))
        if hit is not None:
            c = hit
    return c, f


def extend_and_resolve(prev, state, params=None):
    """Warm-start from ``prev`` and solve ``state`` (which has one more timestep)."""
    init = Values(prev.values)
    t = len(state.observations) - 1
    obs = state.observations[t]
    if obs.contact and t not in init.contact_steps():
        c, f = initialize_contact(init.rest_pose, obs, state.object_points, state.env_mesh, state.noise)
        init = init.with_contact(t, c, f)
    return solve(state, init, params)
