"""Invariant checks runnable from the command line (``tacgraph selftest``).

Each check returns ``(name, passed, detail)``.  They are small versions of
the test suite: SDF sign against ray parity, gradients and factor Jacobians
against central differences, simulator/estimator closure, and the
brute-force oracles for ground-truth contacts and ADD.
"""

import time

import numpy as np

from .factors import REST_POSE, FactorGraphState, NoiseModel, TimestepObservation, Values, total_cost
from .geometry.mesh import load_mesh, sample_surface
from .lie import Pose, cross, exp, random_pose, retract
from .metrics import add_metric
from .sim import ground_truth_contact_index

RAY_DIR = np.array([0.5773502691896258, 0.5773502691896257, 0.5773502691896259]) + np.array([1e-3, -2e-3, 3e-3])


def ray_parity_inside(mesh, points, direction=RAY_DIR):
    """Inside/outside by counting ray crossings (Moller-Trumbore), independent of the SDF."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    v0, v1, v2 = mesh.tris[:, 0], mesh.tris[:, 1], mesh.tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    h = cross(np.broadcast_to(d, e2.shape), e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > 1e-14
    out = np.zeros(len(points), dtype=bool)
    for k, p in enumerate(np.asarray(points, dtype=float)):
        s = p - v0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.einsum("ij,ij->i", s, h) / a
            q = cross(s, e1)
            v = (q @ d) / a
            t = np.einsum("ij,ij->i", e2, q) / a
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        out[k] = bool(hit.sum() % 2)
    return out


def fd_rows(fun, x0, eps, dim, plus):
    """Central-difference Jacobian of ``fun`` around ``x0`` with tangent update ``plus``."""
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = eps
        cols.append((fun(plus(x0, e)) - fun(plus(x0, -e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def _smooth_rows(fun, x0, eps, dim, plus, tol):
    """Rows where forward and backward differences agree (away from kinks)."""
    f0 = fun(x0)
    keep = np.ones(len(np.atleast_1d(f0)), dtype=bool)
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = eps
        fwd = (fun(plus(x0, e)) - f0) / eps
        bwd = (f0 - fun(plus(x0, -e))) / eps
        keep &= np.abs(fwd - bwd) <= tol * np.maximum(1.0, np.abs(fwd) + np.abs(bwd))
    return keep


def _rel_err(J, J_fd):
    return float(np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), 1e-12))


def check_sdf_parity(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 1.0
    for ref in ("builtin:cube", "builtin:wrench"):
        m = load_mesh(ref)
        lo, hi = m.bounds
        pad = 0.2 * (hi - lo)
        pts = rng.uniform(lo - pad, hi + pad, (n, 3))
        v, _ = m.sdf(pts)
        keep = np.abs(v) > 1e-9
        agree = np.mean((v[keep] < 0) == ray_parity_inside(m, pts[keep]))
        worst = min(worst, agree)
    return "sdf sign vs ray parity", worst == 1.0, f"agreement {worst:.4f}"


def check_sdf_gradient(n=200, seed=0, eps=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for ref in ("builtin:cube", "builtin:wrench"):
        m = load_mesh(ref)
        lo, hi = m.bounds
        pts = rng.uniform(lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo), (n, 3))
        _, g = m.sdf(pts)
        for p, gp in zip(pts, g):
            f = lambda x: m.sdf(x[None])[0]
            plus = lambda x, e: x + e
            if not _smooth_rows(f, p, eps, 3, plus, 1e-3).all():
                continue
            worst = max(worst, _rel_err(gp, fd_rows(f, p, eps, 3, plus)[0]))
    return "sdf gradient vs central differences", worst <= 1e-4, f"max rel err {worst:.2e}"


def check_factor_jacobians(states=10, seed=0, eps=1e-6):
    from .scenario import get_mesh

    rng = np.random.default_rng(seed)
    M_o, M_e = get_mesh("builtin:cube"), get_mesh("builtin:table")
    pts = sample_surface(M_o, 200, 1).points
    worst = 0.0
    for _ in range(states):
        o_r = random_pose(rng, np.pi, 0.01)
        g = Pose(random_pose(rng, 0.3, 0.0).q, rng.uniform(-0.05, 0.05, 3) + [0, 0, 0.03])
        obs = TimestepObservation(g, exp(rng.normal(0, 0.01, 6)), rng.normal(0, 1, 6), True)
        cloud = (sample_surface(M_o, 50, int(rng.integers(1 << 30))).points + rng.normal(0, 1e-3, (50, 3))) @ o_r.R.T + o_r.t
        st = FactorGraphState(M_o, M_e, cloud, pts, (obs,), NoiseModel())
        c = rng.uniform(-0.03, 0.03, 3) + [0, 0, 0.01]
        vals = Values({REST_POSE: o_r}).with_contact(0, c, rng.normal(0, 3, 3))
        for fac in st.factors:
            _, blocks = fac.whitened(vals, jacobian=True)
            for key, J in blocks.items():
                dim = 6 if key == REST_POSE else 3

                def fun(v, key=key, fac=fac):
                    vv = Values(vals)
                    vv[key] = v
                    return fac.whitened(vv)

                plus = (lambda p, e: retract(p, e)) if key == REST_POSE else (lambda x, e: x + e)
                keep = _smooth_rows(fun, vals[key], eps, dim, plus, 1e-3)
                if not keep.any():
                    continue
                J_fd = fd_rows(fun, vals[key], eps, dim, plus)
                worst = max(worst, _rel_err(J[keep], J_fd[keep]))
    return "factor jacobians vs central differences", worst <= 1e-4, f"max rel err {worst:.2e}"


def check_closure(count=2):
    from .config import GenConfig
    from .scenario import generate_scenario
    from .solver import solve

    cfg = GenConfig.model_validate({"noise": {k: 0.0 for k in ("cloud_m", "delta_trans_m", "delta_rot_rad", "force_n", "torque_nm")}})
    worst_h, worst_it = 0.0, 0
    for i in range(count):
        sc = generate_scenario(cfg, cfg.object_list()[0], i)
        st = FactorGraphState(sc.object, sc.env, sc.tactile_cloud, sc.object_points, sc.observations, NoiseModel())
        v = Values({REST_POSE: sc.true_rest_pose})
        for c in sc.truth["contacts"]:
            v = v.with_contact(c["t"], c["point"], c["force"])
        worst_h = max(worst_h, total_cost(st, v))
        worst_it = max(worst_it, solve(st, v).iterations)
    return "simulator/estimator closure", worst_h <= 1e-8 and worst_it <= 2, f"max H {worst_h:.1e}, max iters {worst_it}"


def check_gt_contact(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n):
        C = rng.uniform(-0.05, 0.05, (20, 3))
        f = rng.normal(size=3)
        k = int(rng.integers(20))
        hits += ground_truth_contact_index(f, cross(C[k], f), C) == k
    return "ground-truth contact oracle", hits == n, f"{hits}/{n} exact"


def check_add(pairs=50, seed=0):
    rng = np.random.default_rng(seed)
    m = load_mesh("builtin:lshape")
    x = sample_surface(m, 1000, 0).points
    worst = 0.0
    for _ in range(pairs):
        a, b = random_pose(rng, np.pi, 0.1), random_pose(rng, np.pi, 0.1)
        direct = np.mean([np.sqrt(np.sum((a.R @ p + a.t - b.R @ p - b.t) ** 2)) for p in x])
        worst = max(worst, abs(add_metric(a, b, m) - direct))
    return "ADD vs direct computation", worst <= 1e-12, f"max abs diff {worst:.1e}"


CHECKS = (check_sdf_parity, check_sdf_gradient, check_factor_jacobians, check_closure, check_gt_contact, check_add)


def run_all(out=print):
    ok = True
    for chk in CHECKS:
        t0 = time.perf_counter()
        name, passed, detail = chk()
        ok &= bool(passed)
        out(f"{'PASS' if passed else 'FAIL'}  {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
    return ok
