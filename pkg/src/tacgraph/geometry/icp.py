"""Point-to-plane ICP of a point cloud onto a triangle mesh."""

from dataclasses import dataclass

import numpy as np

from ..lie import Pose, cross, exp, retract
from .mesh import PointCloud


@dataclass(frozen=True)
class IcpParams:
    max_iters: int = 50
    tol: float = 1e-9
    max_corr_dist: float = 0.05
    max_backtracks: int = 8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class IcpResult:
    pose: Pose
    fitness: float
    iterations: int
    trace: tuple


def _fitness(mesh, pts, pose, max_corr):
    y = (pts - pose.t) @ pose.R
    d, g = mesh.sdf(y)
    return float(np.mean(np.minimum(np.abs(d), max_corr))), y, d, g


def icp_register(source, target, init=None, params=None):
    """Find the pose X (target frame -> source frame) with ``X^-1 source`` on ``target``.

    Correspondences are closest points on the mesh; pairs farther than
    ``max_corr_dist`` are dropped from the update.  Fitness is the mean
    distance with each term capped at ``max_corr_dist``, and only steps that
    do not increase it are accepted.  Not converging is not an error.
    """
    params = params or IcpParams()
    pts = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=float).reshape(-1, 3)
    if len(pts) < 1:
        raise ValueError("source cloud is empty")
    pose = init if init is not None else Pose.identity()
    fit, y, d, g = _fitness(target, pts, pose, params.max_corr_dist)
    trace = [fit]
    it = 0
    for it in range(1, params.max_iters + 1):
        inl = np.abs(d) <= params.max_corr_dist
        if not inl.any() or fit < 1e-14:
            break
        gi, yi = g[inl], y[inl]
        # d(SDF(exp(-xi) y))/dxi = g^T [skew(y), -I]
        J = np.hstack([cross(gi, yi), -gi])
        step = np.linalg.lstsq(J, -d[inl], rcond=None)[0]
        accepted = False
        for _ in range(params.max_backtracks):
            cand = retract(pose, step)
            cfit, cy, cd, cg = _fitness(target, pts, cand, params.max_corr_dist)
            if cfit <= fit:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        rel = (fit - cfit) / max(fit, 1e-300)
        pose, fit, y, d, g = cand, cfit, cy, cd, cg
        trace.append(fit)
        if rel < params.tol or np.max(np.abs(step)) < 1e-12:
            break
    return IcpResult(pose, fit, it, tuple(trace))
