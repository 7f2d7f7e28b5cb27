"""Pose and contact error metrics, and their aggregation."""

import numpy as np

from .geometry.mesh import sample_surface
from .lie import Pose

ADD_SAMPLES = 1000
ADD_SEED = 0


def add_metric(est, true, object_mesh, n=ADD_SAMPLES, seed=ADD_SEED):
    """Average distance between model points under two poses (metres)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = sample_surface(object_mesh, n, seed).points
    d = (x @ est.R.T + est.t) - (x @ true.R.T + true.t)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def contact_metrics(c_est, f_est, c_true, f_true):
    """(point error m, force error N)."""
    ep = float(np.linalg.norm(np.asarray(c_est, float) - np.asarray(c_true, float)))
    ef = float(np.linalg.norm(np.asarray(f_est, float) - np.asarray(f_true, float)))
    return ep, ef


def evaluate(scenario, result):
    """Per-scenario metrics of an estimate against the scenario's ground truth."""
    truth = scenario.truth
    if truth is None:
        raise ValueError(f"{scenario.id}: scenario has no ground truth")
    out = {
        "add": add_metric(result.rest_pose, Pose.from_list(truth["rest_pose"]), scenario.object),
        "contacts": [],
        "missed_contacts": 0,
        "false_contacts": 0,
    }
    true_c = {c["t"]: c for c in truth["contacts"]}
    for t in sorted(set(true_c) | set(result.contacts)):
        if t not in result.contacts:
            out["missed_contacts"] += 1
            continue
        if t not in true_c:
            out["false_contacts"] += 1
            continue
        c, f = result.contacts[t]
        ep, ef = contact_metrics(c, f, true_c[t]["point"], true_c[t]["force"])
        out["contacts"].append({"t": t, "point_error": ep, "force_error": ef})
    return out


def summarize(values):
    """Mean, population std and count; empty input gives NaNs and count 0."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "median": float("nan"), "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "median": float(np.median(v)), "n": int(v.size)}
