"""``tacgraph`` command line: gen, run, report, selftest.

Exit codes: 0 success, 1 selftest failure, 2 bad input (config, scenario,
arguments), 3 estimation failure on at least one scenario.  Failures print
one JSON error record to stderr.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .scenario import Scenario, ScenarioError, generate_all

RESULTS_SCHEMA = 1
METHODS = ("tacgraph", "icp")
MODES = ("tactile", "vision+tactile")


class CliError(Exception):
    def __init__(self, kind, message, details=None, code=2):
        super().__init__(message)
        self.kind, self.details, self.code = kind, details or [], code


def _fail(err):
    rec = {"error": err.kind, "message": str(err), "details": err.details}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return err.code


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# -- gen ------------------------------------------------------------------------


def cmd_gen(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError("ConfigError", "invalid config", exc.errors) from None
    except OSError as exc:
        raise CliError("IOError", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = generate_all(cfg)
    for sc in scenarios:
        _atomic_write(out / f"{sc.id}.json", sc.dumps() + "\n")
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return 0


# -- run ------------------------------------------------------------------------


def _pose_rows(poses):
    return [p.to_list() for p in poses]


def estimate_record(scenario, method, mode):
    """Result record for one scenario (deterministic), plus its wall-clock runtime."""
    from .inference import run_method
    from .metrics import evaluate

    rec = {"id": scenario.id, "object": scenario.object_name, "method": method, "mode": mode}
    t0 = time.perf_counter()
    try:
        res = run_method(scenario, method, mode)
    except Exception as exc:  # recorded per scenario; the run continues
        rec["error"] = {"type": type(exc).__name__, "message": str(exc)}
        return rec, time.perf_counter() - t0
    rec.update(
        {
            "rest_pose": res.rest_pose.to_list(),
            "object_poses": _pose_rows(res.object_poses),
            "contacts": [{"t": t, "point": c.tolist(), "force": f.tolist()} for t, (c, f) in sorted(res.contacts.items())],
            "cost": res.cost,
            "selected": res.selected,
            "particles": res.particle_summary(),
        }
    )
    if scenario.estimator_config.verbose and method == "tacgraph":
        rec["solver_trace"] = list(res.particles[res.selected].report.trace)
    if scenario.truth is not None:
        rec["metrics"] = evaluate(scenario, res)
    return rec, time.perf_counter() - t0


def _run_one(job):
    path, method, mode, parts = job
    sc = Scenario.load(path)
    rec, runtime = estimate_record(sc, method, mode)
    _atomic_write(Path(parts) / f"{sc.id}.json", _dumps(rec))
    return sc.id, runtime


def _threads(arg):
    n = arg if arg is not None else (os.environ.get("TACGRAPH_THREADS") or 1)
    try:
        n = int(n)
    except ValueError:
        raise CliError("ArgumentError", f"thread count must be an integer, got {n!r}") from None
    if n < 1:
        raise CliError("ArgumentError", "thread count must be >= 1")
    return n


def cmd_run(args):
    src = Path(args.scenarios)
    paths = sorted(src.glob("*.json")) if src.is_dir() else [src]
    if not paths or not all(p.exists() for p in paths):
        raise CliError("IOError", f"no scenario files at {src}")
    ids = []
    for p in paths:  # validate everything before spending time on estimation
        try:
            ids.append(Scenario.load(p).id)
        except (ScenarioError, ValueError, OSError) as exc:
            raise CliError("ScenarioError", f"{p}: {exc}") from None
    if len(set(ids)) != len(ids):
        raise CliError("ScenarioError", "duplicate scenario ids")
    n = _threads(args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    runtimes = {}
    with tempfile.TemporaryDirectory(dir=out.parent, prefix=f".{out.name}.parts.") as parts:
        jobs = [(str(p), args.method, args.mode, parts) for p in paths]
        if n == 1:
            results = map(_run_one, jobs)
        else:
            pool = ProcessPoolExecutor(max_workers=n)
            results = pool.map(_run_one, jobs)
        for sid, rt in results:
            runtimes[sid] = rt
        if n > 1:
            pool.shutdown()
        records = [json.loads((Path(parts) / f"{sid}.json").read_text()) for sid in sorted(ids)]
    doc = {
        "schema": RESULTS_SCHEMA,
        "version": __version__,
        "method": args.method,
        "mode": args.mode,
        "scenarios": records,
        # wall-clock data lives only here; excluded when comparing runs
        "timestamp": {
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "runtime_s": {k: round(v, 3) for k, v in sorted(runtimes.items())},
        },
    }
    _atomic_write(out, _dumps(doc))
    failed = [r["id"] for r in records if "error" in r]
    print(f"ran {args.method}/{args.mode} on {len(records)} scenarios -> {out}")
    if failed:
        raise CliError("EstimationError", f"{len(failed)} scenario(s) failed", failed, code=3)
    return 0


# -- report ---------------------------------------------------------------------

REPORT_COLUMNS = (
    "method",
    "mode",
    "object",
    "n",
    "failed",
    "add_mean_mm",
    "add_std_mm",
    "add_median_mm",
    "contact_point_mean_mm",
    "contact_point_std_mm",
    "force_mean_n",
    "force_std_n",
    "contacts",
)


def report_rows(docs):
    """Rows keyed by (method, mode, object), sorted; SI values converted to mm."""
    from .metrics import summarize

    groups = {}
    for doc in docs:
        for rec in doc["scenarios"]:
            key = (rec["method"], rec["mode"], rec["object"])
            groups.setdefault(key, []).append(rec)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        ok = [r for r in recs if "metrics" in r]
        add = summarize(r["metrics"]["add"] * 1e3 for r in ok)
        cp = summarize(c["point_error"] * 1e3 for r in ok for c in r["metrics"]["contacts"])
        fe = summarize(c["force_error"] for r in ok for c in r["metrics"]["contacts"])
        rows.append(
            dict(
                zip(
                    REPORT_COLUMNS,
                    (*key, len(recs), len(recs) - len(ok), add["mean"], add["std"], add["median"], cp["mean"], cp["std"], fe["mean"], fe["std"], cp["n"]),
                )
            )
        )
    return rows


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def cmd_report(args):
    docs = []
    for p in args.results:
        try:
            doc = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("IOError", f"{p}: {exc}") from None
        if doc.get("schema") != RESULTS_SCHEMA:
            raise CliError("ResultsError", f"{p}: unsupported results schema {doc.get('schema')!r}")
        docs.append(doc)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in report_rows(docs):
        w.writerow({k: _fmt(v) for k, v in row.items()})
    _atomic_write(args.out, buf.getvalue())
    print(f"wrote {args.out}")
    return 0


# -- selftest -------------------------------------------------------------------


def cmd_selftest(args):
    from .selftest import run_all

    if run_all():
        return 0
    raise CliError("SelftestFailed", "one or more invariant checks failed", code=1)


def build_parser():
    ap = argparse.ArgumentParser(prog="tacgraph", description="Tactile/visual in-hand pose estimation benchmark.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate scenario JSON files from a config")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an estimator over scenario files")
    r.add_argument("--scenarios", required=True, help="directory of scenario JSON files, or one file")
    r.add_argument("--method", choices=METHODS, default="tacgraph")
    r.add_argument("--mode", choices=MODES, default="tactile")
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int, default=None, help="worker processes (default $TACGRAPH_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate results files into a CSV table")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="run the invariant checks")
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        return _fail(err)


if __name__ == "__main__":
    sys.exit(main())
