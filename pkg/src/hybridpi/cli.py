"""Command-line frontend.

Every subcommand is deterministic given its flags; diagnostics go to
standard error and machine-readable artifacts go to files (or standard
output where the artifact is a term).  All units are SI: seconds for
times, meters for positions.

Exit codes: 0 success (or: consistent / bisimilar / certificate holds),
1 refuted / violated, 2 usage error, 3 model or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import zoo
from .certificates import automaton_from_json, certificate_from_json, check_certificate
from .equivalence import (
    approx_bisim,
    bind_env,
    build_lts,
    discretize,
    lipschitz_estimate,
    strong_bisim,
    suggest_step,
    weak_bisim,
)
from .kernel import IntegratorConfig
from .parser import parse, pretty
from .simulator import SimConfig, simulate, trace_to_jsonl, trajectory_to_csv
from .syntax import HpiError, Continuous, Sum

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_USAGE = 2
EXIT_MODEL = 3


def _default_seed() -> int:
    return int(os.environ.get("HYBRIDPI_SEED", "0"))


def _read(path: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise HpiError(f"cannot read {path}: {e}") from e


def _load_entry(path: str):
    """Parse a model file and return its run process."""
    m = parse(_read(path))
    if m.entry is None:
        raise HpiError(f"{path}: no `run` clause")
    return m.entry


def _env_pairs(pairs):
    out = {}
    for kv in pairs or ():
        if "=" not in kv:
            raise HpiError(f"--env expects NAME=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        out[k] = float(v)
    return out


def _sim_config(args, entry: zoo.ModelEntry = None) -> SimConfig:
    horizon = args.horizon if args.horizon is not None else (entry.horizon if entry else 10.0)
    step = args.step if args.step is not None else (entry.step if entry else 1e-3)
    return SimConfig(
        horizon=horizon,
        integrator=IntegratorConfig(step=step),
        policy=args.policy,
        seed=args.seed,
    )


def _write_artifacts(res, args) -> None:
    if getattr(args, "out_trace", None):
        with open(args.out_trace, "w") as f:
            f.write(trace_to_jsonl(res.trace))
    if getattr(args, "out_traj", None):
        with open(args.out_traj, "w") as f:
            f.write(trajectory_to_csv(res.segments))


def _summary(res) -> str:
    parts = [f"status={res.status}", f"end={res.end_time:.6g}s", f"events={len(res.trace)}"]
    if res.zeno and res.zeno.flagged:
        acc = res.zeno.accumulation
        parts.append(f"zeno accumulation~{acc:.4g}s" if acc else "zeno")
    return " ".join(parts)


# -- scenarios ---------------------------------------------------------------


def _load_scenarios(path):
    """A JSON list (or {"scenarios": [...]}) of either constant bindings
    {"u": 0.1} or piecewise profiles [[t, {"u": v}], ...]."""
    if path is None:
        return [None]
    data = json.loads(_read(path))
    if isinstance(data, dict):
        data = data.get("scenarios", [])
    out = []
    for sc in data:
        if isinstance(sc, dict):
            out.append({k: float(v) for k, v in sc.items()})
        elif isinstance(sc, list):
            out.append([(float(t), {k: float(v) for k, v in d.items()}) for t, d in sc])
        else:
            raise HpiError(f"bad scenario entry: {sc!r}")
    return out or [None]


def _approx_chunk(task):
    """Worker for --jobs: re-parses both files, checks one scenario slice."""
    (file_a, file_b, eps, delta, horizon, step, seed, observe, scenarios) = task
    p, q = _load_entry(file_a), _load_entry(file_b)
    cfg = SimConfig(horizon=horizon, integrator=IntegratorConfig(step=step), seed=seed)
    v = approx_bisim(p, q, eps, delta, cfg, scenarios=scenarios, observe=observe)
    return v.to_dict()


# -- subcommands -------------------------------------------------------------


def cmd_parse(args) -> int:
    m = parse(_read(args.file))
    if m.constants:
        for k, v in m.constants.items():
            print(f"const {k} = {v:g};")
    if m.entry is not None:
        print(f"run {pretty(m.entry)};")
    else:
        print("(no run clause)", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    p = _load_entry(args.file)
    cfg = _sim_config(args)
    res = simulate(p, cfg, env=bind_env(p, _env_pairs(args.env) or None))
    _write_artifacts(res, args)
    print(_summary(res), file=sys.stderr)
    return EXIT_OK


def cmd_lts(args) -> int:
    p = _load_entry(args.file)
    lts = build_lts(p, universe=tuple(args.universe), repl_depth=args.depth, max_states=args.max_states)
    doc = {
        "initial": lts.initial,
        "states": sorted(lts.states),
        "transitions": {k: [[list(l), t] for l, t in v] for k, v in lts.transitions.items()},
        "bounded": lts.bounded,
        "truncated": lts.truncated,
        "skipped": lts.skipped,
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text)
    print(f"states={len(lts.states)} bounded={lts.bounded}", file=sys.stderr)
    return EXIT_OK


def cmd_bisim(args) -> int:
    a = build_lts(_load_entry(args.file_a), universe=tuple(args.universe), repl_depth=args.depth)
    b = build_lts(_load_entry(args.file_b), universe=tuple(args.universe), repl_depth=args.depth)
    check = strong_bisim if args.mode == "strong" else weak_bisim
    ok, _ = check(a, b)
    print(f"{args.mode} bisimulation: {'holds' if ok else 'refuted'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_REFUTED


def cmd_approx(args) -> int:
    scenarios = _load_scenarios(args.scenarios)
    if args.jobs > 1 and len(scenarios) > 1:
        chunks = [scenarios[i :: args.jobs] for i in range(args.jobs)]
        chunks = [c for c in chunks if c]
        tasks = [
            (args.file_a, args.file_b, args.eps, args.delta,
             args.horizon if args.horizon is not None else 10.0,
             args.step if args.step is not None else 1e-3,
             args.seed, tuple(args.observe or ()), c)
            for c in chunks
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            partials = list(ex.map(_approx_chunk, tasks))
        report = {
            "status": "consistent",
            "eps": args.eps,
            "delta": args.delta,
            "scenarios": len(scenarios),
            "max_distance": max(p["max_distance"] for p in partials),
            "max_skew": max(p["max_skew"] for p in partials),
        }
        for p in partials:
            if p["status"] == "refuted":
                report["status"] = "refuted"
                report["counterexample"] = p.get("counterexample")
                break
    else:
        p, q = _load_entry(args.file_a), _load_entry(args.file_b)
        cfg = _sim_config(args)
        v = approx_bisim(p, q, args.eps, args.delta, cfg, scenarios=scenarios, observe=tuple(args.observe or ()))
        report = v.to_dict()
    if args.out:
        with open(args.out, "w") as f:
            f.write(json.dumps(report, indent=2))
    print(
        f"{report['status']}: max distance {report['max_distance']:.6g}, max skew {report['max_skew']:.6g}",
        file=sys.stderr,
    )
    return EXIT_OK if report["status"] == "consistent" else EXIT_REFUTED


def _first_continuous(p):
    if isinstance(p, Sum):
        for pi, _ in p.branches:
            if isinstance(pi, Continuous):
                return pi
    raise HpiError("discretize expects a file whose run clause starts with a continuous prefix")


def cmd_discretize(args) -> int:
    p = _load_entry(args.file)
    cell = _first_continuous(p)
    if args.step is not None:
        step = args.step
    else:
        box = [(-abs(args.box), abs(args.box))] * len(cell.vars)
        lip = lipschitz_estimate(cell.vars, cell.fields, box, seed=args.seed)
        step = suggest_step(args.eps, args.duration, lip)
        print(f"estimated Lipschitz constant {lip:.4g}, chose step {step:.4g}", file=sys.stderr)
    q = discretize(cell.init, cell.vars, cell.fields, args.duration, step)
    text = f"run {pretty(q)};\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_certcheck(args) -> int:
    h = automaton_from_json(_read(args.automaton))
    cert = certificate_from_json(_read(args.certificate), h.all_coords)
    result = check_certificate(h, cert, samples=args.samples, tol=args.tol, seed=args.seed)
    if args.out:
        with open(args.out, "w") as f:
            json.dump({k: v for k, v in result.items() if k != "reports"}, f, indent=2)
    for r in result["reports"]:
        mark = "ok " if r.ok else "BAD"
        print(
            f"{mark} {r.condition:<5} {r.where:<18} samples={r.samples} "
            f"min={r.min_margin} max={r.max_margin}",
            file=sys.stderr,
        )
        if r.witness:
            print(f"    witness: {r.witness}", file=sys.stderr)
    return EXIT_OK if result["ok"] else EXIT_REFUTED


def cmd_models(args) -> int:
    if args.action == "list":
        for e in zoo.list_models():
            print(f"{e.id:<22} {e.description}")
        return EXIT_OK
    if args.id is None:
        raise HpiError(f"models {args.action} requires a model id")
    inst = zoo.load(args.id)
    if args.action == "show":
        for role, fn in inst.entry.files.items():
            print(f"# --- {role}: {fn}")
            print(zoo.model_text(fn))
        return EXIT_OK
    # run
    if inst.entry.id == "composed-automaton-H":
        raise HpiError("composed-automaton-H is an automaton; use `hybridpi certcheck` on its files")
    p = inst.main.entry
    cfg = _sim_config(args, inst.entry)
    env = _env_pairs(args.env) or inst.entry.env
    res = simulate(p, cfg, env=bind_env(p, env) if env else None)
    _write_artifacts(res, args)
    print(_summary(res), file=sys.stderr)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _add_sim_flags(sp, with_env=True):
    sp.add_argument("--horizon", type=float, default=None, help="simulation horizon in seconds")
    sp.add_argument("--step", type=float, default=None, help="integrator step in seconds")
    sp.add_argument("--seed", type=int, default=_default_seed(), help="random seed (HYBRIDPI_SEED)")
    sp.add_argument("--policy", choices=("first", "random"), default="first")
    sp.add_argument("--out-trace", metavar="FILE.jsonl", help="write the event trace here")
    sp.add_argument("--out-traj", metavar="FILE.csv", help="write the trajectory table here")
    if with_env:
        sp.add_argument("--env", action="append", metavar="NAME=VALUE",
                        help="bind a guaranteed variable to a constant (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hybridpi",
        description="Workbench for hybrid process terms: simulate, compare, discretize, certify.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse a model file and print the elaborated term")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_parse)

    sp = sub.add_parser("simulate", help="run the closed-system scheduler on a model file")
    sp.add_argument("file")
    _add_sim_flags(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("lts", help="enumerate the discrete transition system of a model file")
    sp.add_argument("file")
    sp.add_argument("--universe", type=float, nargs="+", default=[0.0, 1.0],
                    help="values substituted for input binders")
    sp.add_argument("--depth", type=int, default=4, help="replication unfolding bound")
    sp.add_argument("--max-states", type=int, default=4000)
    sp.add_argument("--out", metavar="FILE.json")
    sp.set_defaults(fn=cmd_lts)

    sp = sub.add_parser("bisim", help="decide strong or weak bisimilarity of two discrete models")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    sp.add_argument("--mode", choices=("strong", "weak"), default="strong")
    sp.add_argument("--universe", type=float, nargs="+", default=[0.0, 1.0])
    sp.add_argument("--depth", type=int, default=4)
    sp.set_defaults(fn=cmd_bisim)

    sp = sub.add_parser("approx", help="co-simulate two models and bound distance and time skew")
    sp.add_argument("file_a")
    sp.add_argument("file_b")
    sp.add_argument("--eps", type=float, required=True, help="allowed distance on observed variables (m)")
    sp.add_argument("--delta", type=float, required=True, help="allowed skew on evolution time (s)")
    sp.add_argument("--observe", nargs="+", metavar="VAR", help="variables compared across the two systems")
    sp.add_argument("--scenarios", metavar="FILE.json", help="scenario list (constants or piecewise profiles)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel scenario batches")
    sp.add_argument("--out", metavar="FILE.json")
    _add_sim_flags(sp, with_env=False)
    sp.set_defaults(fn=cmd_approx)

    sp = sub.add_parser("discretize", help="replace a continuous prefix by a stepped recursion")
    sp.add_argument("file")
    sp.add_argument("--eps", type=float, required=True, help="target endpoint accuracy")
    sp.add_argument("--duration", type=float, required=True, help="evolution length to cover (s)")
    sp.add_argument("--step", type=float, default=None, help="override the suggested step")
    sp.add_argument("--box", type=float, default=10.0, help="half-width of the Lipschitz sampling box")
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.add_argument("--out", metavar="FILE.hpc")
    sp.set_defaults(fn=cmd_discretize)

    sp = sub.add_parser("certcheck", help="sample-check barrier-certificate conditions BC-1..BC-4")
    sp.add_argument("automaton", metavar="AUTOMATON.json")
    sp.add_argument("certificate", metavar="CERT.json")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--seed", type=int, default=_default_seed())
    sp.add_argument("--out", metavar="REPORT.json")
    sp.set_defaults(fn=cmd_certcheck)

    sp = sub.add_parser("models", help="list, show, or run a bundled model")
    sp.add_argument("action", choices=("list", "show", "run"))
    sp.add_argument("id", nargs="?", default=None)
    _add_sim_flags(sp)
    sp.set_defaults(fn=cmd_models)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except zoo.ModelNotFound as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_MODEL
    except (HpiError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
