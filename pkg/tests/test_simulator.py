import json

import pytest

from hybridpi.parser import parse, parse_term
from hybridpi.simulator import (
    Environment,
    SimConfig,
    TraceEvent,
    detect_zeno,
    exhaustive_traces,
    simulate,
    trace_to_jsonl,
    trajectory_series,
    trajectory_to_csv,
)
from hybridpi.zoo import load, model_text

from conftest import sim_config


def run_model(id_, **kw):
    inst = load(id_)
    cfg = sim_config(kw.pop("horizon", inst.entry.horizon), kw.pop("step", inst.entry.step), **kw)
    return simulate(inst.main.entry, cfg)


def test_bitwise_determinism_on_zeno_run():
    outs = []
    for _ in range(2):
        res = run_model("ball", horizon=12.0)
        outs.append((trace_to_jsonl(res.trace), trajectory_to_csv(res.segments), res.status))
    assert outs[0] == outs[1]
    assert outs[0][2] == "zeno"


def test_urgent_sync_never_preceded_by_evolution():
    res = simulate(parse_term("x(y) . tau || x!<1>"), sim_config(1.0))
    kinds = [ev.kind for ev in res.trace]
    assert kinds[0] == "Sync"
    assert "Evolve" not in kinds[: kinds.index("Sync") + 1]


def test_time_additivity():
    for id_ in ("wait", "bigben"):
        res = run_model(id_)
        total = sum(ev.values[0] for ev in res.trace if ev.kind == "Evolve")
        assert total == pytest.approx(res.end_time, abs=1e-9)


def test_wait_terminates_by_inaction():
    res = run_model("wait")
    assert res.status == "inaction"
    assert res.end_time == pytest.approx(3.0, abs=1e-6)


def test_clock_runs_to_horizon():
    res = run_model("bigben")
    assert res.status == "horizon"
    senses = [ev for ev in res.trace if ev.kind == "Sense"]
    times = [ev.time for ev in senses]
    assert times[0] == pytest.approx(0.0, abs=1e-6)
    assert all(b - a == pytest.approx(2.0, abs=1e-3) for a, b in zip(times, times[1:]))


def test_zeno_detection_on_ball():
    res = run_model("ball", horizon=12.0)
    assert res.zeno is not None and res.zeno.flagged
    assert res.zeno.accumulation == pytest.approx(9.09, abs=0.05)


def test_detect_zeno_geometric_oracle():
    t, gap = 0.0, 1.0
    trace = []
    for _ in range(40):
        trace.append(TraceEvent(t, "Sync", "a", []))
        t += gap
        gap *= 0.5
    rep = detect_zeno(trace, max_events=20, window=1.0)
    assert rep.flagged
    assert rep.accumulation == pytest.approx(2.0, abs=1e-3)
    calm = [TraceEvent(float(k), "Sync", "a", []) for k in range(10)]
    assert not detect_zeno(calm, max_events=20, window=1.0).flagged


def test_environment_profile_drives_open_variable():
    p = parse_term("{0 | x' = u & x < 100}")
    env = Environment([(0.0, {"u": 1.0}), (1.0, {"u": -1.0})])
    from hybridpi.equivalence import bind_env

    res = simulate(p, sim_config(2.0), bind_env(p, [(0.0, {"u": 1.0}), (1.0, {"u": -1.0})]))
    ts, xs = trajectory_series(res.segments, "x")
    assert xs[-1] == pytest.approx(0.0, abs=1e-9)
    assert max(xs) == pytest.approx(1.0, abs=1e-9)
    assert env.at(0.5) == ({"u": 1.0}, 1.0)


def test_environment_must_start_at_zero():
    with pytest.raises(ValueError):
        Environment([(1.0, {"u": 1.0})])


def test_policy_random_is_seed_deterministic():
    text = "tau . a!<0> + tau . a!<1> || a(v) . tau"
    runs = []
    for _ in range(2):
        cfg = SimConfig(horizon=1.0, policy="random", seed=7)
        runs.append(trace_to_jsonl(simulate(parse_term(text), cfg).trace))
    assert runs[0] == runs[1]


def test_exhaustive_traces_cover_both_choices():
    p = parse_term("new a . (a(v) . tau || a!<1>)")
    (trace,) = exhaustive_traces(p)
    assert [k for k, _ in trace] == ["sync", "tau"]
    q = parse_term("tau . b!<0> + [0 < 1] . tau || b(v)")
    kinds = {tuple(k for k, _ in tr) for tr in exhaustive_traces(q)}
    assert kinds == {("tau", "sync"), ("pass", "tau")}


def test_trace_jsonl_is_valid_json_lines():
    res = run_model("wait")
    lines = trace_to_jsonl(res.trace).strip().splitlines()
    rows = [json.loads(ln) for ln in lines]
    assert all(set(r) == {"time", "kind", "chan", "values", "provenance"} for r in rows)
    assert all(isinstance(r["provenance"], list) for r in rows)


def test_trajectory_csv_header_and_rows():
    res = run_model("wait")
    lines = trajectory_to_csv(res.segments).strip().splitlines()
    assert lines[0].startswith("time,")
    assert len(lines) > 100
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == 0.0


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(horizon=0.0)
    with pytest.raises(ValueError):
        SimConfig(policy="eager")
