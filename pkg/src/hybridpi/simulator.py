"""Closed-system execution: urgent discrete steps interleaved with
continuous evolution, with trace/trajectory recording, nondeterminism
policies, and Zeno detection."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import flows as fl
from .kernel import (
    ContinuousResult,
    IntegratorConfig,
    TauL,
    discrete_transitions,
    continuous_step,
    survey,
)
from .syntax import HpiError, Name, Process, expr_names, bool_names, is_nil, prune, refresh


@dataclass
class SimConfig:
    horizon: float = 10.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    policy: str = "first"  # first | random
    seed: int = 0
    zeno_max_events: int = 1000
    zeno_window: float = 1.0
    repl_depth: int = 64
    max_events: int = 2_000_000

    def __post_init__(self):
        if self.horizon <= 0 or self.zeno_window <= 0:
            raise ValueError("horizon and zeno window must be positive")
        if self.policy not in ("first", "random"):
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass
class TraceEvent:
    time: float
    kind: str  # Tau | Sync | Sense | Actuate | Evolve | Stop | ZenoAbort | Deadlock
    chan: Optional[str] = None
    values: Union[list, dict, None] = None
    provenance: list = field(default_factory=list)


@dataclass
class ZenoReport:
    flagged: bool
    accumulation: Optional[float] = None
    peak_events: int = 0  # most events seen in one window


@dataclass
class SimResult:
    trace: list  # of TraceEvent
    segments: list  # of (start time, Flow) over all recorded variables
    status: str  # horizon | inaction | deadlock | zeno
    final_process: Process
    end_time: float
    zeno: Optional[ZenoReport] = None
    diagnostics: list = field(default_factory=list)

    @property
    def events(self) -> list:
        return self.trace


# ---------------------------------------------------------------------------
# Environment profiles (externally guaranteed variables, e.g. a disturbance)
# ---------------------------------------------------------------------------


class Environment:
    """Piecewise-constant values for names no cell guarantees.

    Construct from a plain dict (constant for all time) or a list of
    (start_time, dict) pieces sorted by start time, first piece at 0.
    """

    def __init__(self, spec):
        if spec is None:
            self.pieces = [(0.0, {})]
        elif isinstance(spec, dict):
            self.pieces = [(0.0, dict(spec))]
        else:
            pieces = sorted(((float(t), dict(d)) for t, d in spec), key=lambda x: x[0])
            if not pieces or pieces[0][0] != 0.0:
                raise ValueError("environment pieces must start at time 0")
            self.pieces = pieces

    def at(self, t: float):
        """Returns (values, end) where end is when the piece changes."""
        lo = 0
        for i, (t0, _) in enumerate(self.pieces):
            if t0 <= t + 1e-12:
                lo = i
            else:
                break
        end = self.pieces[lo + 1][0] if lo + 1 < len(self.pieces) else math.inf
        return self.pieces[lo][1], end

    def names(self) -> set:
        out: set = set()
        for _, d in self.pieces:
            out |= set(d)
        return out


# ---------------------------------------------------------------------------
# Simulation loop
# ---------------------------------------------------------------------------


def _payload_values(payload) -> list:
    out = []
    for e in payload or ():
        v = fl.eval_expr(e)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(float(v))
        else:
            from .syntax import Var

            out.append(v.name.display if isinstance(v, Var) else repr(v))
    return out


def simulate(p: Process, cfg: SimConfig, env=None) -> SimResult:
    environment = env if isinstance(env, Environment) else Environment(env)
    rng = np.random.default_rng(cfg.seed) if cfg.policy == "random" else None
    p = refresh(p)
    t = 0.0
    trace: list = []
    segments: list = []
    diagnostics: list = []
    recent: deque = deque()  # discrete event times for the Zeno window
    unfolds = [0]
    status = "horizon"
    n_events = 0

    def note_discrete(ev: TraceEvent) -> bool:
        nonlocal n_events
        trace.append(ev)
        n_events += 1
        if n_events > cfg.max_events:
            raise HpiError(f"more than {cfg.max_events} events; raise max_events if intended")
        recent.append(ev.time)
        while recent and ev.time - recent[0] > cfg.zeno_window:
            recent.popleft()
        return len(recent) > cfg.zeno_max_events

    while t < cfg.horizon - 1e-12:
        enum = discrete_transitions(p, cfg.repl_depth, counter=unfolds)
        diagnostics.extend(d for d in enum.diagnostics if d not in diagnostics)
        taus = [tr for tr in enum.transitions if isinstance(tr.label, TauL)]
        if taus:
            tr = taus[0] if rng is None else taus[int(rng.integers(len(taus)))]
            kind = {"tau": "Tau", "pass": "Tau", "sync": "Sync", "sense": "Sense", "actuate": "Actuate"}[tr.kind]
            ev = TraceEvent(
                t,
                kind,
                tr.chan.display if tr.chan else None,
                _payload_values(tr.payload),
                list(tr.tags),
            )
            overflow = note_discrete(ev)
            p = prune(tr.agent.body)
            if overflow:
                z = detect_zeno(trace, cfg.zeno_max_events, cfg.zeno_window)
                trace.append(TraceEvent(t, "ZenoAbort", values=[z.accumulation] if z.accumulation else []))
                return SimResult(trace, segments, "zeno", p, t, z, diagnostics)
            continue
        values, piece_end = environment.at(t)
        horizon = min(cfg.horizon - t, piece_end - t)
        res = continuous_step(p, horizon, cfg.integrator, values)
        if res is None:
            if is_nil(prune(p)):
                status = "inaction"
            else:
                status = "deadlock"
                trace.append(TraceEvent(t, "Deadlock"))
            break
        if res.duration > 0:
            trace.append(
                TraceEvent(t, "Evolve", values=[res.duration], provenance=[res.ready.describe()])
            )
            if res.full_flow is not None:
                segments.append((t, res.full_flow))
            t += res.duration
        for st in res.stops:
            ev = TraceEvent(
                t,
                "Stop",
                values={n.display: v for n, v in st.values.items()},
                provenance=[st.tag] if st.tag else [],
            )
            if note_discrete(ev):
                z = detect_zeno(trace, cfg.zeno_max_events, cfg.zeno_window)
                trace.append(TraceEvent(t, "ZenoAbort", values=[z.accumulation] if z.accumulation else []))
                return SimResult(trace, segments, "zeno", prune(res.process), t, z, diagnostics)
        p = prune(res.process)
        if res.duration == 0 and not res.stops:
            raise HpiError("continuous step made no progress")
    else:
        t = cfg.horizon

    return SimResult(trace, segments, status, p, min(t, cfg.horizon), None, diagnostics)


# ---------------------------------------------------------------------------
# Closure analysis
# ---------------------------------------------------------------------------


def is_closed_for_evolution(p: Process, env_names: Sequence[Name] = ()) -> tuple:
    """True iff every name an ODE reads is guaranteed by some cell (or given
    by the environment).  Returns (ok, report)."""
    sv, _ = survey(p)
    own = set()
    used = set()
    for c in sv.cells:
        own |= set(c.prefix.vars)
        for e in c.prefix.fields:
            used |= expr_names(e)
        used |= bool_names(c.prefix.boundary)
    missing = used - own - set(env_names)
    if missing:
        names = ", ".join(sorted(n.display for n in missing))
        return False, f"unassumed variables: {names}"
    return True, "closed"


# ---------------------------------------------------------------------------
# Zeno detection
# ---------------------------------------------------------------------------


def detect_zeno(trace: Sequence[TraceEvent], max_events: int = 1000, window: float = 1.0) -> ZenoReport:
    """Flags dense event clusters; estimates the accumulation point by
    geometric extrapolation of the gaps between distinct event times."""
    times = []
    for ev in trace:
        if ev.kind in ("Evolve", "ZenoAbort", "Deadlock"):
            continue
        if not times or ev.time > times[-1]:
            times.append(ev.time)
        # events at an already-seen time do not add a new instant
    flagged = False
    peak = 0
    lo = 0
    all_times = [ev.time for ev in trace if ev.kind not in ("Evolve", "ZenoAbort", "Deadlock")]
    for hi in range(len(all_times)):
        while all_times[hi] - all_times[lo] > window:
            lo += 1
        peak = max(peak, hi - lo + 1)
    if peak > max_events:
        flagged = True
    accumulation = None
    if len(times) >= 4:
        gaps = [times[i + 1] - times[i] for i in range(len(times) - 1)]
        # gaps shorter than the event-localization floor saturate and would
        # bias the ratio toward 1; extrapolate from the last reliable pair
        floor = 1e-6
        for i in range(len(gaps) - 2, -1, -1):
            g1, g2 = gaps[i], gaps[i + 1]
            if g1 > floor and g2 > floor:
                r = g2 / g1
                if 0.0 < r < 0.95:
                    accumulation = times[i + 2] + g2 * r / (1.0 - r)
                break
    return ZenoReport(flagged, accumulation, peak)


# ---------------------------------------------------------------------------
# Exhaustive exploration of small discrete fragments
# ---------------------------------------------------------------------------


def exhaustive_traces(p: Process, max_depth: int = 8, repl_depth: int = 4) -> list:
    """All maximal discrete tau-sequences up to max_depth, as lists of
    (kind, chan display) pairs.  Intended for small fragments only."""
    out: list = []

    def go(q: Process, acc: list, depth: int):
        if depth >= max_depth:
            out.append(acc)
            return
        enum = discrete_transitions(q, repl_depth)
        taus = [tr for tr in enum.transitions if isinstance(tr.label, TauL)]
        if not taus:
            out.append(acc)
            return
        for tr in taus:
            go(prune(tr.agent.body), acc + [(tr.kind, tr.chan.display if tr.chan else None)], depth + 1)

    go(prune(refresh(p)), [], 0)
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def trace_to_jsonl(trace: Sequence[TraceEvent]) -> str:
    lines = []
    for ev in trace:
        lines.append(
            json.dumps(
                {
                    "time": ev.time,
                    "kind": ev.kind,
                    "chan": ev.chan,
                    "values": ev.values,
                    "provenance": ev.provenance,
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def _column_labels(segments) -> dict:
    """Name -> unique display label, in order of first appearance."""
    labels: dict = {}
    used: set = set()
    for _, flow in segments:
        for n in flow.names:
            if n in labels:
                continue
            s = n.display
            k = 1
            while s in used:
                k += 1
                s = f"{n.display}_{k}"
            used.add(s)
            labels[n] = s
    return labels


def trajectory_to_csv(segments) -> str:
    """The union of all recorded variables on the concatenated grid; a
    variable absent from a segment renders as nan."""
    labels = _column_labels(segments)
    names = list(labels)
    header = "time," + ",".join(labels[n] for n in names)
    lines = [header]
    for t0, flow in segments:
        idx = {n: j for j, n in enumerate(flow.names)}
        for i, tt in enumerate(flow.times):
            row = [f"{t0 + tt:.17g}"]
            for n in names:
                j = idx.get(n)
                row.append("nan" if j is None else f"{flow.values[i, j]:.17g}")
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def trajectory_series(segments, display: str):
    """Concatenated (times, values) arrays for one variable by display name."""
    ts: list = []
    vs: list = []
    for t0, flow in segments:
        for j, n in enumerate(flow.names):
            if n.display == display:
                ts.append(t0 + flow.times)
                vs.append(flow.values[:, j])
                break
    if not ts:
        return np.array([]), np.array([])
    return np.concatenate(ts), np.concatenate(vs)
