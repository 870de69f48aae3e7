"""The two rule sets of the operational semantics.

Discrete transitions take a process to an agent (a process, an abstraction
awaiting values, or a concretion carrying values).  Continuous evolution
integrates every active ODE cell jointly with fixed-step RK4, localizes
boundary crossings by bisection, and composes the per-cell flows into one
closed contract.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import flows as fl
from .syntax import (
    BAnd,
    BFalse,
    BNot,
    BoolExpr,
    Call,
    Const,
    Continuous,
    Expr,
    Guard,
    HpiError,
    Input,
    Less,
    Name,
    Op,
    Output,
    Parallel,
    Prefix,
    Process,
    ReadySet,
    Replication,
    Restriction,
    Substitution,
    Sum,
    Tau,
    Var,
    bool_names,
    expr_names,
    free_names,
    fresh,
    fresh_like,
    is_nil,
    refresh,
    substitute,
)

# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class UrgencyViolation(HpiError):
    pass


class OpenSystem(HpiError):
    pass


class UndefinedDynamics(HpiError):
    pass


class StepOverflow(HpiError):
    pass


class ContinuousUnsupported(HpiError):
    pass


# ---------------------------------------------------------------------------
# Agents and labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Proc:
    body: Process


@dataclass(frozen=True)
class Abstraction:
    binders: tuple
    body: Process


@dataclass(frozen=True)
class Concretion:
    restricted: tuple
    payload: tuple
    body: Process

    def __post_init__(self):
        names = set()
        for e in self.payload:
            names |= expr_names(e)
        if not set(self.restricted) <= names:
            raise ValueError("restricted names of a concretion must occur in its payload")


Agent = Union[Proc, Abstraction, Concretion]


@dataclass(frozen=True)
class TauL:
    pass


@dataclass(frozen=True)
class InL:
    chan: Name


@dataclass(frozen=True)
class OutL:
    chan: Name


DiscreteLabel = Union[TauL, InL, OutL]


@dataclass
class Transition:
    label: DiscreteLabel
    agent: Agent
    kind: str  # tau | pass | in | out | sense | actuate | sync
    chan: Optional[Name] = None
    payload: Optional[tuple] = None
    tags: tuple = ()


@dataclass
class Enumeration:
    transitions: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    truncated: bool = False
    counter: list = field(default_factory=lambda: [0])  # replication unfold stamps


# ---------------------------------------------------------------------------
# Ion laws: compose agents with restrictions and parallel partners
# ---------------------------------------------------------------------------


def _rename_apart(names: tuple, avoid: frozenset, body: Process):
    clash = [n for n in names if n in avoid]
    if not clash:
        return names, body, None
    ren = {n: fresh_like(n) for n in clash}
    sub = Substitution({k: Var(v) for k, v in ren.items()})
    return tuple(ren.get(n, n) for n in names), substitute(body, sub), sub


def par_agent(a: Agent, q: Process, left: bool) -> Agent:
    """A ∥ Q (or Q ∥ A when left is False), pushed through the ion prefix."""

    def mk(body: Process) -> Process:
        return Parallel(body, q) if left else Parallel(q, body)

    if isinstance(a, Proc):
        return Proc(mk(a.body))
    if isinstance(a, Abstraction):
        binders, body, _ = _rename_apart(a.binders, free_names(q), a.body)
        return Abstraction(binders, mk(body))
    restricted, body, sub = _rename_apart(a.restricted, free_names(q), a.body)
    payload = a.payload
    if sub:
        from .syntax import subst_expr

        payload = tuple(subst_expr(e, sub) for e in payload)
    return Concretion(restricted, payload, mk(body))


def restrict_agent(x: Name, a: Agent) -> Agent:
    """(νx)A, pushed through the ion prefix per the scope laws."""
    if isinstance(a, Proc):
        return Proc(Restriction(x, a.body))
    if isinstance(a, Abstraction):
        return Abstraction(a.binders, Restriction(x, a.body))
    payload_names = set()
    for e in a.payload:
        payload_names |= expr_names(e)
    if x in payload_names:
        return Concretion((x,) + a.restricted, a.payload, a.body)
    return Concretion(a.restricted, a.payload, Restriction(x, a.body))


def ion_normalize(a: Agent) -> Agent:
    """Agents built by this module are already in ion normal form."""
    return a


def apply(f: Abstraction, c: Concretion) -> Process:
    if len(f.binders) != len(c.payload):
        raise HpiError(
            f"arity mismatch: abstraction of {len(f.binders)} applied to {len(c.payload)} values"
        )
    avoid = free_names(f.body) - set(f.binders)
    restricted, cbody, sub = _rename_apart(c.restricted, frozenset(avoid), c.body)
    payload = c.payload
    if sub:
        from .syntax import subst_expr

        payload = tuple(subst_expr(e, sub) for e in payload)
    # closed payload expressions pass by value; keeps transmitted terms small
    norm = []
    for e in payload:
        v = fl.eval_expr(e)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            norm.append(Const(float(v)))
        else:
            norm.append(e)
    body = substitute(f.body, Substitution(dict(zip(f.binders, norm))))
    out: Process = Parallel(body, cbody)
    for n in reversed(restricted):
        out = Restriction(n, out)
    return out


# ---------------------------------------------------------------------------
# Discrete transitions
# ---------------------------------------------------------------------------


def _sum_transitions(p: Sum, res: Enumeration):
    out = []
    for pi, cont in p.branches:
        tag = (p.tag,) if p.tag else ()
        if isinstance(pi, Tau):
            out.append(Transition(TauL(), Proc(cont), "tau", tags=tag))
        elif isinstance(pi, Input):
            out.append(Transition(InL(pi.chan), Abstraction(pi.binders, cont), "in", pi.chan, tags=tag))
        elif isinstance(pi, Output):
            out.append(
                Transition(OutL(pi.chan), Concretion((), pi.payload, cont), "out", pi.chan, pi.payload, tag)
            )
        elif isinstance(pi, Guard):
            v = fl.eval_bool(pi.cond)
            if v is True:
                out.append(Transition(TauL(), Proc(cont), "pass", tags=tag))
            elif v is fl.UNDEFINED:
                res.diagnostics.append(("undefined-guard", p.tag))
        elif isinstance(pi, Continuous):
            keep = Sum(((pi, cont),), tag=p.tag)
            items = sorted(pi.ready, key=lambda it: (pi.vars.index(it[0]), it[1]))
            for v, pol in items:
                i = pi.vars.index(v)
                if pol:  # sense: emit the current value
                    out.append(
                        Transition(OutL(v), Concretion((), (pi.init[i],), keep), "sense", v, (pi.init[i],), tag)
                    )
                else:  # actuate: accept a fresh value
                    x = fresh(v.display + "'")
                    init1 = pi.init[:i] + (Var(x),) + pi.init[i + 1 :]
                    upd = Sum(((Continuous(init1, pi.vars, pi.fields, pi.boundary, pi.ready, pi.binders), cont),), tag=p.tag)
                    out.append(Transition(InL(v), Abstraction((x,), upd), "actuate", v, tags=tag))
    return out


# Process nodes are immutable and successor terms share untouched subtrees,
# so per-node enumerations are cached by object identity.  Replication
# copies (and their unfold tags) freeze on first enumeration; reruns start
# from a refreshed root, so the numbering stays reproducible.
_TRANS_CACHE: dict = {}
_NESTED_REP_CACHE: dict = {}


def _spawns_replications(p: Process) -> bool:
    """True when p is a replication whose copies carry replications of
    their own (a factory of stateful instances, not a plain loop)."""
    if not isinstance(p, Replication):
        return False
    key = id(p)
    hit = _NESTED_REP_CACHE.get(key)
    if hit is not None and hit[0]() is p:
        return hit[1]

    def walk(q: Process) -> bool:
        if isinstance(q, Replication):
            return True
        if isinstance(q, Parallel):
            return walk(q.left) or walk(q.right)
        if isinstance(q, Restriction):
            return walk(q.body)
        if isinstance(q, Sum):
            return any(walk(c) for _, c in q.branches)
        return False

    out = walk(p.body)
    try:
        _NESTED_REP_CACHE[key] = (weakref.ref(p, lambda _, k=key, c=_NESTED_REP_CACHE: c.pop(k, None)), out)
    except TypeError:
        pass
    return out


def _trans(p: Process, depth: int, res: Enumeration) -> list:
    if _spawns_replications(p):
        # never cached: each instance spawned by such a factory must carry
        # a fresh unfold stamp so its own events stay distinguishable
        return _trans_inner(p, depth, res)
    key = id(p)
    hit = _TRANS_CACHE.get(key)
    if hit is not None and hit[0]() is p and hit[1] == depth:
        for d in hit[3]:
            if d not in res.diagnostics:
                res.diagnostics.append(d)
        res.truncated = res.truncated or hit[4]
        return hit[2]
    ndiag = len(res.diagnostics)
    was_truncated = res.truncated
    res.truncated = False
    out = _trans_inner(p, depth, res)
    diags = tuple(res.diagnostics[ndiag:])
    truncated = res.truncated
    res.truncated = was_truncated or truncated
    try:
        _TRANS_CACHE[key] = (
            weakref.ref(p, lambda _, k=key, c=_TRANS_CACHE: c.pop(k, None)),
            depth,
            out,
            diags,
            truncated,
        )
    except TypeError:
        pass
    return out


def _trans_inner(p: Process, depth: int, res: Enumeration) -> list:
    if isinstance(p, Sum):
        return _sum_transitions(p, res)
    if isinstance(p, Parallel):
        lefts = _trans(p.left, depth, res)
        rights = _trans(p.right, depth, res)
        out = []
        for t in lefts:
            out.append(Transition(t.label, par_agent(t.agent, p.right, True), t.kind, t.chan, t.payload, t.tags))
        for t in rights:
            out.append(Transition(t.label, par_agent(t.agent, p.left, False), t.kind, t.chan, t.payload, t.tags))
        for tl in lefts:
            for tr in rights:
                if isinstance(tl.label, InL) and isinstance(tr.label, OutL) and tl.label.chan == tr.label.chan:
                    co = tr
                    merged = apply(_as_abstraction(tl.agent), _as_concretion(tr.agent))
                elif isinstance(tl.label, OutL) and isinstance(tr.label, InL) and tl.label.chan == tr.label.chan:
                    co = tl
                    merged = apply(_as_abstraction(tr.agent), _as_concretion(tl.agent))
                else:
                    continue
                kind = "sync"
                if "sense" in (tl.kind, tr.kind):
                    kind = "sense"
                elif "actuate" in (tl.kind, tr.kind):
                    kind = "actuate"
                out.append(
                    Transition(TauL(), Proc(merged), kind, co.chan, co.payload, tl.tags + tr.tags)
                )
        return out
    if isinstance(p, Restriction):
        inner = _trans(p.body, depth, res)
        out = []
        for t in inner:
            if isinstance(t.label, (InL, OutL)) and t.label.chan == p.name:
                continue
            out.append(Transition(t.label, restrict_agent(p.name, t.agent), t.kind, t.chan, t.payload, t.tags))
        return out
    if isinstance(p, Replication):
        if depth <= 0:
            res.truncated = True
            return []
        # lazy unfolding: one copy covers single-participant transitions, a
        # second covers syncs between two copies; !P itself persists in targets
        c1 = _retag(refresh(p.body), res.counter)
        base = _trans(c1, depth - 1, res)
        out = [
            Transition(t.label, par_agent(t.agent, p, True), t.kind, t.chan, t.payload, t.tags)
            for t in base
        ]
        chans = {t.label.chan for t in base if not isinstance(t.label, TauL)}
        if chans:
            c2 = _retag(refresh(p.body), res.counter)
            second = _trans(c2, depth - 1, res)
            for tl in base:
                for tr in second:
                    if isinstance(tl.label, InL) and isinstance(tr.label, OutL) and tl.label.chan == tr.label.chan:
                        fi, co = tl, tr
                    elif isinstance(tl.label, OutL) and isinstance(tr.label, InL) and tl.label.chan == tr.label.chan:
                        fi, co = tr, tl
                    else:
                        continue
                    merged = apply(_as_abstraction(fi.agent), _as_concretion(co.agent))
                    kind = "sync"
                    if "sense" in (tl.kind, tr.kind):
                        kind = "sense"
                    elif "actuate" in (tl.kind, tr.kind):
                        kind = "actuate"
                    out.append(
                        Transition(TauL(), Proc(Parallel(merged, p)), kind, co.chan, co.payload, tl.tags + tr.tags)
                    )
        return out
    if isinstance(p, Call):
        raise HpiError(f"unresolved call to {p.defname!r}")
    raise TypeError(p)


def _retag(p: Process, counter: list) -> Process:
    """Stamp the tags of a replication copy with a fresh unfold index."""
    counter[0] += 1
    k = counter[0]

    def go(q: Process) -> Process:
        if isinstance(q, Sum):
            branches = tuple((pi, go(c)) for pi, c in q.branches)
            tag = f"{q.tag}#{k}" if q.tag else None
            return Sum(branches, tag=tag)
        if isinstance(q, Restriction):
            return Restriction(q.name, go(q.body))
        if isinstance(q, Parallel):
            return Parallel(go(q.left), go(q.right))
        if isinstance(q, Replication):
            # stamp nested bodies too, so unfold lineage composes: a copy
            # spawned inside copy #k carries #k#m, keeping instances apart
            return Replication(go(q.body))
        return q

    return go(p)


def _as_abstraction(a: Agent) -> Abstraction:
    if isinstance(a, Proc):
        return Abstraction((), a.body)
    if isinstance(a, Abstraction):
        return a
    raise HpiError("expected an abstraction")


def _as_concretion(a: Agent) -> Concretion:
    if isinstance(a, Proc):
        return Concretion((), (), a.body)
    if isinstance(a, Concretion):
        return a
    raise HpiError("expected a concretion")


def discrete_transitions(p: Process, depth: int = 64, counter: Optional[list] = None) -> Enumeration:
    res = Enumeration()
    if counter is not None:
        res.counter = counter
    res.transitions = _trans(p, depth, res)
    return res


# ---------------------------------------------------------------------------
# Survey of a process for continuous evolution
# ---------------------------------------------------------------------------


@dataclass
class _CellInfo:
    site: Sum  # the Sum node holding the continuous branch
    prefix: Continuous
    cont: Process
    tag: Optional[str]


@dataclass
class Survey:
    cells: list = field(default_factory=list)
    ready: ReadySet = field(default_factory=ReadySet)
    urgent: list = field(default_factory=list)  # reasons evolution is preempted
    blocked: list = field(default_factory=list)  # sums with no applicable rule
    diagnostics: list = field(default_factory=list)
    restricted: set = field(default_factory=set)


def _survey(p: Process, sv: Survey) -> ReadySet:
    """Returns the visible ready set of p, accumulating cells and checks."""
    if isinstance(p, Sum):
        if not p.branches:
            return ReadySet()
        cont_branch = None
        waiting = []
        live = 0
        for pi, cont in p.branches:
            if isinstance(pi, Tau):
                sv.urgent.append(("tau", p.tag))
                live += 1
            elif isinstance(pi, Guard):
                v = fl.eval_bool(pi.cond)
                if v is True:
                    sv.urgent.append(("pass", p.tag))
                    live += 1
                elif v is fl.UNDEFINED:
                    sv.diagnostics.append(("undefined-guard", p.tag))
            elif isinstance(pi, Continuous):
                if cont_branch is None:
                    cont_branch = (pi, cont)
                live += 1
            else:
                waiting.append(pi)
                live += 1
        if cont_branch is not None:
            pi, cont = cont_branch
            sv.cells.append(_CellInfo(p, pi, cont, p.tag))
            return pi.ready
        if waiting:
            items = set()
            for pi in waiting:
                if isinstance(pi, Input):
                    items.add((pi.chan, False))
                else:
                    items.add((pi.chan, True))
            return ReadySet(frozenset(items))
        if live == 0:
            sv.blocked.append(p.tag)
        return ReadySet()
    if isinstance(p, Parallel):
        rl = _survey(p.left, sv)
        rr = _survey(p.right, sv)
        clash = rl.dual() & rr
        if clash:
            sv.urgent.append(("match", clash.describe()))
        return rl | rr
    if isinstance(p, Restriction):
        r = _survey(p.body, sv)
        sv.restricted.add(p.name)
        return r.without(p.name)
    if isinstance(p, Replication):
        r = _survey(p.body, sv)
        clash = r.dual() & r
        if clash:
            sv.urgent.append(("match", clash.describe()))
        return r
    if isinstance(p, Call):
        raise HpiError(f"unresolved call to {p.defname!r}")
    raise TypeError(p)


def survey(p: Process) -> tuple[Survey, ReadySet]:
    sv = Survey()
    r = _survey(p, sv)
    sv.ready = r
    return sv, r


def ready_set(p: Process) -> ReadySet:
    return survey(p)[1]


# ---------------------------------------------------------------------------
# Compiled RK4 steppers, cached per ODE-system shape
# ---------------------------------------------------------------------------


def _expr_src(e: Expr, names: dict) -> str:
    if isinstance(e, Const):
        if not isinstance(e.value, (int, float)) or isinstance(e.value, bool):
            raise UndefinedDynamics(f"non-numeric constant {e.value!r} in dynamics")
        return repr(float(e.value))
    if isinstance(e, Var):
        try:
            return names[e.name]
        except KeyError:
            raise OpenSystem(f"unbound continuous name {e.name.display!r}") from None
    a = [_expr_src(x, names) for x in e.args]
    if e.op in ("+", "-", "*", "/"):
        return f"({a[0]} {e.op} {a[1]})"
    if e.op == "sqrt":
        return f"math.sqrt({a[0]})"
    if e.op == "min":
        return f"min({a[0]}, {a[1]})"
    if e.op == "max":
        return f"max({a[0]}, {a[1]})"
    if e.op == "neg":
        return f"(-{a[0]})"
    raise ValueError(e.op)


def _bool_src(b: BoolExpr, names: dict) -> str:
    if isinstance(b, BFalse):
        return "False"
    if isinstance(b, Less):
        return f"({_expr_src(b.lhs, names)} < {_expr_src(b.rhs, names)})"
    if isinstance(b, BAnd):
        return f"({_bool_src(b.lhs, names)} and {_bool_src(b.rhs, names)})"
    return f"(not {_bool_src(b.arg, names)})"


_compiled_cache: dict = {}


def _compile_system(vars_: tuple, fields: tuple, boundaries: tuple, env_names: tuple):
    n = len(vars_)
    m = len(env_names)

    def maps(prefix: str) -> dict:
        d = {v: f"{prefix}{i}" for i, v in enumerate(vars_)}
        d.update({e: f"E{j}" for j, e in enumerate(env_names)})
        return d

    ys = [f"Y{i}" for i in range(n)]
    lines = ["import math", "def _make(env):"]
    if m:
        lines.append("    (" + ", ".join(f"E{j}" for j in range(m)) + ",) = env")
    lines.append(f"    def step({', '.join(ys)}, dt):")
    my = maps("Y")
    for i in range(n):
        lines.append(f"        A{i} = {_expr_src(fields[i], my)}")
    for i in range(n):
        lines.append(f"        P{i} = Y{i} + 0.5*dt*A{i}")
    mp = maps("P")
    for i in range(n):
        lines.append(f"        B{i} = {_expr_src(fields[i], mp)}")
    for i in range(n):
        lines.append(f"        Q{i} = Y{i} + 0.5*dt*B{i}")
    mq = maps("Q")
    for i in range(n):
        lines.append(f"        C{i} = {_expr_src(fields[i], mq)}")
    for i in range(n):
        lines.append(f"        R{i} = Y{i} + dt*C{i}")
    mr = maps("R")
    for i in range(n):
        lines.append(f"        D{i} = {_expr_src(fields[i], mr)}")
    ret = ", ".join(f"Y{i} + dt*(A{i} + 2.0*B{i} + 2.0*C{i} + D{i})/6.0" for i in range(n))
    lines.append(f"        return ({ret},)")
    lines.append(f"    def bounds({', '.join(ys)}):")
    bsrc = ", ".join(_bool_src(b, my) for b in boundaries)
    lines.append(f"        return ({bsrc},)")
    lines.append("    return step, bounds")
    src = "\n".join(lines)
    ns: dict = {}
    exec(compile(src, "<ode-system>", "exec"), ns)
    return ns["_make"]


def _system_key(vars_: tuple, fields: tuple, boundaries: tuple, env_names: tuple) -> str:
    from .syntax import _canon_bool, _canon_expr

    env = {v: f"v{i}" for i, v in enumerate(vars_)}
    env.update({e: f"e{j}" for j, e in enumerate(env_names)})
    return "|".join(
        [_canon_expr(f, env) for f in fields] + [_canon_bool(b, env) for b in boundaries]
    ) + f"|{len(vars_)}:{len(env_names)}"


def _get_stepper(vars_: tuple, fields: tuple, boundaries: tuple, env_names: tuple):
    key = _system_key(vars_, fields, boundaries, env_names)
    make = _compiled_cache.get(key)
    if make is None:
        make = _compile_system(vars_, fields, boundaries, env_names)
        _compiled_cache[key] = make
    return make


# ---------------------------------------------------------------------------
# Continuous evolution
# ---------------------------------------------------------------------------


@dataclass
class IntegratorConfig:
    step: float = 1e-3
    tau_event: float = 1e-9
    max_substeps: int = 50_000_000
    record_every: int = 1

    def __post_init__(self):
        if self.step <= 0 or self.tau_event <= 0:
            raise ValueError("step and tau_event must be positive")


@dataclass
class StopInfo:
    tag: Optional[str]
    values: dict  # Name -> float, the stopping cell's terminal state
    binders: tuple


@dataclass
class ContinuousResult:
    duration: float
    contract: Optional[fl.Contract]  # visible assumption/guarantee flow; None for a zero-duration stop
    ready: ReadySet
    process: Process
    stops: list
    full_flow: Optional[fl.Flow]  # every cell variable, restricted ones included
    diagnostics: list


def _rebuild(p: Process, repl: dict) -> Process:
    # subtrees without a replaced cell come back as the same object so
    # identity-keyed caches stay warm
    r = repl.get(id(p))
    if r is not None:
        return r
    if isinstance(p, Sum):
        return p
    if isinstance(p, Parallel):
        l = _rebuild(p.left, repl)
        r2 = _rebuild(p.right, repl)
        return p if l is p.left and r2 is p.right else Parallel(l, r2)
    if isinstance(p, Restriction):
        b = _rebuild(p.body, repl)
        return p if b is p.body else Restriction(p.name, b)
    if isinstance(p, Replication):
        b = _rebuild(p.body, repl)
        return p if b is p.body else Replication(b)
    return p


def continuous_step(
    p: Process,
    horizon: float,
    cfg: IntegratorConfig,
    env: Optional[dict] = None,
) -> Optional[ContinuousResult]:
    """One application of the continuous rule set, up to `horizon` seconds.

    Returns None when no continuous rule applies (caller decides whether
    that is termination or deadlock).  Raises UrgencyViolation when a
    discrete step is enabled and must preempt the passage of time.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    env = dict(env or {})
    sv, ready = survey(p)
    if sv.urgent:
        what, detail = sv.urgent[0]
        raise UrgencyViolation(f"discrete step enabled ({what}: {detail})")
    if sv.blocked:
        return None  # a component with no applicable rule blocks evolution
    if not sv.cells and not ready and is_nil(_strip(p)):
        return None

    cells = sv.cells
    all_vars: list[Name] = []
    for c in cells:
        all_vars.extend(c.prefix.vars)
    if len(set(all_vars)) != len(all_vars):
        raise OpenSystem("two parallel cells guarantee the same variable")
    var_set = set(all_vars)

    used: set[Name] = set()
    for c in cells:
        for e in c.prefix.fields:
            used |= expr_names(e)
        used |= bool_names(c.prefix.boundary)
    external = used - var_set
    missing = external - set(env)
    if missing:
        names = ", ".join(sorted(n.display for n in missing))
        raise OpenSystem(f"variables without a defining cell or environment value: {names}")
    env_names = tuple(sorted(external, key=lambda n: (n.display, n.id)))

    if not cells:
        # pure waiting: an empty flow of the full horizon
        return ContinuousResult(
            horizon,
            fl.closed_contract(fl.empty_flow(horizon)),
            ready,
            p,
            [],
            None,
            sv.diagnostics,
        )

    vars_ = tuple(all_vars)
    init_state: dict = dict(env)
    y0 = []
    for c in cells:
        for e in c.prefix.init:
            v = fl.eval_expr(e, init_state)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise UndefinedDynamics(f"initial value {e!r} does not evaluate to a real")
            y0.append(float(v))
    fields = tuple(e for c in cells for e in c.prefix.fields)
    boundaries = tuple(c.prefix.boundary for c in cells)

    make = _get_stepper(vars_, fields, boundaries, env_names)
    env_vals = tuple(float(env[n]) for n in env_names)
    try:
        step, bounds = make(env_vals)
    except (ZeroDivisionError, ValueError) as e:  # pragma: no cover
        raise UndefinedDynamics(str(e)) from None

    y = tuple(y0)
    try:
        ok0 = bounds(*y)
    except (ZeroDivisionError, ValueError) as e:
        raise UndefinedDynamics(f"boundary undefined at start: {e}") from None
    if not all(ok0):
        return _finish(p, cells, vars_, env_names, env_vals, [0.0], [y], 0.0, y, ok0, ready, sv)

    times = [0.0]
    samples = [y]
    t = 0.0
    n_taken = 0
    status_ok = None
    t_stop = None
    y_stop = None
    try:
        eps = 1e-12 * max(1.0, horizon)
        while t < horizon - eps:
            dt = min(cfg.step, horizon - t)
            if n_taken > cfg.max_substeps:
                raise StepOverflow(f"more than {cfg.max_substeps} substeps")
            y_new = step(*y, dt)
            ok = bounds(*y_new)
            if all(ok):
                t += dt
                y = y_new
                n_taken += 1
                if n_taken % cfg.record_every == 0:
                    times.append(t)
                    samples.append(y)
                continue
            # bisect the crossing on the interpolated segment
            lo, hi = 0.0, 1.0
            ok_hi = ok
            while (hi - lo) * dt > cfg.tau_event:
                mid = 0.5 * (lo + hi)
                ym = tuple(a + mid * (b - a) for a, b in zip(y, y_new))
                okm = bounds(*ym)
                if all(okm):
                    lo = mid
                else:
                    hi = mid
                    ok_hi = okm
            y_stop = tuple(a + hi * (b - a) for a, b in zip(y, y_new))
            t_stop = t + hi * dt
            status_ok = ok_hi
            break
    except (ZeroDivisionError, ValueError) as e:
        raise UndefinedDynamics(f"dynamics undefined during integration: {e}") from None

    if t_stop is None:
        t_stop = horizon
        y_stop = y
        status_ok = tuple(True for _ in cells)
    if times[-1] != t_stop:
        times.append(t_stop)
        samples.append(y_stop)
    elif samples[-1] != y_stop:
        samples[-1] = y_stop

    return _finish(p, cells, vars_, env_names, env_vals, times, samples, t_stop, y_stop, status_ok, ready, sv)


def _strip(p: Process) -> Process:
    from .syntax import prune

    return prune(p)


def _finish(p, cells, vars_, env_names, env_vals, times, samples, t_stop, y_stop, ok, ready, sv):
    duration = t_stop
    stops = []
    repl = {}
    offset = 0
    final = dict(zip(vars_, y_stop))
    for idx, c in enumerate(cells):
        k = len(c.prefix.vars)
        vals = y_stop[offset : offset + k]
        offset += k
        if ok[idx]:
            new_init = tuple(Const(v) for v in vals)
            pfx = Continuous(new_init, c.prefix.vars, c.prefix.fields, c.prefix.boundary, c.prefix.ready, c.prefix.binders)
            repl[id(c.site)] = Sum(((pfx, c.cont),), tag=c.tag)
        else:
            if c.prefix.binders:
                sub = Substitution({b: Const(v) for b, v in zip(c.prefix.binders, vals)})
                repl[id(c.site)] = substitute(c.cont, sub)
            else:
                repl[id(c.site)] = c.cont
            stops.append(StopInfo(c.tag, dict(zip(c.prefix.vars, vals)), c.prefix.binders))
    successor = _rebuild(p, repl)

    if duration > 0:
        grid = np.asarray(times)
        vals_arr = np.asarray(samples)
        full = fl.Flow(tuple(vars_), grid, vals_arr)
        visible = tuple(n for n in vars_ if n not in sv.restricted)
        g = full.project(visible) if visible else fl.empty_flow(duration)
        if env_names:
            a = fl.Flow(
                tuple(env_names),
                np.array([0.0, duration]),
                np.vstack([np.asarray(env_vals), np.asarray(env_vals)]),
            )
        else:
            a = fl.empty_flow(duration)
        contract = fl.Contract(a, g)
    else:
        full = None
        contract = None
    return ContinuousResult(duration, contract, ready, successor, stops, full, sv.diagnostics)
