"""Abstract syntax for hybrid pi-calculus terms.

Processes are immutable trees built from sums of prefixed continuations,
restriction, parallel composition and replication.  Names carry globally
unique integer ids; alpha-renaming mints fresh ids from a session counter so
the Barendregt convention (free and bound names disjoint) can be maintained
mechanically.
"""

from __future__ import annotations

import itertools
import threading
import weakref
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union


class HpiError(Exception):
    """Base class for workbench errors."""


class SubstitutionError(HpiError):
    """Raised when a substitution would put a non-name in channel position."""


# ---------------------------------------------------------------------------
# Names
# ---------------------------------------------------------------------------

_counter = itertools.count(1)
_counter_lock = threading.Lock()


@dataclass(frozen=True)
class Name:
    id: int
    display: str

    def __eq__(self, other):
        return isinstance(other, Name) and self.id == other.id

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f"{self.display}@{self.id}"


def fresh(display: str) -> Name:
    """Mint a name with a session-unique id."""
    with _counter_lock:
        return Name(next(_counter), display)


def fresh_like(n: Name) -> Name:
    return fresh(n.display)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

OPERATORS = {
    "+": 2,
    "-": 2,
    "*": 2,
    "/": 2,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "neg": 1,
}


@dataclass(frozen=True)
class Const:
    value: Union[float, str]


@dataclass(frozen=True)
class Var:
    name: Name


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple

    def __post_init__(self):
        arity = OPERATORS.get(self.op)
        if arity is None:
            raise ValueError(f"unknown operator {self.op!r}")
        if arity != len(self.args):
            raise ValueError(f"operator {self.op!r} expects {arity} args, got {len(self.args)}")


Expr = Union[Const, Var, Op]


def expr_names(e: Expr) -> frozenset[Name]:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    out: set[Name] = set()
    for a in e.args:
        out |= expr_names(a)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Boolean expressions (kernel: false, <, and, not; the rest is sugar)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BFalse:
    pass


@dataclass(frozen=True)
class Less:
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class BAnd:
    lhs: "BoolExpr"
    rhs: "BoolExpr"


@dataclass(frozen=True)
class BNot:
    arg: "BoolExpr"


BoolExpr = Union[BFalse, Less, BAnd, BNot]

BTRUE: BoolExpr = BNot(BFalse())


def b_true() -> BoolExpr:
    return BTRUE


def b_le(a: Expr, b: Expr) -> BoolExpr:
    return BNot(Less(b, a))


def b_ge(a: Expr, b: Expr) -> BoolExpr:
    return BNot(Less(a, b))


def b_gt(a: Expr, b: Expr) -> BoolExpr:
    return Less(b, a)


def b_eq(a: Expr, b: Expr) -> BoolExpr:
    return BAnd(BNot(Less(a, b)), BNot(Less(b, a)))


def b_ne(a: Expr, b: Expr) -> BoolExpr:
    return BNot(b_eq(a, b))


def b_or(a: BoolExpr, b: BoolExpr) -> BoolExpr:
    return BNot(BAnd(BNot(a), BNot(b)))


def bool_names(b: BoolExpr) -> frozenset[Name]:
    if isinstance(b, BFalse):
        return frozenset()
    if isinstance(b, Less):
        return expr_names(b.lhs) | expr_names(b.rhs)
    if isinstance(b, BAnd):
        return bool_names(b.lhs) | bool_names(b.rhs)
    return bool_names(b.arg)


# ---------------------------------------------------------------------------
# Ready sets: polarized names.  (name, True) is an output (sense side),
# (name, False) an input (actuate side).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReadySet:
    items: frozenset[tuple[Name, bool]] = frozenset()

    def dual(self) -> "ReadySet":
        return ReadySet(frozenset((n, not pol) for n, pol in self.items))

    def names(self) -> frozenset[Name]:
        return frozenset(n for n, _ in self.items)

    def __or__(self, other: "ReadySet") -> "ReadySet":
        return ReadySet(self.items | other.items)

    def __and__(self, other: "ReadySet") -> "ReadySet":
        return ReadySet(self.items & other.items)

    def without(self, name: Name) -> "ReadySet":
        return ReadySet(frozenset(i for i in self.items if i[0] != name))

    def __bool__(self):
        return bool(self.items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def describe(self) -> str:
        parts = sorted(f"{n.display}{'!' if pol else '?'}" for n, pol in self.items)
        return "{" + ", ".join(parts) + "}"


def ready(*items: tuple[Name, bool]) -> ReadySet:
    return ReadySet(frozenset(items))


# ---------------------------------------------------------------------------
# Prefixes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tau:
    pass


@dataclass(frozen=True)
class Input:
    chan: Name
    binders: tuple[Name, ...]


@dataclass(frozen=True)
class Output:
    chan: Name
    payload: tuple  # of Expr


@dataclass(frozen=True)
class Guard:
    cond: BoolExpr


@dataclass(frozen=True)
class Continuous:
    init: tuple            # Expr per variable
    vars: tuple            # Name per variable, pairwise distinct
    fields: tuple          # Expr per variable (right-hand sides)
    boundary: BoolExpr
    ready: ReadySet
    binders: tuple = ()    # continuation binders; empty means final state dropped

    def __post_init__(self):
        if not (len(self.init) == len(self.vars) == len(self.fields)):
            raise ValueError("continuous prefix needs |init| = |vars| = |fields|")
        if len(set(self.vars)) != len(self.vars):
            raise ValueError("continuous variables must be pairwise distinct")
        if self.binders and len(self.binders) != len(self.vars):
            raise ValueError("continuation binders must match variable count")
        own = set(self.vars)
        for n, _pol in self.ready:
            if n not in own:
                raise ValueError(f"ready-set entry {n.display} is not an ODE variable")


Prefix = Union[Tau, Input, Output, Guard, Continuous]


# ---------------------------------------------------------------------------
# Processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sum:
    branches: tuple  # of (Prefix, Process)
    tag: Optional[str] = None


@dataclass(frozen=True)
class Restriction:
    name: Name
    body: "Process"


@dataclass(frozen=True)
class Parallel:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Replication:
    body: "Process"


@dataclass(frozen=True)
class Call:
    defname: str
    args: tuple  # of Expr


Process = Union[Sum, Restriction, Parallel, Replication, Call]

NIL = Sum(())


def is_nil(p: Process) -> bool:
    return isinstance(p, Sum) and not p.branches


def par(*ps: Process) -> Process:
    """Right-nested parallel composition; empty product is inaction."""
    if not ps:
        return NIL
    out = ps[-1]
    for p in reversed(ps[:-1]):
        out = Parallel(p, out)
    return out


def restrict(names: Sequence[Name], body: Process) -> Process:
    for n in reversed(list(names)):
        body = Restriction(n, body)
    return body


def prefixed(pi: Prefix, cont: Process, tag: Optional[str] = None) -> Sum:
    return Sum(((pi, cont),), tag=tag)


# ---------------------------------------------------------------------------
# Free names
# ---------------------------------------------------------------------------


def prefix_free_names(pi: Prefix, cont_free: frozenset[Name]) -> frozenset[Name]:
    if isinstance(pi, Tau):
        return cont_free
    if isinstance(pi, Input):
        return (cont_free - frozenset(pi.binders)) | {pi.chan}
    if isinstance(pi, Output):
        out = cont_free | {pi.chan}
        for e in pi.payload:
            out |= expr_names(e)
        return out
    if isinstance(pi, Guard):
        return cont_free | bool_names(pi.cond)
    if isinstance(pi, Continuous):
        out = cont_free - frozenset(pi.binders)
        out |= frozenset(pi.vars)
        for e in pi.init:
            out |= expr_names(e)
        for e in pi.fields:
            out |= expr_names(e)
        out |= bool_names(pi.boundary)
        out |= pi.ready.names()
        return out
    raise TypeError(pi)


# Process nodes are immutable, so free-name sets can be cached per object.
# Keyed by id with a liveness check; evicted when the node is collected.
_FN_CACHE: dict = {}


def free_names(p: Process) -> frozenset[Name]:
    key = id(p)
    hit = _FN_CACHE.get(key)
    if hit is not None and hit[0]() is p:
        return hit[1]
    out = _free_names(p)
    try:
        _FN_CACHE[key] = (weakref.ref(p, lambda _, k=key, c=_FN_CACHE: c.pop(k, None)), out)
    except TypeError:
        pass
    return out


def _free_names(p: Process) -> frozenset[Name]:
    if isinstance(p, Sum):
        out: frozenset[Name] = frozenset()
        for pi, cont in p.branches:
            out |= prefix_free_names(pi, free_names(cont))
        return out
    if isinstance(p, Restriction):
        return free_names(p.body) - {p.name}
    if isinstance(p, Parallel):
        return free_names(p.left) | free_names(p.right)
    if isinstance(p, Replication):
        return free_names(p.body)
    if isinstance(p, Call):
        out = frozenset()
        for e in p.args:
            out |= expr_names(e)
        return out
    raise TypeError(p)


def bound_names(p: Process) -> frozenset[Name]:
    if isinstance(p, Sum):
        out: set[Name] = set()
        for pi, cont in p.branches:
            out |= bound_names(cont)
            if isinstance(pi, Input):
                out |= set(pi.binders)
            elif isinstance(pi, Continuous):
                out |= set(pi.binders)
        return frozenset(out)
    if isinstance(p, Restriction):
        return bound_names(p.body) | {p.name}
    if isinstance(p, Parallel):
        return bound_names(p.left) | bound_names(p.right)
    if isinstance(p, Replication):
        return bound_names(p.body)
    if isinstance(p, Call):
        return frozenset()
    raise TypeError(p)


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------


class Substitution:
    """Finite map from names to expressions, identity elsewhere."""

    def __init__(self, mapping: dict[Name, Expr] | Iterable[tuple[Name, Expr]] = ()):
        self.mapping: dict[Name, Expr] = dict(mapping)

    def __bool__(self):
        return bool(self.mapping)

    def lookup(self, n: Name) -> Optional[Expr]:
        return self.mapping.get(n)

    def name_for(self, n: Name, where: str) -> Name:
        """Replacement for a name in channel/variable position; must be a name."""
        r = self.mapping.get(n)
        if r is None:
            return n
        if isinstance(r, Var):
            return r.name
        raise SubstitutionError(
            f"cannot substitute non-name expression for {n.display} in {where} position"
        )

    def free_in_range(self) -> frozenset[Name]:
        out: frozenset[Name] = frozenset()
        for e in self.mapping.values():
            out |= expr_names(e)
        return out

    def drop(self, names: Iterable[Name]) -> "Substitution":
        dropped = set(names)
        return Substitution({k: v for k, v in self.mapping.items() if k not in dropped})

    def extend(self, extra: dict[Name, Expr]) -> "Substitution":
        m = dict(self.mapping)
        m.update(extra)
        return Substitution(m)


def subst_expr(e: Expr, s: Substitution) -> Expr:
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        r = s.lookup(e.name)
        return r if r is not None else e
    return Op(e.op, tuple(subst_expr(a, s) for a in e.args))


def subst_bool(b: BoolExpr, s: Substitution) -> BoolExpr:
    if isinstance(b, BFalse):
        return b
    if isinstance(b, Less):
        return Less(subst_expr(b.lhs, s), subst_expr(b.rhs, s))
    if isinstance(b, BAnd):
        return BAnd(subst_bool(b.lhs, s), subst_bool(b.rhs, s))
    return BNot(subst_bool(b.arg, s))


def _avoid_capture(binders: tuple[Name, ...], body_sub, s: Substitution):
    """Adjust a binder vector against s; returns (binders, inner substitution).

    ``body_sub`` is a callable applying a substitution to the binder scope,
    used when binders must be alpha-renamed.
    """
    s = s.drop(binders)
    if not s:
        return binders, s, None
    danger = s.free_in_range()
    clashing = [b for b in binders if b in danger]
    if not clashing:
        return binders, s, None
    renaming = {b: fresh_like(b) for b in clashing}
    new_binders = tuple(renaming.get(b, b) for b in binders)
    rename_sub = Substitution({k: Var(v) for k, v in renaming.items()})
    return new_binders, s, rename_sub


def subst_prefix(pi: Prefix, cont: Process, s: Substitution) -> tuple[Prefix, Process]:
    if isinstance(pi, Tau):
        return pi, substitute(cont, s)
    if isinstance(pi, Input):
        chan = s.name_for(pi.chan, "channel")
        binders, inner, rename = _avoid_capture(pi.binders, None, s)
        body = substitute(cont, rename) if rename else cont
        return Input(chan, binders), substitute(body, inner)
    if isinstance(pi, Output):
        chan = s.name_for(pi.chan, "channel")
        return Output(chan, tuple(subst_expr(e, s) for e in pi.payload)), substitute(cont, s)
    if isinstance(pi, Guard):
        return Guard(subst_bool(pi.cond, s)), substitute(cont, s)
    if isinstance(pi, Continuous):
        vars_ = tuple(s.name_for(v, "continuous variable") for v in pi.vars)
        init = tuple(subst_expr(e, s) for e in pi.init)
        fields = tuple(subst_expr(e, s) for e in pi.fields)
        boundary = subst_bool(pi.boundary, s)
        rdy = ReadySet(frozenset((s.name_for(n, "ready set"), pol) for n, pol in pi.ready))
        binders, inner, rename = _avoid_capture(pi.binders, None, s)
        body = substitute(cont, rename) if rename else cont
        return Continuous(init, vars_, fields, boundary, rdy, binders), substitute(body, inner)
    raise TypeError(pi)


def substitute(p: Process, s: Substitution) -> Process:
    if not s:
        return p
    # untouched subtrees come back as the same object, keeping
    # identity-keyed caches warm across transitions
    if free_names(p).isdisjoint(s.mapping):
        return p
    if isinstance(p, Sum):
        return Sum(tuple(subst_prefix(pi, cont, s) for pi, cont in p.branches), tag=p.tag)
    if isinstance(p, Restriction):
        binders, inner, rename = _avoid_capture((p.name,), None, s)
        body = substitute(p.body, rename) if rename else p.body
        return Restriction(binders[0], substitute(body, inner))
    if isinstance(p, Parallel):
        return Parallel(substitute(p.left, s), substitute(p.right, s))
    if isinstance(p, Replication):
        return Replication(substitute(p.body, s))
    if isinstance(p, Call):
        return Call(p.defname, tuple(subst_expr(e, s) for e in p.args))
    raise TypeError(p)


def refresh(p: Process) -> Process:
    """Alpha-rename every binder to a fresh id (restores Barendregt)."""

    def go(p: Process, env: dict[Name, Name]) -> Process:
        if isinstance(p, Sum):
            out = []
            for pi, cont in p.branches:
                out.append(go_branch(pi, cont, env))
            return Sum(tuple(out), tag=p.tag)
        if isinstance(p, Restriction):
            n2 = fresh_like(p.name)
            env2 = dict(env)
            env2[p.name] = n2
            return Restriction(n2, go(p.body, env2))
        if isinstance(p, Parallel):
            return Parallel(go(p.left, env), go(p.right, env))
        if isinstance(p, Replication):
            return Replication(go(p.body, env))
        if isinstance(p, Call):
            s = Substitution({k: Var(v) for k, v in env.items()})
            return Call(p.defname, tuple(subst_expr(e, s) for e in p.args))
        raise TypeError(p)

    def go_branch(pi: Prefix, cont: Process, env: dict[Name, Name]):
        s = Substitution({k: Var(v) for k, v in env.items()})
        if isinstance(pi, Tau):
            return pi, go(cont, env)
        if isinstance(pi, Input):
            chan = env.get(pi.chan, pi.chan)
            binders = tuple(fresh_like(b) for b in pi.binders)
            env2 = dict(env)
            env2.update(zip(pi.binders, binders))
            return Input(chan, binders), go(cont, env2)
        if isinstance(pi, Output):
            return Output(env.get(pi.chan, pi.chan),
                          tuple(subst_expr(e, s) for e in pi.payload)), go(cont, env)
        if isinstance(pi, Guard):
            return Guard(subst_bool(pi.cond, s)), go(cont, env)
        if isinstance(pi, Continuous):
            vars_ = tuple(env.get(v, v) for v in pi.vars)
            init = tuple(subst_expr(e, s) for e in pi.init)
            fields = tuple(subst_expr(e, s) for e in pi.fields)
            boundary = subst_bool(pi.boundary, s)
            rdy = ReadySet(frozenset((env.get(n, n), pol) for n, pol in pi.ready))
            binders = tuple(fresh_like(b) for b in pi.binders)
            env2 = dict(env)
            env2.update(zip(pi.binders, binders))
            return Continuous(init, vars_, fields, boundary, rdy, binders), go(cont, env2)
        raise TypeError(pi)

    return go(p, {})


# ---------------------------------------------------------------------------
# Canonical forms: alpha equivalence and structural congruence
# ---------------------------------------------------------------------------


def _canon_expr(e: Expr, env: dict[Name, str]) -> str:
    if isinstance(e, Const):
        return f"c[{e.value!r}]"
    if isinstance(e, Var):
        return env.get(e.name, f"f[{e.name.id}]")
    return f"({e.op} {' '.join(_canon_expr(a, env) for a in e.args)})"


def _canon_bool(b: BoolExpr, env: dict[Name, str]) -> str:
    if isinstance(b, BFalse):
        return "false"
    if isinstance(b, Less):
        return f"(< {_canon_expr(b.lhs, env)} {_canon_expr(b.rhs, env)})"
    if isinstance(b, BAnd):
        return f"(and {_canon_bool(b.lhs, env)} {_canon_bool(b.rhs, env)})"
    return f"(not {_canon_bool(b.arg, env)})"


def _bind(env: dict[Name, str], depth: int, names: Sequence[Name]) -> dict[Name, str]:
    env2 = dict(env)
    for i, n in enumerate(names):
        env2[n] = f"b[{depth}.{i}]"
    return env2


def _canon(p: Process, env: dict[Name, str], depth: int, flatten: bool) -> str:
    if isinstance(p, Sum):
        parts = [_canon_branch(pi, cont, env, depth, flatten) for pi, cont in p.branches]
        if flatten:
            parts.sort()
        return "(sum " + " ".join(parts) + ")"
    if isinstance(p, Restriction):
        env2 = _bind(env, depth, (p.name,))
        return f"(new {_canon(p.body, env2, depth + 1, flatten)})"
    if isinstance(p, Parallel):
        if flatten:
            parts = []
            stack = [p]
            while stack:
                q = stack.pop()
                if isinstance(q, Parallel):
                    stack.append(q.left)
                    stack.append(q.right)
                else:
                    parts.append(_canon(q, env, depth, flatten))
            parts.sort()
            return "(par " + " ".join(parts) + ")"
        return f"(par {_canon(p.left, env, depth, flatten)} {_canon(p.right, env, depth, flatten)})"
    if isinstance(p, Replication):
        return f"(repl {_canon(p.body, env, depth, flatten)})"
    if isinstance(p, Call):
        return f"(call {p.defname} {' '.join(_canon_expr(a, env) for a in p.args)})"
    raise TypeError(p)


def _canon_branch(pi: Prefix, cont: Process, env: dict[Name, str], depth: int, flatten: bool) -> str:
    if isinstance(pi, Tau):
        return f"(tau {_canon(cont, env, depth, flatten)})"
    if isinstance(pi, Input):
        ch = env.get(pi.chan, f"f[{pi.chan.id}]")
        env2 = _bind(env, depth, pi.binders)
        return f"(in {ch}/{len(pi.binders)} {_canon(cont, env2, depth + 1, flatten)})"
    if isinstance(pi, Output):
        ch = env.get(pi.chan, f"f[{pi.chan.id}]")
        args = " ".join(_canon_expr(e, env) for e in pi.payload)
        return f"(out {ch} [{args}] {_canon(cont, env, depth, flatten)})"
    if isinstance(pi, Guard):
        return f"(guard {_canon_bool(pi.cond, env)} {_canon(cont, env, depth, flatten)})"
    if isinstance(pi, Continuous):
        vars_ = " ".join(env.get(v, f"f[{v.id}]") for v in pi.vars)
        init = " ".join(_canon_expr(e, env) for e in pi.init)
        fields = " ".join(_canon_expr(e, env) for e in pi.fields)
        rdy = sorted(
            f"{env.get(n, f'f[{n.id}]')}{'!' if pol else '?'}" for n, pol in pi.ready
        )
        env2 = _bind(env, depth, pi.binders)
        return (
            f"(ode [{vars_}] [{init}] [{fields}] {_canon_bool(pi.boundary, env)} "
            f"{{{','.join(rdy)}}}/{len(pi.binders)} {_canon(cont, env2, depth + 1, flatten)})"
        )
    raise TypeError(pi)


def canonical_key(p: Process, flatten: bool = False) -> str:
    return _canon(p, {}, 0, flatten)


def alpha_equivalent(p: Process, q: Process) -> bool:
    return canonical_key(p, flatten=False) == canonical_key(q, flatten=False)


def struct_congruent(p: Process, q: Process) -> bool:
    """Structural congruence: alpha conversion plus commutativity and
    associativity of parallel and sum (and nothing more)."""
    return canonical_key(p, flatten=True) == canonical_key(q, flatten=True)


# ---------------------------------------------------------------------------
# Simulator-side pruning (sound up to strong bisimilarity: drops inert 0s)
# ---------------------------------------------------------------------------


def prune(p: Process) -> Process:
    # returns p itself when nothing changes so downstream identity-keyed
    # caches stay warm
    if isinstance(p, Parallel):
        l = prune(p.left)
        r = prune(p.right)
        if is_nil(l):
            return r
        if is_nil(r):
            return l
        if l is p.left and r is p.right:
            return p
        return Parallel(l, r)
    if isinstance(p, Restriction):
        b = prune(p.body)
        if is_nil(b):
            return NIL
        if p.name not in free_names(b):
            return b
        if b is p.body:
            return p
        return Restriction(p.name, b)
    if isinstance(p, Replication):
        b = prune(p.body)
        if is_nil(b):
            return NIL
        if b is p.body:
            return p
        return Replication(b)
    return p
