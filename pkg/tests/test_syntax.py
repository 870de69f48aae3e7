import pytest

from hybridpi.parser import parse_term, pretty
from hybridpi.syntax import (
    Parallel,
    Restriction,
    Substitution,
    Sum,
    Var,
    alpha_equivalent,
    canonical_key,
    free_names,
    fresh,
    prune,
    refresh,
    struct_congruent,
    substitute,
)
from termgen import random_terms

NIL = Sum(())


def parse_pair(a: str, b: str):
    """Parse two terms against one name table so free names coincide."""
    shared: dict = {}
    return parse_term(a, shared), parse_term(b, shared)


def displays(names):
    return sorted(n.display for n in names)


def test_free_names_basic():
    assert displays(free_names(parse_term("a(v) . b!<v>"))) == ["a", "b"]
    assert displays(free_names(parse_term("new x . x!<1>"))) == []
    assert displays(free_names(parse_term("new x . (x!<1> || y(w) . w!<0>)"))) == ["y"]


def test_free_names_guard_and_cell():
    p = parse_term("[u < 1] . tau")
    assert displays(free_names(p)) == ["u"]
    cell = parse_term("{0 | w' = u & w < 5 ; ready w!}")
    assert displays(free_names(cell)) == ["u", "w"]


def test_substitution_free_name_law():
    # F(P s) is contained in (F(P) \ dom s) plus the names s introduces
    for text in random_terms(101, 60):
        p = parse_term(text)
        fn = free_names(p)
        if not fn:
            continue
        tgt = next(iter(fn))
        repl = fresh("r")
        q = substitute(p, Substitution({tgt: Var(repl)}))
        assert free_names(q) <= (fn - {tgt}) | {repl}
        assert tgt not in free_names(q)


def test_identity_substitution_is_alpha_trivial():
    for text in random_terms(202, 60):
        p = parse_term(text)
        assert substitute(p, Substitution({})) is p
        s = Substitution({n: Var(n) for n in free_names(p)})
        assert alpha_equivalent(substitute(p, s), p)


def test_capture_avoidance():
    # the binder named x must be renamed when a different x flows under it
    p = parse_term("new x . (y!<1> || x!<0>)")
    other_x = fresh("x")
    (y,) = [n for n in free_names(p) if n.display == "y"]
    q = substitute(p, Substitution({y: Var(other_x)}))
    assert other_x in free_names(q)
    assert not alpha_equivalent(p, q)


def test_struct_congruence_commutes_parallel_and_sum():
    assert struct_congruent(*parse_pair("a!<1> || b!<0>", "b!<0> || a!<1>"))
    assert struct_congruent(*parse_pair("tau . a!<1> + b(v)", "b(v) + tau . a!<1>"))
    assert not struct_congruent(*parse_pair("a!<1>", "a!<0>"))


def test_struct_congruence_alpha():
    assert struct_congruent(parse_term("new x . x!<1>"), parse_term("new y . y!<1>"))
    assert alpha_equivalent(*parse_pair("a(v) . b!<v>", "a(w) . b!<w>"))
    # nil is not a unit of structural congruence, only of bisimilarity
    assert not struct_congruent(*parse_pair("a!<1> || 0", "a!<1>"))


def test_struct_congruence_is_equivalence():
    terms = [parse_term(t) for t in random_terms(303, 30)]
    for p in terms:
        assert struct_congruent(p, p)
    for p in terms:
        q = Parallel(NIL, p)
        swapped = Parallel(p, NIL)
        assert struct_congruent(q, swapped) and struct_congruent(swapped, q)
        # transitivity through an alpha-varied middle term
        assert struct_congruent(q, refresh(swapped))


def test_prune_idempotent_and_identity_preserving():
    for text in random_terms(404, 40):
        p = parse_term(text)
        q = prune(p)
        assert prune(q) is q
        assert free_names(q) == free_names(p)
    lean = parse_term("a!<1> . b(v)")
    assert prune(lean) is lean
    assert struct_congruent(prune(Parallel(lean, NIL)), lean)


def test_canonical_key_stable_under_refresh():
    for text in random_terms(505, 40):
        p = parse_term(text)
        assert canonical_key(refresh(p)) == canonical_key(p)
        assert canonical_key(p, flatten=True) == canonical_key(refresh(p), flatten=True)


def test_pretty_is_reparseable_here():
    shared: dict = {}
    p = parse_term("new x . (a(v) . ([v < 1] . x!<v> + tau) || x(w))", shared)
    assert alpha_equivalent(parse_term(pretty(p), shared), p)
