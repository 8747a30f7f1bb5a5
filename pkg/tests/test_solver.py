import random

import pytest

from apeq.solver import DED, ECS, EMPTY_ECS, EProc, Formula, Solver
from apeq.symbolic import CSys, EMPTY_CS
from apeq.terms import Fresh, Signature, TermStore
from apeq.rewriting import RewriteSystem

from helpers import T, base_theory


def mk_solver(store, rs, sig, tag=("t",)):
    return Solver(store, rs, sig, Fresh(store, tag))


def mk_ecs(store, solver, phi, facts, kb, eqs=()):
    """Normalised extended system: facts are (svar, term) pairs; eqs are
    first-order equations folded into the system."""
    ecs = ECS(tuple(phi), tuple((DED, X, u) for X, u in facts), (), (), (), (),
              tuple(kb), tuple(Formula(frozenset(), (DED, r, t), (), ())
                               for r, t in kb))
    out = solver.extend_mu1(ecs, eqs)
    assert out is not None
    return out


def test_mgs_two_solutions_example():
    """Phi = {ax1 -> h(k), ax2 -> k}, X^2 |- x, x = h(k): the input can be
    computed either as h(ax2) or directly as ax1."""
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    k = store.name("k")
    hk = T(store, "h(k)", k=k)
    X = store.svar(("X",), 2, "X")
    x = store.var(("x",), "x")
    ecs = mk_ecs(store, sol, [hk, k], [(X, x)],
                 [(store.axiom(1), hk), (store.axiom(2), k)], [(x, hk)])
    mgss = sol.compute_mgs(ecs)
    images = sorted(store.fmt(s[X]) for s in mgss)
    assert images == ["ax1", "h(ax2)"]


def test_mgs_walkthrough_unique():
    """The randomized-encryption walkthrough: unique mgs
    Y -> pair(radec(ax2, X), h(X))."""
    store = TermStore()
    sig = Signature(store)
    sig.add_constructor("pair", 2)
    sig.add_constructor("h", 1)
    sig.add_constructor("raenc", 3)
    sig.add_destructor("radec", 2)
    sig.add_destructor("fst", 1)
    sig.add_destructor("snd", 1)
    rs = RewriteSystem(store, sig)
    xv, yv, zv = (store.var(("r", i)) for i in range(3))
    rs.add_rule(T(store, "radec(raenc(x,y,z),z)", x=xv, y=yv, z=zv), xv)
    rs.add_rule(T(store, "fst(pair(x,y))", x=xv, y=yv), xv)
    rs.add_rule(T(store, "snd(pair(x,y))", x=xv, y=yv), yv)
    rs.validate()
    sol = mk_solver(store, rs, sig)
    k, r = store.name("k"), store.name("r")
    x = store.var(("x",), "x")
    y = store.var(("y",), "y")
    X = store.svar(("X",), 1, "X")
    Y = store.svar(("Y",), 2, "Y")
    hr = T(store, "h(r)", r=r)
    enc = T(store, "raenc(k,r,x)", k=k, r=r, x=x)
    radec_ax2_X = store.app(store.symbol("radec"), (store.axiom(2), X))
    target = T(store, "pair(k,h(x))", k=k, x=x)
    ecs = mk_ecs(store, sol, [hr, enc], [(X, x), (Y, y)],
                 [(store.axiom(1), hr), (store.axiom(2), enc),
                  (radec_ax2_X, k)],
                 [(y, target)])
    mgss = sol.compute_mgs(ecs)
    assert len(mgss) == 1
    got = store.fmt(mgss[0][Y])
    assert got == "pair(radec(ax2,X:1),h(X:1))"


def test_mgs_uniformity_example():
    """Phi = {ax1 -> pair(k, x)}, X^0 |- x, Y^1 |- y, y = x: uniformity
    forces Y -> X (plus the saturated entry fst(ax1) |- k)."""
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    k = store.name("k")
    x = store.var(("x",), "x")
    y = store.var(("y",), "y")
    X = store.svar(("X",), 0, "X")
    Y = store.svar(("Y",), 1, "Y")
    entry = store.app(store.symbol("pair"), (k, x))
    fst_ax1 = store.app(store.symbol("fst"), (store.axiom(1),))
    ecs = mk_ecs(store, sol, [entry], [(X, x), (Y, y)],
                 [(store.axiom(1), entry), (fst_ax1, k)], [(y, x)])
    mgss = sol.compute_mgs(ecs)
    assert len(mgss) == 1
    assert mgss[0] == {Y: X}


def test_conseq_membership_example():
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    k = store.name("k")
    x = store.var(("x",), "x")
    X = store.svar(("X",), 0, "X")
    entry = store.app(store.symbol("pair"), (k, x))
    ecs = mk_ecs(store, sol, [entry], [(X, x)], [(store.axiom(1), entry)])
    pair = store.symbol("pair")
    xi = store.app(pair, (X, store.axiom(1)))
    u = store.app(pair, (x, entry))
    assert sol.term_of_recipe(xi, sol.fact_list(ecs)) == u
    # (a, a) in Conseq(empty) for a public constant
    a = store.constant("a")
    assert sol.term_of_recipe(a, []) == a
    assert sol.recipe_for_term(a, []) == a


def test_apply_subst_walkthrough_case1():
    """Applying {Y -> pair(Y1,Y2)} turns Y |- pair(k,h(x)) into
    Y1 |- k and Y2 |- h(x), recording Y = pair(Y1,Y2) in E2."""
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    k = store.name("k")
    x = store.var(("x",), "x")
    X = store.svar(("X",), 1, "X")
    Y = store.svar(("Y",), 2, "Y")
    hx = store.app(store.symbol("h"), (x,))
    target = store.app(store.symbol("pair"), (k, hx))
    ecs = mk_ecs(store, sol, [k], [(X, x), (Y, target)],
                 [(store.axiom(1), k)])
    Y1 = store.svar(("Y1",), 2, "Y1")
    Y2 = store.svar(("Y2",), 2, "Y2")
    Sigma = {Y: store.app(store.symbol("pair"), (Y1, Y2))}
    out = sol.apply_subst_ecs(ecs, Sigma)
    facts = {store.fmt(X_): store.fmt(u) for _, X_, u in out.ded}
    assert facts["X:1"] == "x"
    assert facts["Y1:2"] == "k"
    assert facts["Y2:2"] == "h(x)"
    assert dict(out.mu2)[Y] == store.app(store.symbol("pair"), (Y1, Y2))


def test_mgs_empty_when_not_deducible():
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    k = store.name("k")
    x = store.var(("x",), "x")
    X = store.svar(("X",), 0, "X")
    ecs = mk_ecs(store, sol, [], [(X, x)], [], [(x, k)])
    assert sol.compute_mgs(ecs) == []


def test_solved_system_has_empty_transition_set():
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    x = store.var(("x",), "x")
    X = store.svar(("X",), 0, "X")
    ecs = mk_ecs(store, sol, [], [(X, x)], [])
    assert sol.mgs_transitions(ecs) is None
    assert sol.solved_form(ecs)
    assert sol.compute_mgs(ecs) == [{}]


def test_nded_prunes_deducible_channel():
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    c = store.constant("c")
    from apeq.solver import NDED

    ecs = EMPTY_ECS
    ecs = ECS((), ((NDED, 0, c),), (), (), (), (), (), ())
    assert sol.unsat(ecs)
    k = store.name("k")
    ecs2 = ECS((), ((NDED, 0, k),), (), (), (), (), (), ())
    assert not sol.unsat(ecs2)


def test_rew_two_rule_theory_keeps_component_together():
    """otherfun(h(x,y),x) -> y and otherfun(h(x,y),y) -> x: the frames
    {h(k,k'), k} and {h(s,s'), s'} stay statically equivalent; Rew adds the
    deduction otherfun(ax1,ax2) on both sides (k' resp. s)."""
    store = TermStore()
    sig = Signature(store)
    sig.add_constructor("h2", 2)
    sig.add_destructor("otherfun", 2)
    rs = RewriteSystem(store, sig)
    xv, yv = store.var(("rx",)), store.var(("ry",))
    h2 = store.symbol("h2")
    other = store.symbol("otherfun")
    rs.add_rule(store.app(other, (store.app(h2, (xv, yv)), xv)), yv)
    rs.add_rule(store.app(other, (store.app(h2, (xv, yv)), yv)), xv)
    rs.validate()
    sol = mk_solver(store, rs, sig)
    k, k2, s, s2 = (store.name(n) for n in ("k", "k'", "s", "s'"))

    def member(e1, e2, origin):
        ecs = mk_ecs(store, sol, [e1, e2], [],
                     [(store.axiom(1), e1), (store.axiom(2), e2)])
        return EProc((), EMPTY_CS, ecs, origin)

    s1 = member(store.app(h2, (k, k2)), k, 1)
    s2_ = member(store.app(h2, (s, s2)), s2, 2)
    vector = sol.apply_case([[s1, s2_]])
    # no split: the two processes stay in one component
    assert len(vector) == 1
    comp = vector[0]
    assert {ep.origin for ep in comp} == {1, 2}
    # both gained the rewritten entry
    for ep in comp:
        terms = [t for r, t in ep.ecs.kb
                 if store.kind(r) == 4 and store.sym(r).name == "otherfun"]
        assert len(terms) == 1
        expected = k2 if ep.origin == 1 else s
        assert terms[0] == expected


def test_rew_splits_on_real_difference():
    """{senc(m,r,k), k} vs {senc(m,r,k), k2}: only the first side can
    decrypt, so the component must split."""
    store, sig, rs = base_theory()
    sol = mk_solver(store, rs, sig)
    m, r, k, k2 = (store.name(n) for n in ("m", "r", "k", "k2"))
    enc = T(store, "senc(m,r,k)", m=m, r=r, k=k)

    def member(e1, e2, origin):
        ecs = mk_ecs(store, sol, [e1, e2], [],
                     [(store.axiom(1), e1), (store.axiom(2), e2)])
        return EProc((), EMPTY_CS, ecs, origin)

    vector = sol.apply_case([[member(enc, k, 1), member(enc, k2, 2)]])
    assert len(vector) == 2
    origins = sorted(tuple(sorted(ep.origin for ep in comp)) for comp in vector)
    assert origins == [(1,), (2,)]
