import itertools
import random

from apeq.terms import SVAR, TermStore
from apeq.unification import (Diseq, FALSE, TRUE, canonical_subst_key,
                              mgu_first_order, mgu_modulo, mgu_second_order,
                              neg_mgu_modulo, simplify_diseq)

from helpers import T, base_theory, random_term, recipe_universe


def test_mgu_first_order_paper_example():
    store, sig, rs = base_theory()
    x, y, z, z1, z2 = (store.var(i) for i in range(1, 6))
    u = store.app(store.symbol("pair"),
                  (store.app(store.symbol("sdec"), (x, y)), z))
    v = store.app(store.symbol("pair"), (z1, z2))
    sigma = mgu_first_order(store, [(u, v)])
    assert sigma == {z1: store.app(store.symbol("sdec"), (x, y)), z2: z}
    # occurs check: u and z are not unifiable
    assert mgu_first_order(store, [(u, z)]) is None
    assert mgu_first_order(store, [(x, x)]) == {}


def test_mgu_first_order_idempotent_random():
    store, sig, rs = base_theory()
    rng = random.Random(2)
    vars_ = [store.var(i) for i in range(1, 6)]
    atoms = vars_ + [store.name("k")]
    for _ in range(500):
        u = random_term(rng, store, sig, 3, atoms)
        v = random_term(rng, store, sig, 3, atoms)
        sigma = mgu_first_order(store, [(u, v)])
        if sigma is not None:
            assert store.apply(u, sigma) == store.apply(v, sigma)
            for t in sigma.values():
                assert store.apply(t, sigma) == t


def test_mgu_second_order_type_demotion():
    store, sig, rs = base_theory()
    X = store.svar(1, 1, "X")
    Y = store.svar(2, 2, "Y")
    f = store.symbol("h")
    sigma = mgu_second_order(store, [(X, store.app(f, (Y,)))])
    assert sigma is not None
    assert set(sigma) == {X, Y}
    z = sigma[Y]
    assert store.kind(z) == SVAR and store.svar_type(z) == 1
    assert sigma[X] == store.app(f, (z,))


def test_mgu_second_order_axiom_type_failure():
    store, sig, rs = base_theory()
    X = store.svar(1, 1, "X")
    assert mgu_second_order(store, [(X, store.axiom(2))]) is None
    assert mgu_second_order(store, [(X, store.axiom(1))]) == {X: store.axiom(1)}


def _random_recipe(rng, store, sig, depth, svars, n_ax):
    choices = ["sv", "ax", "const"] + (["app"] if depth else [])
    kind = rng.choice(choices)
    if kind == "sv":
        return rng.choice(svars)
    if kind == "ax":
        return store.axiom(rng.randrange(1, n_ax + 1))
    if kind == "const":
        return store.constant(rng.choice("ab"))
    syms = [s for s in sig.public_constructors() if s.arity <= 2]
    sym = rng.choice(syms)
    return store.app(sym, tuple(
        _random_recipe(rng, store, sig, depth - 1, svars, n_ax)
        for _ in range(sym.arity)))


def test_mgu_second_order_complete_on_enumeration():
    """Every enumerated ground unifier is an instance of the computed mgu."""
    store, sig, rs = base_theory()
    rng = random.Random(9)
    svars = [store.svar(i, ty, f"V{i}") for i, ty in ((1, 0), (2, 1), (3, 1), (4, 2))]
    ground = recipe_universe(store, sig, 2, "ab", 1, cap=120)
    checked = 0
    for _ in range(1000):
        eqs = [( _random_recipe(rng, store, sig, 2, svars, 2),
                 _random_recipe(rng, store, sig, 2, svars, 2))]
        sigma = mgu_second_order(store, [tuple(eqs[0])])
        used = sorted(store.vars2(eqs[0][0]) | store.vars2(eqs[0][1]))
        if len(used) > 2:
            continue
        # enumerate ground unifiers over small recipes
        for combo in itertools.product(ground, repeat=len(used)):
            theta = dict(zip(used, combo))
            try:
                lhs = store.apply(eqs[0][0], theta)
                rhs = store.apply(eqs[0][1], theta)
            except Exception:
                continue  # type-violating assignment
            if lhs != rhs:
                continue
            checked += 1
            assert sigma is not None, "enumerated unifier but mgu said none"
            # theta must be an instance of sigma on the used variables
            inst = mgu_second_order(
                store, [(store.apply(v, sigma), theta[v]) for v in used])
            assert inst is not None
    assert checked > 50


def test_mgu_modulo_adec_self():
    store, sig, rs = base_theory()
    x, y = store.var(1, "x"), store.var(2, "y")
    u = store.app(store.symbol("adec"), (x, y))
    out = mgu_modulo(store, rs, [(u, u)])
    assert len(out) == 1
    sigma = out[0]
    xt = sigma[x]
    assert store.sym(xt).name == "aenc"
    # third argument is pk(<whatever y maps to>), up to renaming
    assert store.children(xt)[2] == store.app(store.symbol("pk"),
                                              (sigma.get(y, y),))


def test_mgu_modulo_trivial_name():
    store, sig, rs = base_theory()
    k = store.name("k")
    assert mgu_modulo(store, rs, [(k, k)]) == [{}]


def test_mgu_modulo_fst_projection_with_ground_oracle():
    store, sig, rs = base_theory()
    x = store.var(1, "x")
    k = store.name("k")
    u = store.app(store.symbol("fst"), (x,))
    out = mgu_modulo(store, rs, [(u, k)])
    assert len(out) == 1
    sigma = out[0]
    assert store.sym(sigma[x]).name == "pair"
    assert store.children(sigma[x])[0] == k
    # ground-instance check: instantiating the mgs gives real solutions
    rng = random.Random(4)
    atoms = [k, store.name("m"), store.constant("a")]
    for _ in range(50):
        inst = {}
        for v in store.vars1(sigma[x]):
            inst[v] = random_term(rng, store, sig, 2, atoms)
        xt = store.apply(sigma[x], inst)
        applied = store.app(store.symbol("fst"), (xt,))
        assert rs.is_message(applied)
        assert rs.normalize(applied) == k


def test_mgu_modulo_sound_and_complete_bounded():
    """Soundness: each sigma unifies modulo R with message sides.
    Completeness: each ground unifier of depth <= 3 factors through one."""
    store, sig, rs = base_theory()
    rng = random.Random(13)
    x, y = store.var(1, "x"), store.var(2, "y")
    k = store.name("k")
    atoms = [x, y, k, store.constant("a")]
    ground_atoms = [k, store.constant("a"), store.name("m")]

    def ground_terms(depth):
        out = list(ground_atoms)
        syms = [s for s in sig.public_constructors() if s.arity <= 2]
        for _ in range(depth):
            new = []
            for s in syms:
                for combo in itertools.product(out, repeat=s.arity):
                    t = store.app(s, combo)
                    if t not in out and t not in new:
                        new.append(t)
                    if len(new) > 150:
                        break
                if len(new) > 150:
                    break
            out += new
        return out

    universe = ground_terms(2)
    from helpers import random_mixed_term

    cases = 0
    for _ in range(120):
        u = random_mixed_term(rng, store, sig, rs, 2, atoms)
        v = random_mixed_term(rng, store, sig, rs, 2, atoms)
        sigmas = mgu_modulo(store, rs, [(u, v)])
        for sg in sigmas:
            us, vs = store.apply(u, sg), store.apply(v, sg)
            assert rs.is_message(us) and rs.is_message(vs)
            assert rs.normalize(us) == rs.normalize(vs)
        if store.vars1(u) | store.vars1(v) != {x} or sigmas and len(sigmas) > 3:
            continue
        cases += 1
        for t in universe[:80]:
            ut, vt = store.apply(u, {x: t}), store.apply(v, {x: t})
            if not (rs.is_message(ut) and rs.is_message(vt)):
                continue
            if rs.normalize(ut) != rs.normalize(vt):
                continue
            # the ground unifier {x -> t} must be an instance of some sigma
            assert any(
                _is_instance(store, rs, sg, {x: t}) for sg in sigmas), \
                f"missed unifier x={store.fmt(t)} of {store.fmt(u)} = {store.fmt(v)}"
    assert cases > 10


def _is_instance(store, rs, sigma, theta):
    eqs = []
    for v, t in theta.items():
        eqs.append((store.apply(v, sigma), t))
    tau = mgu_first_order(store, eqs)
    if tau is None:
        return False
    return all(store.apply(t, tau) == t for t in theta.values())


def test_neg_mgu_modulo():
    store, sig, rs = base_theory()
    x = store.var(1, "x")
    k, m = store.name("k"), store.name("m")
    # non-unifiable modulo R -> trivially true formula (empty conjunction)
    assert neg_mgu_modulo(store, rs, k, m) == []
    # x != k: single disequation
    ds = neg_mgu_modulo(store, rs, x, k)
    assert len(ds) == 1 and ds[0].pairs == ((x, k),)
    # unconditionally equal -> unsatisfiable negation
    assert neg_mgu_modulo(store, rs, k, k) is None


def test_neg_mgu_modulo_ground_sampling():
    store, sig, rs = base_theory()
    rng = random.Random(21)
    x = store.var(1, "x")
    k = store.name("k")
    u = store.app(store.symbol("fst"), (x,))
    ds = neg_mgu_modulo(store, rs, u, k)
    atoms = [k, store.name("m"), store.constant("a")]
    for _ in range(100):
        w = random_term(rng, store, sig, 2, atoms)
        uw = store.apply(u, {x: w})
        differs = not (rs.is_message(uw) and rs.normalize(uw) == k)
        satisfied = _diseqs_hold(store, ds, {x: w})
        assert satisfied == differs


def _diseqs_hold(store, ds, theta):
    for d in ds:
        ok = False
        for a, b in d.pairs:
            at = store.apply(a, theta)
            # quantified variables in b: the disequation a != b under forall q
            # holds iff at does not match b (as a pattern in q)
            from apeq.rewriting import match
            qb = store.apply(b, {k: v for k, v in theta.items() if k not in d.qvars})
            sub = match(store, qb, at) if store.vars1(qb) <= set(d.qvars) else None
            if store.vars1(qb) <= set(d.qvars):
                if sub is None:
                    ok = True
            elif at != qb:
                ok = True
        if not ok:
            return False
    return True


def test_simplify_diseq():
    store, sig, rs = base_theory()
    x, z = store.var(1, "x"), store.var(2, "z")
    k = store.name("k")
    # forall z. z != k is unsatisfiable
    assert simplify_diseq(store, Diseq(frozenset([z]), ((z, k),))) is FALSE
    # x != x is unsatisfiable, x != k stays
    assert simplify_diseq(store, Diseq(frozenset(), ((x, x),))) is FALSE
    d = simplify_diseq(store, Diseq(frozenset(), ((x, k),)))
    assert d.pairs == ((x, k),)
    # k != m always holds
    assert simplify_diseq(store, Diseq(frozenset(), ((k, store.name("m")),))) is TRUE
    # forall z. x != pair(k,z) constrains the shape of x
    pat = store.app(store.symbol("pair"), (k, z))
    d = simplify_diseq(store, Diseq(frozenset([z]), ((x, pat),)))
    assert d is not TRUE and d is not FALSE
    assert d.qvars == frozenset([z])
