import itertools
import random

from apeq.frames import (Frame, Saturation, check_witness, deducible,
                         eval_recipe, static_equiv)
from apeq.terms import APP

from helpers import T, base_theory, random_term, recipe_universe


def test_eval_examples():
    store, sig, rs = base_theory()
    m = store.name("m")
    frame = Frame((T(store, "aenc(m,r,pk(k))"), store.name("k")))
    xi = T(store, "adec(ax1,ax2)")
    assert eval_recipe(store, rs, xi, frame) == m
    assert eval_recipe(store, rs, store.axiom(1), frame) == frame.get(1)
    frame2 = Frame((store.name("k2"), T(store, "aenc(m,r,pk(k))")))
    assert eval_recipe(store, rs, T(store, "adec(ax2,ax1)"), frame2) is None


def test_static_equiv_equal_names_vs_distinct():
    store, sig, rs = base_theory()
    k, k2 = store.name("k"), store.name("k2")
    f0 = Frame((k, k))
    f1 = Frame((k2, k))
    w = static_equiv(store, rs, sig, f0, f1)
    assert w is not None and w.kind == "eq"
    assert set(w.recipes) == {store.axiom(1), store.axiom(2)}
    assert check_witness(store, rs, w, f0, f1)


def test_static_equiv_ciphertext_vs_nonce():
    store, sig, rs = base_theory()
    f0 = Frame((T(store, "aenc(m,r,pk(k))"),))
    f1 = Frame((store.name("k2"),))
    assert static_equiv(store, rs, sig, f0, f1) is None


def test_static_equiv_getkey_breaks_it():
    store, sig, rs = base_theory("getkey testaenc")
    f0 = Frame((T(store, "aenc(m,r,pk(k))"),))
    f1 = Frame((store.name("k2"),))
    w = static_equiv(store, rs, sig, f0, f1)
    assert w is not None and w.kind == "msg"
    assert check_witness(store, rs, w, f0, f1)


def test_static_equiv_key_reveal():
    store, sig, rs = base_theory()
    enc = T(store, "aenc(m,r,pk(k))")
    k, k2 = store.name("k"), store.name("k2")
    f0 = Frame((enc, k))
    f1 = Frame((enc, k2))
    w = static_equiv(store, rs, sig, f0, f1)
    assert w is not None
    assert check_witness(store, rs, w, f0, f1)


def test_static_equiv_reflexive_and_symmetric():
    store, sig, rs = base_theory()
    f0 = Frame((T(store, "senc(m,r,k)"), T(store, "pair(a,b)")))
    assert static_equiv(store, rs, sig, f0, f0) is None
    f1 = Frame((T(store, "senc(m2,r2,k)"), T(store, "pair(a,b)")))
    assert (static_equiv(store, rs, sig, f0, f1) is None) == \
        (static_equiv(store, rs, sig, f1, f0) is None)


def test_deducible_examples():
    store, sig, rs = base_theory()
    m, k = store.name("m"), store.name("k")
    frame = Frame((T(store, "aenc(m,r,pk(k))", k=k, m=m), k))
    xi = deducible(store, rs, sig, frame, m)
    assert xi is not None
    assert eval_recipe(store, rs, xi, frame) == m
    a = store.constant("a")
    assert deducible(store, rs, sig, Frame(()), a) == a
    # a fresh name is not deducible from the empty frame
    assert deducible(store, rs, sig, Frame(()), store.name("secret")) is None


def test_deducible_signature_check_key():
    store, sig, rs = base_theory()
    m = store.name("m")
    frame = Frame((T(store, "sign(m,r,k)"), T(store, "vpk(k)")))
    xi = deducible(store, rs, sig, frame, m)
    assert xi is not None and eval_recipe(store, rs, xi, frame) == m


def _brute_force_static_equiv(store, rs, sig, f0, f1, universe):
    for xi in universe:
        a = eval_recipe(store, rs, xi, f0)
        b = eval_recipe(store, rs, xi, f1)
        if (a is None) != (b is None):
            return ("msg", xi)
    vals0, vals1 = {}, {}
    for xi in universe:
        a = eval_recipe(store, rs, xi, f0)
        b = eval_recipe(store, rs, xi, f1)
        if a is not None:
            vals0.setdefault(a, []).append(xi)
        if b is not None:
            vals1.setdefault(b, []).append(xi)
    for group in vals0.values():
        first = group[0]
        b0 = eval_recipe(store, rs, first, f1)
        for other in group[1:]:
            if eval_recipe(store, rs, other, f1) != b0:
                return ("eq", (first, other))
    for group in vals1.values():
        first = group[0]
        a0 = eval_recipe(store, rs, first, f0)
        for other in group[1:]:
            if eval_recipe(store, rs, other, f0) != a0:
                return ("eq", (first, other))
    return None


def test_static_equiv_agrees_with_brute_force():
    """Our witnesses must verify by direct evaluation; whenever we claim
    equivalence, the bounded brute-force search must not find a witness."""
    store, sig, rs = base_theory("getkey")
    rng = random.Random(42)
    names = [store.name(n) for n in ("k", "k2", "m")]
    consts = [store.constant(c) for c in "ab"]

    def rand_entry(depth):
        return random_term(rng, store, sig, depth, names + consts)

    from helpers import recipe_universe_by_size

    missed = []
    n_equiv = n_attack = 0
    for trial in range(60):
        n = rng.randrange(1, 4)
        f0 = Frame(tuple(rand_entry(2) for _ in range(n)))
        if rng.random() < 0.4:
            f1 = Frame(tuple(rand_entry(2) for _ in range(n)))
        else:
            entries = list(f0.entries)
            i = rng.randrange(n)
            entries[i] = rand_entry(2)
            f1 = Frame(tuple(entries))
        ours = static_equiv(store, rs, sig, f0, f1)
        if ours is not None:
            n_attack += 1
            assert check_witness(store, rs, ours, f0, f1), \
                f"bogus witness for {f0.fmt(store)} vs {f1.fmt(store)}"
        else:
            n_equiv += 1
            universe = recipe_universe_by_size(store, sig, n, "ab", 5, cap=6000)
            brute = _brute_force_static_equiv(store, rs, sig, f0, f1, universe)
            if brute is not None:
                missed.append((f0.fmt(store), f1.fmt(store), brute))
    assert not missed, missed
    assert n_equiv > 5 and n_attack > 5


def test_deducible_agrees_with_enumeration():
    store, sig, rs = base_theory()
    rng = random.Random(17)
    names = [store.name(n) for n in ("k", "k2", "m")]
    consts = [store.constant(c) for c in "ab"]
    for trial in range(40):
        n = rng.randrange(1, 4)
        frame = Frame(tuple(random_term(rng, store, sig, 2, names + consts)
                            for _ in range(n)))
        universe = recipe_universe(store, sig, n, "ab", 2, cap=1500)
        enum_deducible = set()
        for xi in universe:
            v = eval_recipe(store, rs, xi, frame)
            if v is not None:
                enum_deducible.add(v)
        for t in list(enum_deducible)[:40]:
            xi = deducible(store, rs, sig, frame, t)
            assert xi is not None, f"missed {store.fmt(t)} in {frame.fmt(store)}"
            assert eval_recipe(store, rs, xi, frame) == t
        # and targets we claim deducible must be witnessed by eval
        for t in [store.name("k"), store.name("m"), T(store, "pair(k,m)")]:
            xi = deducible(store, rs, sig, frame, t)
            if xi is not None:
                assert eval_recipe(store, rs, xi, frame) == rs.normalize(t)
