"""Shared fixtures: the standard theory and small term builders/oracles."""

from __future__ import annotations

import itertools
import re

from apeq.rewriting import RewriteSystem
from apeq.terms import APP, Signature, TermStore


def base_theory(extra: str = ""):
    """Standard signature: pairs, symmetric/asymmetric encryption,
    signatures, hash.  extra may add 'getkey' and/or 'testaenc'."""
    store = TermStore()
    sig = Signature(store)
    for name, ar in [("pair", 2), ("senc", 3), ("pk", 1), ("aenc", 3),
                     ("vpk", 1), ("sign", 3), ("h", 1)]:
        sig.add_constructor(name, ar)
    for name, ar in [("fst", 1), ("snd", 1), ("sdec", 2), ("adec", 2),
                     ("check", 2)]:
        sig.add_destructor(name, ar)
    rs = RewriteSystem(store, sig)
    t = lambda s, **env: T(store, s, **env)
    x, y, z = (store.var(i, n) for i, n in ((9001, "x"), (9002, "y"), (9003, "z")))
    env = dict(x=x, y=y, z=z)
    rs.add_rule(T(store, "sdec(senc(x,y,z),z)", **env), x)
    rs.add_rule(T(store, "fst(pair(x,y))", **env), x)
    rs.add_rule(T(store, "snd(pair(x,y))", **env), y)
    rs.add_rule(T(store, "adec(aenc(x,y,pk(z)),z)", **env), x)
    rs.add_rule(T(store, "check(sign(x,y,z),vpk(z))", **env), x)
    if "getkey" in extra:
        sig.add_destructor("getkey", 1)
        rs.add_rule(T(store, "getkey(aenc(x,y,pk(z)))", **env),
                    T(store, "pk(z)", **env))
    if "testaenc" in extra:
        sig.add_destructor("testaenc", 1)
        rs.add_rule(T(store, "testaenc(aenc(x,y,pk(z)))", **env),
                    store.constant("ok"))
    rs.validate()
    return store, sig, rs


_TOK = re.compile(r"[A-Za-z_][A-Za-z0-9_']*|ax\d+|[(),]|\S")


def T(store: TermStore, text: str, **env) -> int:
    """Tiny term reader for tests: identifiers resolve through env, then as
    declared function symbols, then as names."""
    toks = _TOK.findall(text.replace(" ", ""))
    pos = 0

    def parse() -> int:
        nonlocal pos
        tok = toks[pos]
        pos += 1
        m = re.fullmatch(r"ax(\d+)", tok)
        if m:
            return store.axiom(int(m.group(1)))
        if pos < len(toks) and toks[pos] == "(":
            pos += 1
            args = []
            if toks[pos] != ")":
                args.append(parse())
                while toks[pos] == ",":
                    pos += 1
                    args.append(parse())
            assert toks[pos] == ")", f"expected ) at {pos} in {text}"
            pos += 1
            return store.app(store.symbol(tok), tuple(args))
        if tok in env:
            return env[tok]
        sym = store.maybe_symbol(tok)
        if sym is not None and sym.arity == 0:
            return store.app(sym, ())
        return store.name(tok)

    out = parse()
    assert pos == len(toks), f"trailing input in {text!r}"
    return out


def naive_subterms(store: TermStore, t: int) -> set[int]:
    out = {t}
    if store.kind(t) == APP:
        for c in store.children(t):
            out |= naive_subterms(store, c)
    return out


def random_term(rng, store, sig, depth, atoms):
    """Random constructor term over the given atom handles."""
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(atoms)
    sym = rng.choice(sig.public_constructors())
    return store.app(sym, tuple(
        random_term(rng, store, sig, depth - 1, atoms) for _ in range(sym.arity)))


def random_mixed_term(rng, store, sig, rs, depth, atoms):
    """Random term that may contain destructors."""
    if depth == 0 or rng.random() < 0.25:
        return rng.choice(atoms)
    syms = sig.public_constructors() + sig.destructors
    sym = rng.choice(syms)
    return store.app(sym, tuple(
        random_mixed_term(rng, store, sig, rs, depth - 1, atoms)
        for _ in range(sym.arity)))


def all_normal_forms(store, rs, t, limit=20000):
    """Breadth-first closure under single rewrite steps at all positions with
    all rules; returns the set of irreducible terms reached."""
    from apeq.rewriting import match

    def one_steps(u):
        out = []
        if store.kind(u) == APP:
            sym = store.sym(u)
            kids = store.children(u)
            for i, c in enumerate(kids):
                for c2 in one_steps(c):
                    out.append(store.app(sym, kids[:i] + (c2,) + kids[i + 1:]))
            if sym.is_destructor:
                for rule in rs.rules_for(sym.id):
                    theta = match(store, rule.lhs, u)
                    if theta is not None:
                        out.append(store.apply(rule.rhs, theta))
        return out

    seen = {t}
    frontier = [t]
    normals = set()
    steps = 0
    while frontier:
        u = frontier.pop()
        succs = one_steps(u)
        steps += 1
        assert steps < limit, "rewriting blow-up in oracle"
        if not succs:
            normals.add(u)
        for s in succs:
            if s not in seen:
                seen.add(s)
                frontier.append(s)
    return normals


def recipe_universe(store, sig, n_axioms, consts, max_depth, cap=4000):
    """All recipes up to max_depth over the axioms, the given constants and
    the public signature, capped for oracle use."""
    layer = [store.axiom(i + 1) for i in range(n_axioms)]
    layer += [store.constant(c) for c in consts]
    universe = list(layer)
    syms = [s for s in sig.public_constructors() + sig.destructors if s.arity > 0]
    for _ in range(max_depth):
        new = []
        for sym in syms:
            for combo in itertools.product(universe, repeat=sym.arity):
                r = store.app(sym, combo)
                if r not in universe and r not in new:
                    new.append(r)
                if len(universe) + len(new) > cap:
                    break
            if len(universe) + len(new) > cap:
                break
        universe += new
        if len(universe) > cap:
            break
    return universe


def recipe_universe_by_size(store, sig, n_axioms, consts, max_size, cap=20000):
    """All recipes of tree size <= max_size, smallest first, capped."""
    by_size = {1: [store.axiom(i + 1) for i in range(n_axioms)]
               + [store.constant(c) for c in consts]}
    syms = [s for s in sig.public_constructors() + sig.destructors if s.arity > 0]
    total = len(by_size[1])
    for size in range(2, max_size + 1):
        out = []
        for sym in syms:
            for split in _compositions(size - 1, sym.arity):
                pools = [by_size.get(s, []) for s in split]
                for combo in itertools.product(*pools):
                    out.append(store.app(sym, combo))
                    total += 1
                    if total > cap:
                        by_size[size] = out
                        return [r for rs_ in by_size.values() for r in rs_]
        by_size[size] = out
    return [r for rs_ in by_size.values() for r in rs_]


def _compositions(n, k):
    if k == 0:
        if n == 0:
            yield ()
        return
    if k == 1:
        if n >= 1:
            yield (n,)
        return
    for first in range(1, n - k + 2):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest
