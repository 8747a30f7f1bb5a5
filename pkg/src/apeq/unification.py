"""Syntactic and equational unification.

First-order mgus are standard.  Second-order mgus respect variable types
(X^i may only be bound inside T_i), demoting higher-typed variables through
fresh lower-typed ones.  Unification modulo the rewrite theory is a basic
narrowing loop specialised to constructor-destructor subterm-convergent
systems: each innermost destructor is resolved against every rule, which
terminates because every step consumes a destructor occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

from .rewriting import RewriteSystem
from .terms import APP, AXIOM, F_DESTR, NAME, SVAR, VAR, TermStore, compose


def mgu_first_order(store: TermStore, eqs, prefer=frozenset()) -> dict[int, int] | None:
    """Idempotent mgu of first-order equations, or None; introduces no
    variables.  When unifying two variables, one from `prefer` is eliminated
    first (used to normalise quantified disequations)."""
    sigma: dict[int, int] = {}
    stack = list(eqs)
    while stack:
        u, v = stack.pop()
        u = store.apply(u, sigma)
        v = store.apply(v, sigma)
        if u == v:
            continue
        ku, kv = store.kind(u), store.kind(v)
        if ku == VAR or kv == VAR:
            if ku == VAR and kv == VAR:
                # eliminate a preferred variable first, else the younger one
                if (v in prefer and u not in prefer) or \
                        (u in prefer) == (v in prefer) and v > u:
                    u, v = v, u
            elif ku != VAR:
                u, v = v, u
            if store.occurs(u, v):
                return None
            binding = {u: v}
            sigma = {x: store.apply(t, binding) for x, t in sigma.items()}
            sigma[u] = v
        elif ku == APP and kv == APP and store.node(u)[1] == store.node(v)[1]:
            stack.extend(zip(store.children(u), store.children(v)))
        else:
            return None
    return sigma


def mgu_second_order(store: TermStore, eqs, prefer=frozenset(),
                     fresh=None) -> dict[int, int] | None:
    """Type-respecting mgu of second-order equations, or None.

    Implements the case analysis with occurs check, axiom-type check and
    type demotion of higher-typed variables via fresh lower-typed ones."""
    sigma: dict[int, int] = {}
    stack = list(eqs)

    def bind(x, t):
        nonlocal sigma
        binding = {x: t}
        sigma = {y: store.apply(s, binding) for y, s in sigma.items()}
        sigma[x] = t
        for i, (a, b) in enumerate(stack):
            stack[i] = (store.apply(a, binding), store.apply(b, binding))

    while stack:
        u, v = stack.pop()
        u = store.apply(u, sigma)
        v = store.apply(v, sigma)
        if u == v:
            continue
        ku, kv = store.kind(u), store.kind(v)
        if ku == SVAR or kv == SVAR:
            if ku == SVAR and kv == SVAR:
                tu, tv = store.svar_type(u), store.svar_type(v)
                # eliminate the higher-typed variable; prefer-set then age
                # break ties
                if tu < tv or tu == tv and (
                        (v in prefer and u not in prefer) or
                        (u in prefer) == (v in prefer) and v > u):
                    u, v = v, u
            elif ku != SVAR:
                u, v = v, u
            i = store.svar_type(u)
            if u != v and u in store.vars2(v):
                return None
            if any(store.axiom_index(ax) > i for ax in store.axioms(v)):
                return None
            demote = [y for y in store.vars2(v) if store.svar_type(y) > i]
            while demote:
                y = demote.pop()
                z = fresh.svar(i, "Z") if fresh is not None \
                    else store.fresh_svar(i, "Z")
                bind(y, z)
                v = store.apply(v, {y: z})
            if store.type_index(v) <= i:
                bind(u, v)
            else:  # pragma: no cover - axioms handled above
                return None
        elif ku == APP and kv == APP and store.node(u)[1] == store.node(v)[1]:
            stack.extend(zip(store.children(u), store.children(v)))
        else:
            return None
    return sigma


# -- unification modulo the rewrite theory ---------------------------------


def _innermost_destructor(store: TermStore, t: int) -> int | None:
    if not store.flags(t) & F_DESTR:
        return None
    for c in store.children(t):
        got = _innermost_destructor(store, c)
        if got is not None:
            return got
    if store.sym(t).is_destructor:
        return t
    return None  # pragma: no cover - flag implies a destructor below


def _replace_all(store: TermStore, t: int, old: int, new: int, memo: dict) -> int:
    if t == old:
        return new
    got = memo.get(t)
    if got is not None:
        return got
    if store.kind(t) == APP and store.flags(t) & F_DESTR:
        out = store.app(store.sym(t),
                        tuple(_replace_all(store, c, old, new, memo)
                              for c in store.children(t)))
    else:
        out = t
    memo[t] = out
    return out


def _rename_fresh(store: TermStore, lhs: int, rhs: int, fresh=None):
    from .terms import stable_var_key

    mk = fresh.var if fresh is not None else store.fresh_var
    ren = {v: mk("w") for v in sorted(store.vars1(lhs),
                                      key=lambda x: stable_var_key(store, x))}
    return store.apply(lhs, ren), store.apply(rhs, ren)


def canonical_subst_key(store: TermStore, sigma: dict[int, int]) -> tuple:
    """Structure of sigma with image variables renamed by traversal order,
    for deduplication up to renaming."""
    ren: dict[int, int] = {}

    def walk(t):
        k = store.kind(t)
        if k == VAR or k == SVAR:
            if t not in ren:
                ren[t] = len(ren)
            return ("v", ren[t], store.svar_type(t) if k == SVAR else -1)
        if k == APP:
            return ("f", store.node(t)[1], tuple(walk(c) for c in store.children(t)))
        return ("a", store.node(t))

    return tuple((k, walk(v)) for k, v in sorted(sigma.items()))


def mgu_modulo(store: TermStore, rs: RewriteSystem, eqs,
               fresh=None) -> list[dict[int, int]]:
    """Finite set of most general unifiers modulo the rewrite system.

    Each returned substitution makes both sides of every equation messages
    with equal normal forms; every unifier modulo R factors through one of
    them.  The empty list signals non-unifiability modulo R."""
    eqs = list(eqs)
    base_vars: set[int] = set()
    for u, v in eqs:
        base_vars |= store.vars1(u) | store.vars1(v)
    results: list[dict[int, int]] = []
    seen: set[tuple] = set()
    stack: list[tuple[list, dict]] = [(eqs, {})]
    while stack:
        goals, sigma = stack.pop()
        red = None
        for u, v in goals:
            red = _innermost_destructor(store, u) or _innermost_destructor(store, v)
            if red is not None:
                break
        if red is None:
            theta = mgu_first_order(store, goals)
            if theta is None:
                continue
            full = compose(store, sigma, theta)
            out = {x: t for x, t in full.items() if x in base_vars}
            key = canonical_subst_key(store, out)
            if key not in seen:
                seen.add(key)
                results.append(out)
            continue
        g = store.sym(red)
        for rule in rs.rules_for(g.id):
            lhs, rhs = _rename_fresh(store, rule.lhs, rule.rhs, fresh)
            theta = mgu_first_order(
                store, list(zip(store.children(red), store.children(lhs))))
            if theta is None:
                continue
            repl = store.apply(rhs, theta)
            memo: dict[int, int] = {}
            goals2 = [
                (store.apply(_replace_all(store, u, red, repl, memo), theta),
                 store.apply(_replace_all(store, v, red, repl, memo), theta))
                for u, v in goals]
            stack.append((goals2, compose(store, sigma, theta)))
    checked = []
    for s in results:
        ok = True
        for u, v in eqs:
            us, vs = store.apply(u, s), store.apply(v, s)
            if not (rs.is_message(us) and rs.is_message(vs)
                    and rs.normalize(us) == rs.normalize(vs)):
                ok = False  # pragma: no cover - narrowing guarantees this
                break
        if ok:
            checked.append(s)
    return checked


# -- quantified disequation formulas ----------------------------------------


@dataclass(frozen=True)
class Diseq:
    """forall qvars. \\/ lhs_i != rhs_i  (empty disjunction = unsatisfiable)."""

    qvars: frozenset
    pairs: tuple

    def fmt(self, store: TermStore) -> str:
        q = ""
        if self.qvars:
            q = "forall " + ",".join(store.fmt(v) for v in sorted(self.qvars)) + ". "
        if not self.pairs:
            return q + "false"
        return q + " | ".join(
            f"{store.fmt(a)} != {store.fmt(b)}" for a, b in self.pairs)


TRUE = "true"
FALSE = "false"


def simplify_diseq(store: TermStore, d: Diseq, second_order: bool = False,
                   fresh=None):
    """Normal form of a quantified disequation: TRUE when it always holds,
    FALSE when unsatisfiable, else an equivalent Diseq of shape x != x.sigma
    over the free variables (quantified and mgu-introduced variables stay
    quantified in the images)."""
    before: set[int] = set()
    for a, b in d.pairs:
        before |= store.vars1(a, b) | store.vars2(a, b)
    if second_order:
        sigma = mgu_second_order(store, list(d.pairs), prefer=d.qvars,
                                 fresh=fresh)
    else:
        sigma = mgu_first_order(store, list(d.pairs), prefer=d.qvars)
    if sigma is None:
        return TRUE
    pairs = tuple((x, t) for x, t in sorted(sigma.items()) if x not in d.qvars)
    if not pairs:
        return FALSE
    imvars: set[int] = set()
    for _, t in pairs:
        imvars |= store.vars1(t) | store.vars2(t)
    qnew = frozenset(v for v in imvars if v in d.qvars or v not in before)
    return Diseq(qnew, pairs)


def apply_to_diseq(store: TermStore, d: Diseq, subst: dict[int, int],
                   second_order: bool = False, fresh=None):
    """Apply a substitution to the free variables of d and re-simplify."""
    if not subst:
        return simplify_diseq(store, d, second_order, fresh)
    clash = set(d.qvars) & set(subst)
    if clash:  # pragma: no cover - quantified vars are always fresh
        subst = {k: v for k, v in subst.items() if k not in clash}
    pairs = tuple((store.apply(a, subst), store.apply(b, subst)) for a, b in d.pairs)
    return simplify_diseq(store, Diseq(d.qvars, pairs), second_order, fresh)


def neg_mgu_modulo(store: TermStore, rs: RewriteSystem, u: int, v: int,
                   quantify=frozenset(), fresh=None) -> list[Diseq] | None:
    """Constraints satisfied exactly when u and v are not equal modulo R
    (for any value of the `quantify` variables, e.g. pattern variables).

    Returns a conjunction (list) of quantified disequations; the empty list
    is the trivially-true formula; None means the negation is unsatisfiable
    (u and v are unconditionally equal modulo R)."""
    out = []
    quantify = set(quantify)
    base = (store.vars1(u) | store.vars1(v)) - quantify
    for sigma in mgu_modulo(store, rs, [(u, v)], fresh):
        fresh = set()
        for t in sigma.values():
            fresh |= store.vars1(t) - base - quantify
        pairs = tuple((x, t) for x, t in sorted(sigma.items()) if x in base)
        d = simplify_diseq(store, Diseq(frozenset(fresh | quantify), pairs))
        if d is TRUE:
            continue
        if d is FALSE:
            return None
        out.append(d)
    return out
