"""Constructor-destructor subterm-convergent rewrite systems.

Validation of the rewrite class, innermost normalisation and the message
predicate (every subterm normalises to a destructor-free term).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .terms import APP, F_DESTR, F_NAME, F_VAR1, Signature, TermStore


class RewriteError(Exception):
    pass


@dataclass(frozen=True)
class RewriteRule:
    lhs: int
    rhs: int

    def fmt(self, store: TermStore) -> str:
        return f"{store.fmt(self.lhs)} -> {store.fmt(self.rhs)}"


@dataclass
class RewriteSystem:
    store: TermStore
    signature: Signature
    rules: list[RewriteRule] = field(default_factory=list)
    index: dict[int, list[RewriteRule]] = field(default_factory=dict)

    def __post_init__(self):
        self._norm_memo: dict[int, int] = {}
        self._msg_memo: dict[int, bool] = {}
        if self.rules and not self.index:
            for r in self.rules:
                self.index.setdefault(self.store.sym(r.lhs).id, []).append(r)

    def add_rule(self, lhs: int, rhs: int):
        rule = RewriteRule(lhs, rhs)
        self.rules.append(rule)
        self.index.setdefault(self.store.sym(lhs).id, []).append(rule)

    def rules_for(self, sym_id: int) -> list[RewriteRule]:
        return self.index.get(sym_id, [])

    # -- validation ---------------------------------------------------------

    def validate(self):
        """Check every rule is destructor-rooted with constructor-only proper
        subterms on the left and a subterm or ground-normal right-hand side;
        rules sharing a destructor must not overlap with diverging results."""
        st = self.store
        for rule in self.rules:
            lhs, rhs = rule.lhs, rule.rhs
            if st.kind(lhs) != APP or not st.sym(lhs).is_destructor:
                raise RewriteError(f"lhs root is not a destructor: {rule.fmt(st)}")
            for arg in st.children(lhs):
                if st.flags(arg) & F_DESTR:
                    raise RewriteError(
                        f"destructor below the root of lhs: {rule.fmt(st)}")
                if st.flags(arg) & F_NAME:
                    raise RewriteError(f"name in rewrite rule: {rule.fmt(st)}")
            if not st.vars1(rhs) <= st.vars1(lhs):
                raise RewriteError(f"rhs has variables not in lhs: {rule.fmt(st)}")
            if rhs in st.subterms(lhs) and rhs != lhs:
                continue
            if (st.is_ground1(rhs) and not st.flags(rhs) & (F_DESTR | F_NAME)
                    and self.normalize(rhs) == rhs):
                continue
            raise RewriteError(
                f"rhs neither a strict subterm of lhs nor ground normal: {rule.fmt(st)}")
        self._check_root_overlaps()

    def _check_root_overlaps(self):
        # constructor-destructor shape makes root overlaps the only critical
        # pairs; rules for one destructor that unify must agree on the result
        from .unification import mgu_first_order

        st = self.store
        for rules in self.index.values():
            for i, r1 in enumerate(rules):
                for r2 in rules[i + 1:]:
                    r2l, r2r = _rename_rule(st, r2, tag=id(r2) & 0xFFFF)
                    sigma = mgu_first_order(st, [(r1.lhs, r2l)])
                    if sigma is None:
                        continue
                    u1 = st.apply(r1.rhs, sigma)
                    u2 = st.apply(r2r, sigma)
                    if u1 != u2:
                        raise RewriteError(
                            f"overlapping rules with diverging results: "
                            f"{r1.fmt(st)} vs {r2.fmt(st)}")

    # -- normalisation ------------------------------------------------------

    def normalize(self, t: int) -> int:
        """Innermost normalisation; unique normal form by convergence."""
        st = self.store
        if not st.flags(t) & F_DESTR:
            return t
        ground = st.is_ground1(t)
        if ground:
            got = self._norm_memo.get(t)
            if got is not None:
                return got
        node = st.node(t)
        sym = st._symbols_by_id[node[1]]
        args = tuple(self.normalize(c) for c in node[2])
        out = st.app(sym, args)
        if sym.is_destructor:
            for rule in self.index.get(sym.id, ()):
                theta = match(st, rule.lhs, out)
                if theta is not None:
                    out = self.normalize(st.apply(rule.rhs, theta))
                    break
        if ground:
            self._norm_memo[t] = out
        return out

    def is_message(self, t: int) -> bool:
        """True iff every subterm of t normalises to a destructor-free term."""
        st = self.store
        if not st.flags(t) & F_DESTR:
            return True
        ground = st.is_ground1(t)
        if ground:
            got = self._msg_memo.get(t)
            if got is not None:
                return got
        ok = all(self.is_message(c) for c in st.children(t))
        if ok:
            ok = not st.flags(self.normalize(t)) & F_DESTR
        if ground:
            self._msg_memo[t] = ok
        return ok


def match(store: TermStore, pattern: int, t: int) -> dict[int, int] | None:
    """Syntactic matching: theta with pattern.theta == t, or None."""
    theta: dict[int, int] = {}
    stack = [(pattern, t)]
    while stack:
        p, u = stack.pop()
        pk = store.kind(p)
        if pk == APP:
            if store.kind(u) != APP or store.node(p)[1] != store.node(u)[1]:
                return None
            stack.extend(zip(store.children(p), store.children(u)))
        elif pk == 1:  # VAR
            bound = theta.get(p)
            if bound is None:
                theta[p] = u
            elif bound != u:
                return None
        else:
            if p != u:
                return None
    return theta


def _rename_rule(store: TermStore, rule: RewriteRule, tag: int) -> tuple[int, int]:
    ren = {v: store.fresh_var(f"r{tag}") for v in sorted(store.vars1(rule.lhs))}
    return store.apply(rule.lhs, ren), store.apply(rule.rhs, ren)
