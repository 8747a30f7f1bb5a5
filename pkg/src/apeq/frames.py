"""Frames, recipe evaluation, deducibility and static equivalence.

Static equivalence is decided by saturating each frame under destructor
application (every application whose result is not already attacker
constructible is recorded as new knowledge), then replaying the resulting
computation and comparison tests in the other frame.
"""

from __future__ import annotations

from dataclasses import dataclass

from .rewriting import RewriteSystem
from .terms import APP, AXIOM, CONSTANT, NAME, VAR, Signature, TermStore


class FrameError(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    """ax_1..ax_n mapped, in order, to ground constructor messages in
    normal form."""

    entries: tuple[int, ...]

    def __len__(self):
        return len(self.entries)

    def get(self, index: int) -> int:
        if not 1 <= index <= len(self.entries):
            raise FrameError(f"axiom ax{index} outside frame domain")
        return self.entries[index - 1]

    def extend(self, term: int) -> "Frame":
        return Frame(self.entries + (term,))

    def fmt(self, store: TermStore) -> str:
        inner = ", ".join(
            f"ax{i + 1} -> {store.fmt(t)}" for i, t in enumerate(self.entries))
        return "{" + inner + "}"


def eval_recipe(store: TermStore, rs: RewriteSystem, xi: int, frame: Frame) -> int | None:
    """xi.Phi normalised when it is a message, else None."""

    def inst(t: int) -> int:
        k = store.kind(t)
        if k == AXIOM:
            return frame.get(store.axiom_index(t))
        if k == APP:
            return store.app(store.sym(t), tuple(inst(c) for c in store.children(t)))
        if k in (NAME, VAR):
            raise FrameError(f"recipe contains a protocol term: {store.fmt(t)}")
        raise FrameError(f"recipe contains an unbound variable: {store.fmt(t)}")

    t = inst(xi)
    if not rs.is_message(t):
        return None
    return rs.normalize(t)


class Saturation:
    """Destructor closure of one frame.

    facts: recipes for every attacker-reachable frame subterm; tests record
    every successful destructor application and every equality between two
    distinct computations of one term.
    """

    def __init__(self, store: TermStore, rs: RewriteSystem, sig: Signature, frame: Frame):
        self.store = store
        self.rs = rs
        self.sig = sig
        self.frame = frame
        self.facts: list[tuple[int, int]] = []
        self.msg_tests: list[int] = []
        self.eq_tests: list[tuple[int, int]] = []
        self._fact_terms: dict[int, int] = {}
        self._conseq_memo: dict[int, int | None] = {}
        self._fills = 0
        for i, t in enumerate(frame.entries):
            self._add_fact(store.axiom(i + 1), t)
        self._saturate()

    def _add_fact(self, recipe: int, term: int):
        self.facts.append((recipe, term))
        self._fact_terms.setdefault(term, recipe)
        self._conseq_memo.clear()

    def _fill_constant(self) -> int:
        # deterministic public constants for attacker-chosen arguments
        self._fills += 1
        return self.store.constant(f"w{self._fills}")

    def conseq_recipe(self, t: int) -> int | None:
        """A recipe computing t by constructor context over known facts."""
        got = self._fact_terms.get(t)
        if got is not None:
            return got
        memo = self._conseq_memo
        if t in memo:
            return memo[t]
        out = None
        if self.store.kind(t) == APP:
            sym = self.store.sym(t)
            if not sym.private and (sym.is_constructor or sym.is_constant):
                parts = []
                for c in self.store.children(t):
                    r = self.conseq_recipe(c)
                    if r is None:
                        parts = None
                        break
                    parts.append(r)
                if parts is not None:
                    out = self.store.app(sym, tuple(parts))
        memo[t] = out
        return out

    # -- pattern matching into the attacker's constructible terms ----------

    def _match(self, p: int, theta: dict[int, int]):
        """Yield (theta', recipe) pairs matching pattern p against some
        attacker-constructible term; free pattern variables stay unbound and
        are reported with recipe None."""
        st = self.store
        if st.kind(p) == VAR:
            bound = theta.get(p)
            if bound is None:
                yield theta, None
            else:
                r = self.conseq_recipe(bound)
                if r is not None:
                    yield theta, r
            return
        # match against a known fact
        from .rewriting import match as syn_match

        for recipe, u in self.facts:
            th2 = dict(theta)
            sub = syn_match(st, p, u)
            ok = sub is not None
            if ok:
                for v, val in sub.items():
                    if th2.setdefault(v, val) != val:
                        ok = False
                        break
            if ok:
                yield th2, recipe
        # or let the attacker build the root himself
        if st.kind(p) == APP:
            sym = st.sym(p)
            if not sym.private and (sym.is_constructor or sym.is_constant):
                def rec(i, th):
                    if i == len(st.children(p)):
                        yield th, []
                        return
                    for th2, r in self._match(st.children(p)[i], th):
                        for th3, rs_ in rec(i + 1, th2):
                            yield th3, [r] + rs_
                for th, parts in rec(0, dict(theta)):
                    yield th, ("build", sym, tuple(parts))

    def _saturate(self):
        st = self.store
        seen_tests: set[int] = set()
        changed = True
        while changed:
            changed = False
            for rule in self.rs.rules:
                g = st.sym(rule.lhs)
                args = st.children(rule.lhs)
                for theta, recipes in self._match_args(args, 0, {}, []):
                    theta, arg_recipes = self._ground_free(rule, theta, recipes)
                    if arg_recipes is None:
                        continue
                    recipe = st.app(g, tuple(arg_recipes))
                    if recipe in seen_tests:
                        continue
                    seen_tests.add(recipe)
                    result = self.rs.normalize(st.apply(rule.rhs, theta))
                    self.msg_tests.append(recipe)
                    other = self.conseq_recipe(result)
                    if other is None:
                        self._add_fact(recipe, result)
                        changed = True
                    elif other != recipe:
                        self.eq_tests.append((recipe, other))

    def _match_args(self, args, i, theta, acc):
        if i == len(args):
            yield theta, list(acc)
            return
        for th2, r in self._match(args[i], theta):
            yield from self._match_args(args, i + 1, th2, acc + [r])

    def _ground_free(self, rule, theta, recipes):
        """Instantiate unbound rule variables with fresh public constants and
        flatten deferred 'build' recipes; returns (theta, recipes) or
        (theta, None) when a bound variable is not constructible."""
        st = self.store
        theta = dict(theta)
        for v in sorted(st.vars1(rule.lhs)):
            if v not in theta:
                theta[v] = self._fill_constant()

        def flatten(item, p):
            if item is None:  # free pattern variable
                return self.conseq_recipe(st.apply(p, theta))
            if isinstance(item, int):
                return item
            _, sym, parts = item
            out = []
            for child_item, child_p in zip(parts, st.children(p)):
                r = flatten(child_item, child_p)
                if r is None:
                    return None
                out.append(r)
            return st.app(sym, tuple(out))

        args = st.children(rule.lhs)
        flat = []
        for item, p in zip(recipes, args):
            r = flatten(item, p)
            if r is None:
                return theta, None
            flat.append(r)
        return theta, flat


@dataclass(frozen=True)
class StaticWitness:
    """Evidence that two frames differ: either one recipe whose message
    status differs, or two recipes equal in one frame and not the other."""

    kind: str  # "msg" or "eq"
    recipes: tuple[int, ...]
    side: int  # frame index (0 or 1) where the test succeeds / equality holds

    def fmt(self, store: TermStore) -> str:
        rs = ", ".join(store.fmt(r) for r in self.recipes)
        return f"{self.kind}-test [{rs}] (holds in frame {self.side})"


def check_witness(store: TermStore, rs: RewriteSystem, w: StaticWitness,
                  f0: Frame, f1: Frame) -> bool:
    vals0 = [eval_recipe(store, rs, r, f0) for r in w.recipes]
    vals1 = [eval_recipe(store, rs, r, f1) for r in w.recipes]
    if w.kind == "msg":
        return (vals0[0] is None) != (vals1[0] is None)
    if None in vals0 or None in vals1:
        return (None in vals0) != (None in vals1)
    return (vals0[0] == vals0[1]) != (vals1[0] == vals1[1])


def static_equiv(store: TermStore, rs: RewriteSystem, sig: Signature,
                 f0: Frame, f1: Frame) -> StaticWitness | None:
    """None when the frames are statically equivalent, else a verified
    distinguishing witness (first one found in saturation order)."""
    if len(f0) != len(f1):
        raise FrameError("frames have different domains")
    sats = (Saturation(store, rs, sig, f0), Saturation(store, rs, sig, f1))
    frames = (f0, f1)
    for side in (0, 1):
        sat, mine, other = sats[side], frames[side], frames[1 - side]
        for xi in sat.msg_tests:
            if eval_recipe(store, rs, xi, other) is None:
                return StaticWitness("msg", (xi,), side)
        for xi, zeta in sat.eq_tests:
            a = eval_recipe(store, rs, xi, other)
            b = eval_recipe(store, rs, zeta, other)
            if a is None or b is None or a != b:
                return StaticWitness("eq", (xi, zeta), side)
        for recipe, term in sat.facts:
            for recipe2, term2 in sat.facts:
                if recipe2 == recipe:
                    break
                if term2 == term:
                    a = eval_recipe(store, rs, recipe, other)
                    b = eval_recipe(store, rs, recipe2, other)
                    if a is None or b is None or a != b:
                        return StaticWitness("eq", (recipe, recipe2), side)
            if store.kind(term) == APP:
                sym = store.sym(term)
                if sym.private or not (sym.is_constructor or sym.is_constant):
                    continue
                parts = []
                for c in store.children(term):
                    r = sat.conseq_recipe(c)
                    if r is None:
                        parts = None
                        break
                    parts.append(r)
                if parts is None:
                    continue
                built = store.app(sym, tuple(parts))
                if built == recipe:
                    continue
                a = eval_recipe(store, rs, recipe, other)
                b = eval_recipe(store, rs, built, other)
                if a is None or b is None or a != b:
                    return StaticWitness("eq", (recipe, built), side)
    return None


def deducible(store: TermStore, rs: RewriteSystem, sig: Signature,
              frame: Frame, t: int) -> int | None:
    """A recipe xi with msg(xi.Phi) and xi.Phi normalising to t, or None."""
    if not rs.is_message(t):
        return None
    sat = Saturation(store, rs, sig, frame)
    return sat.conseq_recipe(rs.normalize(t))
