"""Extended constraint systems and the constraint-solving rules that build
partition-tree nodes.

An extended system adds to (Phi, D1, E1) the second-order constraints E2, a
knowledge base K of solved deduction facts (recipes with non-constructor
roots) and a set F of deduction/equality formulas describing what the
attacker can compute and compare.  Most general solutions are computed by a
small transition system (uniformity unification first, then resolution
against K or constructor decomposition); components of extended symbolic
processes are refined by normalisation, vector and case-distinction rules
until every component models one partition-tree node.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .rewriting import RewriteSystem
from .symbolic import CSys, SymProc, SymbolicSemantics
from .terms import (APP, AXIOM, SVAR, VAR, Fresh, Signature, TermStore,
                    compose, stable_var_key)
from .unification import (Diseq, FALSE, TRUE, apply_to_diseq,
                          canonical_subst_key, mgu_first_order,
                          mgu_second_order, simplify_diseq)

DED = "ded"
NDED = "nded"  # forall X^i. X cannot deduce u (internal communication)


class CeilingError(Exception):
    """The per-branch rule budget was exceeded: given the termination
    theorem this signals an implementation bug, never a big instance."""


@dataclass(frozen=True)
class Formula:
    """forall qvars. head <= hyp_ded /\\ hyp_eq.

    Stored formulas have no quantified variables and no deduction
    hypotheses; the general shape only appears while case-distinction rules
    are being processed."""

    qvars: frozenset
    head: tuple  # ("ded", recipe, term) | ("eqf", recipe, recipe)
    hyp_ded: tuple  # ((svar, term), ...)
    hyp_eq: tuple  # ((u, v), ...)

    @property
    def solved(self) -> bool:
        return not self.qvars and not self.hyp_ded and not self.hyp_eq

    def head_key(self):
        if self.head[0] == DED:
            return (DED, self.head[1])
        a, b = self.head[1], self.head[2]
        return ("eqf", min(a, b), max(a, b))

    def fmt(self, store: TermStore) -> str:
        if self.head[0] == DED:
            h = f"{store.fmt(self.head[1])} |- {store.fmt(self.head[2])}"
        else:
            h = f"{store.fmt(self.head[1])} =f {store.fmt(self.head[2])}"
        hyps = [f"{store.fmt(X)}|-{store.fmt(t)}" for X, t in self.hyp_ded]
        hyps += [f"{store.fmt(u)}={store.fmt(v)}" for u, v in self.hyp_eq]
        q = ("forall " + ",".join(store.fmt(v) for v in sorted(self.qvars)) + ". "
             if self.qvars else "")
        return q + h + (" <= " + " & ".join(hyps) if hyps else "")


@dataclass(frozen=True)
class ECS:
    """Extended constraint system; first-order equations are kept folded
    into mu1 and propagated, second-order ones into mu2."""

    phi: tuple
    ded: tuple  # (DED, svar, term) and (NDED, type_index, term) entries
    mu1: tuple
    diseqs1: tuple
    mu2: tuple
    diseqs2: tuple
    kb: tuple  # (recipe, term) solved deduction facts
    formulas: tuple
    rew_done: frozenset = frozenset()

    def mu1_dict(self):
        return dict(self.mu1)

    def mu2_dict(self):
        return dict(self.mu2)

    def ded_facts(self):
        return [(e[1], e[2]) for e in self.ded if e[0] == DED]

    def fmt(self, store: TermStore) -> str:
        phi = ", ".join(f"ax{i+1}->{store.fmt(t)}" for i, t in enumerate(self.phi))
        parts = [f"Phi={{{phi}}}"]
        ds = []
        for e in self.ded:
            if e[0] == DED:
                ds.append(f"{store.fmt(e[1])}|-{store.fmt(e[2])}")
            else:
                ds.append(f"(A X^{e[1]}. X|/-{store.fmt(e[2])})")
        parts.append("D={" + " & ".join(ds) + "}")
        parts.append("E1={" + " & ".join(
            f"{store.fmt(v)}={store.fmt(t)}" for v, t in self.mu1) + "}")
        if self.diseqs1:
            parts.append("Dis1={" + " & ".join(d.fmt(store) for d in self.diseqs1) + "}")
        parts.append("E2={" + " & ".join(
            f"{store.fmt(v)}={store.fmt(t)}" for v, t in self.mu2) + "}")
        if self.diseqs2:
            parts.append("Dis2={" + " & ".join(d.fmt(store) for d in self.diseqs2) + "}")
        parts.append("K={" + " & ".join(
            f"{store.fmt(r)}|-{store.fmt(t)}" for r, t in self.kb) + "}")
        parts.append("F={" + " ; ".join(f.fmt(store) for f in self.formulas) + "}")
        return " ".join(parts)


EMPTY_ECS = ECS((), (), (), (), (), (), (), ())


@dataclass(frozen=True)
class EProc:
    """Extended symbolic process with an origin tag (bit 1: left process,
    bit 2: right process)."""

    procs: tuple
    cs: CSys
    ecs: ECS
    origin: int


def eproc_key(store: TermStore, ep: EProc) -> str:
    from .process import proc_key

    return "|".join(proc_key(p) for p in ep.procs) + "#" + ep.ecs.fmt(store) \
        + f"#{ep.origin}"


class Solver:
    """All constraint-solving rules; one instance per verification run."""

    def __init__(self, store: TermStore, rs: RewriteSystem, sig: Signature,
                 fresh: Fresh, ceiling: int = 200_000,
                 check_invariants: bool = False):
        self.store = store
        self.rs = rs
        self.sig = sig
        self.fresh = fresh
        self.ceiling = ceiling
        self.steps_used = 0
        self.check_invariants = check_invariants
        self._skel_vars: dict = {}

    # -- bookkeeping ---------------------------------------------------------

    def _tick(self, n=1):
        self.steps_used += n
        if self.steps_used > self.ceiling:
            raise CeilingError(
                f"rule budget {self.ceiling} exceeded: implementation bug?")

    def tkey(self, t: int) -> str:
        return self.store.fmt_memo(t)

    # -- consequence ---------------------------------------------------------

    def fact_list(self, ecs: ECS):
        return list(ecs.kb) + ecs.ded_facts()

    def term_of_recipe(self, xi: int, facts, fact_map=None) -> int | None:
        """(xi, u) in Conseq(facts) for the unique u, or None."""
        st = self.store
        if fact_map is None:
            fact_map = {}
            for r, t in facts:
                fact_map.setdefault(r, t)
        def go(x):
            got = fact_map.get(x)
            if got is not None:
                return got
            if st.kind(x) == APP:
                sym = st.sym(x)
                if (sym.is_constructor or sym.is_constant) and not sym.private:
                    parts = []
                    for c in st.children(x):
                        v = go(c)
                        if v is None:
                            return None
                        parts.append(v)
                    return st.app(sym, tuple(parts))
            return None
        return go(xi)

    def recipe_for_term(self, u: int, facts, maxtype: int | None = None) -> int | None:
        """Some recipe xi with (xi, u) in Conseq(facts), facts first."""
        st = self.store
        for r, t in facts:
            if t == u and (maxtype is None or st.type_index(r) <= maxtype):
                return r
        if st.kind(u) == APP:
            sym = st.sym(u)
            if (sym.is_constructor or sym.is_constant) and not sym.private:
                parts = []
                for c in st.children(u):
                    r = self.recipe_for_term(c, facts, maxtype)
                    if r is None:
                        return None
                    parts.append(r)
                return st.app(sym, tuple(parts))
        return None

    def solution_recipes(self, ecs: ECS) -> list[int]:
        """stc(im(mgu(E2)), K u D1) plus the D1 variables: every recipe
        already used to constrain the solutions."""
        st = self.store
        fact_map = {}
        for r, t in self.fact_list(ecs):
            fact_map.setdefault(r, t)
        out: list[int] = []
        seen: set[int] = set()

        def walk(x):
            if x in seen:
                return
            seen.add(x)
            out.append(x)
            if x in fact_map:
                return
            if st.kind(x) == APP:
                for c in st.children(x):
                    walk(c)

        for _, img in sorted(ecs.mu2, key=lambda kv: self.tkey(kv[0])):
            walk(img)
        for X, _ in ecs.ded_facts():
            if X not in seen:
                seen.add(X)
                out.append(X)
        return out

    def vars2_of(self, ecs: ECS) -> set[int]:
        st = self.store
        out: set[int] = set()
        for e in ecs.ded:
            if e[0] == DED:
                out |= st.vars2(e[1])
        for v, t in ecs.mu2:
            out |= st.vars2(v) | st.vars2(t)
        for r, _ in ecs.kb:
            out |= st.vars2(r)
        for f in ecs.formulas:
            out |= st.vars2(f.head[1])
            if f.head[0] == "eqf":
                out |= st.vars2(f.head[2])
            for X, _ in f.hyp_ded:
                out |= st.vars2(X)
        return out

    # -- construction and propagation -----------------------------------------

    def extend_mu1(self, ecs: ECS, eqs) -> ECS | None:
        """Unify new first-order equations under mu1 and propagate the result
        through the whole system (rule MGS-Unif / Norm-Unif)."""
        st = self.store
        mu1 = ecs.mu1_dict()
        pairs = [(st.apply(u, mu1), st.apply(v, mu1)) for u, v in eqs]
        sigma = mgu_first_order(st, pairs)
        if sigma is None:
            return None
        if not sigma:
            return ecs
        self._tick()
        phi = tuple(st.apply(t, sigma) for t in ecs.phi)
        ded = tuple(
            (e[0], e[1], st.apply(e[2], sigma)) for e in ecs.ded)
        kb = tuple((r, st.apply(t, sigma)) for r, t in ecs.kb)
        diseqs1 = []
        for d in ecs.diseqs1:
            d2 = apply_to_diseq(st, d, sigma)
            if d2 is FALSE:
                return None
            if d2 is not TRUE:
                diseqs1.append(d2)
        formulas = []
        for f in ecs.formulas:
            f2 = self.subst_formula_fo(f, sigma)
            if f2 is not None:
                formulas.append(f2)
        return ECS(phi, ded, tuple(sorted(compose(st, mu1, sigma).items())),
                   tuple(diseqs1), ecs.mu2, ecs.diseqs2, kb, tuple(formulas),
                   ecs.rew_done)

    def subst_formula_fo(self, f: Formula, sigma) -> Formula | None:
        """First-order substitution on a formula, re-normalised; None when
        the hypotheses become syntactically unsatisfiable."""
        st = self.store
        sigma = {k: v for k, v in sigma.items() if k not in f.qvars}
        head = f.head
        if head[0] == DED:
            head = (DED, head[1], st.apply(head[2], sigma))
        hyp_ded = tuple((X, st.apply(t, sigma)) for X, t in f.hyp_ded)
        hyp_eq = tuple((st.apply(u, sigma), st.apply(v, sigma))
                       for u, v in f.hyp_eq)
        return self.norm_formula(Formula(f.qvars, head, hyp_ded, hyp_eq))

    def norm_formula(self, f: Formula) -> Formula | None:
        """Fold hypothesis equations (eliminating quantified variables first)
        into the head; drop vacuous formulas."""
        st = self.store
        if not f.hyp_eq and not any(v in f.qvars for v in
                                    (x for x, _ in f.hyp_ded)):
            qv = f.qvars & self._formula_vars(f)
            return f if qv == f.qvars else replace(f, qvars=qv)
        q1 = frozenset(v for v in f.qvars if st.kind(v) == VAR)
        sigma = mgu_first_order(st, f.hyp_eq, prefer=q1)
        if sigma is None:
            return None
        hyp_eq = tuple((x, t) for x, t in
                       sorted(sigma.items(), key=lambda kv: stable_var_key(st, kv[0]))
                       if x not in f.qvars)
        head = f.head
        if head[0] == DED:
            head = (DED, head[1], st.apply(head[2], sigma))
        hyp_ded = tuple((X, st.apply(t, sigma)) for X, t in f.hyp_ded)
        out = Formula(f.qvars, head, hyp_ded, hyp_eq)
        qv = f.qvars & self._formula_vars(out)
        if qv != f.qvars:
            out = replace(out, qvars=qv)
        return out

    def _formula_vars(self, f: Formula) -> set[int]:
        st = self.store
        out: set[int] = set()
        for part in f.head[1:]:
            out |= st.vars1(part) | st.vars2(part)
        for X, t in f.hyp_ded:
            out |= {X} | st.vars1(t) | st.vars2(t)
        for u, v in f.hyp_eq:
            out |= st.vars1(u, v) | st.vars2(u, v)
        return out

    # -- application of a second-order substitution (Def. Sigma:C^e) ----------

    def apply_subst_ecs(self, ecs: ECS, Sigma: dict[int, int]) -> ECS | None:
        if not Sigma:
            return ecs
        self._tick()
        st = self.store
        vars2 = self.vars2_of(ecs)
        sig_sys = {k: v for k, v in Sigma.items() if k in vars2}
        im_vars: set[int] = set()
        for v in sig_sys.values():
            im_vars |= st.vars2(v)
        fresh_vars = sorted(im_vars - vars2, key=lambda x: stable_var_key(st, x))
        d_fresh = tuple((Y, self.fresh.var("yf")) for Y in fresh_vars)
        new_ded = []
        removed = []
        for e in ecs.ded:
            if e[0] == DED and e[1] in Sigma:
                removed.append((e[1], e[2]))
            else:
                new_ded.append(e)
        new_ded.extend((DED, Y, y) for Y, y in d_fresh)
        kb = tuple((st.apply(r, Sigma), t) for r, t in ecs.kb)
        facts = list(kb) + [(e[1], e[2]) for e in new_ded if e[0] == DED]
        link = []
        for X, u in removed:
            v = self.term_of_recipe(st.apply(X, Sigma), facts)
            if v is None:
                return None  # image not constructible: structural dead end
            link.append((u, v))
        mu2 = compose(st, ecs.mu2_dict(), sig_sys)
        diseqs2 = []
        for d in ecs.diseqs2:
            d2 = apply_to_diseq(st, d, Sigma, second_order=True, fresh=self.fresh)
            if d2 is FALSE:
                return None
            if d2 is not TRUE:
                diseqs2.append(d2)
        formulas = []
        for f in ecs.formulas:
            f2 = self.subst_formula_so(f, Sigma)
            if f2 is not None:
                formulas.append(f2)
        out = ECS(ecs.phi, tuple(new_ded), ecs.mu1, ecs.diseqs1,
                  tuple(sorted(mu2.items())), tuple(diseqs2), kb,
                  tuple(formulas), ecs.rew_done)
        return self.extend_mu1(out, link)

    def subst_formula_so(self, f: Formula, Sigma) -> Formula | None:
        st = self.store
        head = f.head
        if head[0] == DED:
            head = (DED, st.apply(head[1], Sigma), head[2])
        else:
            head = ("eqf", st.apply(head[1], Sigma), st.apply(head[2], Sigma))
        hyp_ded = tuple((st.apply(X, Sigma), t) for X, t in f.hyp_ded)
        for X, _ in hyp_ded:
            if st.kind(X) != SVAR:
                # a hypothesis variable got instantiated outside the
                # formula-application mechanism: only happens for transient
                # formulas, which the Rew/Eq machinery handles itself
                return None  # pragma: no cover
        out = Formula(f.qvars, head, hyp_ded, f.hyp_eq)
        return self.norm_formula(out)

    def apply_subst_formula(self, f: Formula, Sigma: dict[int, int],
                            ecs: ECS, extra_facts=()) -> Formula | None:
        """Def. Sigma:psi:C^e - remove bound hypothesis facts, bind fresh
        image variables, and link the removed terms to what the substituted
        recipes compute from K u D1 (u extra facts)."""
        st = self.store
        d_dom = [(X, t) for X, t in f.hyp_ded if X in Sigma]
        keep = tuple((X, t) for X, t in f.hyp_ded if X not in Sigma)
        base_vars = self.vars2_of(ecs) | st.vars2(f.head[1]) | \
            {X for X, _ in f.hyp_ded}
        if f.head[0] == "eqf":
            base_vars |= st.vars2(f.head[2])
        im_vars: set[int] = set()
        for v in Sigma.values():
            im_vars |= st.vars2(v)
        fresh_vars = sorted(im_vars - base_vars,
                            key=lambda x: stable_var_key(st, x))
        d_fresh = tuple((Y, self.fresh.var("yf")) for Y in fresh_vars)
        facts = list(ecs.kb) + ecs.ded_facts() + list(extra_facts) + \
            [(Y, y) for Y, y in d_fresh]
        eqs = []
        for X, t in d_dom:
            v = self.term_of_recipe(st.apply(X, Sigma), facts)
            if v is None:
                return None
            eqs.append((t, v))
        head = f.head
        if head[0] == DED:
            head = (DED, st.apply(head[1], Sigma), head[2])
        else:
            head = ("eqf", st.apply(head[1], Sigma), st.apply(head[2], Sigma))
        qvars = frozenset(
            v for v in f.qvars if v not in Sigma) | {y for _, y in d_fresh}
        out = Formula(qvars, head,
                      keep + tuple((X, t) for X, t in d_fresh),
                      f.hyp_eq + tuple(eqs))
        return self.norm_formula(out)

    # -- most general solutions ------------------------------------------------

    def unsat(self, ecs: ECS) -> bool:
        """MGS-Unsat: uniformity violations and deducible private channels."""
        st = self.store
        facts = self.fact_list(ecs)
        fact_map = {}
        for r, t in facts:
            fact_map.setdefault(r, t)
        # condition 3: forall X^i. X |/- u with u constructible at type i
        for e in ecs.ded:
            if e[0] == NDED:
                bound = [(r, t) for r, t in facts if st.type_index(r) <= e[1]]
                if self.recipe_for_term(e[2], bound, maxtype=e[1]) is not None:
                    return True
        # condition 2: two used recipes deduce the same term but cannot be
        # unified consistently with E2
        groups = self._conseq_groups(ecs, fact_map)
        for group in groups.values():
            for i, xi in enumerate(group):
                for zeta in group[i + 1:]:
                    Sigma = mgu_second_order(st, [(xi, zeta)], fresh=self.fresh)
                    if Sigma is None:
                        return True
                    if Sigma and self._diseqs2_violated(ecs, Sigma):
                        return True
        return False

    def _diseqs2_violated(self, ecs: ECS, Sigma) -> bool:
        for d in ecs.diseqs2:
            if apply_to_diseq(self.store, d, Sigma, second_order=True,
                              fresh=self.fresh) is FALSE:
                return True
        return False

    def _conseq_groups(self, ecs: ECS, fact_map) -> dict:
        """Used recipes grouped by the term they deduce (including the public
        constants those terms equal)."""
        st = self.store
        groups: dict[int, list[int]] = {}
        for xi in self.solution_recipes(ecs):
            u = self.term_of_recipe(xi, None, fact_map)
            if u is None:
                continue
            groups.setdefault(u, []).append(xi)
        for u, group in groups.items():
            if st.kind(u) == APP and st.sym(u).is_constant and u not in group:
                group.insert(0, u)  # the constant itself is a recipe for u
        return groups

    def mgs_transitions(self, ecs: ECS):
        """None when no rule applies; else a list of (Sigma, successor)."""
        st = self.store
        facts = self.fact_list(ecs)
        fact_map = {}
        for r, t in facts:
            fact_map.setdefault(r, t)
        # MGS-Conseq has priority: first unifiable pair in stable order
        groups = self._conseq_groups(ecs, fact_map)
        for u in sorted(groups, key=self.tkey):
            group = sorted(groups[u], key=self.tkey)
            for i, xi in enumerate(group):
                for zeta in group[i + 1:]:
                    Sigma = mgu_second_order(st, [(xi, zeta)], fresh=self.fresh)
                    if Sigma:  # non-empty and defined
                        succ = self.apply_subst_ecs(ecs, Sigma)
                        return [(Sigma, succ)] if succ is not None else []
        # otherwise all Res/Cons instances for the lowest-id unsolved fact
        cand = None
        for e in ecs.ded:
            if e[0] == DED and st.kind(e[2]) != VAR:
                if cand is None or stable_var_key(st, e[1]) < \
                        stable_var_key(st, cand[0]):
                    cand = (e[1], e[2])
        if cand is None:
            return None
        X, u = cand
        out = []
        for r, t in ecs.kb:
            Sigma = mgu_second_order(st, [(X, r)], fresh=self.fresh)
            if Sigma is None:
                continue
            succ = self.apply_subst_ecs(ecs, Sigma)
            if succ is not None:
                out.append((Sigma, succ))
        if st.kind(u) == APP:
            sym = st.sym(u)
            if (sym.is_constructor or sym.is_constant) and not sym.private:
                k = st.svar_type(X)
                fresh = tuple(self.fresh.svar(k, "Xc") for _ in range(sym.arity))
                Sigma = {X: st.app(sym, fresh)}
                succ = self.apply_subst_ecs(ecs, Sigma)
                if succ is not None:
                    out.append((Sigma, succ))
        return out

    def solved_form(self, ecs: ECS) -> bool:
        st = self.store
        if any(e[0] == DED and st.kind(e[2]) != VAR for e in ecs.ded):
            return False
        if self.unsat(ecs):
            return False
        return self.mgs_transitions(ecs) is None

    def compute_mgs(self, ecs: ECS, restrict=None) -> list[dict[int, int]]:
        """Fixpoint of simplification + transitions; each solved leaf
        contributes mgu(E2) restricted to the given variable set."""
        st = self.store
        if restrict is None:
            restrict = self.vars2_of(ecs)
        base_mu2 = dict(ecs.mu2)
        work = [ecs]
        out = []
        seen = set()
        while work:
            e = work.pop()
            self._tick()
            if self.unsat(e):
                continue
            trans = self.mgs_transitions(e)
            if trans is None:
                sol = {k: v for k, v in e.mu2 if k in restrict and
                       base_mu2.get(k) != v}
                key = canonical_subst_key(st, sol)
                if key not in seen:
                    seen.add(key)
                    out.append(sol)
                continue
            work.extend(succ for _, succ in reversed(trans))
        return out

    def has_mgs(self, ecs: ECS | None) -> bool:
        if ecs is None:
            return False
        return bool(self.compute_mgs(ecs))

    # -- normalisation rules ---------------------------------------------------

    def norm_ecs(self, ecs: ECS | None) -> ECS | None:
        """Fixpoint of Norm-no-MGS / Norm-Diseq / Norm-Formula / Norm-Dupl on
        one system (first-order propagation is maintained eagerly)."""
        if ecs is None:
            return None
        changed = True
        while changed:
            changed = False
            if not self.has_mgs(ecs):
                return None
            # Norm-Diseq: drop disequations that no solution can violate
            for i, d in enumerate(ecs.diseqs1):
                rest = ecs.diseqs1[:i] + ecs.diseqs1[i + 1:]
                probe = self.extend_mu1(replace(ecs, diseqs1=rest),
                                        self._diseq_negation(d))
                if probe is None or not self.has_mgs(probe):
                    ecs = replace(ecs, diseqs1=rest)
                    changed = True
                    break
            if changed:
                continue
            # Norm-Formula: drop formulas with unsatisfiable hypotheses
            for i, f in enumerate(ecs.formulas):
                if f.solved:
                    continue
                probe = self.extend_mu1(ecs, f.hyp_eq) if not f.hyp_ded else None
                if f.hyp_ded:
                    continue  # transient shapes are handled by Rew/Eq
                if probe is None or not self.has_mgs(probe):
                    ecs = replace(
                        ecs, formulas=ecs.formulas[:i] + ecs.formulas[i + 1:])
                    changed = True
                    break
            if changed:
                continue
            # Norm-Dupl: unsolved formula subsumed by a solved head-equivalent
            solved_heads = {f.head_key() for f in ecs.formulas if f.solved}
            for i, f in enumerate(ecs.formulas):
                if not f.solved and f.head_key() in solved_heads:
                    ecs = replace(
                        ecs, formulas=ecs.formulas[:i] + ecs.formulas[i + 1:])
                    changed = True
                    break
        return ecs

    def _diseq_negation(self, d: Diseq):
        """The equalities contradicting a disequation (quantified variables
        are already globally fresh, so they are simply freed)."""
        return list(d.pairs)

    # -- vector-simplification rules --------------------------------------------

    def simplify_vector(self, vector):
        """Fixpoint of the vector rules over a list of components."""
        vector = [list(comp) for comp in vector]
        changed = True
        while changed:
            changed = False
            # normalisation rules on each member
            for comp in vector:
                for i, ep in enumerate(comp):
                    if ep.ecs is None or ep.ecs.__dict__.get("_normed"):
                        continue
                    e2 = self.norm_ecs(ep.ecs)
                    if e2 is not ep.ecs:
                        comp[i] = replace(ep, ecs=e2)
                        changed = True
                    if e2 is not None:
                        object.__setattr__(e2, "_normed", True)
            # Vect-rm-Unsat (and drop empty components)
            out = []
            for comp in vector:
                comp2 = [ep for ep in comp if ep.ecs is not None]
                if len(comp2) != len(comp):
                    changed = True
                if comp2:
                    out.append(comp2)
                elif comp:
                    changed = True
            vector = out
            if changed:
                continue
            # Vect-Split
            for ci, comp in enumerate(vector):
                split = self._find_split(comp)
                if split is not None:
                    pos, neg = split
                    vector[ci:ci + 1] = [pos, neg]
                    changed = True
                    break
            if changed:
                continue
            # Vect-add-Conseq
            for ci, comp in enumerate(vector):
                if not all(self._solved_cached(ep.ecs) for ep in comp):
                    continue
                done = False
                for xi in self._solved_ded_recipes(comp):
                    terms = []
                    for ep in comp:
                        u = self._solved_head_term(ep.ecs, xi)
                        if u is None or self.recipe_for_term(
                                u, self.fact_list(ep.ecs)) is not None:
                            terms = None
                            break
                        terms.append(u)
                    if terms is None:
                        continue
                    for idx in range(len(comp)):
                        new = replace(comp[idx].ecs,
                                      kb=comp[idx].ecs.kb + ((xi, terms[idx]),))
                        comp[idx] = replace(comp[idx], ecs=new)
                    changed = done = True
                    break
                if done:
                    break
            if changed:
                continue
            # Vect-add-Formula
            for ci, comp in enumerate(vector):
                if not all(self._solved_cached(ep.ecs) for ep in comp):
                    continue
                if self._vect_add_formula(comp):
                    changed = True
                    break
        return vector

    def _solved_cached(self, ecs: ECS) -> bool:
        got = ecs.__dict__.get("_solved")
        if got is None:
            got = self.solved_form(ecs)
            object.__setattr__(ecs, "_solved", got)
        return got

    def _solved_ded_recipes(self, comp):
        """Recipes of solved deduction formulas present in every member."""
        first = [f.head[1] for f in comp[0].ecs.formulas
                 if f.solved and f.head[0] == DED]
        out = []
        for xi in sorted(set(first), key=self.tkey):
            if all(self._solved_head_term(ep.ecs, xi) is not None
                   for ep in comp):
                out.append(xi)
        return out

    def _solved_head_term(self, ecs: ECS, xi: int) -> int | None:
        for f in ecs.formulas:
            if f.solved and f.head[0] == DED and f.head[1] == xi:
                return f.head[2]
        return None

    def _find_split(self, comp):
        heads = []
        seen = set()
        for ep in comp:
            for f in ep.ecs.formulas:
                if f.solved:
                    k = f.head_key()
                    if k not in seen:
                        seen.add(k)
                        heads.append(k)
        heads.sort(key=lambda k: (k[0], self.tkey(k[1]),
                                  self.tkey(k[2]) if len(k) > 2 else ""))
        for hk in heads:
            pos, neg, blocked = [], [], False
            for ep in comp:
                matching = [f for f in ep.ecs.formulas if f.head_key() == hk]
                if any(f.solved for f in matching):
                    pos.append(ep)
                elif matching:
                    blocked = True
                    break
                else:
                    neg.append(ep)
            if not blocked and pos and neg:
                return pos, neg
        return None

    def _vect_add_formula(self, comp) -> bool:
        st = self.store
        for xi in self._solved_ded_recipes(comp):
            # never add a second equality formula mentioning xi
            if any(f.head[0] == "eqf" and xi in (f.head[1], f.head[2])
                   for ep in comp for f in ep.ecs.formulas):
                continue
            # a recipe zeta computing the same term in some member
            zeta = None
            for ep in comp:
                u = self._solved_head_term(ep.ecs, xi)
                zeta = self.recipe_for_term(u, self.fact_list(ep.ecs))
                if zeta is not None:
                    break
            if zeta is None or zeta == xi:
                continue
            k = len(comp[0].ecs.phi)
            X = self.fresh.svar(k, "Xe")
            Y = self.fresh.svar(k, "Ye")
            z = self.fresh.var("ze")
            placeholder = Formula(frozenset((X, Y, z)), ("eqf", X, Y),
                                  ((X, z), (Y, z)), ())
            ok = True
            adds = []
            for ep in comp:
                u = self._solved_head_term(ep.ecs, xi)
                f2 = self.apply_subst_formula(
                    placeholder, {X: xi, Y: zeta}, ep.ecs,
                    extra_facts=((xi, u),))
                if f2 is None:
                    ok = False
                    break
                adds.append(f2)
            if not ok:
                continue
            for i, (ep, f2) in enumerate(zip(list(comp), adds)):
                comp[i] = replace(ep, ecs=replace(
                    ep.ecs, formulas=ep.ecs.formulas + (f2,)))
            return True
        return False

    # -- case-distinction rules ---------------------------------------------------

    def negate_subst(self, Sigma: dict[int, int], vars2_comp: set[int]) -> Diseq:
        st = self.store
        pairs = tuple(sorted(Sigma.items(),
                             key=lambda kv: stable_var_key(st, kv[0])))
        qv = set()
        for _, t in pairs:
            qv |= st.vars2(t) - vars2_comp
        return Diseq(frozenset(qv), pairs)

    def _branches(self, comp, Sigma, plus_extra=None):
        """The generic positive/negative branching of a case rule."""
        vars2_comp = set()
        for ep in comp:
            vars2_comp |= self.vars2_of(ep.ecs)
        pos = []
        for ep in comp:
            e2 = self.apply_subst_ecs(ep.ecs, Sigma)
            if e2 is not None and plus_extra is not None:
                e2 = plus_extra(ep, e2)
            pos.append(replace(ep, ecs=e2))
        if not Sigma:
            return [pos]
        neg_d = self.negate_subst(Sigma, vars2_comp)
        neg = []
        for ep in comp:
            d2 = simplify_diseq(self.store, neg_d, second_order=True,
                                fresh=self.fresh)
            if d2 is FALSE:
                neg.append(replace(ep, ecs=None))
            elif d2 is TRUE:  # pragma: no cover - Sigma is never trivial here
                neg.append(ep)
            else:
                neg.append(replace(ep, ecs=replace(
                    ep.ecs, diseqs2=ep.ecs.diseqs2 + (d2,))))
        return [pos, neg]

    def case_sat(self, comp):
        """Rule (Sat): unsolved member, unsolved-formula hypotheses, or a
        first-order disequation some solution violates."""
        # condition 1: an unsolved member
        for ep in comp:
            if not self._solved_cached(ep.ecs):
                for Sigma in self.compute_mgs(ep.ecs):
                    if Sigma:
                        return self._branches(comp, Sigma)
                return None  # no mgs: normalisation will remove it
        # condition 2: an unsolved formula
        for ep in comp:
            for f in ep.ecs.formulas:
                if f.solved or f.hyp_ded:
                    continue
                probe = self.extend_mu1(ep.ecs, f.hyp_eq)
                if probe is None:
                    continue
                for Sigma in self.compute_mgs(probe,
                                              restrict=self.vars2_of(ep.ecs)):
                    if Sigma:
                        return self._branches(comp, Sigma)
                    break  # degenerate: normalisation solves the formula
        # condition 3: a disequation that some solution violates
        for ep in comp:
            for i, d in enumerate(ep.ecs.diseqs1):
                rest = ep.ecs.diseqs1[:i] + ep.ecs.diseqs1[i + 1:]
                probe = self.extend_mu1(replace(ep.ecs, diseqs1=rest),
                                        self._diseq_negation(d))
                if probe is None:
                    continue
                for Sigma in self.compute_mgs(probe,
                                              restrict=self.vars2_of(ep.ecs)):
                    if Sigma:
                        return self._branches(comp, Sigma)
                    break
        return None

    def case_eq(self, comp):
        """Rule (Eq): can a knowledge-base entry equal another computable
        recipe (a second entry, or a constructor application)?"""
        st = self.store
        for ep in comp:
            ecs = ep.ecs
            k = len(ecs.phi)
            for i, (xi1, u1) in enumerate(ecs.kb):
                # case 1: another knowledge-base entry
                for xi2, u2 in ecs.kb[i + 1:]:
                    if self._has_eqf_head(ecs, xi1, xi2):
                        continue
                    got = self._try_eq(comp, ep, xi1, u1, xi2, u2, None)
                    if got is not None:
                        return got
                # case 2: a public constructor at the root
                for sym in sorted(self.sig.public_constructors(),
                                  key=lambda s: s.name):
                    if st.kind(u1) != APP or st.node(u1)[1] != sym.id:
                        continue
                    if self._has_eqf_cons(ecs, xi1, sym):
                        continue
                    got = self._try_eq(comp, ep, xi1, u1, None, None, sym)
                    if got is not None:
                        return got
        return None

    def _has_eqf_head(self, ecs: ECS, xi1, xi2) -> bool:
        key = ("eqf", min(xi1, xi2), max(xi1, xi2))
        return any(f.head_key() == key for f in ecs.formulas)

    def _has_eqf_cons(self, ecs: ECS, xi1, sym) -> bool:
        st = self.store
        for f in ecs.formulas:
            if f.head[0] != "eqf":
                continue
            a, b = f.head[1], f.head[2]
            for x, other in ((a, b), (b, a)):
                if x == xi1 and st.kind(other) == APP and \
                        st.node(other)[1] == sym.id:
                    return True
        return False

    def _try_eq(self, comp, ep, xi1, u1, xi2, u2, sym):
        st = self.store
        ecs = ep.ecs
        k = len(ecs.phi)
        X = self.fresh.svar(k, "Xe")
        Y = self.fresh.svar(k, "Ye")
        z = self.fresh.var("ze")
        placeholder = Formula(frozenset((X, Y, z)), ("eqf", X, Y),
                              ((X, z), (Y, z)), ())
        if sym is None:
            Sigma0 = {X: xi1, Y: xi2}
        else:
            fresh_args = tuple(self.fresh.svar(k, "Xa") for _ in range(sym.arity))
            Sigma0 = {X: xi1, Y: st.app(sym, fresh_args)}
        psi1 = self.apply_subst_formula(placeholder, Sigma0, ecs)
        if psi1 is None:
            return None
        probe = replace(ecs, ded=ecs.ded + tuple(
            (DED, Xq, t) for Xq, t in psi1.hyp_ded))
        probe = self.extend_mu1(probe, psi1.hyp_eq)
        if probe is None:
            return None
        restrict = self.vars2_of(ecs) | {Xq for Xq, _ in psi1.hyp_ded}
        mgss = self.compute_mgs(probe, restrict=restrict)
        if not mgss:
            return None
        Sigma = mgss[0]
        comp_sigma = self._compose_grounded(Sigma0, Sigma, placeholder.hyp_ded,
                                            self.vars2_of(ecs))

        def add_formula(member, e2):
            f2 = self.apply_subst_formula(placeholder, comp_sigma, e2)
            if f2 is None or self._formula_present(e2, f2):
                return e2
            return replace(e2, formulas=e2.formulas + (f2,))

        return self._branches(comp, Sigma, plus_extra=add_formula)

    def _compose_grounded(self, Sigma0, Sigma, hyp_ded, keep):
        """Sigma0.Sigma.Sigma1 where Sigma1 sends every still-pending
        second-order variable (not a system variable of `keep`) to a fresh
        public constant; computed once per rule application so that all
        members share the same recipes."""
        st = self.store
        comp_sigma = {k: st.apply(v, Sigma) for k, v in Sigma0.items()}
        for k, v in Sigma.items():
            if k not in comp_sigma:
                comp_sigma[k] = v
        pending = set()
        for X, _ in hyp_ded:
            x2 = st.apply(X, comp_sigma)
            pending |= st.vars2(x2)
        for v in list(comp_sigma.values()):
            pending |= st.vars2(v)
        pending -= set(keep)
        pending -= set(comp_sigma)
        inj = {X: self.fresh.const("a")
               for X in sorted(pending, key=lambda x: stable_var_key(st, x))}
        if inj:
            comp_sigma = {k: st.apply(v, inj) for k, v in comp_sigma.items()}
            comp_sigma.update(inj)
        return comp_sigma

    def _formula_present(self, ecs: ECS, f: Formula) -> bool:
        return any(g.head == f.head and g.hyp_eq == f.hyp_eq and
                   g.hyp_ded == f.hyp_ded for g in ecs.formulas)

    # -- rule (Rew) ----------------------------------------------------------------

    def _skeleton(self, rule_idx: int, p: tuple, k: int):
        """Canonical skeleton for (lhs, position); variables are keyed by
        (rule, position, frame size) so renegotiated applications are blocked
        by earlier recipe disequations."""
        st = self.store
        rule = self.rs.rules[rule_idx]
        key = (rule_idx, p, k)
        got = self._skel_vars.get(key)
        if got is not None:
            return got
        counter = [0]

        def build(t, pos):
            if pos == p or not (pos == () or p[:len(pos)] == pos):
                # at the target position or off the spine: fresh pair
                counter[0] += 1
                X = st.svar(("sk", rule_idx, p, k, counter[0]), k,
                            f"Xsk{counter[0]}")
                x = st.var(("sk1", rule_idx, p, k, counter[0]),
                           f"xsk{counter[0]}")
                return X, x, [(X, x, pos)]
            sym = st.sym(t)
            xs, ts, facts = [], [], []
            for i, c in enumerate(st.children(t)):
                X, x, fs = build(c, pos + (i,))
                xs.append(X)
                ts.append(x)
                facts.extend(fs)
            return st.app(sym, tuple(xs)), st.app(sym, tuple(ts)), facts

        xi, t, facts = build(rule.lhs, ())
        got = (xi, t, facts)
        self._skel_vars[key] = got
        return got

    def _positions(self, t: int, prefix=()):
        """Non-root non-variable positions of a rule left-hand side."""
        st = self.store
        out = []
        if st.kind(t) == APP:
            for i, c in enumerate(st.children(t)):
                pos = prefix + (i,)
                if st.kind(c) != VAR:
                    out.append(pos)
                    out.extend(self._positions(c, pos))
        return out

    def _rewf(self, xi: int, t: int, facts, rule_idx_filter=None):
        """RewF: one generic formula per rewrite rule against the skeleton."""
        st = self.store
        out = []
        for ridx, rule in enumerate(self.rs.rules):
            if rule_idx_filter is not None and ridx != rule_idx_filter:
                continue
            lhs, rhs = rule.lhs, rule.rhs
            ren = {v: self.fresh.var("rr")
                   for v in sorted(st.vars1(lhs),
                                   key=lambda x: stable_var_key(st, x))}
            lhs = st.apply(lhs, ren)
            rhs = st.apply(rhs, ren)
            qvars = set(ren.values())
            for X, x, _ in facts:
                qvars.add(X)
                qvars.add(x)
            f = Formula(frozenset(qvars), (DED, xi, rhs),
                        tuple((X, x) for X, x, _ in facts), ((lhs, t),))
            f = self.norm_formula(f)
            if f is not None:
                out.append((ridx, f))
        return out

    def case_rew(self, comp):
        """Rule (Rew): apply a rewrite rule on top of a knowledge-base entry,
        adding the corresponding deduction formulas to every member."""
        st = self.store
        for ep in comp:
            ecs = ep.ecs
            k = len(ecs.phi)
            for kb_idx, (xi0, u0) in enumerate(ecs.kb):
                for rule_idx, rule in enumerate(self.rs.rules):
                    for p in self._positions(rule.lhs):
                        got = self._try_rew(comp, ep, kb_idx, rule_idx, p, k)
                        if got is not None:
                            return got
        return None

    def _try_rew(self, comp, ep, kb_idx, rule_idx, p, k):
        st = self.store
        ecs = ep.ecs
        xi0, u0 = ecs.kb[kb_idx]
        xi, t, facts = self._skeleton(rule_idx, p, k)
        # the fresh variable sitting at position p in the skeleton
        Xp = None
        for X, x, pos in facts:
            if pos == p:
                Xp = X
        own = self._rewf(xi, t, facts, rule_idx_filter=rule_idx)
        if not own:
            return None
        psi0 = own[0][1]
        Sigma0 = {Xp: xi0}
        psi1 = self.apply_subst_formula(psi0, Sigma0, ecs)
        if psi1 is None:
            return None
        probe = replace(ecs, ded=ecs.ded + tuple(
            (DED, Xq, tq) for Xq, tq in psi1.hyp_ded))
        probe = self.extend_mu1(probe, psi1.hyp_eq)
        if probe is None:
            return None
        restrict = self.vars2_of(ecs) | {Xq for Xq, _ in psi1.hyp_ded}
        skel_hyps = tuple((X, x) for X, x, _ in facts)
        for Sigma in self.compute_mgs(probe, restrict=restrict):
            tag = (kb_idx, rule_idx, p, canonical_subst_key(st, Sigma))
            if tag in ecs.rew_done:
                continue
            comp_sigma = self._compose_grounded(Sigma0, Sigma, skel_hyps,
                                                self.vars2_of(ecs))
            variants = self._rewf(xi, t, facts)

            def add_formulas(member, e2, _tag=tag, _cs=comp_sigma,
                             _variants=variants):
                adds = []
                for _, psi in _variants:
                    f2 = self.apply_subst_formula(psi, _cs, e2)
                    if f2 is None:
                        continue
                    if self._formula_present(e2, f2):
                        continue
                    adds.append(f2)
                return replace(e2, formulas=e2.formulas + tuple(adds),
                               rew_done=e2.rew_done | {_tag})

            branches = self._branches(comp, Sigma, plus_extra=add_formulas)
            # mark the instance as done on the negative branch too
            if len(branches) == 2:
                branches[1] = [
                    replace(m, ecs=replace(m.ecs, rew_done=m.ecs.rew_done | {tag}))
                    if m.ecs is not None else m for m in branches[1]]
            return branches
        return None

    # -- extended symbolic stepping (E-In / E-Out / E-Comm etc.) ----------------

    def mirror_step(self, ecs: ECS, step, n_before: int) -> ECS | None:
        """Apply to the extended system exactly what a symbolic step applied
        to the plain one, plus the extended-only bookkeeping (output formula,
        internal-communication channel guard)."""
        st = self.store
        mu1 = ecs.mu1_dict()
        ded = ecs.ded
        phi = ecs.phi
        formulas = ecs.formulas
        for X, t in step.new_ded:
            ded += ((DED, X, st.apply(t, mu1)),)
        if step.out_entry is not None:
            entry = st.apply(step.out_entry, mu1)
            phi += (entry,)
            formulas += (Formula(frozenset(),
                                 (DED, st.axiom(n_before + 1), entry), (), ()),)
        if step.comm_channel is not None:
            ded += ((NDED, n_before, st.apply(step.comm_channel, mu1)),)
        out = ECS(phi, ded, ecs.mu1, ecs.diseqs1, ecs.mu2, ecs.diseqs2,
                  ecs.kb, formulas, ecs.rew_done)
        out = self.extend_mu1(out, list(step.sigma))
        if out is None:
            return None
        if step.negs:
            ds = []
            mu = out.mu1_dict()
            from .unification import apply_to_diseq as app_d

            for d in step.negs:
                d2 = app_d(st, d, mu)
                if d2 is FALSE:
                    return None
                if d2 is not TRUE:
                    ds.append(d2)
            out = replace(out, diseqs1=out.diseqs1 + tuple(ds))
        return out

    def estep(self, ep: EProc, sem: SymbolicSemantics):
        """All extended symbolic transitions of one extended process."""
        sp = SymProc(ep.procs, ep.cs)
        n_before = len(ep.cs.phi)
        out = []
        for step in sem.steps(sp):
            ecs2 = self.mirror_step(ep.ecs, step, n_before)
            if ecs2 is None:
                continue
            out.append((step.action,
                        EProc(step.target.procs, step.target.cs, ecs2,
                              ep.origin)))
        return out

    def rename_eproc(self, ep: EProc, mapping: dict[int, int]) -> EProc:
        """Rename second-order variables (same types) across cs and ecs, used
        to share one symbolic action label per tree edge."""
        st = self.store
        cs = ep.cs
        cs2 = CSys(cs.phi,
                   tuple((mapping.get(X, X), x) for X, x in cs.ded),
                   cs.mu, cs.diseqs)
        e = ep.ecs
        ded = tuple((DED, mapping.get(x[1], x[1]), x[2]) if x[0] == DED else x
                    for x in e.ded)
        mu2 = tuple(sorted(
            (mapping.get(v, v), st.apply(t, mapping)) for v, t in e.mu2))
        kb = tuple((st.apply(r, mapping), t) for r, t in e.kb)
        formulas = []
        for f in e.formulas:
            f2 = self.subst_formula_so(f, mapping)
            if f2 is not None:
                formulas.append(f2)
        diseqs2 = tuple(
            Diseq(d.qvars, tuple((st.apply(a, mapping), st.apply(b, mapping))
                                 for a, b in d.pairs)) for d in e.diseqs2)
        ecs2 = ECS(e.phi, ded, e.mu1, e.diseqs1, mu2, diseqs2, kb,
                   tuple(formulas), e.rew_done)
        return EProc(ep.procs, cs2, ecs2, ep.origin)

    # -- fixpoint drivers ---------------------------------------------------------

    def apply_case(self, vector):
        """Sat < Eq < Rew with simplification to fixpoint in between."""
        vector = self.simplify_vector(vector)
        progress = True
        while progress:
            progress = False
            for rule in (self.case_sat, self.case_eq, self.case_rew):
                for ci, comp in enumerate(vector):
                    got = rule(comp)
                    if got is not None:
                        self._tick()
                        vector[ci:ci + 1] = [list(b) for b in got if b]
                        vector = self.simplify_vector(vector)
                        progress = True
                        break
                if progress:
                    break
        return vector
