"""Constraint systems and the symbolic transition relation.

A constraint system keeps the symbolic frame, the deduction facts binding
input variables to typed second-order variables, the solved first-order
equations (as an idempotent substitution, eagerly propagated) and the
accumulated disequations.  The symbolic semantics produces one successor per
rule instance and per most general unifier modulo the theory.
"""

from __future__ import annotations

from dataclasses import dataclass

from .frames import Frame, eval_recipe
from .process import (Choice, Cond, Input, LetPat, Output, Par, Proc, State,
                      Zero, mkstate, proc_key, subst_proc)
from .rewriting import RewriteSystem
from .terms import TermStore, compose
from .unification import (Diseq, FALSE, TRUE, apply_to_diseq, mgu_modulo,
                          neg_mgu_modulo)


@dataclass(frozen=True)
class CSys:
    """(Phi, D1, E1) with E1 split into a solved substitution and
    disequations; the substitution is already applied everywhere."""

    phi: tuple  # frame entries (constructor terms, possibly open)
    ded: tuple  # ordered (X, x) deduction facts
    mu: tuple  # solved first-order equations, as sorted (var, term) pairs
    diseqs: tuple  # first-order Diseq objects

    def mu_dict(self) -> dict[int, int]:
        return dict(self.mu)

    def n_axioms(self) -> int:
        return len(self.phi)

    def fmt(self, store: TermStore) -> str:
        phi = ", ".join(f"ax{i+1}->{store.fmt(t)}" for i, t in enumerate(self.phi))
        ded = " & ".join(f"{store.fmt(X)}|-{store.fmt(x)}" for X, x in self.ded)
        mu = " & ".join(f"{store.fmt(v)}={store.fmt(t)}" for v, t in self.mu)
        dis = " & ".join(d.fmt(store) for d in self.diseqs)
        return f"Phi={{{phi}}} D={{{ded}}} E={{{mu}}} Dis={{{dis}}}"


EMPTY_CS = CSys((), (), (), ())


def cs_extend_mu(store: TermStore, cs: CSys, sigma: dict[int, int]) -> CSys | None:
    """Compose new solved equations into the system and re-simplify the
    disequations; None when a disequation becomes unsatisfiable."""
    if not sigma:
        return cs
    mu = compose(store, cs.mu_dict(), sigma)
    phi = tuple(store.apply(t, sigma) for t in cs.phi)
    ded = tuple((X, store.apply(x, sigma)) for X, x in cs.ded)
    diseqs = []
    for d in cs.diseqs:
        d2 = apply_to_diseq(store, d, sigma)
        if d2 is FALSE:
            return None
        if d2 is not TRUE:
            diseqs.append(d2)
    return CSys(phi, ded, tuple(sorted(mu.items())), tuple(diseqs))


def cs_add_diseqs(store: TermStore, cs: CSys, ds) -> CSys | None:
    diseqs = list(cs.diseqs)
    for d in ds:
        d2 = apply_to_diseq(store, d, {})
        if d2 is FALSE:
            return None
        if d2 is not TRUE:
            diseqs.append(d2)
    return CSys(cs.phi, cs.ded, cs.mu, tuple(diseqs))


@dataclass(frozen=True)
class SymProc:
    procs: tuple
    cs: CSys

    def fmt(self, store):
        ps = " | ".join(proc_key(p) for p in self.procs)
        return f"<{ps} ; {self.cs.fmt(store)}>"


def sym_init(p: Proc) -> SymProc:
    parts = p.parts if isinstance(p, Par) else (p,)
    parts = tuple(q for q in parts if not isinstance(q, Zero))
    return SymProc(tuple(sorted(parts, key=proc_key)), EMPTY_CS)


@dataclass(frozen=True)
class SymIn:
    chan_var: int  # Y
    term_var: int  # X

    def fmt(self, store):
        return f"in({store.fmt(self.chan_var)},{store.fmt(self.term_var)})"


@dataclass(frozen=True)
class SymOut:
    chan_var: int  # Y
    axiom: int

    def fmt(self, store):
        return f"out({store.fmt(self.chan_var)},ax{self.axiom})"


@dataclass(frozen=True)
class SymStep:
    """One symbolic transition plus the data an extended-system layer must
    mirror: the mgu-modulo element applied, the new deduction facts (already
    under that unifier), the new frame entry and else-branch disequations."""

    action: object  # SymIn | SymOut | "tau"
    target: "SymProc"
    comm_channel: int | None = None  # set on internal communication
    sigma: tuple = ()  # (var, term) pairs of the applied unifier
    new_ded: tuple = ()  # (svar, term) facts appended
    out_entry: int | None = None  # normalised term added to the frame
    negs: tuple = ()  # disequations added (else branches)


class SymbolicSemantics:
    """Fig.-2 style stepping; fresh variables drawn from the given
    deterministic generator."""

    def __init__(self, store: TermStore, rs: RewriteSystem, fresh=None):
        from .terms import GlobalFresh

        self.store = store
        self.rs = rs
        self.fresh = fresh if fresh is not None else GlobalFresh(store)

    def _succ(self, procs, i, new_parts, cs, action, comm_channel=None,
              sigma=(), new_ded=(), out_entry=None, negs=()):
        parts = procs[:i] + procs[i + 1:] + tuple(
            q for q in new_parts if not isinstance(q, Zero))
        return SymStep(action, SymProc(tuple(sorted(parts, key=proc_key)), cs),
                       comm_channel, tuple(sorted(sigma.items())) if
                       isinstance(sigma, dict) else sigma, new_ded, out_entry,
                       negs)

    def steps(self, sp: SymProc) -> list[SymStep]:
        st, rs = self.store, self.rs
        fr = self.fresh
        cs = sp.cs
        mu = cs.mu_dict()
        n = cs.n_axioms()
        out: list[SymStep] = []
        procs = sp.procs
        for i, p in enumerate(procs):
            if isinstance(p, Par):
                out.append(self._succ(procs, i, p.parts, cs, "tau"))
            elif isinstance(p, Cond):
                u = st.apply(p.lhs, mu)
                v = st.apply(p.rhs, mu)
                for sg in mgu_modulo(st, rs, [(u, v)], fr):
                    cs2 = cs_extend_mu(st, cs, sg)
                    if cs2 is not None:
                        out.append(self._succ(procs, i, (p.then_branch,), cs2,
                                              "tau", sigma=sg))
                neg = neg_mgu_modulo(st, rs, u, v, fresh=fr)
                if neg is not None:
                    cs2 = cs_add_diseqs(st, cs, neg)
                    if cs2 is not None:
                        out.append(self._succ(procs, i, (p.else_branch,), cs2,
                                              "tau", negs=tuple(neg)))
            elif isinstance(p, LetPat):
                u = st.apply(p.term, mu)
                pat = p.pattern  # pattern variables are globally fresh
                for sg in mgu_modulo(st, rs, [(pat, u)], fr):
                    cs2 = cs_extend_mu(st, cs, sg)
                    if cs2 is not None:
                        body = subst_proc(st, p.then_branch, sg)
                        out.append(self._succ(procs, i, (body,), cs2, "tau",
                                              sigma=sg))
                neg = neg_mgu_modulo(st, rs, pat, u,
                                     quantify=st.vars1(pat), fresh=fr)
                if neg is not None:
                    cs2 = cs_add_diseqs(st, cs, neg)
                    if cs2 is not None:
                        out.append(self._succ(procs, i, (p.else_branch,), cs2,
                                              "tau", negs=tuple(neg)))
            elif isinstance(p, Input):
                u = st.apply(p.channel, mu)
                Y = fr.svar(n, "Y")
                X = fr.svar(n, "X")
                y = fr.var("yc")
                for sg in mgu_modulo(st, rs, [(y, u)], fr):
                    facts = ((Y, st.apply(y, sg)), (X, p.var))
                    cs2 = CSys(cs.phi, cs.ded + facts, cs.mu, cs.diseqs)
                    cs2 = cs_extend_mu(st, cs2, sg)
                    if cs2 is not None:
                        out.append(self._succ(procs, i, (p.cont,), cs2,
                                              SymIn(Y, X), sigma=sg,
                                              new_ded=facts))
            elif isinstance(p, Output):
                u = st.apply(p.channel, mu)
                v = st.apply(p.term, mu)
                Y = fr.svar(n, "Y")
                y = fr.var("yc")
                for sg in mgu_modulo(st, rs, [(y, u), (v, v)], fr):
                    vterm = rs.normalize(st.apply(v, sg))
                    facts = ((Y, st.apply(y, sg)),)
                    cs2 = CSys(cs.phi + (vterm,), cs.ded + facts,
                               cs.mu, cs.diseqs)
                    cs2 = cs_extend_mu(st, cs2, sg)
                    if cs2 is not None:
                        out.append(self._succ(procs, i, (p.cont,), cs2,
                                              SymOut(Y, n + 1), sigma=sg,
                                              new_ded=facts, out_entry=vterm))
            elif isinstance(p, Choice):
                raise TypeError("choice must be desugared before symbolic execution")
        # internal communication between any output/input pair
        for i, p in enumerate(procs):
            if not isinstance(p, Output):
                continue
            for j, q in enumerate(procs):
                if i == j or not isinstance(q, Input):
                    continue
                u = st.apply(p.channel, mu)
                w = st.apply(q.channel, mu)
                v = st.apply(p.term, mu)
                for sg in mgu_modulo(st, rs, [(u, w), (v, v)], fr):
                    cs2 = cs_extend_mu(st, cs, sg)
                    if cs2 is None:
                        continue
                    vv = rs.normalize(st.apply(v, sg))
                    body = subst_proc(st, q.cont, {q.var: vv})
                    rest = tuple(r for k, r in enumerate(procs) if k not in (i, j))
                    parts = rest + tuple(
                        r for r in (p.cont, body) if not isinstance(r, Zero))
                    chan = rs.normalize(st.apply(u, sg))
                    out.append(SymStep(
                        "tau",
                        SymProc(tuple(sorted(parts, key=proc_key)), cs2),
                        comm_channel=chan,
                        sigma=tuple(sorted(sg.items()))))
        return out


# -- solutions ---------------------------------------------------------------


def derive_first_order(store: TermStore, rs: RewriteSystem, cs: CSys,
                       Sigma: dict[int, int]) -> dict[int, int] | None:
    """First-order solution induced by a ground second-order solution; None
    when some recipe fails to evaluate or a constraint breaks."""
    sigma: dict[int, int] = {}
    for X, x in cs.ded:
        xi = store.apply(X, Sigma)
        if store.vars2(xi):
            return None
        k = store.type_index(xi)
        entries = []
        ok = True
        for t in cs.phi[:k]:
            tv = store.apply(t, sigma)
            if store.vars1(tv):
                ok = False
                break
            entries.append(rs.normalize(tv))
        if not ok:
            return None
        val = eval_recipe(store, rs, xi, Frame(tuple(entries)))
        if val is None:
            return None
        xs = store.apply(x, sigma)
        if store.kind(xs) == 1:  # VAR: bind it
            sigma[xs] = val
            sigma = {v: store.apply(t, {xs: val}) for v, t in sigma.items()}
            sigma[xs] = val
        elif rs.normalize(xs) != val:
            return None
    # check every frame entry and deduction term became ground and a message
    for t in cs.phi:
        tv = store.apply(t, sigma)
        if store.vars1(tv) or not rs.is_message(tv):
            return None
    # disequations
    for d in cs.diseqs:
        if not diseq_holds_ground(store, d, sigma):
            return None
    # extend to eliminated variables
    full = dict(sigma)
    for v, t in cs.mu:
        full[v] = store.apply(t, sigma)
    return full


def diseq_holds_ground(store: TermStore, d: Diseq, sigma: dict[int, int]) -> bool:
    """forall qvars. \\/ a != b under a ground substitution for the free
    variables: holds iff the instantiated equalities are not simultaneously
    matchable by a choice of the quantified variables."""
    from .unification import mgu_first_order

    free_sigma = {k: v for k, v in sigma.items() if k not in d.qvars}
    eqs = [(store.apply(a, free_sigma), store.apply(b, free_sigma))
           for a, b in d.pairs]
    sol = mgu_first_order(store, eqs)
    if sol is None:
        return True
    # solution must only instantiate quantified variables
    return any(x not in d.qvars for x in sol)


def models(store: TermStore, rs: RewriteSystem, phi: Frame,
           Sigma: dict[int, int], sigma: dict[int, int], constraint) -> bool:
    """Satisfaction of one constraint; quantified disequations are decided
    by matching (complete for the ground instances used in tests)."""
    kind = constraint[0]
    if kind == "ded":
        _, X, x = constraint
        xi = store.apply(X, Sigma)
        val = eval_recipe(store, rs, xi, phi)
        return val is not None and val == rs.normalize(store.apply(x, sigma))
    if kind == "eq1":
        _, u, v = constraint
        return store.apply(u, sigma) == store.apply(v, sigma)
    if kind == "eq2":
        _, xi, zeta = constraint
        return store.apply(xi, Sigma) == store.apply(zeta, Sigma)
    if kind == "diseq1":
        return diseq_holds_ground(store, constraint[1], sigma)
    raise ValueError(constraint)
