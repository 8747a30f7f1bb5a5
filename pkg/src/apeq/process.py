"""Plain processes, desugaring and the concrete labelled semantics.

Extended processes are multisets of closed processes plus a frame; the
transition relation follows the In/Out/Comm/Then/Else/Par rules, with native
non-deterministic choice and pattern-let also available (both desugarable).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count

from .frames import Frame, eval_recipe
from .rewriting import RewriteSystem, match
from .terms import TermStore


class Proc:
    __slots__ = ()


@dataclass(frozen=True)
class Zero(Proc):
    pass


@dataclass(frozen=True)
class Par(Proc):
    parts: tuple


@dataclass(frozen=True)
class Input(Proc):
    channel: int
    var: int
    cont: Proc


@dataclass(frozen=True)
class Output(Proc):
    channel: int
    term: int
    cont: Proc


@dataclass(frozen=True)
class Cond(Proc):
    lhs: int
    rhs: int
    then_branch: Proc
    else_branch: Proc


@dataclass(frozen=True)
class Choice(Proc):
    left: Proc
    right: Proc


@dataclass(frozen=True)
class LetPat(Proc):
    # pattern is a constructor term whose variables bind in then_branch
    pattern: int
    term: int
    then_branch: Proc
    else_branch: Proc


ZERO = Zero()


def subst_proc(store: TermStore, p: Proc, sigma: dict[int, int]) -> Proc:
    if not sigma or isinstance(p, Zero):
        return p
    if isinstance(p, Par):
        return Par(tuple(subst_proc(store, q, sigma) for q in p.parts))
    if isinstance(p, Input):
        inner = {k: v for k, v in sigma.items() if k != p.var}
        return Input(store.apply(p.channel, sigma), p.var,
                     subst_proc(store, p.cont, inner))
    if isinstance(p, Output):
        return Output(store.apply(p.channel, sigma), store.apply(p.term, sigma),
                      subst_proc(store, p.cont, sigma))
    if isinstance(p, Cond):
        return Cond(store.apply(p.lhs, sigma), store.apply(p.rhs, sigma),
                    subst_proc(store, p.then_branch, sigma),
                    subst_proc(store, p.else_branch, sigma))
    if isinstance(p, Choice):
        return Choice(subst_proc(store, p.left, sigma),
                      subst_proc(store, p.right, sigma))
    if isinstance(p, LetPat):
        inner = {k: v for k, v in sigma.items()
                 if k not in store.vars1(p.pattern)}
        return LetPat(p.pattern, store.apply(p.term, sigma),
                      subst_proc(store, p.then_branch, inner),
                      subst_proc(store, p.else_branch, sigma))
    raise TypeError(p)


def freshen(store: TermStore, p: Proc) -> Proc:
    """Alpha-rename every binder to a fresh variable (bound vars unique)."""
    if isinstance(p, Zero):
        return p
    if isinstance(p, Par):
        return Par(tuple(freshen(store, q) for q in p.parts))
    if isinstance(p, Input):
        v = store.fresh_var("x")
        return Input(p.channel, v,
                     freshen(store, subst_proc(store, p.cont, {p.var: v})))
    if isinstance(p, Output):
        return Output(p.channel, p.term, freshen(store, p.cont))
    if isinstance(p, Cond):
        return Cond(p.lhs, p.rhs, freshen(store, p.then_branch),
                    freshen(store, p.else_branch))
    if isinstance(p, Choice):
        return Choice(freshen(store, p.left), freshen(store, p.right))
    if isinstance(p, LetPat):
        ren = {v: store.fresh_var("p") for v in sorted(store.vars1(p.pattern))}
        then = subst_proc(store, p.then_branch, ren)
        return LetPat(store.apply(p.pattern, ren), p.term,
                      freshen(store, then), freshen(store, p.else_branch))
    raise TypeError(p)


def desugar_choice(store: TermStore, p: Proc) -> Proc:
    """Replace P + Q by the internal-communication encoding
    out(s,s) | in(s,_).P | in(s,_).Q on a fresh private name s."""
    if isinstance(p, (Zero,)):
        return p
    if isinstance(p, Par):
        return Par(tuple(desugar_choice(store, q) for q in p.parts))
    if isinstance(p, Input):
        return Input(p.channel, p.var, desugar_choice(store, p.cont))
    if isinstance(p, Output):
        return Output(p.channel, p.term, desugar_choice(store, p.cont))
    if isinstance(p, Cond):
        return Cond(p.lhs, p.rhs, desugar_choice(store, p.then_branch),
                    desugar_choice(store, p.else_branch))
    if isinstance(p, LetPat):
        return LetPat(p.pattern, p.term, desugar_choice(store, p.then_branch),
                      desugar_choice(store, p.else_branch))
    if isinstance(p, Choice):
        s = store.fresh_name("s")
        x = store.fresh_var("cx")
        y = store.fresh_var("cy")
        return Par((Output(s, s, ZERO),
                    Input(s, x, desugar_choice(store, p.left)),
                    Input(s, y, desugar_choice(store, p.right))))
    raise TypeError(p)


def proc_size(p: Proc) -> int:
    if isinstance(p, Zero):
        return 0
    if isinstance(p, Par):
        return 1 + sum(proc_size(q) for q in p.parts)
    if isinstance(p, (Input, Output)):
        return 1 + proc_size(p.cont)
    if isinstance(p, (Cond, LetPat)):
        return 1 + proc_size(p.then_branch) + proc_size(p.else_branch)
    if isinstance(p, Choice):
        return 1 + proc_size(p.left) + proc_size(p.right)
    raise TypeError(p)


# -- actions and extended processes -----------------------------------------


@dataclass(frozen=True)
class ActIn:
    channel: int  # recipe
    term: int  # recipe

    def fmt(self, store):
        return f"in({store.fmt(self.channel)},{store.fmt(self.term)})"


@dataclass(frozen=True)
class ActOut:
    channel: int  # recipe
    axiom: int  # index bound in the frame

    def fmt(self, store):
        return f"out({store.fmt(self.channel)},ax{self.axiom})"


@dataclass(frozen=True)
class State:
    procs: tuple  # multiset of processes, kept sorted for canonicity
    frame: Frame


def proc_key(p: Proc) -> str:
    got = p.__dict__.get("_key")
    if got is None:
        if isinstance(p, Zero):
            got = "0"
        elif isinstance(p, Par):
            got = "P(" + ",".join(proc_key(q) for q in p.parts) + ")"
        elif isinstance(p, Input):
            got = f"I({p.channel},{p.var},{proc_key(p.cont)})"
        elif isinstance(p, Output):
            got = f"O({p.channel},{p.term},{proc_key(p.cont)})"
        elif isinstance(p, Cond):
            got = (f"C({p.lhs},{p.rhs},{proc_key(p.then_branch)},"
                   f"{proc_key(p.else_branch)})")
        elif isinstance(p, Choice):
            got = f"+({proc_key(p.left)},{proc_key(p.right)})"
        else:
            got = (f"L({p.pattern},{p.term},{proc_key(p.then_branch)},"
                   f"{proc_key(p.else_branch)})")
        object.__setattr__(p, "_key", got)
    return got


def mkstate(procs, frame: Frame) -> State:
    parts = [q for q in procs if not isinstance(q, Zero)]
    parts.sort(key=proc_key)
    return State(tuple(parts), frame)


class Semantics:
    """Concrete transition relation over extended processes."""

    def __init__(self, store: TermStore, rs: RewriteSystem):
        self.store = store
        self.rs = rs

    def _msg(self, t: int) -> bool:
        return self.rs.is_message(t)

    def tau_steps(self, state: State) -> list[State]:
        st, rs = self.store, self.rs
        out: list[State] = []
        procs = state.procs
        for i, p in enumerate(procs):
            rest = procs[:i] + procs[i + 1:]
            if isinstance(p, Par):
                out.append(mkstate(rest + p.parts, state.frame))
            elif isinstance(p, Cond):
                if (self._msg(p.lhs) and self._msg(p.rhs)
                        and rs.normalize(p.lhs) == rs.normalize(p.rhs)):
                    out.append(mkstate(rest + (p.then_branch,), state.frame))
                else:
                    out.append(mkstate(rest + (p.else_branch,), state.frame))
            elif isinstance(p, LetPat):
                taken = False
                if self._msg(p.term):
                    theta = match(st, p.pattern, rs.normalize(p.term))
                    if theta is not None and all(self._msg(t) for t in theta.values()):
                        out.append(mkstate(
                            rest + (subst_proc(st, p.then_branch, theta),),
                            state.frame))
                        taken = True
                if not taken:
                    out.append(mkstate(rest + (p.else_branch,), state.frame))
            elif isinstance(p, Choice):
                out.append(mkstate(rest + (p.left,), state.frame))
                out.append(mkstate(rest + (p.right,), state.frame))
            elif isinstance(p, Output) and self._msg(p.channel) and self._msg(p.term):
                un = rs.normalize(p.channel)
                for j, q in enumerate(procs):
                    if j == i or not isinstance(q, Input):
                        continue
                    if not self._msg(q.channel):
                        continue
                    if rs.normalize(q.channel) != un:
                        continue
                    rest2 = tuple(r for k, r in enumerate(procs) if k not in (i, j))
                    body = subst_proc(st, q.cont, {q.var: rs.normalize(p.term)})
                    out.append(mkstate(rest2 + (p.cont, body), state.frame))
        return out

    def input_steps(self, state: State, act: ActIn) -> list[State]:
        st, rs = self.store, self.rs
        chan = eval_recipe(st, rs, act.channel, state.frame)
        term = eval_recipe(st, rs, act.term, state.frame)
        if chan is None or term is None:
            return []
        out = []
        for i, p in enumerate(state.procs):
            if not isinstance(p, Input) or not self._msg(p.channel):
                continue
            if rs.normalize(p.channel) != chan:
                continue
            rest = state.procs[:i] + state.procs[i + 1:]
            out.append(mkstate(
                rest + (subst_proc(st, p.cont, {p.var: term}),), state.frame))
        return out

    def output_steps(self, state: State, act: ActOut) -> list[State]:
        st, rs = self.store, self.rs
        if act.axiom != len(state.frame) + 1:
            return []
        chan = eval_recipe(st, rs, act.channel, state.frame)
        if chan is None:
            return []
        out = []
        for i, p in enumerate(state.procs):
            if not isinstance(p, Output):
                continue
            if not (self._msg(p.channel) and self._msg(p.term)):
                continue
            if rs.normalize(p.channel) != chan:
                continue
            rest = state.procs[:i] + state.procs[i + 1:]
            out.append(mkstate(rest + (p.cont,),
                               state.frame.extend(rs.normalize(p.term))))
        return out

    def step(self, state: State, action) -> list[State]:
        if action == "tau":
            return self.tau_steps(state)
        if isinstance(action, ActIn):
            return self.input_steps(state, action)
        if isinstance(action, ActOut):
            return self.output_steps(state, action)
        raise TypeError(action)

    def tau_closure(self, state: State) -> set[State]:
        seen = {state}
        stack = [state]
        while stack:
            s = stack.pop()
            for s2 in self.tau_steps(s):
                if s2 not in seen:
                    seen.add(s2)
                    stack.append(s2)
        return seen

    def available_outputs(self, state: State) -> list[int]:
        """Channel values on which some output is enabled."""
        rs = self.rs
        vals = []
        for p in state.procs:
            if isinstance(p, Output) and self._msg(p.channel) and self._msg(p.term):
                v = rs.normalize(p.channel)
                if v not in vals:
                    vals.append(v)
        return vals

    def available_inputs(self, state: State) -> list[int]:
        rs = self.rs
        vals = []
        for p in state.procs:
            if isinstance(p, Input) and self._msg(p.channel):
                v = rs.normalize(p.channel)
                if v not in vals:
                    vals.append(v)
        return vals


def replay_trace(store: TermStore, rs: RewriteSystem, state: State, actions):
    """Re-execute a trace; returns (True, final_states) when every action is
    enabled on some path, else (False, index of the first stuck action)."""
    sem = Semantics(store, rs)
    current = sem.tau_closure(state)
    for idx, act in enumerate(actions):
        nxt: set[State] = set()
        for s in current:
            for s2 in sem.step(s, act):
                nxt |= sem.tau_closure(s2)
        if not nxt:
            return False, idx
        current = nxt
    return True, current


def enumerate_traces(store: TermStore, rs: RewriteSystem, state: State,
                     term_universe, chan_universe, max_len: int,
                     budget: int = 200_000):
    """Exhaustive trace set using only recipes from the given universes.

    Yields (actions, final_state); raises TraceBudget when the budget is hit.
    """
    sem = Semantics(store, rs)
    work = [((), s) for s in sem.tau_closure(state)]
    seen = set(work)
    spent = 0
    while work:
        actions, s = work.pop()
        yield actions, s
        if len(actions) >= max_len:
            continue
        # outputs: channel recipes from the channel universe
        out_vals = sem.available_outputs(s)
        in_vals = sem.available_inputs(s)
        for cr in chan_universe:
            cv = eval_recipe(store, rs, cr, s.frame)
            if cv is None:
                continue
            if cv in out_vals:
                act = ActOut(cr, len(s.frame) + 1)
                for s2 in sem.output_steps(s, act):
                    for s3 in sem.tau_closure(s2):
                        spent += 1
                        if spent > budget:
                            raise TraceBudget(spent)
                        item = (actions + (act,), s3)
                        if item not in seen:
                            seen.add(item)
                            work.append(item)
            if cv in in_vals:
                for tr in term_universe(s.frame):
                    act = ActIn(cr, tr)
                    for s2 in sem.input_steps(s, act):
                        for s3 in sem.tau_closure(s2):
                            spent += 1
                            if spent > budget:
                                raise TraceBudget(spent)
                            item = (actions + (act,), s3)
                            if item not in seen:
                                seen.add(item)
                                work.append(item)


class TraceBudget(Exception):
    """Exhaustive enumeration exceeded its budget (explicit truncation)."""


# -- printing and alpha-invariant keys ---------------------------------------


def _san(s: str) -> str:
    return s.replace("#", "_")


def fmt_term_src(store: TermStore, t: int) -> str:
    """Parseable rendering of a term (fresh-name markers sanitised)."""
    k = store.kind(t)
    if k == 4:  # APP
        sym = store.sym(t)
        if not store.children(t):
            return sym.name
        inner = ",".join(fmt_term_src(store, c) for c in store.children(t))
        return f"{sym.name}({inner})"
    return _san(store.fmt(t))


def fmt_proc(store: TermStore, p: Proc) -> str:
    """Parseable rendering of a process."""
    if isinstance(p, Zero):
        return "0"
    if isinstance(p, Par):
        return "(" + " | ".join(fmt_proc(store, q) for q in p.parts) + ")"
    if isinstance(p, Input):
        return (f"in({fmt_term_src(store, p.channel)},{_san(store.fmt(p.var))})"
                + (f".{fmt_proc(store, p.cont)}" if not isinstance(p.cont, Zero) else ""))
    if isinstance(p, Output):
        return (f"out({fmt_term_src(store, p.channel)},{fmt_term_src(store, p.term)})"
                + (f".{fmt_proc(store, p.cont)}" if not isinstance(p.cont, Zero) else ""))
    if isinstance(p, Cond):
        s = (f"if {fmt_term_src(store, p.lhs)} = {fmt_term_src(store, p.rhs)} "
             f"then ({fmt_proc(store, p.then_branch)})")
        if not isinstance(p.else_branch, Zero):
            s += f" else ({fmt_proc(store, p.else_branch)})"
        return s
    if isinstance(p, Choice):
        return f"({fmt_proc(store, p.left)} + {fmt_proc(store, p.right)})"
    if isinstance(p, LetPat):
        s = (f"(let {fmt_term_src(store, p.pattern)} = {fmt_term_src(store, p.term)} "
             f"in ({fmt_proc(store, p.then_branch)})")
        if not isinstance(p.else_branch, Zero):
            s += f" else ({fmt_proc(store, p.else_branch)})"
        return s + ")"
    raise TypeError(p)


def alpha_key(store: TermStore, p: Proc, env=None) -> str:
    """Structural key invariant under renaming of bound variables."""
    if env is None:
        env = {}

    def term_key(t):
        k = store.kind(t)
        if k == 1 and t in env:
            return f"b{env[t]}"
        if k == 4:
            return (f"{store.sym(t).name}("
                    + ",".join(term_key(c) for c in store.children(t)) + ")")
        return _san(store.fmt(t))

    if isinstance(p, Zero):
        return "0"
    if isinstance(p, Par):
        return "(" + "|".join(sorted(alpha_key(store, q, env) for q in p.parts)) + ")"
    if isinstance(p, Input):
        env2 = dict(env)
        env2[p.var] = len(env2)
        return f"in({term_key(p.channel)}).{alpha_key(store, p.cont, env2)}"
    if isinstance(p, Output):
        return (f"out({term_key(p.channel)},{term_key(p.term)})."
                f"{alpha_key(store, p.cont, env)}")
    if isinstance(p, Cond):
        return (f"if({term_key(p.lhs)},{term_key(p.rhs)})"
                f"[{alpha_key(store, p.then_branch, env)}]"
                f"[{alpha_key(store, p.else_branch, env)}]")
    if isinstance(p, Choice):
        return (f"choice[{alpha_key(store, p.left, env)}]"
                f"[{alpha_key(store, p.right, env)}]")
    if isinstance(p, LetPat):
        env2 = dict(env)
        for v in sorted(store.vars1(p.pattern)):
            env2[v] = len(env2)
        def pat_key(t):
            k = store.kind(t)
            if k == 1:
                return f"b{env2[t]}"
            if k == 4:
                return (f"{store.sym(t).name}("
                        + ",".join(pat_key(c) for c in store.children(t)) + ")")
            return _san(store.fmt(t))
        return (f"let({pat_key(p.pattern)},{term_key(p.term)})"
                f"[{alpha_key(store, p.then_branch, env2)}]"
                f"[{alpha_key(store, p.else_branch, env)}]")
    raise TypeError(p)
