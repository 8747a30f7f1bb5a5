"""Hash-consed term algebra for protocol terms and attacker recipes.

All terms live in a single append-only store with maximal sharing: a term is
an integer handle, and two structurally equal terms always have the same
handle.  Protocol (first-order) terms are built from names, first-order
variables and function applications; recipes (second-order terms) are built
from axioms, typed second-order variables, public constants and public
function applications.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

# node kinds
NAME = 0
VAR = 1  # first-order variable
AXIOM = 2  # ax_i, i >= 1
SVAR = 3  # second-order variable with a type index
APP = 4

# node flags
F_VAR1 = 1
F_VAR2 = 2
F_NAME = 4
F_AXIOM = 8
F_DESTR = 16
F_PRIV = 32

CONSTRUCTOR = "constructor"
DESTRUCTOR = "destructor"
CONSTANT = "constant"


class SignatureError(Exception):
    pass


@dataclass(frozen=True)
class Symbol:
    id: int
    name: str
    arity: int
    kind: str
    private: bool = False

    @property
    def is_constructor(self) -> bool:
        return self.kind == CONSTRUCTOR

    @property
    def is_destructor(self) -> bool:
        return self.kind == DESTRUCTOR

    @property
    def is_constant(self) -> bool:
        return self.kind == CONSTANT

    def __repr__(self):
        return f"Symbol({self.name}/{self.arity}, {self.kind})"


class TermStore:
    """Append-only interner for terms, recipes and function symbols.

    Thread safe for concurrent insertion; handles are plain ints so equality
    and hashing are O(1) everywhere else.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._table: dict[tuple, int] = {}
        self._nodes: list[tuple] = []
        self._flags: list[int] = []
        # minimal i such that the term lies in T_i (max axiom index/var type)
        self._types: list[int] = []
        self._symbols: dict[str, Symbol] = {}
        self._symbols_by_id: list[Symbol] = []
        self._name_strs: list[str] = []
        self._name_ids: dict[str, int] = {}
        self._var_strs: dict[int, str] = {}
        self._svar_strs: dict[int, str] = {}
        self._fresh_name = 0
        self._fresh_var = 0
        self._fresh_svar = 0
        self._fresh_const = 0
        self._fmt_memo: dict[int, str] = {}

    # -- symbols ----------------------------------------------------------

    def declare(self, name: str, arity: int, kind: str, private: bool = False) -> Symbol:
        with self._lock:
            if name in self._symbols:
                sym = self._symbols[name]
                if (sym.arity, sym.kind, sym.private) != (arity, kind, private):
                    raise SignatureError(f"symbol {name} redeclared inconsistently")
                return sym
            if arity < 0:
                raise SignatureError(f"negative arity for {name}")
            if kind == CONSTANT and arity != 0:
                raise SignatureError(f"constant {name} must have arity 0")
            if kind == CONSTANT and private:
                raise SignatureError(f"constant {name} cannot be private")
            sym = Symbol(len(self._symbols_by_id), name, arity, kind, private)
            self._symbols[name] = sym
            self._symbols_by_id.append(sym)
            return sym

    def symbol(self, name: str) -> Symbol:
        return self._symbols[name]

    def maybe_symbol(self, name: str) -> Symbol | None:
        return self._symbols.get(name)

    def constant(self, name: str) -> int:
        """Public constant from the open-ended set; created on demand."""
        sym = self._symbols.get(name)
        if sym is None:
            sym = self.declare(name, 0, CONSTANT)
        elif not sym.is_constant:
            raise SignatureError(f"{name} is not a constant")
        return self.app(sym, ())

    def fresh_constant(self, hint: str = "c") -> int:
        with self._lock:
            while True:
                self._fresh_const += 1
                name = f"{hint}#{self._fresh_const}"
                if name not in self._symbols:
                    return self.constant(name)

    def fmt_memo(self, t: int) -> str:
        """Memoised structural rendering; stable ordering key independent of
        handle allocation order."""
        got = self._fmt_memo.get(t)
        if got is None:
            got = self.fmt(t)
            self._fmt_memo[t] = got
        return got

    # -- interning --------------------------------------------------------

    def _intern(self, key: tuple, flags: int, ty: int) -> int:
        h = self._table.get(key)
        if h is not None:
            return h
        with self._lock:
            h = self._table.get(key)
            if h is not None:
                return h
            h = len(self._nodes)
            self._nodes.append(key)
            self._flags.append(flags)
            self._types.append(ty)
            self._table[key] = h
            return h

    def name(self, text: str) -> int:
        idx = self._name_ids.get(text)
        if idx is None:
            with self._lock:
                idx = self._name_ids.get(text)
                if idx is None:
                    idx = len(self._name_strs)
                    self._name_strs.append(text)
                    self._name_ids[text] = idx
        return self._intern((NAME, idx), F_NAME, 0)

    def fresh_name(self, hint: str = "n") -> int:
        with self._lock:
            self._fresh_name += 1
            return self.name(f"{hint}#{self._fresh_name}")

    def var(self, vid, text: str | None = None) -> int:
        """First-order variable; vid is an int (global counter space) or a
        tuple (deterministic namespaces for parallel workers)."""
        if text is not None:
            self._var_strs.setdefault(vid, text)
        if isinstance(vid, int) and vid > self._fresh_var:
            self._fresh_var = vid
        return self._intern((VAR, vid), F_VAR1, 0)

    def fresh_var(self, hint: str = "x") -> int:
        with self._lock:
            self._fresh_var += 1
            vid = self._fresh_var
            self._var_strs[vid] = f"{hint}#{vid}"
            return self.var(vid)

    def axiom(self, index: int) -> int:
        if index < 1:
            raise SignatureError(f"axiom index must be >= 1, got {index}")
        return self._intern((AXIOM, index), F_AXIOM, index)

    def svar(self, vid, type_index: int, text: str | None = None) -> int:
        if type_index < 0:
            raise SignatureError("second-order variable type must be >= 0")
        if text is not None:
            self._svar_strs.setdefault(vid, text)
        if isinstance(vid, int) and vid > self._fresh_svar:
            self._fresh_svar = vid
        return self._intern((SVAR, vid, type_index), F_VAR2, type_index)

    def fresh_svar(self, type_index: int, hint: str = "X") -> int:
        with self._lock:
            self._fresh_svar += 1
            vid = self._fresh_svar
            self._svar_strs[vid] = f"{hint}#{vid}"
            return self.svar(vid, type_index)

    def app(self, sym: Symbol, children: tuple[int, ...] | list[int]) -> int:
        children = tuple(children)
        if sym.arity != len(children):
            raise SignatureError(
                f"{sym.name}/{sym.arity} applied to {len(children)} arguments")
        flags = 0
        ty = 0
        for c in children:
            flags |= self._flags[c]
            if self._types[c] > ty:
                ty = self._types[c]
        if sym.is_destructor:
            flags |= F_DESTR
        if sym.private:
            flags |= F_PRIV
        return self._intern((APP, sym.id, children), flags, ty)

    # -- accessors --------------------------------------------------------

    def kind(self, t: int) -> int:
        return self._nodes[t][0]

    def node(self, t: int) -> tuple:
        return self._nodes[t]

    def sym(self, t: int) -> Symbol:
        return self._symbols_by_id[self._nodes[t][1]]

    def children(self, t: int) -> tuple[int, ...]:
        return self._nodes[t][2]

    def axiom_index(self, t: int) -> int:
        return self._nodes[t][1]

    def svar_type(self, t: int) -> int:
        return self._nodes[t][2]

    def flags(self, t: int) -> int:
        return self._flags[t]

    def type_index(self, t: int) -> int:
        """Minimal i with t in T_i: max over axiom indices and variable types."""
        return self._types[t]

    def is_ground1(self, t: int) -> bool:
        return not self._flags[t] & F_VAR1

    def is_ground2(self, t: int) -> bool:
        return not self._flags[t] & F_VAR2

    def is_constructor_term(self, t: int) -> bool:
        return not self._flags[t] & F_DESTR

    def is_first_order(self, t: int) -> bool:
        return not self._flags[t] & (F_VAR2 | F_AXIOM)

    def is_recipe_term(self, t: int) -> bool:
        return not self._flags[t] & (F_VAR1 | F_NAME | F_PRIV)

    # -- traversal --------------------------------------------------------

    def subterms(self, *ts: int) -> set[int]:
        seen: set[int] = set()
        stack = list(ts)
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            if self._nodes[t][0] == APP:
                stack.extend(self._nodes[t][2])
        return seen

    def dag_size(self, *ts: int) -> int:
        return len(self.subterms(*ts))

    def tree_size(self, t: int) -> int:
        if self._nodes[t][0] == APP:
            return 1 + sum(self.tree_size(c) for c in self._nodes[t][2])
        return 1

    def _collect(self, t: int, kind: int, out: set[int], seen: set[int]):
        if t in seen:
            return
        seen.add(t)
        node = self._nodes[t]
        if node[0] == kind:
            out.add(t)
        elif node[0] == APP:
            for c in node[2]:
                self._collect(c, kind, out, seen)

    def vars1(self, *ts: int) -> set[int]:
        out: set[int] = set()
        seen: set[int] = set()
        for t in ts:
            if self._flags[t] & F_VAR1:
                self._collect(t, VAR, out, seen)
        return out

    def vars2(self, *ts: int) -> set[int]:
        out: set[int] = set()
        seen: set[int] = set()
        for t in ts:
            if self._flags[t] & F_VAR2:
                self._collect(t, SVAR, out, seen)
        return out

    def names(self, *ts: int) -> set[int]:
        out: set[int] = set()
        seen: set[int] = set()
        for t in ts:
            if self._flags[t] & F_NAME:
                self._collect(t, NAME, out, seen)
        return out

    def axioms(self, *ts: int) -> set[int]:
        out: set[int] = set()
        seen: set[int] = set()
        for t in ts:
            if self._flags[t] & F_AXIOM:
                self._collect(t, AXIOM, out, seen)
        return out

    def occurs(self, v: int, t: int) -> bool:
        if v == t:
            return True
        node = self._nodes[t]
        if node[0] != APP:
            return False
        vk = self._nodes[v][0]
        if vk == VAR and not self._flags[t] & F_VAR1:
            return False
        if vk == SVAR and not self._flags[t] & F_VAR2:
            return False
        return any(self.occurs(v, c) for c in node[2])

    # -- substitution application -----------------------------------------

    def apply(self, t: int, subst: dict[int, int]) -> int:
        """Homomorphic replacement of variables; result is interned.

        Second-order bindings must respect types (image of X^i in T_i).
        """
        if not subst:
            return t
        memo: dict[int, int] = {}
        return self._apply(t, subst, memo)

    def _apply(self, t: int, subst: dict[int, int], memo: dict[int, int]) -> int:
        got = memo.get(t)
        if got is not None:
            return got
        node = self._nodes[t]
        k = node[0]
        if k == APP:
            if not self._flags[t] & (F_VAR1 | F_VAR2):
                memo[t] = t
                return t
            res = self.app(
                self._symbols_by_id[node[1]],
                tuple(self._apply(c, subst, memo) for c in node[2]))
        elif k in (VAR, SVAR):
            res = subst.get(t, t)
            if k == SVAR and res != t and self._types[res] > node[2]:
                raise SignatureError(
                    f"binding of {self.fmt(t)} to {self.fmt(res)} violates its type")
        else:
            res = t
        memo[t] = res
        return res

    # -- printing ----------------------------------------------------------

    def fmt(self, t: int) -> str:
        node = self._nodes[t]
        k = node[0]
        if k == NAME:
            return self._name_strs[node[1]]
        if k == VAR:
            return self._var_strs.get(node[1], f"x{node[1]}")
        if k == AXIOM:
            return f"ax{node[1]}"
        if k == SVAR:
            base = self._svar_strs.get(node[1], f"X{node[1]}")
            return f"{base}:{node[2]}"
        sym = self._symbols_by_id[node[1]]
        if not node[2]:
            return sym.name
        return f"{sym.name}({','.join(self.fmt(c) for c in node[2])})"

    def fmt_subst(self, subst: dict[int, int]) -> str:
        items = sorted(subst.items())
        inner = ", ".join(f"{self.fmt(k)} -> {self.fmt(v)}" for k, v in items)
        return "{" + inner + "}"


@dataclass
class Signature:
    """Partition of the function symbols: constructors, destructors, constants.

    Constants form the open-ended public set; they are created on demand in
    the shared store.
    """

    store: TermStore
    constructors: list[Symbol] = field(default_factory=list)
    destructors: list[Symbol] = field(default_factory=list)

    def add_constructor(self, name: str, arity: int, private: bool = False) -> Symbol:
        sym = self.store.declare(name, arity, CONSTRUCTOR, private)
        if sym not in self.constructors:
            self.constructors.append(sym)
        return sym

    def add_destructor(self, name: str, arity: int) -> Symbol:
        sym = self.store.declare(name, arity, DESTRUCTOR)
        if sym not in self.destructors:
            self.destructors.append(sym)
        return sym

    def public_constructors(self) -> list[Symbol]:
        return [s for s in self.constructors if not s.private]


def stable_var_key(store: TermStore, v: int):
    """Ordering key for variables that does not depend on handle values."""
    return repr(store.node(v))


class Fresh:
    """Deterministic fresh generator, namespaced by a tag tuple so that
    parallel workers produce identical structures regardless of scheduling."""

    def __init__(self, store: TermStore, tag: tuple = ()):
        self.store = store
        self.tag = tuple(tag)
        self.n = 0

    def _next(self):
        self.n += 1
        return self.tag + (self.n,)

    def _txt(self, hint, vid):
        return hint + "~" + ".".join(map(str, vid))

    def var(self, hint: str = "x") -> int:
        vid = self._next()
        return self.store.var(vid, self._txt(hint, vid))

    def svar(self, type_index: int, hint: str = "X") -> int:
        vid = self._next()
        return self.store.svar(vid, type_index, self._txt(hint, vid))

    def const(self, hint: str = "c") -> int:
        vid = self._next()
        return self.store.constant("@" + hint + "_" + "_".join(map(str, vid)))

    def sub(self, *key) -> "Fresh":
        return Fresh(self.store, self.tag + tuple(key))


class GlobalFresh:
    """Adapter using the store's global monotone counters (single-threaded
    contexts: parsing, tests, standalone oracles)."""

    def __init__(self, store: TermStore):
        self.store = store

    def var(self, hint: str = "x") -> int:
        return self.store.fresh_var(hint)

    def svar(self, type_index: int, hint: str = "X") -> int:
        return self.store.fresh_svar(type_index, hint)

    def const(self, hint: str = "c") -> int:
        return self.store.fresh_constant(hint)

    def sub(self, *key) -> "GlobalFresh":
        return self


def idempotent(store: TermStore, subst: dict[int, int]) -> bool:
    imvars: set[int] = set()
    for v in subst.values():
        imvars |= store.vars1(v) | store.vars2(v)
    return not (set(subst) & imvars)


def compose(store: TermStore, sigma: dict[int, int], theta: dict[int, int]) -> dict[int, int]:
    """Composition: t(compose(sigma, theta)) == (t sigma) theta."""
    out = {v: store.apply(t, theta) for v, t in sigma.items()}
    for v, t in theta.items():
        if v not in out:
            out[v] = t
    return {v: t for v, t in out.items() if v != t}
