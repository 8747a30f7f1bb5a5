"""Input files: signature, rewrite rules, processes and queries.

The grammar is ProVerif-flavoured:

    fun aenc/3.                 (* constructor *)
    fun id/1 [private].         (* private constructor *)
    free c, ok.                 (* public constants *)
    name ska, skb.              (* private names *)
    reduc adec(aenc(x,y,pk(z)),z) -> x.
    let B(s, p) = in(c, x). if snd(adec(x, s)) = p then ... else ... .
    let Main = B(ska, pk(skb)) | !2 Other.
    query trace_equiv(Main, Other).

Inside processes: 0, P | Q, P + Q, !n P, in(c,x).P, out(c,m).P,
if u = v then P else Q, let pat = u in P else Q, and macro calls.
<t1,...,tn> abbreviates right-nested pairs (pair/2 must be declared).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .process import (Choice, Cond, Input, LetPat, Output, Par, Proc, ZERO,
                      desugar_choice, freshen, subst_proc)
from .rewriting import RewriteError, RewriteSystem
from .terms import CONSTANT, Signature, SignatureError, TermStore


class ParseError(Exception):
    def __init__(self, msg, line=None, col=None):
        if line is not None:
            msg = f"{line}:{col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


QUERY_KINDS = {
    "trace_equiv": "trace_equiv",
    "trace_incl": "trace_incl",
    "inclusion": "trace_incl",
    "bisim": "bisim",
    "bisimilarity": "bisim",
    "sim": "simulation",
    "simulation": "simulation",
    "similarity": "similarity",
}


@dataclass
class Query:
    kind: str
    left: str
    right: str


@dataclass
class Spec:
    store: TermStore
    signature: Signature
    rewrite: RewriteSystem
    processes: dict[str, tuple[list[str], Proc]]
    queries: list[Query]

    def instantiate(self, name: str, desugar: bool = True) -> Proc:
        """Closed, alpha-renamed process for a 0-ary definition."""
        params, body = self.processes[name]
        if params:
            raise ParseError(f"process {name} expects arguments")
        p = freshen(self.store, body)
        if desugar:
            p = desugar_choice(self.store, p)
        return p


_TOKEN = re.compile(r"""
    (?P<ws>\s+|\(\*([^*]|\*(?!\)))*\*\))
  | (?P<arrow>->)
  | (?P<int>\d+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<punct>[()\[\],.=|+!<>/])
""", re.VERBOSE)

KEYWORDS = {"fun", "free", "name", "reduc", "let", "query", "in", "out",
            "if", "then", "else", "private"}


def _tokenize(text: str):
    toks = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        if not m.lastgroup == "ws":
            toks.append((m.lastgroup, lexeme, line, col))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    toks.append(("eof", "", line, col))
    return toks


class Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0
        self.store = TermStore()
        self.sig = Signature(self.store)
        self.rs = RewriteSystem(self.store, self.sig)
        self.names: dict[str, int] = {}
        self.consts: set[str] = set()
        self.processes: dict[str, tuple[list[str], Proc]] = {}
        self.queries: list[Query] = []

    # -- token helpers -----------------------------------------------------

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, lexeme):
        kind, lex, line, col = self.next()
        if lex != lexeme:
            raise ParseError(f"expected {lexeme!r}, found {lex!r}", line, col)
        return lex

    def error(self, msg):
        _, lex, line, col = self.peek()
        raise ParseError(msg + f" (at {lex!r})", line, col)

    # -- declarations -------------------------------------------------------

    def parse(self) -> Spec:
        while self.peek()[0] != "eof":
            kind, lex, line, col = self.peek()
            if lex == "fun":
                self._decl_fun()
            elif lex == "free":
                self._decl_free()
            elif lex == "name":
                self._decl_name()
            elif lex == "reduc":
                self._decl_reduc()
            elif lex == "let":
                self._decl_let()
            elif lex == "query":
                self._decl_query()
            else:
                self.error("expected a declaration")
        try:
            self.rs.validate()
        except RewriteError as e:
            raise ParseError(str(e)) from e
        for q in self.queries:
            for side in (q.left, q.right):
                if side not in self.processes:
                    raise ParseError(f"query references unknown process {side}")
                params, _ = self.processes[side]
                if params:
                    raise ParseError(
                        f"query process {side} must not take parameters")
        return Spec(self.store, self.sig, self.rs, self.processes, self.queries)

    def _ident(self):
        kind, lex, line, col = self.next()
        if kind != "id":
            raise ParseError(f"expected identifier, found {lex!r}", line, col)
        return lex

    def _decl_fun(self):
        self.expect("fun")
        name = self._ident()
        self.expect("/")
        kind, lex, line, col = self.next()
        if kind != "int":
            raise ParseError("expected arity", line, col)
        arity = int(lex)
        private = False
        if self.peek()[1] == "[":
            self.next()
            if self._ident() != "private":
                self.error("expected 'private'")
            self.expect("]")
            private = True
        try:
            self.sig.add_constructor(name, arity, private)
        except SignatureError as e:
            raise ParseError(str(e)) from e
        self.expect(".")

    def _decl_free(self):
        self.expect("free")
        while True:
            name = self._ident()
            self.store.constant(name)
            self.consts.add(name)
            if self.peek()[1] == ",":
                self.next()
            else:
                break
        self.expect(".")

    def _decl_name(self):
        self.expect("name")
        while True:
            name = self._ident()
            self.names[name] = self.store.name(name)
            if self.peek()[1] == ",":
                self.next()
            else:
                break
        self.expect(".")

    def _decl_reduc(self):
        self.expect("reduc")
        rule_vars: dict[str, int] = {}
        kind, root, line, col = self.next()
        if kind != "id":
            raise ParseError("rewrite lhs must be a destructor application",
                             line, col)
        self.expect("(")
        args = [self._term(env={}, rule_vars=rule_vars)]
        while self.peek()[1] == ",":
            self.next()
            args.append(self._term(env={}, rule_vars=rule_vars))
        self.expect(")")
        self.expect("->")
        rhs = self._term(env={}, rule_vars=rule_vars, rhs_of=True)
        self.expect(".")
        sym = self.store.maybe_symbol(root)
        if sym is None:
            sym = self.sig.add_destructor(root, len(args))
        elif not sym.is_destructor:
            raise ParseError(f"{root} is not a destructor", line, col)
        self.rs.add_rule(self.store.app(sym, tuple(args)), rhs)

    def _decl_let(self):
        self.expect("let")
        name = self._ident()
        params: list[str] = []
        if self.peek()[1] == "(":
            self.next()
            while True:
                params.append(self._ident())
                if self.peek()[1] == ",":
                    self.next()
                else:
                    break
            self.expect(")")
        self.expect("=")
        env = {p: self.store.fresh_var(p) for p in params}
        body = self._process(env)
        self.expect(".")
        if name in self.processes:
            raise ParseError(f"process {name} redefined")
        self.processes[name] = ([env[p] for p in params], body)

    def _decl_query(self):
        self.expect("query")
        kind = self._ident()
        if kind not in QUERY_KINDS:
            self.error(f"unknown query kind {kind!r}")
        self.expect("(")
        left = self._ident()
        self.expect(",")
        right = self._ident()
        self.expect(")")
        self.expect(".")
        self.queries.append(Query(QUERY_KINDS[kind], left, right))

    # -- terms ---------------------------------------------------------------

    def _term(self, env, rule_vars=None, pattern_vars=None, rhs_of=None):
        kind, lex, line, col = self.next()
        if lex == "<":
            parts = [self._term(env, rule_vars, pattern_vars, rhs_of)]
            while self.peek()[1] == ",":
                self.next()
                parts.append(self._term(env, rule_vars, pattern_vars, rhs_of))
            self.expect(">")
            pair = self.store.maybe_symbol("pair")
            if pair is None:
                raise ParseError("tuple syntax needs pair/2 declared", line, col)
            out = parts[-1]
            for p in reversed(parts[:-1]):
                out = self.store.app(pair, (p, out))
            return out
        if kind != "id":
            raise ParseError(f"expected a term, found {lex!r}", line, col)
        if self.peek()[1] == "(":
            sym = self.store.maybe_symbol(lex)
            if sym is None or sym.is_constant:
                raise ParseError(f"unknown function {lex!r}", line, col)
            self.next()
            args = []
            if self.peek()[1] != ")":
                while True:
                    args.append(self._term(env, rule_vars, pattern_vars, rhs_of))
                    if self.peek()[1] == ",":
                        self.next()
                    else:
                        break
            self.expect(")")
            if len(args) != sym.arity:
                raise ParseError(
                    f"{lex}/{sym.arity} applied to {len(args)} arguments",
                    line, col)
            return self.store.app(sym, tuple(args))
        # identifier: bound variable, declared constant, declared name,
        # rule/pattern variable
        if lex in env:
            return env[lex]
        if rule_vars is not None:
            if lex in rule_vars:
                return rule_vars[lex]
            if rhs_of is not None:
                raise ParseError(
                    f"variable {lex!r} of rhs not bound by lhs", line, col)
            v = self.store.fresh_var(lex)
            rule_vars[lex] = v
            return v
        sym = self.store.maybe_symbol(lex)
        if sym is not None and sym.is_constant:
            return self.store.app(sym, ())
        if lex in self.names:
            return self.names[lex]
        if pattern_vars is not None:
            if lex in pattern_vars:
                return pattern_vars[lex]
            v = self.store.fresh_var(lex)
            pattern_vars[lex] = v
            return v
        raise ParseError(f"unbound identifier {lex!r}", line, col)

    # -- processes -----------------------------------------------------------

    def _process(self, env) -> Proc:
        parts = [self._choice(env)]
        while self.peek()[1] == "|":
            self.next()
            parts.append(self._choice(env))
        return parts[0] if len(parts) == 1 else Par(tuple(parts))

    def _choice(self, env) -> Proc:
        p = self._prefix(env)
        while self.peek()[1] == "+":
            self.next()
            p = Choice(p, self._prefix(env))
        return p

    def _cont(self, env) -> Proc:
        """Optional '.P' continuation after in/out.  A 'let' directly after
        the dot always starts a new top-level definition; parenthesise
        '.(let ... in ...)' to continue with a pattern binding."""
        if self.peek()[1] == ".":
            nxt = self.toks[self.pos + 1][1]
            if nxt in ("0", "in", "out", "if", "(", "!") or \
                    self.toks[self.pos + 1][0] == "id" and nxt not in KEYWORDS:
                self.next()
                return self._prefix(env)
        return ZERO

    def _prefix(self, env) -> Proc:
        kind, lex, line, col = self.peek()
        if lex == "0":
            self.next()
            return ZERO
        if lex == "(":
            self.next()
            p = self._process(env)
            self.expect(")")
            return p
        if lex == "!":
            self.next()
            kind, n, line, col = self.next()
            if kind != "int":
                raise ParseError("expected replication bound", line, col)
            body = self._prefix(env)
            copies = tuple(freshen(self.store, body) for _ in range(int(n)))
            return Par(copies)
        if lex == "in":
            self.next()
            self.expect("(")
            chan = self._term(env)
            self.expect(",")
            var_name = self._ident()
            self.expect(")")
            v = self.store.fresh_var(var_name)
            inner = dict(env)
            inner[var_name] = v
            return Input(chan, v, self._cont(inner))
        if lex == "out":
            self.next()
            self.expect("(")
            chan = self._term(env)
            self.expect(",")
            term = self._term(env)
            self.expect(")")
            return Output(chan, term, self._cont(env))
        if lex == "if":
            self.next()
            lhs = self._term(env)
            self.expect("=")
            rhs = self._term(env)
            self.expect("then")
            then_branch = self._prefix(env)
            else_branch = ZERO
            if self.peek()[1] == "else":
                self.next()
                else_branch = self._prefix(env)
            return Cond(lhs, rhs, then_branch, else_branch)
        if lex == "let":
            self.next()
            pattern_vars: dict[str, int] = {}
            pat = self._term(env, pattern_vars=pattern_vars)
            self.expect("=")
            term = self._term(env)
            self.expect("in")
            inner = dict(env)
            inner.update(pattern_vars)
            then_branch = self._prefix(inner)
            else_branch = ZERO
            if self.peek()[1] == "else":
                self.next()
                else_branch = self._prefix(env)
            return LetPat(pat, term, then_branch, else_branch)
        if kind == "id" and lex not in KEYWORDS:
            self.next()
            if lex not in self.processes:
                raise ParseError(f"unknown process {lex!r}", line, col)
            params, body = self.processes[lex]
            args = []
            if self.peek()[1] == "(":
                self.next()
                if self.peek()[1] != ")":
                    while True:
                        args.append(self._term(env))
                        if self.peek()[1] == ",":
                            self.next()
                        else:
                            break
                self.expect(")")
            if len(args) != len(params):
                raise ParseError(
                    f"process {lex} expects {len(params)} arguments", line, col)
            return freshen(self.store,
                           subst_proc(self.store, body, dict(zip(params, args))))
        raise ParseError(f"expected a process, found {lex!r}", line, col)


def parse_text(text: str) -> Spec:
    return Parser(text).parse()


def parse_file(path: str) -> Spec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read())
