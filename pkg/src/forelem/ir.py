"""The loop IR: AST nodes, textual syntax, validation, def-use analysis.

A program is a list of declarations followed by a list of statements.
Loops iterate index sets over declared multisets (or over result sets
built earlier in the program); statements accumulate into named
accumulators or append tuples to result sets.

Textual grammar (canonical form produced by ``pretty``)::

    program   := decl* stmt*
    decl      := "multiset" NAME "(" field ":" type ("," field ":" type)* ")" ";"
               | "result" NAME "(" fields ")" ["output"] ";"
               | "acc" NAME ";"
               | "values" NAME "=" MULTISET "." FIELD ";"
    stmt      := "forelem" "(" IT ";" IT "in" ixs ")" ["@" method] block
               | "forall" "(" K "=" "1" ";" K "<=" INT ";" K "++" ")" block
               | "for" "(" K "=" "1" ";" K "<=" INT ";" K "++" ")" block
               | "for" "(" V "in" VALUES "[" K "]" ")" block
               | ACC sub sub? "+=" expr ";"          # sub := "[" expr "]"
               | ACC sub? "=" "0" ";"
               | RESULT ["[" K "]"] "+=" "(" expr ("," expr)* ")" ";"
               | RESULT "=" "union" "[" K "=" "1" ":" INT "]" "(" RESULT ")" ";"
    ixs       := "p" ["[" K "]"] NAME ["." FIELD "[" expr "]"
                                      | "." "distinct" "(" FIELD ")"]
    expr      := term ("+" term)* ; term := factor ("*" factor)*
    factor    := INT | FLOAT | STRING | "(" expr ")"
               | "sum" "[" K "=" "1" ":" INT "]" "(" expr ")"
               | MULTISET "[" IT "]" "." FIELD
               | ACC sub sub?
               | NAME                                 # bound loop variable

``#`` starts a comment running to end of line. Strings are
single-quoted with backslash escapes. A subscript on an accumulator or
result counts as a worker subscript when it is a bare variable bound by
an enclosing forall/for-range loop (or sum binder), otherwise as a cell
subscript. Accumulator cells default to 0; the only direct assignment
allowed is zeroing.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from forelem.multiset import FieldType

Loc = tuple[int, int]
_NOLOC: Loc = (0, 0)


def _loc_field() -> Loc:
    return field(default=_NOLOC, compare=False, repr=False)


# --- declarations ---

@dataclass(frozen=True)
class MultisetDecl:
    name: str
    fields: tuple[tuple[str, FieldType], ...]
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ResultDecl:
    name: str
    fields: tuple[tuple[str, FieldType], ...]
    output: bool = False
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class AccDecl:
    name: str
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ValuesDecl:
    """``values X = A.f;`` names the distinct-value set of a field."""

    name: str
    multiset: str
    field: str
    loc: Loc = _loc_field()


Decl = Union[MultisetDecl, ResultDecl, AccDecl, ValuesDecl]


# --- expressions ---

@dataclass(frozen=True)
class IntLit:
    value: int
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class FloatLit:
    value: float
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class StrLit:
    value: str
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class VarRef:
    name: str
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class FieldAccess:
    """``A[i].f`` -- field f of the row the iterator i is bound to."""

    multiset: str
    iterator: str
    field: str
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class AccRead:
    acc: str
    worker: Optional[str] = None
    cell: Optional["Expr"] = None
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class SumOverK:
    """``sum[k=1:N](e)`` -- e summed with k running 1..N."""

    var: str
    n: int
    body: "Expr"
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class BinOp:
    op: str  # '+' or '*'
    lhs: "Expr"
    rhs: "Expr"
    loc: Loc = _loc_field()


Expr = Union[IntLit, FloatLit, StrLit, VarRef, FieldAccess, AccRead, SumOverK, BinOp]


# --- index set expressions ---

@dataclass(frozen=True)
class IndexSetExpr:
    """Textual index set: pA, p[k]A, pA.f[e], pA.distinct(f)."""

    multiset: str
    worker: Optional[str] = None
    filter: Optional[tuple[str, Expr]] = None
    distinct: Optional[str] = None
    loc: Loc = _loc_field()


# --- statements ---

@dataclass(frozen=True)
class Forelem:
    iterator: str
    domain: IndexSetExpr
    body: tuple["Stmt", ...]
    method: Optional[str] = None  # 'scan' | 'hash' once iteration methods are chosen
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class Forall:
    var: str
    n: int
    body: tuple["Stmt", ...]
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ForRange:
    var: str
    n: int
    body: tuple["Stmt", ...]
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ForValues:
    """``for (l in X[k])`` -- iterate segment k of value set X."""

    var: str
    values: str
    worker: str
    body: tuple["Stmt", ...]
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class AccumInit:
    acc: str
    worker: Optional[str] = None
    cell: Optional[Expr] = None
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class Accumulate:
    acc: str
    worker: Optional[str]
    cell: Optional[Expr]
    delta: Expr
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ResultUnion:
    result: str
    worker: Optional[str]
    exprs: tuple[Expr, ...]
    loc: Loc = _loc_field()


@dataclass(frozen=True)
class ResultMerge:
    """``R = union[k=1:N](R);`` -- merge per-worker pools into the global set."""

    result: str
    var: str
    n: int
    loc: Loc = _loc_field()


Stmt = Union[Forelem, Forall, ForRange, ForValues, AccumInit, Accumulate,
             ResultUnion, ResultMerge]
LoopNode = (Forelem, Forall, ForRange, ForValues)


@dataclass(frozen=True)
class Program:
    decls: tuple[Decl, ...]
    body: tuple[Stmt, ...]

    def decl(self, name: str) -> Optional[Decl]:
        for d in self.decls:
            if d.name == name:
                return d
        return None

    def multiset_decls(self) -> dict[str, MultisetDecl]:
        return {d.name: d for d in self.decls if isinstance(d, MultisetDecl)}

    def result_decls(self) -> dict[str, ResultDecl]:
        return {d.name: d for d in self.decls if isinstance(d, ResultDecl)}

    def acc_names(self) -> set[str]:
        return {d.name for d in self.decls if isinstance(d, AccDecl)}

    def values_decls(self) -> dict[str, ValuesDecl]:
        return {d.name: d for d in self.decls if isinstance(d, ValuesDecl)}


class ParseError(Exception):
    def __init__(self, msg: str, loc: Loc):
        super().__init__(f"{loc[0]}:{loc[1]}: {msg}")
        self.msg = msg
        self.loc = loc


@dataclass(frozen=True)
class Diagnostic:
    loc: Loc
    message: str

    def __str__(self) -> str:
        return f"{self.loc[0]}:{self.loc[1]}: {self.message}"


# --- tokenizer ---

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<float>\d+\.\d+)
  | (?P<int>\d+)
  | (?P<str>'(?:\\.|[^'\\])*')
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\+\+|\+=|<=|[{}()\[\];,.=+*:@])
""", re.VERBOSE)

_KEYWORDS = {"multiset", "result", "output", "acc", "values",
             "forelem", "forall", "for", "in", "sum", "union", "distinct"}


@dataclass(frozen=True)
class _Token:
    kind: str  # 'id' 'int' 'float' 'str' 'op' 'eof'
    text: str
    loc: Loc


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", (line, col))
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind not in ("ws", "comment"):
            tokens.append(_Token(kind, tok, (line, col)))
            col += len(tok)
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("eof", "", (line, col)))
    return tokens


def _unquote(text: str) -> str:
    out, i = [], 1
    while i < len(text) - 1:
        c = text[i]
        if c == "\\":
            i += 1
            c = text[i]
        out.append(c)
        i += 1
    return "".join(out)


def _quote(value: str) -> str:
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


# --- parser ---

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.pos = 0
        self.decls: list[Decl] = []
        self.kinds: dict[str, str] = {}  # name -> multiset|result|acc|values
        self.worker_vars: list[str] = []  # forall/for-range/sum binders in scope

    def peek(self, ahead: int = 0) -> _Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def error(self, msg: str, tok: Optional[_Token] = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(msg, tok.loc)

    def expect(self, text: str) -> _Token:
        t = self.next()
        if t.text != text:
            raise self.error(f"expected {text!r}, found {t.text or 'end of input'!r}", t)
        return t

    def expect_id(self) -> _Token:
        t = self.next()
        if t.kind != "id" or t.text in _KEYWORDS:
            raise self.error(f"expected identifier, found {t.text or 'end of input'!r}", t)
        return t

    def expect_int(self) -> int:
        t = self.next()
        if t.kind != "int":
            raise self.error(f"expected integer, found {t.text!r}", t)
        return int(t.text)

    def at(self, text: str) -> bool:
        return self.peek().text == text

    def declared(self, name: str, tok: _Token) -> str:
        kind = self.kinds.get(name)
        if kind is None:
            raise self.error(f"undeclared name {name!r}", tok)
        return kind

    # declarations

    def parse_fields(self) -> tuple[tuple[str, FieldType], ...]:
        self.expect("(")
        fields = []
        while True:
            fname = self.expect_id().text
            self.expect(":")
            ftok = self.next()
            if ftok.kind != "id":
                raise self.error("expected field type", ftok)
            fields.append((fname, FieldType.parse(ftok.text)))
            if not self.at(","):
                break
            self.next()
        self.expect(")")
        return tuple(fields)

    def add_decl(self, decl: Decl, kind: str, tok: _Token) -> None:
        if decl.name in self.kinds:
            raise self.error(f"duplicate declaration of {decl.name!r}", tok)
        self.kinds[decl.name] = kind
        self.decls.append(decl)

    def parse_decl(self) -> None:
        t = self.next()
        if t.text == "multiset":
            name = self.expect_id()
            fields = self.parse_fields()
            self.expect(";")
            self.add_decl(MultisetDecl(name.text, fields, loc=t.loc), "multiset", name)
        elif t.text == "result":
            name = self.expect_id()
            fields = self.parse_fields()
            output = False
            if self.at("output"):
                self.next()
                output = True
            self.expect(";")
            self.add_decl(ResultDecl(name.text, fields, output, loc=t.loc), "result", name)
        elif t.text == "acc":
            name = self.expect_id()
            self.expect(";")
            self.add_decl(AccDecl(name.text, loc=t.loc), "acc", name)
        elif t.text == "values":
            name = self.expect_id()
            self.expect("=")
            ms = self.expect_id()
            if self.declared(ms.text, ms) not in ("multiset", "result"):
                raise self.error(f"{ms.text!r} is not a multiset", ms)
            self.expect(".")
            fname = self.expect_id().text
            self.expect(";")
            self.add_decl(ValuesDecl(name.text, ms.text, fname, loc=t.loc), "values", name)
        else:  # pragma: no cover - callers check the leading keyword
            raise self.error(f"expected declaration, found {t.text!r}", t)

    # expressions

    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while self.at("+"):
            op = self.next()
            e = BinOp("+", e, self.parse_term(), loc=op.loc)
        return e

    def parse_term(self) -> Expr:
        e = self.parse_factor()
        while self.at("*"):
            op = self.next()
            e = BinOp("*", e, self.parse_factor(), loc=op.loc)
        return e

    def parse_factor(self) -> Expr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return IntLit(int(t.text), loc=t.loc)
        if t.kind == "float":
            self.next()
            return FloatLit(float(t.text), loc=t.loc)
        if t.kind == "str":
            self.next()
            return StrLit(_unquote(t.text), loc=t.loc)
        if t.text == "(":
            self.next()
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.text == "sum":
            self.next()
            var, n = self.parse_k_binder()
            self.expect("(")
            self.worker_vars.append(var)
            body = self.parse_expr()
            self.worker_vars.pop()
            self.expect(")")
            return SumOverK(var, n, body, loc=t.loc)
        if t.kind == "id" and t.text not in _KEYWORDS:
            return self.parse_name_expr()
        raise self.error(f"expected expression, found {t.text or 'end of input'!r}", t)

    def parse_k_binder(self) -> tuple[str, int]:
        """Parse ``[k=1:N]`` after sum/union."""
        self.expect("[")
        var = self.expect_id().text
        self.expect("=")
        one = self.expect_int()
        if one != 1:
            raise self.error("reduction ranges start at 1")
        self.expect(":")
        n = self.expect_int()
        self.expect("]")
        return var, n

    def parse_name_expr(self) -> Expr:
        name = self.expect_id()
        kind = self.kinds.get(name.text)
        if kind in ("multiset", "result"):
            self.expect("[")
            it = self.expect_id().text
            self.expect("]")
            self.expect(".")
            fname = self.expect_id().text
            return FieldAccess(name.text, it, fname, loc=name.loc)
        if kind == "acc":
            worker, cell = self.parse_acc_subscripts()
            return AccRead(name.text, worker, cell, loc=name.loc)
        if kind == "values":
            raise self.error(f"value set {name.text!r} cannot appear in an expression", name)
        return VarRef(name.text, loc=name.loc)

    def parse_acc_subscripts(self) -> tuple[Optional[str], Optional[Expr]]:
        subs: list[Expr] = []
        while self.at("[") and len(subs) < 2:
            self.next()
            subs.append(self.parse_expr())
            self.expect("]")
        worker: Optional[str] = None
        if subs and isinstance(subs[0], VarRef) and subs[0].name in self.worker_vars:
            worker = subs[0].name
            subs = subs[1:]
        if len(subs) > 1:
            raise self.error("at most one cell subscript after the worker subscript")
        cell = subs[0] if subs else None
        return worker, cell

    # index sets

    def parse_index_set(self) -> IndexSetExpr:
        t = self.expect_id()
        worker: Optional[str] = None
        if t.text == "p" and self.at("["):
            self.next()
            wtok = self.expect_id()
            if wtok.text not in self.worker_vars:
                raise self.error(f"{wtok.text!r} is not bound by an enclosing parallel loop", wtok)
            worker = wtok.text
            self.expect("]")
            name = self.expect_id().text
        else:
            if not t.text.startswith("p") or len(t.text) < 2:
                raise self.error(f"expected index set (pName), found {t.text!r}", t)
            name = t.text[1:]
        if self.declared(name, t) not in ("multiset", "result"):
            raise self.error(f"{name!r} is not a multiset or result", t)
        filt: Optional[tuple[str, Expr]] = None
        distinct: Optional[str] = None
        if self.at("."):
            self.next()
            fname = self.next()
            if fname.text == "distinct":
                self.expect("(")
                distinct = self.expect_id().text
                self.expect(")")
            elif fname.kind == "id":
                self.expect("[")
                filt = (fname.text, self.parse_expr())
                self.expect("]")
            else:
                raise self.error("expected field name or distinct(...)", fname)
        return IndexSetExpr(name, worker, filt, distinct, loc=t.loc)

    # statements

    def parse_block(self) -> tuple[Stmt, ...]:
        self.expect("{")
        body = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                raise self.error("unterminated block")
            body.append(self.parse_stmt())
        self.next()
        return tuple(body)

    def parse_stmt(self) -> Stmt:
        t = self.peek()
        if t.text == "forelem":
            return self.parse_forelem()
        if t.text == "forall":
            return self.parse_counted_loop(parallel=True)
        if t.text == "for":
            if self.peek(3).text == "in":
                return self.parse_for_values()
            return self.parse_counted_loop(parallel=False)
        if t.kind == "id" and t.text not in _KEYWORDS:
            return self.parse_simple_stmt()
        raise self.error(f"expected statement, found {t.text or 'end of input'!r}", t)

    def parse_forelem(self) -> Forelem:
        kw = self.expect("forelem")
        self.expect("(")
        it = self.expect_id()
        self.expect(";")
        it2 = self.expect_id()
        if it2.text != it.text:
            raise self.error(f"iterator mismatch: {it.text!r} vs {it2.text!r}", it2)
        self.expect("in")
        ixs = self.parse_index_set()
        self.expect(")")
        method: Optional[str] = None
        if self.at("@"):
            self.next()
            mtok = self.expect_id()
            if mtok.text not in ("scan", "hash"):
                raise self.error(f"unknown iteration method {mtok.text!r}", mtok)
            method = mtok.text
        body = self.parse_block()
        return Forelem(it.text, ixs, body, method, loc=kw.loc)

    def parse_counted_loop(self, parallel: bool) -> Stmt:
        kw = self.next()
        self.expect("(")
        var = self.expect_id().text
        self.expect("=")
        if self.expect_int() != 1:
            raise self.error("counted loops start at 1")
        self.expect(";")
        if self.expect_id().text != var:
            raise self.error(f"loop variable mismatch in {kw.text} header")
        self.expect("<=")
        n = self.expect_int()
        self.expect(";")
        if self.expect_id().text != var:
            raise self.error(f"loop variable mismatch in {kw.text} header")
        self.expect("++")
        self.expect(")")
        self.worker_vars.append(var)
        body = self.parse_block()
        self.worker_vars.pop()
        cls = Forall if parallel else ForRange
        return cls(var, n, body, loc=kw.loc)

    def parse_for_values(self) -> ForValues:
        kw = self.expect("for")
        self.expect("(")
        var = self.expect_id().text
        self.expect("in")
        vname = self.expect_id()
        if self.declared(vname.text, vname) != "values":
            raise self.error(f"{vname.text!r} is not a declared value set", vname)
        self.expect("[")
        wtok = self.expect_id()
        if wtok.text not in self.worker_vars:
            raise self.error(f"{wtok.text!r} is not bound by an enclosing parallel loop", wtok)
        self.expect("]")
        self.expect(")")
        body = self.parse_block()
        return ForValues(var, vname.text, wtok.text, body, loc=kw.loc)

    def parse_simple_stmt(self) -> Stmt:
        name = self.expect_id()
        kind = self.declared(name.text, name)
        if kind == "acc":
            worker, cell = self.parse_acc_subscripts()
            op = self.next()
            if op.text == "+=":
                delta = self.parse_expr()
                self.expect(";")
                return Accumulate(name.text, worker, cell, delta, loc=name.loc)
            if op.text == "=":
                zero = self.next()
                if zero.text not in ("0", "0.0"):
                    raise self.error("accumulators may only be assigned 0", zero)
                self.expect(";")
                return AccumInit(name.text, worker, cell, loc=name.loc)
            raise self.error(f"expected '+=' or '= 0' after accumulator, found {op.text!r}", op)
        if kind == "result":
            worker: Optional[str] = None
            if self.at("["):
                self.next()
                wtok = self.expect_id()
                if wtok.text not in self.worker_vars:
                    raise self.error(
                        f"{wtok.text!r} is not bound by an enclosing parallel loop", wtok)
                worker = wtok.text
                self.expect("]")
            op = self.next()
            if op.text == "+=":
                self.expect("(")
                exprs = [self.parse_expr()]
                while self.at(","):
                    self.next()
                    exprs.append(self.parse_expr())
                self.expect(")")
                self.expect(";")
                return ResultUnion(name.text, worker, tuple(exprs), loc=name.loc)
            if op.text == "=" and worker is None:
                self.expect("union")
                var, n = self.parse_k_binder()
                self.expect("(")
                inner = self.expect_id()
                if inner.text != name.text:
                    raise self.error("union must merge the result set into itself", inner)
                self.expect(")")
                self.expect(";")
                return ResultMerge(name.text, var, n, loc=name.loc)
            raise self.error(f"expected '+=' after result set, found {op.text!r}", op)
        raise self.error(f"{name.text!r} ({kind}) cannot start a statement", name)

    def parse_program(self) -> Program:
        while self.peek().text in ("multiset", "result", "acc", "values"):
            self.parse_decl()
        body = []
        while self.peek().kind != "eof":
            body.append(self.parse_stmt())
        return Program(tuple(self.decls), tuple(body))


def parse_ir(text: str) -> Program:
    return _Parser(_tokenize(text)).parse_program()


# --- pretty-printer ---

def _fmt_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, FloatLit):
        return repr(e.value)
    if isinstance(e, StrLit):
        return _quote(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, FieldAccess):
        return f"{e.multiset}[{e.iterator}].{e.field}"
    if isinstance(e, AccRead):
        return e.acc + _fmt_subs(e.worker, e.cell)
    if isinstance(e, SumOverK):
        return f"sum[{e.var}=1:{e.n}]({_fmt_expr(e.body)})"
    if isinstance(e, BinOp):
        my = 2 if e.op == "*" else 1
        s = f"{_fmt_expr(e.lhs, my)} {e.op} {_fmt_expr(e.rhs, my + 1)}"
        return f"({s})" if my < prec else s
    raise TypeError(f"not an expression: {e!r}")


def _fmt_subs(worker: Optional[str], cell: Optional[Expr]) -> str:
    s = ""
    if worker is not None:
        s += f"[{worker}]"
    if cell is not None:
        s += f"[{_fmt_expr(cell)}]"
    return s


def _fmt_ixs(ixs: IndexSetExpr) -> str:
    s = "p"
    if ixs.worker is not None:
        s += f"[{ixs.worker}]"
    s += ixs.multiset
    if ixs.filter is not None:
        s += f".{ixs.filter[0]}[{_fmt_expr(ixs.filter[1])}]"
    elif ixs.distinct is not None:
        s += f".distinct({ixs.distinct})"
    return s


def _fmt_fields(fields: Sequence[tuple[str, FieldType]]) -> str:
    return ", ".join(f"{n}: {t.value}" for n, t in fields)


def _fmt_stmt(stmt: Stmt, out: list[str], depth: int) -> None:
    pad = "  " * depth
    if isinstance(stmt, Forelem):
        method = f" @{stmt.method}" if stmt.method else ""
        out.append(f"{pad}forelem ({stmt.iterator}; {stmt.iterator} in "
                   f"{_fmt_ixs(stmt.domain)}){method} {{")
        for s in stmt.body:
            _fmt_stmt(s, out, depth + 1)
        out.append(pad + "}")
    elif isinstance(stmt, (Forall, ForRange)):
        kw = "forall" if isinstance(stmt, Forall) else "for"
        v = stmt.var
        out.append(f"{pad}{kw} ({v} = 1; {v} <= {stmt.n}; {v}++) {{")
        for s in stmt.body:
            _fmt_stmt(s, out, depth + 1)
        out.append(pad + "}")
    elif isinstance(stmt, ForValues):
        out.append(f"{pad}for ({stmt.var} in {stmt.values}[{stmt.worker}]) {{")
        for s in stmt.body:
            _fmt_stmt(s, out, depth + 1)
        out.append(pad + "}")
    elif isinstance(stmt, AccumInit):
        out.append(f"{pad}{stmt.acc}{_fmt_subs(stmt.worker, stmt.cell)} = 0;")
    elif isinstance(stmt, Accumulate):
        out.append(f"{pad}{stmt.acc}{_fmt_subs(stmt.worker, stmt.cell)} "
                   f"+= {_fmt_expr(stmt.delta)};")
    elif isinstance(stmt, ResultUnion):
        sub = f"[{stmt.worker}]" if stmt.worker is not None else ""
        args = ", ".join(_fmt_expr(e) for e in stmt.exprs)
        out.append(f"{pad}{stmt.result}{sub} += ({args});")
    elif isinstance(stmt, ResultMerge):
        out.append(f"{pad}{stmt.result} = union[{stmt.var}=1:{stmt.n}]({stmt.result});")
    else:
        raise TypeError(f"not a statement: {stmt!r}")


def pretty(program: Program) -> str:
    out: list[str] = []
    for d in program.decls:
        if isinstance(d, MultisetDecl):
            out.append(f"multiset {d.name}({_fmt_fields(d.fields)});")
        elif isinstance(d, ResultDecl):
            suffix = " output" if d.output else ""
            out.append(f"result {d.name}({_fmt_fields(d.fields)}){suffix};")
        elif isinstance(d, AccDecl):
            out.append(f"acc {d.name};")
        else:
            out.append(f"values {d.name} = {d.multiset}.{d.field};")
    if program.decls and program.body:
        out.append("")
    for s in program.body:
        _fmt_stmt(s, out, 0)
    return "\n".join(out) + "\n"


# --- tree navigation ---

Path = tuple[int, ...]


def stmt_body(stmt: Stmt) -> Optional[tuple[Stmt, ...]]:
    return stmt.body if isinstance(stmt, LoopNode) else None


def with_body(stmt: Stmt, body: Sequence[Stmt]) -> Stmt:
    return dataclasses.replace(stmt, body=tuple(body))


def iter_stmts(program: Program) -> Iterator[tuple[Path, Stmt]]:
    """Preorder walk yielding (path, statement)."""
    def walk(stmts: Sequence[Stmt], prefix: Path) -> Iterator[tuple[Path, Stmt]]:
        for i, s in enumerate(stmts):
            path = prefix + (i,)
            yield path, s
            body = stmt_body(s)
            if body:
                yield from walk(body, path)
    yield from walk(program.body, ())


def get_stmt(program: Program, path: Path) -> Stmt:
    stmts: Sequence[Stmt] = program.body
    stmt = None
    for i in path:
        stmt = stmts[i]
        stmts = stmt_body(stmt) or ()
    if stmt is None:
        raise IndexError("empty path")
    return stmt


def splice(program: Program, path: Path, replacement: Sequence[Stmt]) -> Program:
    """Replace the statement at path with zero or more statements."""
    def rebuild(stmts: Sequence[Stmt], path: Path) -> tuple[Stmt, ...]:
        i = path[0]
        if len(path) == 1:
            return tuple(stmts[:i]) + tuple(replacement) + tuple(stmts[i + 1:])
        inner = rebuild(stmt_body(stmts[i]), path[1:])
        return tuple(stmts[:i]) + (with_body(stmts[i], inner),) + tuple(stmts[i + 1:])
    return dataclasses.replace(program, body=rebuild(program.body, path))


def iter_exprs(stmt: Stmt, recurse: bool = True) -> Iterator[Expr]:
    """All expressions appearing in a statement (and its body if recurse)."""
    def sub(e: Expr) -> Iterator[Expr]:
        yield e
        if isinstance(e, BinOp):
            yield from sub(e.lhs)
            yield from sub(e.rhs)
        elif isinstance(e, SumOverK):
            yield from sub(e.body)
        elif isinstance(e, AccRead) and e.cell is not None:
            yield from sub(e.cell)

    if isinstance(stmt, Forelem):
        if stmt.domain.filter is not None:
            yield from sub(stmt.domain.filter[1])
    elif isinstance(stmt, (AccumInit, Accumulate)):
        if stmt.cell is not None:
            yield from sub(stmt.cell)
        if isinstance(stmt, Accumulate):
            yield from sub(stmt.delta)
    elif isinstance(stmt, ResultUnion):
        for e in stmt.exprs:
            yield from sub(e)
    if recurse:
        for s in stmt_body(stmt) or ():
            yield from iter_exprs(s, True)


def map_exprs(stmt: Stmt, fn) -> Stmt:
    """Rebuild a statement with fn applied bottom-up to every expression."""
    def sub(e: Expr) -> Expr:
        if isinstance(e, BinOp):
            e = dataclasses.replace(e, lhs=sub(e.lhs), rhs=sub(e.rhs))
        elif isinstance(e, SumOverK):
            e = dataclasses.replace(e, body=sub(e.body))
        elif isinstance(e, AccRead) and e.cell is not None:
            e = dataclasses.replace(e, cell=sub(e.cell))
        return fn(e)

    if isinstance(stmt, Forelem):
        if stmt.domain.filter is not None:
            fname, fexpr = stmt.domain.filter
            stmt = dataclasses.replace(
                stmt, domain=dataclasses.replace(stmt.domain, filter=(fname, sub(fexpr))))
    elif isinstance(stmt, AccumInit) and stmt.cell is not None:
        stmt = dataclasses.replace(stmt, cell=sub(stmt.cell))
    elif isinstance(stmt, Accumulate):
        cell = sub(stmt.cell) if stmt.cell is not None else None
        stmt = dataclasses.replace(stmt, cell=cell, delta=sub(stmt.delta))
    elif isinstance(stmt, ResultUnion):
        stmt = dataclasses.replace(stmt, exprs=tuple(sub(e) for e in stmt.exprs))
    body = stmt_body(stmt)
    if body:
        stmt = with_body(stmt, tuple(map_exprs(s, fn) for s in body))
    return stmt


# --- def-use analysis ---

def stmt_effects(stmt: Stmt, recurse: bool = True) -> tuple[set[str], set[str], set[str]]:
    """(reads, adds, inits) of accumulator/result names for one statement.

    Adds are commutative writes (+= and tuple union); inits are
    order-sensitive writes (zeroing, result merge).
    """
    reads: set[str] = set()
    adds: set[str] = set()
    inits: set[str] = set()

    def scan(s: Stmt) -> None:
        if isinstance(s, Forelem):
            # Iterating a result set reads it.
            reads.add(s.domain.multiset)
        if isinstance(s, AccumInit):
            inits.add(s.acc)
        elif isinstance(s, Accumulate):
            adds.add(s.acc)
        elif isinstance(s, ResultUnion):
            adds.add(s.result)
        elif isinstance(s, ResultMerge):
            reads.add(s.result)
            inits.add(s.result)
        for e in iter_exprs(s, recurse=False):
            if isinstance(e, AccRead):
                reads.add(e.acc)
            elif isinstance(e, FieldAccess):
                reads.add(e.multiset)
        if recurse:
            for c in stmt_body(s) or ():
                scan(c)

    scan(stmt)
    return reads, adds, inits


@dataclass
class DefUse:
    writes: dict[str, list[Path]]
    reads: dict[str, list[Path]]
    dead: set[str]
    dead_paths: list[Path]
    ms_fields_read: dict[str, set[str]]


def def_use(program: Program) -> DefUse:
    """Writing and reading statement paths per accumulator/result name.

    A name is dead when nothing reads it and it is not an output result.
    A top-level statement all of whose writes target dead names (and
    that writes something) is a dead path; removing it changes no
    observable output.
    """
    writes: dict[str, list[Path]] = {}
    reads: dict[str, list[Path]] = {}
    fields: dict[str, set[str]] = {}
    tracked = set(program.acc_names()) | set(program.result_decls())
    ms_names = set(program.multiset_decls()) | set(program.result_decls())

    for d in program.decls:
        if isinstance(d, ValuesDecl):
            fields.setdefault(d.multiset, set()).add(d.field)

    for path, stmt in iter_stmts(program):
        r, a, i = stmt_effects(stmt, recurse=False)
        for name in (a | i) & tracked:
            writes.setdefault(name, []).append(path)
        for name in r & tracked:
            reads.setdefault(name, []).append(path)
        if isinstance(stmt, Forelem):
            dom = stmt.domain
            if dom.filter is not None:
                fields.setdefault(dom.multiset, set()).add(dom.filter[0])
            if dom.distinct is not None:
                fields.setdefault(dom.multiset, set()).add(dom.distinct)
        for e in iter_exprs(stmt, recurse=False):
            if isinstance(e, FieldAccess) and e.multiset in ms_names:
                fields.setdefault(e.multiset, set()).add(e.field)

    outputs = {n for n, d in program.result_decls().items() if d.output}
    dead = {n for n in tracked if not reads.get(n) and n not in outputs}

    dead_paths = []
    for idx, stmt in enumerate(program.body):
        _, a, i = stmt_effects(stmt, recurse=True)
        written = (a | i) & tracked
        if written and written <= dead:
            dead_paths.append((idx,))
    return DefUse(writes, reads, dead, dead_paths, fields)


# --- validation ---

def _expr_type(e: Expr, env: dict, program: Program) -> Optional[FieldType]:
    if isinstance(e, IntLit):
        return FieldType.INT
    if isinstance(e, FloatLit):
        return FieldType.FLOAT
    if isinstance(e, StrLit):
        return FieldType.STR
    if isinstance(e, FieldAccess):
        decl = program.decl(e.multiset)
        if isinstance(decl, (MultisetDecl, ResultDecl)):
            for n, t in decl.fields:
                if n == e.field:
                    return t
    if isinstance(e, VarRef):
        binding = env.get(e.name)
        if binding and binding[0] == "value":
            vd = program.values_decls().get(binding[1])
            decl = program.decl(vd.multiset) if vd else None
            if isinstance(decl, (MultisetDecl, ResultDecl)):
                for n, t in decl.fields:
                    if n == vd.field:
                        return t
    return None


def validate(program: Program) -> list[Diagnostic]:
    """Scope, nesting and type checks; empty list means the program is well formed."""
    diags: list[Diagnostic] = []
    accs = program.acc_names()
    results = program.result_decls()
    tables = {**program.multiset_decls(), **results}
    values = program.values_decls()

    def say(loc: Loc, msg: str) -> None:
        diags.append(Diagnostic(loc, msg))

    for vd in values.values():
        decl = tables.get(vd.multiset)
        if decl is None:
            say(vd.loc, f"value set {vd.name!r} over undeclared multiset {vd.multiset!r}")
        elif vd.field not in {n for n, _ in decl.fields}:
            say(vd.loc, f"value set {vd.name!r}: no field {vd.field!r} in {vd.multiset!r}")

    def field_type(ms: str, fname: str) -> Optional[FieldType]:
        decl = tables.get(ms)
        if decl is None:
            return None
        for n, t in decl.fields:
            if n == fname:
                return t
        return None

    def check_expr(e: Expr, env: dict) -> None:
        if isinstance(e, VarRef):
            b = env.get(e.name)
            if b is None:
                say(e.loc, f"undeclared iterator {e.name!r}")
            elif b[0] == "row":
                say(e.loc, f"row iterator {e.name!r} used as a value; "
                           f"use {b[1]}[{e.name}].field")
        elif isinstance(e, FieldAccess):
            b = env.get(e.iterator)
            if b is None:
                say(e.loc, f"undeclared iterator {e.iterator!r}")
            elif b[0] != "row" or b[1] != e.multiset:
                say(e.loc, f"iterator {e.iterator!r} does not range over {e.multiset!r}")
            if field_type(e.multiset, e.field) is None:
                say(e.loc, f"no field {e.field!r} in {e.multiset!r}")
        elif isinstance(e, AccRead):
            if e.acc not in accs:
                say(e.loc, f"undeclared accumulator {e.acc!r}")
            if e.worker is not None and env.get(e.worker, ("",))[0] != "worker":
                say(e.loc, f"worker subscript {e.worker!r} is not bound by a "
                           f"forall/for loop")
            if e.cell is not None:
                check_expr(e.cell, env)
        elif isinstance(e, SumOverK):
            if e.var in env:
                say(e.loc, f"reduction variable {e.var!r} shadows an enclosing binding")
            if e.n < 1:
                say(e.loc, "reduction bound must be at least 1")
            check_expr(e.body, {**env, e.var: ("worker",)})
        elif isinstance(e, BinOp):
            check_expr(e.lhs, env)
            check_expr(e.rhs, env)
            for side in (e.lhs, e.rhs):
                if _expr_type(side, env, program) is FieldType.STR:
                    say(e.loc, f"string operand in arithmetic {e.op!r}")

    def check_worker_sub(worker: Optional[str], env: dict, loc: Loc) -> None:
        if worker is not None and env.get(worker, ("",))[0] != "worker":
            say(loc, f"worker subscript {worker!r} is not bound by a forall/for loop")

    def check(stmts: Sequence[Stmt], env: dict, in_forall: bool) -> None:
        for s in stmts:
            if isinstance(s, Forelem):
                dom = s.domain
                if dom.multiset not in tables:
                    say(dom.loc, f"undeclared multiset {dom.multiset!r}")
                if s.iterator in env:
                    say(s.loc, f"iterator {s.iterator!r} shadows an enclosing binding")
                check_worker_sub(dom.worker, env, dom.loc)
                if dom.filter is not None:
                    fname, fexpr = dom.filter
                    ft = field_type(dom.multiset, fname)
                    if ft is None:
                        say(dom.loc, f"no field {fname!r} in {dom.multiset!r}")
                    check_expr(fexpr, env)
                    et = _expr_type(fexpr, env, program)
                    if ft is not None and et is not None:
                        numeric = (FieldType.INT, FieldType.FLOAT)
                        if (ft is FieldType.STR) != (et is FieldType.STR):
                            say(dom.loc, f"filter on {fname!r} compares "
                                         f"{ft.value} with {et.value}")
                        elif ft in numeric and et in numeric and ft is not et:
                            say(dom.loc, f"filter on {fname!r} compares "
                                         f"{ft.value} with {et.value}")
                if dom.distinct is not None and field_type(dom.multiset, dom.distinct) is None:
                    say(dom.loc, f"no field {dom.distinct!r} in {dom.multiset!r}")
                check(s.body, {**env, s.iterator: ("row", dom.multiset)}, in_forall)
            elif isinstance(s, (Forall, ForRange)):
                if isinstance(s, Forall) and in_forall:
                    say(s.loc, "forall loops may not nest inside forall loops")
                if s.var in env:
                    say(s.loc, f"loop variable {s.var!r} shadows an enclosing binding")
                if s.n < 1:
                    say(s.loc, "loop bound must be at least 1")
                check(s.body, {**env, s.var: ("worker",)},
                      in_forall or isinstance(s, Forall))
            elif isinstance(s, ForValues):
                if s.values not in values:
                    say(s.loc, f"undeclared value set {s.values!r}")
                if s.var in env:
                    say(s.loc, f"iterator {s.var!r} shadows an enclosing binding")
                if env.get(s.worker, ("",))[0] != "worker":
                    say(s.loc, f"segment subscript {s.worker!r} is not bound by a "
                               f"forall/for loop")
                check(s.body, {**env, s.var: ("value", s.values)}, in_forall)
            elif isinstance(s, (AccumInit, Accumulate)):
                if s.acc not in accs:
                    say(s.loc, f"undeclared accumulator {s.acc!r}")
                check_worker_sub(s.worker, env, s.loc)
                if s.cell is not None:
                    check_expr(s.cell, env)
                if isinstance(s, Accumulate):
                    check_expr(s.delta, env)
                    if _expr_type(s.delta, env, program) is FieldType.STR:
                        say(s.loc, "cannot accumulate a string value")
            elif isinstance(s, ResultUnion):
                decl = results.get(s.result)
                if decl is None:
                    say(s.loc, f"undeclared result set {s.result!r}")
                check_worker_sub(s.worker, env, s.loc)
                for e in s.exprs:
                    check_expr(e, env)
                if decl is not None:
                    if len(s.exprs) != len(decl.fields):
                        say(s.loc, f"result {s.result!r} expects {len(decl.fields)} "
                                   f"values, got {len(s.exprs)}")
                    else:
                        for e, (fname, ft) in zip(s.exprs, decl.fields):
                            et = _expr_type(e, env, program)
                            if et is None:
                                continue
                            if (ft is FieldType.STR) != (et is FieldType.STR):
                                say(s.loc, f"result field {fname!r} expects "
                                           f"{ft.value}, got {et.value}")
                            elif ft is FieldType.INT and et is FieldType.FLOAT:
                                say(s.loc, f"result field {fname!r} expects int, got float")
            elif isinstance(s, ResultMerge):
                if s.result not in results:
                    say(s.loc, f"undeclared result set {s.result!r}")
                if s.var in env:
                    say(s.loc, f"merge variable {s.var!r} shadows an enclosing binding")
                if in_forall:
                    say(s.loc, "result merge may not appear inside a forall loop")

    check(program.body, {}, False)
    return diags
