"""SQL subset frontend.

Supported: ``CREATE VIEW name AS SELECT ...`` (non-recursive) followed
by one SELECT with column projections, COUNT/SUM aggregates, DISTINCT,
a single GROUP BY column, comma joins, conjunctions of equality
predicates (column = literal | :param | column), and scalar correlated
COUNT subqueries in the select list. Keywords are case-insensitive;
identifiers keep their case but resolve case-insensitively against the
catalog. Anything outside the subset is rejected by name, never
silently ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from forelem import ir
from forelem.multiset import FieldType, Schema


class SqlParseError(ValueError):
    def __init__(self, msg: str, pos: tuple[int, int] = (0, 0)):
        super().__init__(f"{pos[0]}:{pos[1]}: {msg}")
        self.pos = pos


class UnsupportedSqlError(SqlParseError):
    def __init__(self, construct: str, pos: tuple[int, int] = (0, 0)):
        super().__init__(f"unsupported SQL construct: {construct}", pos)
        self.construct = construct


# --- query AST ---

@dataclass(frozen=True)
class ColRef:
    table: Optional[str]
    column: str


@dataclass(frozen=True)
class Literal:
    value: Union[int, float, str]


@dataclass(frozen=True)
class Param:
    name: str


Term = Union[ColRef, Literal, Param]


@dataclass(frozen=True)
class Pred:
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class ColItem:
    table: Optional[str]
    column: str


@dataclass(frozen=True)
class CountItem:
    column: Optional[str] = None  # None = COUNT(*)
    distinct: bool = False


@dataclass(frozen=True)
class SumItem:
    column: str


@dataclass(frozen=True)
class CountSubquery:
    query: "SelectQuery"


SelectItem = Union[ColItem, CountItem, SumItem, CountSubquery]


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None


@dataclass(frozen=True)
class SelectQuery:
    items: tuple[SelectItem, ...]
    tables: tuple[TableRef, ...]
    where: tuple[Pred, ...] = ()
    group_by: Optional[ColRef] = None
    distinct: bool = False


@dataclass(frozen=True)
class SqlScript:
    views: dict[str, SelectQuery]
    query: SelectQuery


# --- tokenizer ---

_SQL_TOKEN = re.compile(r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<param>:[A-Za-z_][A-Za-z0-9_]*)
  | (?P<num>\d+\.\d+|\d+)
  | (?P<str>'(?:[^'])*')
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[(),.;=*])
""", re.VERBOSE)

_UNSUPPORTED = {
    "order": "ORDER BY", "having": "HAVING", "join": "JOIN",
    "left": "OUTER JOIN", "right": "OUTER JOIN", "outer": "OUTER JOIN",
    "inner": "JOIN", "union": "UNION", "limit": "LIMIT", "offset": "OFFSET",
    "insert": "INSERT", "update": "UPDATE", "delete": "DELETE",
    "or": "OR", "not": "NOT", "like": "LIKE", "between": "BETWEEN",
    "exists": "EXISTS", "in": "IN", "avg": "AVG", "min": "MIN", "max": "MAX",
}
_KEYWORDS = {"select", "from", "where", "group", "by", "create", "view", "as",
             "distinct", "count", "sum", "and"} | set(_UNSUPPORTED)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: tuple[int, int]

    @property
    def kw(self) -> Optional[str]:
        return self.text.lower() if self.kind == "id" else None


def _tokenize(text: str) -> list[_Tok]:
    toks, line, col, at = [], 1, 1, 0
    while at < len(text):
        m = _SQL_TOKEN.match(text, at)
        if not m:
            raise SqlParseError(f"unexpected character {text[at]!r}", (line, col))
        kind = m.lastgroup
        lexeme = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, lexeme, (line, col)))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        at = m.end()
    toks.append(_Tok("eof", "", (line, col)))
    return toks


class _SqlParser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.at = 0

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.at + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.peek()
        self.at += 1
        return t

    def at_kw(self, *words: str) -> bool:
        return self.peek().kw in words

    def expect_kw(self, word: str) -> _Tok:
        t = self.next()
        if t.kw != word:
            raise SqlParseError(f"expected {word.upper()}, found {t.text or 'end of input'!r}", t.pos)
        return t

    def expect_op(self, op: str) -> _Tok:
        t = self.next()
        if t.kind != "op" or t.text != op:
            raise SqlParseError(f"expected {op!r}, found {t.text or 'end of input'!r}", t.pos)
        return t

    def expect_name(self) -> _Tok:
        t = self.next()
        if t.kind != "id":
            raise SqlParseError(f"expected identifier, found {t.text or 'end of input'!r}", t.pos)
        if t.kw in _UNSUPPORTED:
            raise UnsupportedSqlError(_UNSUPPORTED[t.kw], t.pos)
        if t.kw in _KEYWORDS:
            raise SqlParseError(f"keyword {t.text!r} used as identifier", t.pos)
        return t

    def reject_unsupported(self) -> None:
        t = self.peek()
        if t.kw in _UNSUPPORTED:
            raise UnsupportedSqlError(_UNSUPPORTED[t.kw], t.pos)

    # grammar

    def parse_script(self) -> SqlScript:
        views: dict[str, SelectQuery] = {}
        while self.at_kw("create"):
            self.next()
            self.expect_kw("view")
            name = self.expect_name().text
            self.expect_kw("as")
            views[name] = self.parse_select()
            if self.peek().text == ";":
                self.next()
        q = self.parse_select()
        if self.peek().text == ";":
            self.next()
        self.reject_unsupported()
        t = self.peek()
        if t.kind != "eof":
            raise SqlParseError(f"unexpected trailing input {t.text!r}", t.pos)
        return SqlScript(views, q)

    def parse_select(self) -> SelectQuery:
        self.expect_kw("select")
        distinct = False
        if self.at_kw("distinct"):
            self.next()
            distinct = True
        items = [self.parse_item()]
        while self.peek().text == ",":
            self.next()
            items.append(self.parse_item())
        self.expect_kw("from")
        tables = [self.parse_table_ref()]
        while self.peek().text == ",":
            self.next()
            tables.append(self.parse_table_ref())
        where: list[Pred] = []
        if self.at_kw("where"):
            self.next()
            where.append(self.parse_pred())
            while self.at_kw("and"):
                self.next()
                where.append(self.parse_pred())
        group_by = None
        if self.at_kw("group"):
            self.next()
            self.expect_kw("by")
            group_by = self.parse_colref()
        self.reject_unsupported()
        return SelectQuery(tuple(items), tuple(tables), tuple(where), group_by, distinct)

    def parse_item(self) -> SelectItem:
        t = self.peek()
        if t.kw == "count":
            self.next()
            self.expect_op("(")
            if self.peek().text == "*":
                self.next()
                item: SelectItem = CountItem(None)
            else:
                distinct = False
                if self.at_kw("distinct"):
                    self.next()
                    distinct = True
                item = CountItem(self.expect_name().text, distinct)
            self.expect_op(")")
            return item
        if t.kw == "sum":
            self.next()
            self.expect_op("(")
            col = self.expect_name().text
            self.expect_op(")")
            return SumItem(col)
        if t.text == "(":
            self.next()
            sub = self.parse_select()
            self.expect_op(")")
            if len(sub.items) != 1 or not isinstance(sub.items[0], CountItem):
                raise UnsupportedSqlError("non-COUNT scalar subquery", t.pos)
            return CountSubquery(sub)
        if t.text == "*":
            raise UnsupportedSqlError("SELECT *", t.pos)
        ref = self.parse_colref()
        return ColItem(ref.table, ref.column)

    def parse_colref(self) -> ColRef:
        first = self.expect_name().text
        if self.peek().text == ".":
            self.next()
            return ColRef(first, self.expect_name().text)
        return ColRef(None, first)

    def parse_table_ref(self) -> TableRef:
        name = self.expect_name().text
        t = self.peek()
        alias = None
        if t.kind == "id" and t.kw not in _KEYWORDS:
            alias = self.next().text
        return TableRef(name, alias)

    def parse_pred(self) -> Pred:
        lhs = self.parse_term()
        self.expect_op("=")
        return Pred(lhs, self.parse_term())

    def parse_term(self) -> Term:
        t = self.peek()
        if t.kind == "param":
            self.next()
            return Param(t.text[1:])
        if t.kind == "num":
            self.next()
            return Literal(float(t.text) if "." in t.text else int(t.text))
        if t.kind == "str":
            self.next()
            return Literal(t.text[1:-1])
        return self.parse_colref()


def parse_sql(text: str) -> SqlScript:
    return _SqlParser(_tokenize(text)).parse_script()


# --- lowering ---

class LoweringError(ValueError):
    pass


def _substitute_params(q: SelectQuery, params: dict) -> SelectQuery:
    def sub_term(t: Term) -> Term:
        if isinstance(t, Param):
            if t.name not in params:
                raise LoweringError(f"missing value for parameter :{t.name}")
            return Literal(params[t.name])
        return t

    where = tuple(Pred(sub_term(p.lhs), sub_term(p.rhs)) for p in q.where)
    return replace(q, where=where)


class _Lowering:
    def __init__(self, script: SqlScript, catalog: dict[str, Schema],
                 params: Optional[dict] = None):
        self.script = script
        self.catalog = catalog
        self.params = params or {}
        self.views = script.views

    def canonical_table(self, name: str) -> str:
        for known in self.catalog:
            if known.lower() == name.lower():
                return known
        raise LoweringError(f"unknown table {name!r}")

    def is_view(self, name: str) -> bool:
        return any(v.lower() == name.lower() for v in self.views)

    def view_query(self, name: str) -> SelectQuery:
        for v, q in self.views.items():
            if v.lower() == name.lower():
                return q
        raise LoweringError(f"unknown view {name!r}")

    def field_type(self, table: str, column: str) -> FieldType:
        schema = self.catalog[table]
        for fname, ftype in schema.fields:
            if fname == column:
                return ftype
        raise LoweringError(f"table {table!r} has no column {column!r}")

    def table_decl(self, table: str) -> ir.MultisetDecl:
        return ir.MultisetDecl(table, self.catalog[table].fields)

    def literal_expr(self, value) -> ir.Expr:
        if isinstance(value, bool):
            raise LoweringError("boolean literals are not part of the subset")
        if isinstance(value, int):
            return ir.IntLit(value)
        if isinstance(value, float):
            return ir.FloatLit(value)
        return ir.StrLit(value)

    def lower(self) -> ir.Program:
        q = _substitute_params(self.script.query, self.params)
        tables = q.tables
        if len(tables) == 1 and self.is_view(tables[0].name):
            prog = self.lower_view_query(q, tables[0])
        elif len(tables) == 1:
            prog = self.lower_single_table(q, self.canonical_table(tables[0].name),
                                           tables[0].alias)
        elif len(tables) == 2:
            prog = self.lower_join(q)
        else:
            raise UnsupportedSqlError("more than two tables in FROM")
        diags = ir.validate(prog)
        if diags:
            raise LoweringError("lowered program does not validate: "
                                + "; ".join(d.message for d in diags))
        return prog

    # one table, no view

    def lower_single_table(self, q: SelectQuery, table: str,
                           alias: Optional[str]) -> ir.Program:
        names = {table.lower()}
        if alias:
            names.add(alias.lower())
        filt = self.extract_filter(q.where, names, table)
        if q.group_by is not None:
            return self.lower_group_by(q, table, filt)
        aggs = [it for it in q.items if isinstance(it, (CountItem, SumItem))]
        if aggs:
            if len(q.items) != 1:
                raise UnsupportedSqlError("bare column beside aggregate without GROUP BY")
            return self.lower_whole_table_agg(q.items[0], table, filt)
        if any(isinstance(it, CountSubquery) for it in q.items):
            raise UnsupportedSqlError("correlated subquery outside a view query")
        return self.lower_projection(q, table, filt)

    def extract_filter(self, preds, names: set[str], table: str):
        """At most one column = literal predicate against this table."""
        filt = None
        for p in preds:
            lhs, rhs = p.lhs, p.rhs
            if isinstance(rhs, ColRef) and isinstance(lhs, Literal):
                lhs, rhs = rhs, lhs
            if not (isinstance(lhs, ColRef) and isinstance(rhs, Literal)):
                raise UnsupportedSqlError("non-equality or join predicate here")
            if lhs.table is not None and lhs.table.lower() not in names:
                raise LoweringError(f"predicate references unknown table {lhs.table!r}")
            self.field_type(table, lhs.column)
            if filt is not None:
                raise UnsupportedSqlError("more than one filter predicate per table")
            filt = (lhs.column, self.literal_expr(rhs.value))
        return filt

    def domain(self, table: str, filt, distinct: Optional[str] = None) -> ir.IndexSetExpr:
        return ir.IndexSetExpr(table, filter=filt, distinct=distinct)

    def lower_projection(self, q: SelectQuery, table: str, filt) -> ir.Program:
        cols = []
        for it in q.items:
            if not isinstance(it, ColItem):
                raise UnsupportedSqlError("mixed aggregate and column projection")
            cols.append(it.column)
        distinct = None
        if q.distinct:
            if len(cols) != 1:
                raise UnsupportedSqlError("DISTINCT over more than one column")
            distinct = cols[0]
        rfields = tuple((self.result_field_name(q.items, i),
                         self.field_type(table, c)) for i, c in enumerate(cols))
        it_name = "i"
        body = (ir.ResultUnion("R", None, tuple(
            ir.FieldAccess(table, it_name, c) for c in cols)),)
        loop = ir.Forelem(it_name, self.domain(table, filt, distinct), body)
        decls = (self.table_decl(table), ir.ResultDecl("R", rfields, output=True))
        return ir.Program(decls, (loop,))

    def result_field_name(self, items, index: int) -> str:
        it = items[index]
        if isinstance(it, CountItem) or isinstance(it, CountSubquery):
            return "cnt"
        if isinstance(it, SumItem):
            return "total"
        plain = [x.column for x in items if isinstance(x, ColItem)]
        if plain.count(it.column) > 1 and it.table is not None:
            return f"{it.table}_{it.column}"
        return it.column

    def lower_group_by(self, q: SelectQuery, table: str, filt) -> ir.Program:
        gb = q.group_by.column
        gtype = self.field_type(table, gb)
        if len(q.items) != 2 or not isinstance(q.items[0], ColItem):
            raise UnsupportedSqlError("GROUP BY select list beyond (column, aggregate)")
        if q.items[0].column != gb:
            raise LoweringError("projected column must be the GROUP BY column")
        agg = q.items[1]
        if filt is not None:
            raise UnsupportedSqlError("WHERE combined with GROUP BY")
        if isinstance(agg, CountItem) and not agg.distinct:
            # distinct-value view, then one counting loop per view row
            decls = (
                self.table_decl(table),
                ir.ResultDecl("G", ((gb, gtype),)),
                ir.ResultDecl("R", ((gb, gtype), ("cnt", FieldType.INT)), output=True),
                ir.AccDecl("count"),
            )
            build = ir.Forelem("i", self.domain(table, None, gb),
                               (ir.ResultUnion("G", None,
                                               (ir.FieldAccess(table, "i", gb),)),))
            inner = ir.Forelem("i", ir.IndexSetExpr(
                table, filter=(gb, ir.FieldAccess("G", "g", gb))),
                (ir.Accumulate("count", None, None, ir.IntLit(1)),))
            consume = ir.Forelem("g", ir.IndexSetExpr("G"), (
                ir.AccumInit("count"),
                inner,
                ir.ResultUnion("R", None, (ir.FieldAccess("G", "g", gb),
                                           ir.AccRead("count"))),
            ))
            return ir.Program(decls, (build, consume))
        if isinstance(agg, SumItem):
            vtype = self.field_type(table, agg.column)
            decls = (
                self.table_decl(table),
                ir.ResultDecl("R", ((gb, gtype), ("total", vtype)), output=True),
                ir.AccDecl("total"),
            )
            accumulate = ir.Forelem("i", ir.IndexSetExpr(table), (
                ir.Accumulate("total", None, ir.FieldAccess(table, "i", gb),
                              ir.FieldAccess(table, "i", agg.column)),))
            read = ir.Forelem("i", self.domain(table, None, gb), (
                ir.ResultUnion("R", None, (
                    ir.FieldAccess(table, "i", gb),
                    ir.AccRead("total", cell=ir.FieldAccess(table, "i", gb)))),))
            return ir.Program(decls, (ir.AccumInit("total"), accumulate, read))
        raise UnsupportedSqlError("aggregate form in GROUP BY")

    def lower_whole_table_agg(self, agg, table: str, filt) -> ir.Program:
        if isinstance(agg, CountItem):
            acc, delta, ftype = "count", ir.IntLit(1), FieldType.INT
            fname = "cnt"
        elif isinstance(agg, SumItem):
            ftype = self.field_type(table, agg.column)
            acc, delta = "total", ir.FieldAccess(table, "i", agg.column)
            fname = "total"
        else:
            raise UnsupportedSqlError("aggregate form")
        decls = (self.table_decl(table),
                 ir.ResultDecl("R", ((fname, ftype),), output=True),
                 ir.AccDecl(acc))
        loop = ir.Forelem("i", self.domain(table, filt),
                          (ir.Accumulate(acc, None, None, delta),))
        final = ir.ResultUnion("R", None, (ir.AccRead(acc),))
        return ir.Program(decls, (ir.AccumInit(acc), loop, final))

    # view over distinct values + correlated count

    def lower_view_query(self, q: SelectQuery, ref: TableRef) -> ir.Program:
        vq = self.view_query(ref.name)
        if (len(vq.tables) != 1 or not vq.distinct or len(vq.items) != 1
                or not isinstance(vq.items[0], ColItem) or vq.where or vq.group_by):
            raise UnsupportedSqlError("view beyond SELECT DISTINCT column FROM table")
        base = self.canonical_table(vq.tables[0].name)
        vcol = vq.items[0].column
        vtype = self.field_type(base, vcol)
        outer_names = {ref.name.lower()} | ({ref.alias.lower()} if ref.alias else set())

        plain = [it for it in q.items if isinstance(it, ColItem)]
        subs = [it for it in q.items if isinstance(it, CountSubquery)]
        if len(q.items) == 1 and plain and plain[0].column == vcol and not q.where:
            # reading the view is just the distinct loop
            decls = (self.table_decl(base),
                     ir.ResultDecl("R", ((vcol, vtype),), output=True))
            loop = ir.Forelem("t", self.domain(base, None, vcol),
                              (ir.ResultUnion("R", None,
                                              (ir.FieldAccess(base, "t", vcol),)),))
            return ir.Program(decls, (loop,))
        if len(q.items) != 2 or len(plain) != 1 or len(subs) != 1:
            raise UnsupportedSqlError("view query beyond (column, correlated COUNT)")
        if plain[0].column != vcol:
            raise LoweringError(f"projection must use the view column {vcol!r}")
        sub = subs[0].query
        if len(sub.tables) != 1 or sub.group_by or sub.distinct:
            raise UnsupportedSqlError("correlated subquery shape")
        sub_base = self.canonical_table(sub.tables[0].name)
        sub_names = {sub.tables[0].name.lower()} | (
            {sub.tables[0].alias.lower()} if sub.tables[0].alias else set())
        corr = None
        for p in sub.where:
            sides = [p.lhs, p.rhs]
            col_sides = [s for s in sides if isinstance(s, ColRef)]
            if len(col_sides) != 2:
                raise UnsupportedSqlError("non-correlating subquery predicate")
            inner = [s for s in col_sides
                     if s.table is None or s.table.lower() in sub_names]
            outer = [s for s in col_sides
                     if s.table is not None and s.table.lower() in outer_names]
            if len(inner) < 1 or len(outer) != 1 or corr is not None:
                raise UnsupportedSqlError("correlated subquery predicate shape")
            inner = [s for s in inner if s is not outer[0]]
            corr = (inner[0].column, outer[0].column)
        if corr is None:
            raise UnsupportedSqlError("subquery without correlation predicate")
        in_col, out_col = corr
        if out_col != vcol:
            raise LoweringError(f"correlation must use the view column {vcol!r}")
        self.field_type(sub_base, in_col)

        decls = (self.table_decl(base),
                 ir.ResultDecl("R", ((vcol, vtype), ("cnt", FieldType.INT)),
                               output=True),
                 ir.AccDecl("count"))
        inner_loop = ir.Forelem("i", ir.IndexSetExpr(
            sub_base, filter=(in_col, ir.FieldAccess(base, "t", vcol))),
            (ir.Accumulate("count", None, None, ir.IntLit(1)),))
        outer_loop = ir.Forelem("t", self.domain(base, None, vcol), (
            ir.AccumInit("count"),
            inner_loop,
            ir.ResultUnion("R", None, (ir.FieldAccess(base, "t", vcol),
                                       ir.AccRead("count"))),
        ))
        return ir.Program(decls, (outer_loop,))

    # two tables joined on equality

    def lower_join(self, q: SelectQuery) -> ir.Program:
        refs = q.tables
        names = []
        for ref in refs:
            if self.is_view(ref.name):
                raise UnsupportedSqlError("view inside a join")
            names.append(self.canonical_table(ref.name))
        lookup: dict[str, str] = {}
        for ref, canon in zip(refs, names):
            lookup[ref.name.lower()] = canon
            if ref.alias:
                lookup[ref.alias.lower()] = canon

        def owner(c: ColRef) -> str:
            if c.table is not None:
                try:
                    return lookup[c.table.lower()]
                except KeyError:
                    raise LoweringError(f"unknown table {c.table!r}") from None
            owners = [t for t in names
                      if any(f == c.column for f, _ in self.catalog[t].fields)]
            if len(owners) != 1:
                raise LoweringError(f"ambiguous or unknown column {c.column!r}")
            return owners[0]

        join = None
        filters: dict[str, tuple] = {}
        for p in q.where:
            lhs, rhs = p.lhs, p.rhs
            if isinstance(lhs, Literal) and isinstance(rhs, ColRef):
                lhs, rhs = rhs, lhs
            if isinstance(lhs, ColRef) and isinstance(rhs, ColRef):
                if join is not None:
                    raise UnsupportedSqlError("more than one join predicate")
                join = ((owner(lhs), lhs.column), (owner(rhs), rhs.column))
            elif isinstance(lhs, ColRef) and isinstance(rhs, Literal):
                t = owner(lhs)
                if t in filters:
                    raise UnsupportedSqlError("more than one filter predicate per table")
                filters[t] = (lhs.column, self.literal_expr(rhs.value))
            else:
                raise UnsupportedSqlError("predicate shape")
        if join is None:
            raise UnsupportedSqlError("comma join without join predicate")
        outer, inner = names
        (ta, ca), (tb, cb) = join
        if (ta, tb) == (outer, inner):
            outer_col, inner_col = ca, cb
        elif (tb, ta) == (outer, inner):
            outer_col, inner_col = cb, ca
        else:
            raise LoweringError("join predicate must relate the two FROM tables")
        if inner in filters:
            raise UnsupportedSqlError("filter on the inner join table")

        cols: list[tuple[str, str]] = []
        for it in q.items:
            if not isinstance(it, ColItem):
                raise UnsupportedSqlError("aggregates over a join")
            cols.append((owner(ColRef(it.table, it.column)), it.column))
        rfields = tuple((self.result_field_name(q.items, i), self.field_type(t, c))
                        for i, (t, c) in enumerate(cols))
        iters = {outer: "i", inner: "j"}
        body = (ir.ResultUnion("R", None, tuple(
            ir.FieldAccess(t, iters[t], c) for t, c in cols)),)
        inner_loop = ir.Forelem("j", ir.IndexSetExpr(
            inner, filter=(inner_col, ir.FieldAccess(outer, "i", outer_col))), body)
        outer_loop = ir.Forelem("i", self.domain(outer, filters.get(outer)),
                                (inner_loop,))
        decls = (self.table_decl(outer), self.table_decl(inner),
                 ir.ResultDecl("R", rfields, output=True))
        return ir.Program(decls, (outer_loop,))


def lower_to_forelem(script: SqlScript, catalog: dict[str, Schema],
                     params: Optional[dict] = None) -> ir.Program:
    return _Lowering(script, catalog, params).lower()
