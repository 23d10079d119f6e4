"""Deriving MapReduce programs from the two-adjacent-loop shape.

A loop that accumulates into an array subscripted by a field of the rows
it iterates, followed by a loop that reads those cells per distinct
value, is exactly a map (emit one pair per row) plus a reduce (count or
sum the values grouped per key). This module detects that shape, emits
the explicit MapReduce program, and runs it on a tiny in-process
map-shuffle-reduce framework so the equivalence can be checked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

from forelem import ir
from forelem.engine import Database
from forelem.multiset import DirectBlocks, FieldType, Multiset, Schema, Value


class ReduceKind(enum.Enum):
    COUNT_VALUES = "count"
    SUM_VALUES = "sum"


@dataclass(frozen=True)
class MrPattern:
    """What detect_pattern found: which table feeds map, which field is
    the key, what each row contributes, and where the answer goes."""

    multiset: str
    key_field: str
    delta: Union[int, float, str]   # literal, or a field name of the input
    reduce: ReduceKind
    result: str
    out_fields: tuple[tuple[str, FieldType], ...]


@dataclass(frozen=True)
class MrProgram:
    input: str
    key_field: str
    value_field: Optional[str]      # None: every row emits value_literal
    value_literal: Optional[Union[int, float]]
    reduce: ReduceKind
    result: str
    out_fields: tuple[tuple[str, FieldType], ...]

    def value_text(self) -> str:
        if self.value_field is not None:
            return f"{self.input[0].lower()}.{self.value_field}"
        return repr(self.value_literal)

    def pseudocode(self) -> str:
        table = self.input.lower()
        a = self.input[0].lower()
        agg = "count" if self.reduce is ReduceKind.COUNT_VALUES else "total"
        step = f"{agg}++" if self.reduce is ReduceKind.COUNT_VALUES else f"{agg} += v"
        return "\n".join([
            "map(key, value):",
            f"  # value holds a fragment of the {self.input} table",
            f"  {table} = value",
            f"  for {a} in {table}:",
            f"    emitIntermediate({a}.{self.key_field}, {self.value_text()})",
            "reduce(key, values):",
            f"  {agg} = 0",
            "  for v in values:",
            f"    {step}",
            f"  emit(key, {agg})",
        ])


@dataclass
class MrTrace:
    pairs: tuple[tuple[tuple[Value, Value], ...], ...]  # one tuple per map task
    groups: dict[Value, list[Value]]
    outputs: tuple[tuple[Value, Value], ...]

    @property
    def n_map_tasks(self) -> int:
        return len(self.pairs)

    @property
    def n_pairs(self) -> int:
        return sum(len(task) for task in self.pairs)

    def to_lines(self) -> list[str]:
        lines = [f"map {k} {v}" for task in self.pairs for k, v in task]
        lines += [f"reduce {k} {v}" for k, v in self.outputs]
        return lines


def _field_of(e: ir.Expr, multiset: str, iterator: str) -> Optional[str]:
    if (isinstance(e, ir.FieldAccess) and e.multiset == multiset
            and e.iterator == iterator):
        return e.field
    return None


def _delta_shape(delta: ir.Expr, multiset: str,
                 iterator: str) -> Optional[Union[int, float, str]]:
    # Literals and single-field reads only; anything richer is unmatched.
    if isinstance(delta, (ir.IntLit, ir.FloatLit)):
        return delta.value
    return _field_of(delta, multiset, iterator)


def _flat_producer(s: ir.Stmt):
    """forelem (i; i in pMS) { acc[MS[i].key] += delta }"""
    if not isinstance(s, ir.Forelem):
        return None
    d = s.domain
    if d.filter is not None or d.distinct is not None or d.worker is not None:
        return None
    if len(s.body) != 1 or not isinstance(s.body[0], ir.Accumulate):
        return None
    a = s.body[0]
    if a.worker is not None or a.cell is None:
        return None
    key = _field_of(a.cell, d.multiset, s.iterator)
    if key is None:
        return None
    delta = _delta_shape(a.delta, d.multiset, s.iterator)
    if delta is None:
        return None
    return d.multiset, key, a.acc, delta, None


def _blocked_producer(s: ir.Stmt, values: dict[str, ir.ValuesDecl]):
    """forall (k) { acc[k] = 0; for (l in X[k]) { forelem (i; i in
    pMS.key[l]) { acc[k][MS[i].key] += delta } } } with X = MS.key."""
    if not isinstance(s, ir.Forall):
        return None
    k = s.var
    body = list(s.body)
    if body and isinstance(body[0], ir.AccumInit) and body[0].worker == k \
            and body[0].cell is None:
        init_acc = body[0].acc
        body = body[1:]
    else:
        init_acc = None
    if len(body) != 1 or not isinstance(body[0], ir.ForValues):
        return None
    fv = body[0]
    vd = values.get(fv.values)
    if vd is None or fv.worker != k or len(fv.body) != 1:
        return None
    inner = fv.body[0]
    if not isinstance(inner, ir.Forelem):
        return None
    d = inner.domain
    if (d.multiset != vd.multiset or d.distinct is not None
            or d.worker is not None or d.filter is None):
        return None
    ffield, fexpr = d.filter
    if ffield != vd.field or not isinstance(fexpr, ir.VarRef) \
            or fexpr.name != fv.var:
        return None
    if len(inner.body) != 1 or not isinstance(inner.body[0], ir.Accumulate):
        return None
    a = inner.body[0]
    if a.worker != k or a.cell is None:
        return None
    key = _field_of(a.cell, d.multiset, inner.iterator)
    if key != vd.field or (init_acc is not None and init_acc != a.acc):
        return None
    delta = _delta_shape(a.delta, d.multiset, inner.iterator)
    if delta is None:
        return None
    return d.multiset, key, a.acc, delta, s.n


def _consumer(s: ir.Stmt, multiset: str, key: str, acc: str, n: Optional[int]):
    """forelem (j; j in pMS.distinct(key)) { R += (MS[j].key, <read>) }
    where <read> is acc[MS[j].key], summed over workers for blocked
    producers."""
    if not isinstance(s, ir.Forelem):
        return None
    d = s.domain
    if (d.multiset != multiset or d.distinct != key or d.filter is not None
            or d.worker is not None):
        return None
    if len(s.body) != 1 or not isinstance(s.body[0], ir.ResultUnion):
        return None
    u = s.body[0]
    if u.worker is not None or len(u.exprs) != 2:
        return None
    if _field_of(u.exprs[0], multiset, s.iterator) != key:
        return None
    read = u.exprs[1]
    if n is None:
        if not isinstance(read, ir.AccRead) or read.worker is not None:
            return None
    else:
        if not (isinstance(read, ir.SumOverK) and read.n == n):
            return None
        inner = read.body
        if not isinstance(inner, ir.AccRead) or inner.worker != read.var:
            return None
        read = inner
    if read.acc != acc or read.cell is None:
        return None
    if _field_of(read.cell, multiset, s.iterator) != key:
        return None
    return u.result


def detect_pattern(program: ir.Program) -> Optional[MrPattern]:
    """Match the two-adjacent-loop accumulate/read shape, either flat or
    in its worker-blocked form. Leading accumulator zeroing is allowed;
    any other surrounding statement means no match."""
    body = list(program.body)
    while body and isinstance(body[0], ir.AccumInit) and body[0].worker is None \
            and body[0].cell is None:
        body.pop(0)
    if len(body) != 2:
        return None
    prod = _flat_producer(body[0]) or _blocked_producer(body[0],
                                                        program.values_decls())
    if prod is None:
        return None
    multiset, key, acc, delta, n = prod
    result = _consumer(body[1], multiset, key, acc, n)
    if result is None:
        return None
    rd = program.result_decls().get(result)
    if rd is None or len(rd.fields) != 2:
        return None
    reduce = ReduceKind.COUNT_VALUES if delta == 1 else ReduceKind.SUM_VALUES
    return MrPattern(multiset, key, delta, reduce, result, rd.fields)


def emit_mapreduce(pattern: MrPattern) -> MrProgram:
    if isinstance(pattern.delta, str):
        return MrProgram(pattern.multiset, pattern.key_field, pattern.delta,
                         None, pattern.reduce, pattern.result,
                         pattern.out_fields)
    literal = 1 if pattern.reduce is ReduceKind.COUNT_VALUES else pattern.delta
    return MrProgram(pattern.multiset, pattern.key_field, None, literal,
                     pattern.reduce, pattern.result, pattern.out_fields)


def derive_mapreduce(program: ir.Program) -> Optional[MrProgram]:
    pattern = detect_pattern(program)
    return emit_mapreduce(pattern) if pattern is not None else None


def run_mapreduce(mr: MrProgram, db: Database,
                  splits: int = 1) -> tuple[dict[str, Multiset], MrTrace]:
    """Fragment the input into near-equal row ranges, map each fragment
    to (key, value) pairs, group by key, and reduce per key in sorted
    key order. The output is split-count independent."""
    if splits < 1:
        raise ValueError(f"splits must be >= 1, got {splits}")
    ms = db.multisets[mr.input]
    ki = ms.schema.index_of(mr.key_field)
    vi = ms.schema.index_of(mr.value_field) if mr.value_field is not None else None

    blocks = DirectBlocks(splits)
    tasks = []
    for t in range(splits):
        task = tuple(
            (ms.rows[r][ki],
             mr.value_literal if vi is None else ms.rows[r][vi])
            for r in blocks.block_range(len(ms.rows), t))
        tasks.append(task)

    groups: dict[Value, list[Value]] = {}
    for task in tasks:
        for k, v in task:
            groups.setdefault(k, []).append(v)

    outputs = []
    for k in sorted(groups):
        vs = groups[k]
        agg = len(vs) if mr.reduce is ReduceKind.COUNT_VALUES else sum(vs)
        outputs.append((k, agg))

    out = Multiset(mr.result, Schema(mr.out_fields), outputs)
    return {mr.result: out}, MrTrace(tuple(tasks), groups, tuple(outputs))
