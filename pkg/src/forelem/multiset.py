"""In-memory multisets of tuples, index sets over them, and hash indexes.

Rows are plain Python tuples; a row handle is the row's position in its
multiset. Multisets are immutable after construction and compare equal
when they hold the same tuples with the same multiplicities, regardless
of row order.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

Value = Union[int, str, float]


class SchemaError(Exception):
    """Unknown field, duplicate field, or arity mismatch."""


class FieldTypeError(TypeError):
    """A value's type does not match the declared field type."""


class FieldType(enum.Enum):
    INT = "int"
    STR = "str"
    FLOAT = "float"

    @classmethod
    def parse(cls, text: str) -> "FieldType":
        aliases = {
            "int": cls.INT, "integer": cls.INT,
            "str": cls.STR, "string": cls.STR,
            "float": cls.FLOAT,
        }
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise SchemaError(f"unknown field type {text!r}") from None


def value_matches(value: Value, ftype: FieldType) -> bool:
    if ftype is FieldType.INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if ftype is FieldType.STR:
        return isinstance(value, str)
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class Schema:
    """Ordered list of (field name, field type); names unique."""

    fields: tuple[tuple[str, FieldType], ...]

    def __post_init__(self) -> None:
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in schema: {names}")

    @classmethod
    def of(cls, *pairs: tuple[str, str | FieldType], **named: str | FieldType) -> "Schema":
        items = list(pairs) + list(named.items())
        return cls(tuple(
            (n, t if isinstance(t, FieldType) else FieldType.parse(t))
            for n, t in items
        ))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.fields)

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.fields):
            if n == name:
                return i
        raise SchemaError(f"unknown field {name!r}")

    def type_of(self, name: str) -> FieldType:
        return self.fields[self.index_of(name)][1]

    def check_row(self, row: Sequence[Value]) -> None:
        if len(row) != len(self.fields):
            raise SchemaError(
                f"row arity {len(row)} does not match schema arity {len(self.fields)}")
        for v, (n, t) in zip(row, self.fields):
            if not value_matches(v, t):
                raise FieldTypeError(f"field {n!r} expects {t.value}, got {v!r}")


class Multiset:
    """Named bag of schema-conforming tuples. Duplicates are preserved."""

    def __init__(self, name: str, schema: Schema, rows: Iterable[Sequence[Value]] = ()):
        self.name = name
        self.schema = schema
        self.rows: list[tuple[Value, ...]] = []
        for row in rows:
            t = tuple(row)
            schema.check_row(t)
            self.rows.append(t)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[tuple[Value, ...]]:
        return iter(self.rows)

    def __eq__(self, other: object) -> bool:
        # Order-insensitive: same tuples with the same multiplicities.
        if not isinstance(other, Multiset):
            return NotImplemented
        return self.schema == other.schema and Counter(self.rows) == Counter(other.rows)

    def __hash__(self):  # pragma: no cover - bags are not hashable
        raise TypeError("Multiset is unhashable")

    def __repr__(self) -> str:
        return f"Multiset({self.name!r}, {len(self.rows)} rows)"

    def field_values(self, fname: str) -> Iterator[Value]:
        i = self.schema.index_of(fname)
        return (row[i] for row in self.rows)

    def value_at(self, handle: int, fname: str) -> Value:
        return self.rows[handle][self.schema.index_of(fname)]


@dataclass(frozen=True)
class DirectBlocks:
    """Direct partitioning: the row range split into n contiguous blocks."""

    n: int

    def block_range(self, total: int, k: int) -> range:
        # Balanced split: block sizes differ by at most one.
        if not 0 <= k < self.n:
            raise ValueError(f"block index {k} out of range for n={self.n}")
        base, extra = divmod(total, self.n)
        start = k * base + min(k, extra)
        return range(start, start + base + (1 if k < extra else 0))


@dataclass(frozen=True)
class ValueRangePartition:
    """A field's distinct-value set split into pairwise-disjoint segments.

    Segments are stored as sorted tuples so that iteration order and
    segment maps are deterministic.
    """

    field: str
    segments: tuple[tuple[Value, ...], ...]

    @property
    def n(self) -> int:
        return len(self.segments)

    def segment_of(self, value: Value) -> Optional[int]:
        for i, seg in enumerate(self.segments):
            if value in seg:
                return i
        return None

    def empty_segment_indices(self) -> list[int]:
        return [i for i, seg in enumerate(self.segments) if not seg]


Partition = Union[DirectBlocks, ValueRangePartition]


@dataclass(frozen=True)
class IndexSet:
    """Which rows of a base multiset a loop visits.

    ``filter`` and ``distinct_on`` are mutually exclusive; an optional
    partition restricts enumeration to one block/segment.
    """

    base: Multiset
    filter: Optional[tuple[str, Value]] = None
    distinct_on: Optional[str] = None
    partition: Optional[tuple[Partition, int]] = None

    def __post_init__(self) -> None:
        if self.filter is not None and self.distinct_on is not None:
            raise ValueError("filter and distinct_on are mutually exclusive")
        if self.filter is not None:
            fname, fval = self.filter
            ftype = self.base.schema.type_of(fname)
            if not value_matches(fval, ftype):
                raise FieldTypeError(
                    f"filter on {fname!r} expects {ftype.value}, got {fval!r}")
        if self.distinct_on is not None:
            self.base.schema.index_of(self.distinct_on)
        if self.partition is not None:
            part, k = self.partition
            if isinstance(part, ValueRangePartition):
                self.base.schema.index_of(part.field)
                if not 0 <= k < part.n:
                    raise ValueError(f"segment index {k} out of range")


def _partition_scope(ixs: IndexSet) -> Iterator[int]:
    """Row handles restricted to the index set's partition, if any."""
    total = len(ixs.base)
    if ixs.partition is None:
        return iter(range(total))
    part, k = ixs.partition
    if isinstance(part, DirectBlocks):
        return iter(part.block_range(total, k))
    col = ixs.base.schema.index_of(part.field)
    seg = set(part.segments[k])
    return (h for h in range(total) if ixs.base.rows[h][col] in seg)


def enumerate_rows(ixs: IndexSet) -> Iterator[int]:
    """Yield the handles of the rows the index set visits, in base order.

    With ``distinct_on``, yields the first row per distinct value of that
    field (within the partition scope, if one is set).
    """
    scope = _partition_scope(ixs)
    if ixs.filter is not None:
        fname, fval = ixs.filter
        col = ixs.base.schema.index_of(fname)
        return (h for h in scope if ixs.base.rows[h][col] == fval)
    if ixs.distinct_on is not None:
        col = ixs.base.schema.index_of(ixs.distinct_on)

        def first_per_value() -> Iterator[int]:
            seen: set[Value] = set()
            for h in scope:
                v = ixs.base.rows[h][col]
                if v not in seen:
                    seen.add(v)
                    yield h

        return first_per_value()
    return scope


@dataclass
class HashIndex:
    """Hash index over one field: key value -> handles of matching rows."""

    base: Multiset
    key_field: str
    buckets: dict[Value, list[int]] = field(default_factory=dict)

    def lookup(self, key: Value) -> list[int]:
        return self.buckets.get(key, [])


def build_hash_index(base: Multiset, key_field: str) -> HashIndex:
    col = base.schema.index_of(key_field)
    idx = HashIndex(base, key_field)
    for h, row in enumerate(base.rows):
        idx.buckets.setdefault(row[col], []).append(h)
    return idx


def value_range(base: Multiset, fname: str) -> set[Value]:
    """De-duplicated set of a field's values across all rows."""
    col = base.schema.index_of(fname)
    return {row[col] for row in base.rows}


def sort_values(values: Iterable[Value]) -> list[Value]:
    """Deterministic order: numeric for numbers, lexicographic for strings."""
    vals = list(values)
    kinds = {isinstance(v, str) for v in vals}
    if len(kinds) > 1:
        raise FieldTypeError("cannot order values of mixed types")
    return sorted(vals)


def partition_values(values: Iterable[Value], n: int, fname: str = "") -> ValueRangePartition:
    """Split a value set into n contiguous near-equal segments.

    Values are sorted, then cut into n blocks whose sizes differ by at
    most one. Segments beyond the number of distinct values come out
    empty; callers can inspect ``empty_segment_indices``.
    """
    if n < 1:
        raise ValueError(f"segment count must be >= 1, got {n}")
    ordered = sort_values(set(values))
    blocks = DirectBlocks(n)
    segments = tuple(
        tuple(ordered[i] for i in blocks.block_range(len(ordered), k))
        for k in range(n)
    )
    return ValueRangePartition(fname, segments)


def ceil_div(a: int, b: int) -> int:
    return math.ceil(a / b)


def multiset_counter(rows: Iterable[Sequence[Any]]) -> Counter:
    return Counter(tuple(r) for r in rows)
