"""Data reformatting: dictionary keys for strings, columnar layout with
compressed range columns, and unused-field elimination.

Every reformatting is lossless for query purposes: decoding restores a
multiset equal to the source, and programs run over reformatted data
produce the same results (result columns holding dictionary keys are
decoded at the output boundary).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

from forelem import ir
from forelem.engine import Database
from forelem.multiset import (FieldType, Multiset, Schema, Value,
                              ValueRangePartition)


class ReformatError(TypeError):
    pass


@dataclass
class Dictionary:
    """Integer keys for one string field: keys are assigned densely in
    first-occurrence row order, so the mapping is reproducible from the
    data alone."""

    field: str
    forward: dict[str, int] = field(default_factory=dict)
    reverse: list[str] = field(default_factory=list)

    def key_for(self, value: str) -> int:
        if value not in self.forward:
            self.forward[value] = len(self.reverse)
            self.reverse.append(value)
        return self.forward[value]

    def value_for(self, key: int) -> str:
        return self.reverse[key]

    def __len__(self) -> int:
        return len(self.reverse)


@dataclass(frozen=True)
class Plain:
    kind = "plain"


@dataclass(frozen=True)
class DictKeys:
    dictionary: Dictionary
    kind = "dict"


@dataclass(frozen=True)
class RangeDescriptor:
    """A column that is exactly lo, lo+step, ..., hi in row order; the
    stored representation is just these three numbers."""

    lo: int
    hi: int
    step: int
    kind = "range"

    def values(self) -> list[int]:
        if self.step == 0:
            return [self.lo]
        return list(range(self.lo, self.hi + (1 if self.step > 0 else -1),
                          self.step))


Encoding = Union[Plain, DictKeys, RangeDescriptor]


@dataclass
class ColumnarTable:
    name: str
    schema: Schema
    columns: dict[str, list[Value]]        # range columns hold no data
    encodings: dict[str, Encoding]
    n_rows: int
    notes: tuple[str, ...] = ()

    def column_values(self, fname: str) -> list[Value]:
        enc = self.encodings[fname]
        if isinstance(enc, RangeDescriptor):
            return enc.values()
        if isinstance(enc, DictKeys):
            return [enc.dictionary.value_for(k) for k in self.columns[fname]]
        return self.columns[fname]

    def to_rows(self) -> Multiset:
        cols = [self.column_values(f) for f in self.schema.names]
        return Multiset(self.name, self.schema, list(zip(*cols)) if cols else
                        [() for _ in range(self.n_rows)])


def dictionary_encode(db: Database, multiset: str,
                      fname: str) -> tuple[Database, Dictionary]:
    """Replace a string field's values with dense integer keys; the
    returned dictionary restores them."""
    ms = db.multisets[multiset]
    ftype = ms.schema.type_of(fname)
    if ftype != FieldType.STR:
        raise ReformatError(f"{multiset}.{fname} is {ftype.value}, not str; "
                            f"only string fields take dictionary keys")
    d = Dictionary(fname)
    i = ms.schema.index_of(fname)
    rows = [row[:i] + (d.key_for(row[i]),) + row[i + 1:] for row in ms.rows]
    fields = tuple((n, FieldType.INT if n == fname else t)
                   for n, t in ms.schema.fields)
    out = db.copy()
    out.multisets[multiset] = Multiset(multiset, Schema(fields), rows)
    part = out.initial_partitions.get(multiset)
    if isinstance(part, ValueRangePartition) and part.field == fname:
        remapped = tuple(tuple(sorted(d.forward[v] for v in seg))
                         for seg in part.segments)
        out.initial_partitions[multiset] = ValueRangePartition(fname, remapped)
    return out, d


def dictionary_decode(db: Database, multiset: str,
                      dictionary: Dictionary) -> Database:
    ms = db.multisets[multiset]
    fname = dictionary.field
    i = ms.schema.index_of(fname)
    rows = [row[:i] + (dictionary.value_for(row[i]),) + row[i + 1:]
            for row in ms.rows]
    fields = tuple((n, FieldType.STR if n == fname else t)
                   for n, t in ms.schema.fields)
    out = db.copy()
    out.multisets[multiset] = Multiset(multiset, Schema(fields), rows)
    return out


def to_columnar(ms: Multiset, encodings: Optional[dict[str, str]] = None) -> ColumnarTable:
    """Store the multiset column-wise. Requested encodings: "plain",
    "dict" (string fields), "range" (integer fields). A range request
    is honored only when the column, in row order, is exactly an
    arithmetic progression; otherwise the column falls back to plain
    and the table carries a note saying so."""
    encodings = encodings or {}
    for f in encodings:
        ms.schema.index_of(f)  # unknown name raises here
    columns: dict[str, list[Value]] = {}
    chosen: dict[str, Encoding] = {}
    notes: list[str] = []
    for i, (fname, ftype) in enumerate(ms.schema.fields):
        values = [row[i] for row in ms.rows]
        want = encodings.get(fname, "plain")
        if want == "dict":
            if ftype != FieldType.STR:
                raise ReformatError(f"{ms.name}.{fname} is {ftype.value}; "
                                    f"dictionary keys need a string field")
            d = Dictionary(fname)
            columns[fname] = [d.key_for(v) for v in values]
            chosen[fname] = DictKeys(d)
        elif want == "range":
            if ftype != FieldType.INT:
                raise ReformatError(f"{ms.name}.{fname} is {ftype.value}; "
                                    f"range descriptors need an integer field")
            desc = _as_range(values)
            if desc is None:
                notes.append(f"{fname}: not an arithmetic progression in row "
                             f"order, stored plain")
                columns[fname] = values
                chosen[fname] = Plain()
            else:
                columns[fname] = []
                chosen[fname] = desc
        elif want == "plain":
            columns[fname] = values
            chosen[fname] = Plain()
        else:
            raise ReformatError(f"unknown encoding {want!r} for {fname}")
    return ColumnarTable(ms.name, ms.schema, columns, chosen, len(ms.rows),
                         tuple(notes))


def _as_range(values: list[Value]) -> Optional[RangeDescriptor]:
    # Row order must equal the reconstruction; sorted-distinct matching
    # alone would scramble tuples when rows are recombined.
    if not values:
        return None
    if len(values) == 1:
        return RangeDescriptor(values[0], values[0], 0)
    step = values[1] - values[0]
    if step == 0:
        return None
    for a, b in zip(values, values[1:]):
        if b - a != step:
            return None
    return RangeDescriptor(values[0], values[-1], step)


def from_columnar(table: ColumnarTable) -> Multiset:
    return table.to_rows()


# --- unused-field elimination ---

@dataclass(frozen=True)
class FieldDropReport:
    dropped: dict[str, tuple[str, ...]]

    def __str__(self) -> str:
        if not self.dropped:
            return "drop_unused_fields: every stored field is accessed"
        parts = [f"{ms}: {', '.join(fs)}" for ms, fs in sorted(self.dropped.items())]
        return "drop_unused_fields: dropped " + "; ".join(parts)


def drop_unused_fields(program: ir.Program,
                       db: Database) -> tuple[Database, FieldDropReport]:
    """Remove stored fields the program never touches. The program runs
    unchanged over the narrowed layout because field lookup is by name."""
    used = ir.def_use(program).ms_fields_read
    out = db.copy()
    dropped: dict[str, tuple[str, ...]] = {}
    for name, decl in program.multiset_decls().items():
        ms = out.multisets.get(name)
        if ms is None:
            continue
        keep = used.get(name, set())
        gone = tuple(f for f, _ in ms.schema.fields if f not in keep)
        if not gone:
            continue
        kept_fields = tuple((f, t) for f, t in ms.schema.fields if f in keep)
        idx = [ms.schema.index_of(f) for f, _ in kept_fields]
        rows = [tuple(row[i] for i in idx) for row in ms.rows]
        out.multisets[name] = Multiset(name, Schema(kept_fields), rows)
        dropped[name] = gone
        part = out.initial_partitions.get(name)
        if isinstance(part, ValueRangePartition) and part.field not in keep:
            del out.initial_partitions[name]
    return out, FieldDropReport(dropped)


# --- decoding result columns that carry dictionary keys ---

def result_column_sources(program: ir.Program) -> dict[tuple[str, int], set]:
    """For each (result, column) the (multiset, field) pairs whose values
    can flow there through unions, chasing intermediate results."""
    decls = program.result_decls()
    direct: dict[tuple[str, int], set] = {}
    for _, s in ir.iter_stmts(program):
        if not isinstance(s, ir.ResultUnion):
            continue
        for col, e in enumerate(s.exprs):
            spot = direct.setdefault((s.result, col), set())
            if isinstance(e, ir.FieldAccess):
                spot.add((e.multiset, e.field))
            else:
                spot.add(None)  # computed value, not a stored field

    def resolve(key: tuple[str, int], seen: frozenset) -> set:
        if key in seen:
            return set()
        out = set()
        for src in direct.get(key, set()):
            if src is None:
                out.add(None)
            elif src[0] in decls:
                fields = decls[src[0]].fields
                col = next(i for i, (f, _) in enumerate(fields) if f == src[1])
                out |= resolve((src[0], col), seen | {key})
            else:
                out.add(src)
        return out

    return {key: resolve(key, frozenset()) for key in direct}


def decode_results(results: dict[str, Multiset], program: ir.Program,
                   dictionaries: dict[tuple[str, str], Dictionary]) -> dict[str, Multiset]:
    """Map key-valued result columns back to strings wherever every
    possible source of the column is one dictionary-encoded field."""
    if not dictionaries:
        return results
    sources = result_column_sources(program)
    out: dict[str, Multiset] = {}
    for rname, ms in results.items():
        decoders: dict[int, Dictionary] = {}
        for col in range(len(ms.schema.fields)):
            srcs = sources.get((rname, col), set())
            found = [dictionaries.get(s) for s in srcs if s is not None]
            if (srcs and None not in srcs and all(d is not None for d in found)
                    and len({tuple(d.reverse) for d in found}) == 1):
                decoders[col] = found[0]
        if not decoders:
            out[rname] = ms
            continue
        rows = [tuple(decoders[i].value_for(v) if i in decoders else v
                      for i, v in enumerate(row)) for row in ms.rows]
        fields = tuple((f, FieldType.STR if i in decoders else t)
                       for i, (f, t) in enumerate(ms.schema.fields))
        out[rname] = Multiset(rname, Schema(fields), rows)
    return out


def adapt_program(program: ir.Program,
                  dictionaries: dict[tuple[str, str], Dictionary]) -> ir.Program:
    """Rewrite a program's declarations and string literals so it runs
    over a dictionary-encoded database: encoded fields become int, result
    columns fed only by encoded fields become int, and literal filters on
    encoded fields are mapped through the dictionary. Result columns that
    mix encoded and unencoded sources cannot be typed and are rejected."""
    if not dictionaries:
        return program
    encoded = set(dictionaries)
    sources = result_column_sources(program)

    decls: list[ir.Decl] = []
    for d in program.decls:
        if isinstance(d, ir.MultisetDecl):
            fields = tuple((f, FieldType.INT if (d.name, f) in encoded else t)
                           for f, t in d.fields)
            decls.append(replace(d, fields=fields))
        elif isinstance(d, ir.ResultDecl):
            fields = []
            for col, (f, t) in enumerate(d.fields):
                srcs = sources.get((d.name, col), set())
                hit = {s for s in srcs if s in encoded}
                if hit and (None in srcs or len(hit) < len(srcs)):
                    raise ReformatError(
                        f"result {d.name}.{f} mixes encoded and plain "
                        f"sources; cannot retype it")
                fields.append((f, FieldType.INT if hit else t))
            decls.append(replace(d, fields=tuple(fields)))
        else:
            decls.append(d)

    def fix(s: ir.Stmt) -> ir.Stmt:
        body = ir.stmt_body(s)
        if body is not None:
            s = ir.with_body(s, tuple(fix(c) for c in body))
        if isinstance(s, ir.Forelem) and s.domain.filter is not None:
            f, e = s.domain.filter
            if (s.domain.multiset, f) in encoded and isinstance(e, ir.StrLit):
                key = dictionaries[(s.domain.multiset, f)].forward.get(e.value, -1)
                s = replace(s, domain=replace(s.domain,
                                              filter=(f, ir.IntLit(key))))
        return s

    return replace(program, decls=tuple(decls),
                   body=tuple(fix(s) for s in program.body))


def auto_reformat(program: ir.Program,
                  db: Database) -> tuple[ir.Program, Database,
                                         dict[tuple[str, str], Dictionary], list[str]]:
    """Encode every string field the program uses as a grouping or
    filter key, since those drive value comparisons and index lookups,
    then adapt the program to the encoded layout."""
    key_fields: set[tuple[str, str]] = set()
    for _, s in ir.iter_stmts(program):
        if isinstance(s, ir.Forelem):
            dom = s.domain
            if dom.distinct is not None:
                key_fields.add((dom.multiset, dom.distinct))
            if dom.filter is not None:
                key_fields.add((dom.multiset, dom.filter[0]))
        if isinstance(s, (ir.Accumulate, ir.AccumInit)) and s.cell is not None:
            if isinstance(s.cell, ir.FieldAccess):
                key_fields.add((s.cell.multiset, s.cell.field))
    for d in program.decls:
        if isinstance(d, ir.ValuesDecl):
            key_fields.add((d.multiset, d.field))

    dictionaries: dict[tuple[str, str], Dictionary] = {}
    notes: list[str] = []
    for ms_name, fname in sorted(key_fields):
        ms = db.multisets.get(ms_name)
        if ms is None or fname not in ms.schema.names:
            continue
        if ms.schema.type_of(fname) != FieldType.STR:
            continue
        db, d = dictionary_encode(db, ms_name, fname)
        dictionaries[(ms_name, fname)] = d
        notes.append(f"encoded {ms_name}.{fname}: {len(d)} distinct keys")
    return adapt_program(program, dictionaries), db, dictionaries, notes


# --- the columnar store on disk ---

_TYPE_TAGS = {FieldType.INT: "int", FieldType.FLOAT: "float", FieldType.STR: "str"}
_TAG_TYPES = {v: k for k, v in _TYPE_TAGS.items()}


def _write_column(path: Path, values: list[Value], tag: str) -> None:
    with open(path, "wb") as fh:
        if tag == "int":
            fh.write(struct.pack(f"<{len(values)}q", *values))
        elif tag == "float":
            fh.write(struct.pack(f"<{len(values)}d", *values))
        else:
            for v in values:
                raw = v.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)


def _read_column(path: Path, n: int, tag: str) -> list[Value]:
    data = path.read_bytes()
    if tag == "int":
        return list(struct.unpack(f"<{n}q", data))
    if tag == "float":
        return list(struct.unpack(f"<{n}d", data))
    out, at = [], 0
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", data, at)
        at += 4
        out.append(data[at:at + ln].decode("utf-8"))
        at += ln
    return out


def save_columnar(table: ColumnarTable, directory: str | Path) -> Path:
    """One binary file per stored column plus a JSON manifest; range
    columns live entirely in the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"multiset": table.name, "rows": table.n_rows,
                      "columns": []}
    for fname, ftype in table.schema.fields:
        enc = table.encodings[fname]
        entry: dict = {"name": fname, "type": _TYPE_TAGS[ftype]}
        if isinstance(enc, RangeDescriptor):
            entry["encoding"] = {"kind": "range", "lo": enc.lo, "hi": enc.hi,
                                 "step": enc.step}
        else:
            fn = f"{table.name}.{fname}.col"
            tag = "int" if isinstance(enc, DictKeys) else _TYPE_TAGS[ftype]
            _write_column(directory / fn, table.columns[fname], tag)
            if isinstance(enc, DictKeys):
                entry["encoding"] = {"kind": "dict",
                                     "reverse": enc.dictionary.reverse}
            else:
                entry["encoding"] = {"kind": "plain"}
            entry["file"] = fn
        manifest["columns"].append(entry)
    path = directory / f"{table.name}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_columnar(manifest_path: str | Path) -> ColumnarTable:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    name, n = manifest["multiset"], manifest["rows"]
    fields, columns, encodings = [], {}, {}
    for entry in manifest["columns"]:
        fname = entry["name"]
        ftype = _TAG_TYPES[entry["type"]]
        fields.append((fname, ftype))
        enc = entry["encoding"]
        if enc["kind"] == "range":
            encodings[fname] = RangeDescriptor(enc["lo"], enc["hi"], enc["step"])
            columns[fname] = []
            continue
        tag = "int" if enc["kind"] == "dict" else entry["type"]
        columns[fname] = _read_column(manifest_path.parent / entry["file"], n, tag)
        if enc["kind"] == "dict":
            d = Dictionary(fname, {v: i for i, v in enumerate(enc["reverse"])},
                           list(enc["reverse"]))
            encodings[fname] = DictKeys(d)
        else:
            encodings[fname] = Plain()
    return ColumnarTable(name, Schema(tuple(fields)), columns, encodings, n)
