"""Reading databases from a data directory and writing run outputs.

A data directory holds one table per name in either layout:

  row form       <Name>.csv (header row) + <Name>.schema.json
  columnar form  <Name>.manifest.json + <Name>.<field>.col files

plus an optional <Name>.partition.json recording how the table is
initially partitioned. Result CSVs are written with rows sorted by all
columns left to right, since multisets carry no order of their own;
stats JSON uses one fixed key order so runs diff cleanly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Optional

from forelem import reformat
from forelem.engine import Database, ExecStats
from forelem.multiset import (DirectBlocks, FieldType, Multiset, Schema,
                              Value, ValueRangePartition)


class DataError(Exception):
    pass


def _convert(text: str, ftype: FieldType, where: str) -> Value:
    try:
        if ftype == FieldType.INT:
            return int(text)
        if ftype == FieldType.FLOAT:
            return float(text)
        return text
    except ValueError:
        raise DataError(f"{where}: {text!r} is not {ftype.value}") from None


def _load_schema(path: Path) -> Schema:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        fields = tuple((f, FieldType.parse(t)) for f, t in raw["fields"])
        return Schema(fields)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path.name}: bad schema sidecar ({e})") from None


def _load_csv_table(name: str, directory: Path) -> Multiset:
    schema = _load_schema(directory / f"{name}.schema.json")
    csv_path = directory / f"{name}.csv"
    if not csv_path.exists():
        raise DataError(f"{name}.schema.json has no matching {name}.csv")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != schema.names:
            raise DataError(f"{name}.csv: header {header} does not match "
                            f"schema fields {list(schema.names)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(schema.fields):
                raise DataError(f"{name}.csv:{lineno}: expected "
                                f"{len(schema.fields)} values, got {len(rec)}")
            rows.append(tuple(_convert(v, t, f"{name}.csv:{lineno}")
                              for v, (_, t) in zip(rec, schema.fields)))
    return Multiset(name, schema, rows)


def _load_partition(path: Path):
    raw = json.loads(path.read_text(encoding="utf-8"))
    kind = raw.get("kind")
    if kind == "direct":
        return DirectBlocks(int(raw["n"]))
    if kind == "value-range":
        return ValueRangePartition(raw["field"],
                                   tuple(tuple(seg) for seg in raw["segments"]))
    raise DataError(f"{path.name}: unknown partition kind {kind!r}")


def load_database(directory: str | Path) -> Database:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    row_names = {p.name[:-len(".schema.json")]
                 for p in directory.glob("*.schema.json")}
    col_names = {p.name[:-len(".manifest.json")]
                 for p in directory.glob("*.manifest.json")}
    both = row_names & col_names
    if both:
        raise DataError(f"tables stored in both layouts: {sorted(both)}")
    if not row_names and not col_names:
        raise DataError(f"{directory}: no *.schema.json or *.manifest.json")

    multisets: dict[str, Multiset] = {}
    for name in sorted(row_names):
        multisets[name] = _load_csv_table(name, directory)
    for name in sorted(col_names):
        table = reformat.load_columnar(directory / f"{name}.manifest.json")
        multisets[name] = table.to_rows()

    partitions: dict[str, Any] = {}
    for p in sorted(directory.glob("*.partition.json")):
        name = p.name[:-len(".partition.json")]
        if name not in multisets:
            raise DataError(f"{p.name} names an unknown table")
        partitions[name] = _load_partition(p)
    return Database(multisets, partitions)


def save_database(db: Database, directory: str | Path,
                  columnar: Optional[dict[str, dict[str, str]]] = None) -> list[str]:
    """Write every table as CSV + schema sidecar, or columnar for the
    names listed in `columnar` (mapping table -> per-field encodings).
    Returns the encoding-fallback notes, if any."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columnar = columnar or {}
    notes: list[str] = []
    for name, ms in sorted(db.multisets.items()):
        if name in columnar:
            table = reformat.to_columnar(ms, columnar[name])
            notes.extend(f"{name}: {note}" for note in table.notes)
            reformat.save_columnar(table, directory)
        else:
            sidecar = {"fields": [[f, t.value] for f, t in ms.schema.fields]}
            (directory / f"{name}.schema.json").write_text(
                json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
            with open(directory / f"{name}.csv", "w", newline="",
                      encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(ms.schema.names)
                w.writerows(ms.rows)
    for name, part in sorted(db.initial_partitions.items()):
        if isinstance(part, DirectBlocks):
            raw: dict[str, Any] = {"kind": "direct", "n": part.n}
        else:
            raw = {"kind": "value-range", "field": part.field,
                   "segments": [list(seg) for seg in part.segments]}
        (directory / f"{name}.partition.json").write_text(
            json.dumps(raw, indent=2) + "\n", encoding="utf-8")
    return notes


def format_result_csv(ms: Multiset) -> str:
    """Canonical text for one result: header then rows sorted by all
    columns, left to right."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ms.schema.names)
    w.writerows(sorted(ms.rows))
    return out.getvalue()


_STATS_KEYS = ("inner_iterations", "hash_probes", "hash_builds",
               "redistribution_events", "per_worker_iterations")


def stats_dict(stats: ExecStats, **config: Any) -> dict[str, Any]:
    """One dict in fixed key order: config first, counters after."""
    out: dict[str, Any] = {}
    for key in ("program", "data", "backend", "pool", "policy", "splits",
                "faults", "threads", "seed", "hash_threshold", "passes"):
        if key in config and config[key] is not None:
            out[key] = config[key]
    for key in _STATS_KEYS:
        out[key] = getattr(stats, key)
    out["n_chunks"] = [len(t.entries) for t in stats.chunks]
    if "wall_time_s" in config and config["wall_time_s"] is not None:
        out["wall_time_s"] = config["wall_time_s"]
    return out


def format_stats_json(stats: ExecStats, **config: Any) -> str:
    return json.dumps(stats_dict(stats, **config), indent=2) + "\n"
