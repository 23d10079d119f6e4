"""Command-line driver: compile SQL or loop IR through the pass
pipeline, run it on a chosen backend, and report results and counters.

Exit codes, by error class:

  0  success
  2  bad usage: unknown flags, invalid configs, missing inputs
  3  program errors: syntax, unsupported SQL, failed validation,
     no derivable MapReduce pattern
  4  data errors: unreadable or inconsistent data directories
  5  execution errors: runtime failures, unrecoverable worker loss
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from forelem import dataio, ir, mapreduce, reformat, sqlfront, transforms
from forelem.engine import (Database, ExecError, ExecStats,
                            count_redistributions, run_parallel_sim,
                            run_sequential)
from forelem.multiset import FieldTypeError, SchemaError
from forelem.scheduler import AllWorkersFailed, parse_fault, parse_policy

EXIT_OK, EXIT_USAGE, EXIT_PROGRAM, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- pass selection ---

def _parallelize_all(prog: ir.Program):
    last = None
    for idx in reversed(range(len(prog.body))):
        if isinstance(prog.body[idx], ir.ForRange):
            prog, last = transforms.parallelize(prog, (idx,))
    if last is None:
        last = transforms.PassReport("parallelize", False,
                                     "no blocked loops to parallelize")
    return prog, last


def _named_passes(db: Optional[Database], n: int, threshold: int):
    return {
        "eliminate-dead": transforms.eliminate_dead_access,
        "merge-consumer": transforms.merge_consumer,
        "expand-hoist": transforms.expand_and_hoist,
        "auto-partition": lambda p: _flatten(transforms.auto_partition(p, n)),
        "parallelize": _parallelize_all,
        "fuse-adjacent": lambda p: transforms.fuse_adjacent(p, db=db),
        "select-method": lambda p: transforms.select_iteration_method(
            p, db=db, threshold=threshold),
    }


def _flatten(pair):
    prog, reports = pair
    applied = [r for r in reports if r.applied]
    if not applied:
        detail = "; ".join(r.detail for r in reports) or "nothing to partition"
        return prog, transforms.PassReport("auto_partition", False, detail)
    paths = tuple(p for r in applied for p in r.paths)
    return prog, transforms.PassReport(
        "auto_partition", True, "; ".join(r.detail for r in applied), paths)


def apply_passes(prog: ir.Program, spec: str, db: Optional[Database],
                 n_partitions: int, threshold: int):
    """Run the passes named by `spec` ("default", "none", or a comma
    list); returns the program, the reports, and per-pass snapshots."""
    snapshots: list[tuple[str, ir.Program]] = []
    if spec == "none":
        return prog, [], snapshots
    if spec == "default":
        prog, reports = transforms.apply_default_pipeline(
            prog, n_partitions=n_partitions, db=db, hash_threshold=threshold,
            trace=snapshots)
        return prog, reports, snapshots
    table = _named_passes(db, n_partitions, threshold)
    reports = []
    for name in spec.split(","):
        name = name.strip()
        fn = table.get(name)
        if fn is None:
            raise CliError(EXIT_USAGE,
                           f"unknown pass {name!r}; choose from "
                           f"{', '.join(sorted(table))}, default, none")
        prog, rep = fn(prog)
        reports.append(rep)
        if rep.applied:
            snapshots.append((rep.name, prog))
    return prog, reports, snapshots


# --- program + data loading ---

def _parse_params(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, val = pair.partition("=")
        if not sep or not key:
            raise CliError(EXIT_USAGE, f"--param expects name=value, got {pair!r}")
        for cast in (int, float):
            try:
                out[key] = cast(val)
                break
            except ValueError:
                continue
        else:
            out[key] = val
    return out


def load_data(args) -> Optional[Database]:
    if getattr(args, "data", None) is None:
        return None
    return dataio.load_database(args.data)


def load_program(path_text: str, db: Optional[Database],
                 params: dict) -> ir.Program:
    path = Path(path_text)
    if path.suffix not in (".sql", ".fl"):
        raise CliError(EXIT_USAGE,
                       f"program source must end in .sql or .fl: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {e}") from None
    if path.suffix == ".sql":
        if db is None:
            raise CliError(EXIT_USAGE,
                           "compiling .sql needs --data for table schemas")
        script = sqlfront.parse_sql(text)
        catalog = {name: ms.schema for name, ms in db.multisets.items()}
        prog = sqlfront.lower_to_forelem(script, catalog, params or None)
    else:
        prog = ir.parse_ir(text)
    diags = ir.validate(prog)
    if diags:
        raise CliError(EXIT_PROGRAM,
                       "\n".join(d.message for d in diags))
    return prog


def _derive_mr(prog: ir.Program, db: Optional[Database],
               n_partitions: int, threshold: int) -> mapreduce.MrProgram:
    m = mapreduce.derive_mapreduce(prog)
    if m is None:
        transformed, _ = transforms.apply_default_pipeline(
            prog, n_partitions=n_partitions, db=db, hash_threshold=threshold)
        m = mapreduce.derive_mapreduce(transformed)
    if m is None:
        raise CliError(EXIT_PROGRAM,
                       "no two-adjacent-loop accumulate/read pattern; "
                       "cannot derive a MapReduce program")
    return m


def _write_results(results: dict, out: Optional[str]) -> None:
    if out is None:
        for name in sorted(results):
            if len(results) > 1:
                sys.stdout.write(f"# result {name}\n")
            sys.stdout.write(dataio.format_result_csv(results[name]))
        return
    path = Path(out)
    if len(results) == 1:
        (name,) = results
        path.write_text(dataio.format_result_csv(results[name]),
                        encoding="utf-8")
        return
    path.mkdir(parents=True, exist_ok=True)
    for name in sorted(results):
        (path / f"{name}.csv").write_text(
            dataio.format_result_csv(results[name]), encoding="utf-8")


def _write_stats(stats: ExecStats, args, backend: str, wall: float,
                 **extra) -> None:
    if args.stats is None:
        return
    text = dataio.format_stats_json(
        stats, program=str(args.program), data=getattr(args, "data", None),
        backend=backend, seed=args.seed, wall_time_s=round(wall, 6), **extra)
    if args.stats == "-":
        sys.stdout.write(text)
    else:
        Path(args.stats).write_text(text, encoding="utf-8")


# --- subcommands ---

def cmd_compile(args) -> int:
    db = load_data(args)
    prog = load_program(args.program, db, _parse_params(args.param))
    final, reports, snapshots = apply_passes(
        prog, args.passes, db, args.partitions, args.hash_threshold)
    print("-- input")
    print(ir.pretty(prog), end="")
    for rep in reports:
        print(f"-- {rep}")
    for name, snap in snapshots:
        print(f"-- after {name}")
        print(ir.pretty(snap), end="")
    if args.out:
        Path(args.out).write_text(ir.pretty(final), encoding="utf-8")
    return EXIT_OK


def cmd_run(args) -> int:
    db = load_data(args)
    if db is None:
        raise CliError(EXIT_USAGE, "run needs --data")
    prog = load_program(args.program, db, _parse_params(args.param))

    dicts: dict = {}
    if args.auto_reformat:
        prog, db, dicts, notes = reformat.auto_reformat(prog, db)
        for note in notes:
            print(f"reformat: {note}", file=sys.stderr)

    prog, _, _ = apply_passes(prog, args.passes, db, args.partitions,
                              args.hash_threshold)

    t0 = time.perf_counter()
    extra: dict = {"passes": args.passes}
    if args.backend == "seq":
        outcome = run_sequential(prog, db)
        results, stats = outcome.results, outcome.stats
    elif args.backend == "par":
        outcome = run_parallel_sim(
            prog, db, pool=args.pool, policy=parse_policy(args.policy),
            faults=[parse_fault(f) for f in args.fault],
            threads=args.threads)
        results, stats = outcome.results, outcome.stats
        extra.update(pool=args.pool, policy=args.policy,
                     faults=args.fault or None, threads=args.threads or None)
    else:
        m = _derive_mr(prog, db, args.partitions, args.hash_threshold)
        results, _trace = mapreduce.run_mapreduce(m, db, args.splits)
        stats = ExecStats()
        extra.update(splits=args.splits)
    wall = time.perf_counter() - t0

    if dicts and not args.raw_keys:
        results = reformat.decode_results(results, prog, dicts)
    _write_results(results, args.out)
    _write_stats(stats, args, args.backend, wall, **extra)
    return EXIT_OK


def cmd_explain(args) -> int:
    db = load_data(args)
    prog = load_program(args.program, db, _parse_params(args.param))
    prog, reports, _ = apply_passes(prog, args.passes, db, args.partitions,
                                    args.hash_threshold)
    print("program:")
    print(ir.pretty(prog), end="")
    for rep in reports:
        print(f"pass: {rep}")

    du = ir.def_use(prog)
    print("def-use:")
    print(f"  writes: {', '.join(sorted(du.writes)) or 'none'}")
    print(f"  reads: {', '.join(sorted(du.reads)) or 'none'}")
    dead = ", ".join(str(p) for p in du.dead_paths) or "none"
    print(f"  dead statements: {dead}")
    for name in sorted(du.ms_fields_read):
        fields = ", ".join(sorted(du.ms_fields_read[name]))
        print(f"  {name} fields read: {fields or 'none'}")

    methods = [(path, s.method) for path, s in ir.iter_stmts(prog)
               if isinstance(s, ir.Forelem) and s.method is not None]
    print("iteration methods:")
    if methods:
        for path, m in methods:
            print(f"  loop at {path}: @{m}")
    else:
        print("  none annotated (plain scans)")

    if db is not None:
        report = count_redistributions(prog, db)
        print(f"redistribution events: {report.count}")
        for event in report.events:
            print(f"  - {event.describe()}")
    return EXIT_OK


@dataclass
class BenchConfig:
    label: str
    backend: str
    pool: int = 4
    policy: str = "gss"
    splits: int = 4
    method: Optional[str] = None
    layout: str = "row"
    passes: str = "none"


def _parse_bench_config(spec: str) -> BenchConfig:
    head, _, rest = spec.partition(":")
    if head not in ("seq", "par", "mr"):
        raise CliError(EXIT_USAGE,
                       f"--config must start with seq, par or mr: {spec!r}")
    cfg = BenchConfig(label=spec, backend=head)
    if rest:
        for part in rest.split(","):
            key, sep, val = part.partition("=")
            if not sep:
                raise CliError(EXIT_USAGE, f"bad --config option {part!r}")
            if key == "p":
                cfg.pool = int(val)
            elif key == "policy":
                cfg.policy = val
            elif key == "splits":
                cfg.splits = int(val)
            elif key == "method":
                if val not in ("scan", "hash"):
                    raise CliError(EXIT_USAGE, "method= takes scan or hash")
                cfg.method = val
            elif key == "layout":
                if val not in ("row", "dict", "columnar"):
                    raise CliError(EXIT_USAGE,
                                   "layout= takes row, dict or columnar")
                cfg.layout = val
            elif key == "passes":
                cfg.passes = val
            else:
                raise CliError(EXIT_USAGE, f"unknown --config key {key!r}")
    return cfg


def _bench_one(cfg: BenchConfig, args):
    db = dataio.load_database(args.data)
    prog = load_program(args.program, db, _parse_params(args.param))

    dicts: dict = {}
    if cfg.layout == "dict":
        prog, db, dicts, _ = reformat.auto_reformat(prog, db)
    elif cfg.layout == "columnar":
        for name, ms in list(db.multisets.items()):
            db.multisets[name] = reformat.from_columnar(reformat.to_columnar(ms))

    prog, _, _ = apply_passes(prog, cfg.passes, db, args.partitions,
                              args.hash_threshold)
    if cfg.method is not None:
        threshold = 0 if cfg.method == "hash" else 10 ** 9
        prog, _ = transforms.select_iteration_method(prog, db=db,
                                                     threshold=threshold)

    t0 = time.perf_counter()
    if cfg.backend == "seq":
        outcome = run_sequential(prog, db)
        results, stats = outcome.results, outcome.stats
    elif cfg.backend == "par":
        outcome = run_parallel_sim(prog, db, pool=cfg.pool,
                                   policy=parse_policy(cfg.policy))
        results, stats = outcome.results, outcome.stats
    else:
        m = _derive_mr(prog, db, args.partitions, args.hash_threshold)
        results, _ = mapreduce.run_mapreduce(m, db, cfg.splits)
        stats = ExecStats()
    wall = time.perf_counter() - t0
    if dicts:
        results = reformat.decode_results(results, prog, dicts)
    return results, stats, wall


def cmd_bench(args) -> int:
    if len(args.config) < 2:
        raise CliError(EXIT_USAGE,
                       "bench compares configurations; give at least two "
                       "--config values")
    if args.data is None:
        raise CliError(EXIT_USAGE, "bench needs --data")
    configs = [_parse_bench_config(s) for s in args.config]

    rows = []
    baseline = None
    for cfg in configs:
        results, stats, wall = _bench_one(cfg, args)
        if baseline is None:
            baseline = results
        elif not (sorted(baseline) == sorted(results) and all(
                baseline[k] == results[k] for k in baseline)):
            raise CliError(EXIT_RUNTIME,
                           f"config {cfg.label!r} produced different results "
                           f"than {configs[0].label!r}")
        rows.append((cfg.label, stats.inner_iterations, stats.hash_probes,
                     stats.redistribution_events, wall,
                     stats.inner_iterations + stats.hash_probes
                     + stats.hash_builds))

    widths = [max(len("config"), *(len(r[0]) for r in rows))]
    header = ("config", "inner_iterations", "hash_probes",
              "redistribution_events", "wall_s")
    widths += [len(h) for h in header[1:]]
    print("  ".join(h.ljust(w) if i == 0 else h.rjust(w)
                    for i, (h, w) in enumerate(zip(header, widths))))
    for label, it, probes, redist, wall, _ in rows:
        cells = (label.ljust(widths[0]), str(it).rjust(widths[1]),
                 str(probes).rjust(widths[2]), str(redist).rjust(widths[3]),
                 f"{wall:.4f}".rjust(widths[4]))
        print("  ".join(cells))

    # Scan iterations and hash probes are alternative costs for the same
    # lookups, so dominance compares their sum plus redistributions.
    counters = [(work, redist) for _, _, _, redist, _, work in rows]
    best = None
    for i, mine in enumerate(counters):
        if all(all(m <= o for m, o in zip(mine, other)) and mine != other
               for j, other in enumerate(counters) if j != i):
            best = rows[i][0]
            break
    if best is not None:
        print(f"dominates on counters: {best}")
    else:
        print("no configuration dominates on counters")
    return EXIT_OK


def cmd_emit_mr(args) -> int:
    db = load_data(args)
    prog = load_program(args.program, db, _parse_params(args.param))
    m = _derive_mr(prog, db, args.partitions, args.hash_threshold)
    text = m.pseudocode() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run_mr(args) -> int:
    db = load_data(args)
    if db is None:
        raise CliError(EXIT_USAGE, "run-mr needs --data")
    prog = load_program(args.program, db, _parse_params(args.param))
    m = _derive_mr(prog, db, args.partitions, args.hash_threshold)
    results, trace = mapreduce.run_mapreduce(m, db, args.splits)
    if args.trace:
        text = "\n".join(trace.to_lines()) + "\n"
        if args.trace == "-":
            sys.stdout.write(text)
        else:
            Path(args.trace).write_text(text, encoding="utf-8")
    _write_results(results, args.out)
    return EXIT_OK


def cmd_reformat(args) -> int:
    if args.data is None or args.out_dir is None:
        raise CliError(EXIT_USAGE, "reformat needs --data and --out-dir")
    if Path(args.data).resolve() == Path(args.out_dir).resolve():
        raise CliError(EXIT_USAGE,
                       "--out-dir must differ from --data; refusing to "
                       "rewrite a data directory in place")
    db = dataio.load_database(args.data)

    columnar: dict[str, dict[str, str]] = {}
    for spec in args.columnar:
        name, _, rest = spec.partition(":")
        if name not in db.multisets:
            raise CliError(EXIT_USAGE, f"--columnar names unknown table {name!r}")
        encs = columnar.setdefault(name, {})
        if rest:
            for part in rest.split(","):
                fname, sep, enc = part.partition("=")
                if not sep:
                    raise CliError(EXIT_USAGE,
                                   f"bad --columnar option {part!r}")
                encs[fname] = enc
    for spec in args.encode:
        name, sep, fname = spec.partition(".")
        if not sep or name not in db.multisets:
            raise CliError(EXIT_USAGE,
                           f"--encode expects Table.field, got {spec!r}")
        columnar.setdefault(name, {})[fname] = "dict"

    if args.drop_unused:
        prog = load_program(args.drop_unused, db, _parse_params(args.param))
        db, report = reformat.drop_unused_fields(prog, db)
        print(report)

    notes = dataio.save_database(db, args.out_dir, columnar=columnar)
    for note in notes:
        print(f"note: {note}")
    return EXIT_OK


# --- argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forelem",
        description="Compile and run loop-IR / SQL queries over multiset data.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="data directory (tables + sidecars)")
    common.add_argument("--param", action="append", default=[],
                        metavar="NAME=VALUE",
                        help="value for a :name placeholder in SQL")
    common.add_argument("--seed", type=int, default=0,
                        help="recorded in stats; runs are deterministic")
    common.add_argument("--hash-threshold", type=int, default=64,
                        help="base size at which nested lookups hash")
    common.add_argument("--partitions", type=int, default=4,
                        help="worker/partition count used by passes")

    prog_arg = dict(metavar="PROGRAM", help="a .fl loop-IR file or .sql query")

    p = sub.add_parser("compile", parents=[common],
                       help="lower and transform, printing each step")
    p.add_argument("program", **prog_arg)
    p.add_argument("--passes", default="default",
                   help="default, none, or comma-separated pass names")
    p.add_argument("--out", help="write the final IR here")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("run", parents=[common],
                       help="execute on a backend and write results")
    p.add_argument("program", **prog_arg)
    p.add_argument("--passes", default="none")
    p.add_argument("--backend", choices=("seq", "par", "mr"), default="seq")
    p.add_argument("--pool", type=int, default=4, help="parallel worker count")
    p.add_argument("--policy", default="gss",
                   help="static, cyclic, fixed:C, gss, tss or hybrid:G")
    p.add_argument("--fault", action="append", default=[],
                   metavar="SPEC", help="worker=W,after-chunk=M or "
                   "worker=W,at-time=T; repeatable")
    p.add_argument("--threads", action="store_true",
                   help="drive the pool with real threads")
    p.add_argument("--splits", type=int, default=4, help="mr input fragments")
    p.add_argument("--auto-reformat", action="store_true",
                   help="dictionary-encode key fields before running")
    p.add_argument("--raw-keys", action="store_true",
                   help="leave dictionary keys undecoded in results")
    p.add_argument("--out", help="result CSV file (directory when the "
                   "program has several outputs); default stdout")
    p.add_argument("--stats", help="write counters as JSON here ('-' for stdout)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("explain", parents=[common],
                       help="show def-use, methods and partitioning")
    p.add_argument("program", **prog_arg)
    p.add_argument("--passes", default="none")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("bench", parents=[common],
                       help="compare counters across configurations")
    p.add_argument("program", **prog_arg)
    p.add_argument("--config", action="append", default=[], metavar="SPEC",
                   help="backend[:k=v,...] with keys p, policy, splits, "
                   "method, layout, passes; repeatable")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("emit-mr", parents=[common],
                       help="print the derived MapReduce pseudocode")
    p.add_argument("program", **prog_arg)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_emit_mr)

    p = sub.add_parser("run-mr", parents=[common],
                       help="run the derived MapReduce program")
    p.add_argument("program", **prog_arg)
    p.add_argument("--splits", type=int, default=4)
    p.add_argument("--trace", help="write 'phase key value' lines here "
                   "('-' for stdout)")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_run_mr)

    p = sub.add_parser("reformat", parents=[common],
                       help="rewrite a data directory's layout")
    p.add_argument("--out-dir", help="destination directory")
    p.add_argument("--encode", action="append", default=[],
                   metavar="TABLE.FIELD",
                   help="store this string field dictionary-encoded")
    p.add_argument("--columnar", action="append", default=[],
                   metavar="TABLE[:f=enc,...]",
                   help="store a table columnar; encs: plain, dict, range")
    p.add_argument("--drop-unused", metavar="PROGRAM",
                   help="drop fields this program never reads")
    p.set_defaults(fn=cmd_reformat)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ir.ParseError, sqlfront.SqlParseError, sqlfront.LoweringError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROGRAM
    except (dataio.DataError, reformat.ReformatError, SchemaError,
            FieldTypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ExecError, AllWorkersFailed) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
