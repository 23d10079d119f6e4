"""Program execution: sequential, or parallel under the virtual-time
scheduler.

Parallel runs buffer every side effect of a chunk (accumulator deltas,
per-worker result appends, counter increments) and commit only the
chunks whose trace entries complete. Re-executing a failed chunk is
therefore idempotent, and a static-policy restart simply discards the
buffers of the discarded entries.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from forelem import ir
from forelem.multiset import (DirectBlocks, Multiset, Schema, FieldType,
                              partition_values, value_range)
from forelem.scheduler import (AllWorkersFailed, ChunkPolicy, FaultEvent, GSS,
                               ScheduleTrace, TraceEntry, WorkerPool, COMPLETED,
                               FAILED, dispatch, is_dynamic)


class ExecError(RuntimeError):
    """Schema mismatch or runtime type error during evaluation."""


@dataclass
class Database:
    multisets: dict[str, Multiset]
    initial_partitions: dict[str, Any] = field(default_factory=dict)

    def copy(self) -> "Database":
        return Database(dict(self.multisets), dict(self.initial_partitions))


@dataclass
class ExecStats:
    inner_iterations: int = 0
    hash_probes: int = 0
    hash_builds: int = 0
    redistribution_events: int = 0
    per_worker_iterations: list[int] = field(default_factory=list)
    chunks: list[ScheduleTrace] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "inner_iterations": self.inner_iterations,
            "hash_probes": self.hash_probes,
            "hash_builds": self.hash_builds,
            "redistribution_events": self.redistribution_events,
            "per_worker_iterations": list(self.per_worker_iterations),
            "chunks": [t.format_lines() for t in self.chunks],
        }

    def as_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


@dataclass
class RunOutcome:
    results: dict[str, Multiset]        # output-flagged results only
    accumulators: dict[str, dict]
    stats: ExecStats


@dataclass(frozen=True)
class RedistributionEvent:
    multiset: str
    before: tuple  # partitioning of the earlier loop
    after: tuple
    path_before: Optional[tuple]
    path_after: tuple

    def describe(self) -> str:
        def fmt(p):
            if p is None:
                return "initial distribution"
            return f"{p[0]} on {p[1]}" if p[0] == "indirect" else f"direct/{p[1]}"
        where = ("initial distribution" if self.path_before is None
                 else f"loop at {self.path_before}")
        return (f"{self.multiset}: {fmt(self.before)} ({where}) -> "
                f"{fmt(self.after)} (loop at {self.path_after})")


@dataclass
class RedistributionReport:
    events: list[RedistributionEvent]

    @property
    def count(self) -> int:
        return len(self.events)


class _ChunkBuffer:
    """Side effects of one granted chunk, held until its entry commits."""

    def __init__(self) -> None:
        self.acc_vals: dict[tuple[str, Any, Any], Any] = {}
        self.acc_cleared: list[tuple[str, Any, Any]] = []  # (acc, worker, cell) slice
        self.pool_rows: list[tuple[str, int, tuple]] = []
        self.inner_iterations = 0
        self.hash_probes = 0
        self.k_iterations = 0
        self.cost = 0.0

    def slice_cleared(self, acc: str, w: Any, c: Any) -> bool:
        for a, sw, sc in self.acc_cleared:
            if a == acc and (sw is None or sw == w) and (sc is None or sc == c):
                return True
        return False


class _Exec:
    def __init__(self, program: ir.Program, db: Database):
        diags = ir.validate(program)
        if diags:
            raise ExecError("program does not validate: "
                            + "; ".join(d.message for d in diags[:3]))
        self.program = program
        self.db = db
        self.tables = {name: list(ms.rows) for name, ms in db.multisets.items()}
        self.schemas: dict[str, Schema] = {
            name: ms.schema for name, ms in db.multisets.items()}
        self.result_decls: dict[str, ir.ResultDecl] = {}
        for d in program.decls:
            if isinstance(d, ir.MultisetDecl) and d.name not in self.tables:
                raise ExecError(f"multiset {d.name!r} not present in the database")
            if isinstance(d, ir.ResultDecl):
                self.result_decls[d.name] = d
                self.schemas[d.name] = Schema(d.fields)
        self.values_decls = {d.name: d for d in program.decls
                             if isinstance(d, ir.ValuesDecl)}
        self.acc: dict[str, dict[tuple[Any, Any], Any]] = {}
        self.results: dict[str, list[tuple]] = {n: [] for n in self.result_decls}
        self.pools: dict[tuple[str, int], list[tuple]] = {}
        self.hash_indexes: dict[tuple[str, str], dict[Any, list[tuple]]] = {}
        self.segments: dict[tuple[str, int], tuple] = {}
        self.stats = ExecStats()
        self.buf: Optional[_ChunkBuffer] = None
        self.forelem_depth = 0
        self._lock = threading.Lock()

    # --- field and row plumbing ---

    def field_index(self, name: str, fld: str) -> int:
        schema = self.schemas.get(name)
        if schema is None:
            raise ExecError(f"unknown multiset or result {name!r}")
        try:
            return schema.index_of(fld)
        except Exception:
            raise ExecError(f"{name!r} has no field {fld!r}") from None

    def base_rows(self, name: str) -> list[tuple]:
        if name in self.tables:
            return self.tables[name]
        if name in self.results:
            return list(self.results[name])
        raise ExecError(f"unknown multiset {name!r}")

    def hash_index(self, ms: str, fld: str) -> dict[Any, list[tuple]]:
        key = (ms, fld)
        with self._lock:
            idx = self.hash_indexes.get(key)
            if idx is None:
                pos = self.field_index(ms, fld)
                idx = {}
                for row in self.base_rows(ms):
                    idx.setdefault(row[pos], []).append(row)
                self.hash_indexes[key] = idx
                self.stats.hash_builds += 1
        return idx

    def value_segments(self, values_name: str, n: int) -> tuple:
        key = (values_name, n)
        with self._lock:
            segs = self.segments.get(key)
            if segs is None:
                d = self.values_decls[values_name]
                ms = self.db.multisets.get(d.multiset)
                if ms is None:
                    raise ExecError(f"multiset {d.multiset!r} not present in the database")
                part = partition_values(value_range(ms, d.field), n, d.field)
                segs = part.segments
                self.segments[key] = segs
        return segs

    # --- accumulator and result state, buffered or committed ---

    def read_acc(self, acc: str, w: Any, c: Any) -> Any:
        if self.buf is not None:
            key = (acc, w, c)
            if key in self.buf.acc_vals:
                return self.buf.acc_vals[key]
            if self.buf.slice_cleared(acc, w, c):
                return 0
        return self.acc.get(acc, {}).get((w, c), 0)

    def add_acc(self, acc: str, w: Any, c: Any, delta: Any) -> None:
        if self.buf is not None:
            self.buf.acc_vals[(acc, w, c)] = self.read_acc(acc, w, c) + delta
        else:
            store = self.acc.setdefault(acc, {})
            store[(w, c)] = store.get((w, c), 0) + delta

    def clear_acc(self, acc: str, w: Any, c: Any) -> None:
        if self.buf is not None:
            self.buf.acc_cleared.append((acc, w, c))
            for key in [k for k in self.buf.acc_vals
                        if k[0] == acc and (w is None or k[1] == w)
                        and (c is None or k[2] == c)]:
                del self.buf.acc_vals[key]
        else:
            store = self.acc.setdefault(acc, {})
            for key in [k for k in store
                        if (w is None or k[0] == w) and (c is None or k[1] == c)]:
                del store[key]

    def coerce_row(self, result: str, row: tuple) -> tuple:
        decl = self.result_decls[result]
        out = []
        for (fname, ftype), v in zip(decl.fields, row):
            if ftype == FieldType.FLOAT and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            out.append(v)
        t = tuple(out)
        self.schemas[result].check_row(t)
        return t

    def append_result(self, result: str, worker: Optional[int], row: tuple) -> None:
        row = self.coerce_row(result, row)
        if worker is None:
            if self.buf is not None:
                raise ExecError("unsubscripted result write inside a parallel chunk")
            self.results[result].append(row)
        elif self.buf is not None:
            self.buf.pool_rows.append((result, worker, row))
        else:
            self.pools.setdefault((result, worker), []).append(row)

    def commit(self, buf: _ChunkBuffer, worker: int) -> None:
        for acc, w, c in buf.acc_cleared:
            self.clear_acc(acc, w, c)
        for (acc, w, c), v in buf.acc_vals.items():
            store = self.acc.setdefault(acc, {})
            store[(w, c)] = v
        for result, k, row in buf.pool_rows:
            self.pools.setdefault((result, k), []).append(row)
        self.stats.inner_iterations += buf.inner_iterations
        self.stats.hash_probes += buf.hash_probes
        self.stats.per_worker_iterations[worker] += buf.k_iterations

    # --- expression evaluation ---

    def eval(self, e: ir.Expr, env: dict) -> Any:
        if isinstance(e, (ir.IntLit, ir.FloatLit, ir.StrLit)):
            return e.value
        if isinstance(e, ir.VarRef):
            return env[e.name]
        if isinstance(e, ir.FieldAccess):
            row = env[e.iterator]
            return row[self.field_index(e.multiset, e.field)]
        if isinstance(e, ir.AccRead):
            w = env[e.worker] if e.worker is not None else None
            c = self.eval(e.cell, env) if e.cell is not None else None
            return self.read_acc(e.acc, w, c)
        if isinstance(e, ir.SumOverK):
            total = 0
            for k in range(1, e.n + 1):
                total += self.eval(e.body, dict(env, **{e.var: k}))
            return total
        if isinstance(e, ir.BinOp):
            lhs, rhs = self.eval(e.lhs, env), self.eval(e.rhs, env)
            try:
                return lhs + rhs if e.op == "+" else lhs * rhs
            except TypeError as exc:
                raise ExecError(f"type error in arithmetic: {exc}") from None
        raise ExecError(f"cannot evaluate {e!r}")

    # --- statement execution ---

    def domain_scope(self, dom: ir.IndexSetExpr, env: dict) -> list[tuple]:
        """Rows in scope before any filter/distinct selection."""
        rows = self.base_rows(dom.multiset)
        if dom.worker is not None:
            k = env[dom.worker]
            n = env["__n_workers__"]
            r = DirectBlocks(n).block_range(len(rows), k - 1)
            rows = rows[r.start:r.stop]
        return rows

    def exec_forelem(self, s: ir.Forelem, env: dict) -> None:
        dom = s.domain
        nested = self.forelem_depth > 0
        use_hash = (s.method == "hash" and dom.filter is not None
                    and dom.worker is None and dom.multiset in self.tables)
        if use_hash:
            fld, fexpr = dom.filter
            idx = self.hash_index(dom.multiset, fld)
            if nested:
                if self.buf is not None:
                    self.buf.hash_probes += 1
                else:
                    self.stats.hash_probes += 1
            rows = idx.get(self.eval(fexpr, env), [])
        else:
            scope = self.domain_scope(dom, env)
            if nested:
                if self.buf is not None:
                    self.buf.inner_iterations += len(scope)
                else:
                    self.stats.inner_iterations += len(scope)
            if dom.filter is not None:
                fld, fexpr = dom.filter
                pos = self.field_index(dom.multiset, fld)
                want = self.eval(fexpr, env)
                rows = [r for r in scope if r[pos] == want]
            elif dom.distinct is not None:
                pos = self.field_index(dom.multiset, dom.distinct)
                seen: set = set()
                rows = []
                for r in scope:
                    if r[pos] not in seen:
                        seen.add(r[pos])
                        rows.append(r)
            else:
                rows = scope
        self.forelem_depth += 1
        try:
            for row in rows:
                if self.buf is not None:
                    self.buf.cost += 1.0
                inner = dict(env)
                inner[s.iterator] = row
                self.exec_stmts(s.body, inner)
        finally:
            self.forelem_depth -= 1

    def exec_stmt(self, s: ir.Stmt, env: dict) -> None:
        if isinstance(s, ir.Forelem):
            self.exec_forelem(s, env)
        elif isinstance(s, (ir.Forall, ir.ForRange)):
            # Inline sequential semantics; parallel runs intercept Forall
            # before reaching here.
            for k in range(1, s.n + 1):
                inner = dict(env, **{s.var: k})
                inner["__n_workers__"] = s.n
                self.exec_stmts(s.body, inner)
                if self.stats.per_worker_iterations:
                    self.stats.per_worker_iterations[0] += 1
        elif isinstance(s, ir.ForValues):
            segs = self.value_segments(s.values, env["__n_workers__"])
            for v in segs[env[s.worker] - 1]:
                self.exec_stmts(s.body, dict(env, **{s.var: v}))
        elif isinstance(s, ir.AccumInit):
            w = env[s.worker] if s.worker is not None else None
            c = self.eval(s.cell, env) if s.cell is not None else None
            self.clear_acc(s.acc, w, c)
        elif isinstance(s, ir.Accumulate):
            w = env[s.worker] if s.worker is not None else None
            c = self.eval(s.cell, env) if s.cell is not None else None
            self.add_acc(s.acc, w, c, self.eval(s.delta, env))
        elif isinstance(s, ir.ResultUnion):
            row = tuple(self.eval(x, env) for x in s.exprs)
            w = env[s.worker] if s.worker is not None else None
            self.append_result(s.result, w, row)
        elif isinstance(s, ir.ResultMerge):
            for k in range(1, s.n + 1):
                self.results[s.result].extend(self.pools.pop((s.result, k), []))
        else:
            raise ExecError(f"cannot execute {s!r}")

    def exec_stmts(self, stmts: Sequence[ir.Stmt], env: dict) -> None:
        for s in stmts:
            self.exec_stmt(s, env)

    def outcome(self) -> RunOutcome:
        out = {}
        for name, decl in self.result_decls.items():
            if decl.output:
                out[name] = Multiset(name, self.schemas[name], self.results[name])
        return RunOutcome(out, self.acc, self.stats)


def run_sequential(program: ir.Program, db: Database) -> RunOutcome:
    ex = _Exec(program, db)
    ex.stats.per_worker_iterations = [0]
    ex.stats.redistribution_events = count_redistributions(program, db).count
    ex.exec_stmts(program.body, {})
    return ex.outcome()


def _execute_chunk(ex: _Exec, stmt: ir.Forall, start: int, end: int) -> _ChunkBuffer:
    buf = _ChunkBuffer()
    ex.buf = buf
    try:
        for k in range(start + 1, end + 1):
            buf.cost += 1.0
            buf.k_iterations += 1
            env = {stmt.var: k, "__n_workers__": stmt.n}
            ex.exec_stmts(stmt.body, env)
    finally:
        ex.buf = None
    return buf


def run_parallel_sim(program: ir.Program, db: Database,
                     pool: int | WorkerPool = 4,
                     policy: Optional[ChunkPolicy] = None,
                     faults: Sequence[FaultEvent] = (),
                     threads: bool = False) -> RunOutcome:
    """Execute with Forall loops dispatched over a simulated worker pool.

    One pool is shared by all Forall loops of the run: clocks carry
    over and failed workers stay dead. Statements outside Forall run on
    the coordinator in program order.
    """
    if policy is None:
        policy = GSS()
    if isinstance(pool, int):
        pool = WorkerPool(pool)
    ex = _Exec(program, db)
    ex.stats.per_worker_iterations = [0] * pool.p
    ex.stats.redistribution_events = count_redistributions(program, db).count

    def run_forall(stmt: ir.Forall) -> None:
        buffers: list[_ChunkBuffer] = []

        def execute(worker: int, start: int, end: int) -> float:
            buf = _execute_chunk(ex, stmt, start, end)
            buffers.append(buf)
            return buf.cost

        if threads:
            trace = _threaded_forall(ex, stmt, pool, policy, faults, buffers)
        else:
            trace = dispatch(stmt.n, pool, policy, faults, execute=execute)
        ex.stats.chunks.append(trace)
        for buf, entry in zip(buffers, trace.entries):
            if entry.status == COMPLETED:
                ex.commit(buf, entry.worker)

    for s in program.body:
        if isinstance(s, ir.Forall):
            run_forall(s)
        else:
            ex.exec_stmt(s, {})
    return ex.outcome()


def _threaded_forall(ex: _Exec, stmt: ir.Forall, pool: WorkerPool,
                     policy: ChunkPolicy, faults: Sequence[FaultEvent],
                     buffers: list) -> ScheduleTrace:
    """Real-thread variant: workers pull chunks from a shared queue and
    execute into private buffers; commit happens after the barrier.

    Results match the simulated mode because chunk effects are private
    until commit and accumulator merges commute. Trace times are
    wall-clock and carry no determinism promise; only after-chunk
    faults are supported here.
    """
    if any(f.at_time is not None for f in faults):
        raise ValueError("threaded mode supports only after-chunk faults")
    if not is_dynamic(policy):
        raise ValueError("threaded mode supports only dynamic policies")
    chunk_faults = {f.worker: f.after_chunk for f in faults if f.after_chunk is not None}
    trace = ScheduleTrace(stmt.n, pool.p)
    state_lock = threading.Lock()
    work: "queue.Queue[Optional[tuple[range, Optional[int]]]]" = queue.Queue()
    from forelem.scheduler import _Session

    session = _Session(policy, stmt.n, pool.p)
    shared = {"lo": 0, "outstanding": 0, "live": sum(pool.alive)}
    t0 = time.monotonic()

    def refill_locked() -> bool:
        if shared["lo"] < stmt.n:
            size = session.next(stmt.n - shared["lo"], max(1, shared["live"]))
            rng = range(shared["lo"], shared["lo"] + size)
            shared["lo"] += size
            shared["outstanding"] += 1
            work.put((rng, None))
            return True
        return False

    def worker_main(w: int) -> None:
        while True:
            item = work.get()
            if item is None:
                return
            rng, redo_of = item
            with state_lock:
                pool.grants[w] += 1
                fails = chunk_faults.get(w) == pool.grants[w]
            t_grant = time.monotonic() - t0
            buf = _ChunkBuffer()
            local = _Exec.__new__(_Exec)
            local.__dict__.update(ex.__dict__)
            local.buf = buf
            local.forelem_depth = 0
            for k in range(rng.start + 1, rng.stop + 1):
                buf.cost += 1.0
                buf.k_iterations += 1
                local.exec_stmts(stmt.body, {stmt.var: k, "__n_workers__": stmt.n})
            t_done = time.monotonic() - t0
            with state_lock:
                status = FAILED if fails else COMPLETED
                entry = TraceEntry(w, rng.start, rng.stop, t_grant, t_done, status,
                                   redo_of)
                trace.entries.append(entry)
                buffers.append(buf if status == COMPLETED else None)
                shared["outstanding"] -= 1
                if fails:
                    pool.alive[w] = False
                    shared["live"] -= 1
                    shared["outstanding"] += 1
                    work.put((rng, len(trace.entries) - 1))
                    return
                refill_locked()
                drained = shared["lo"] >= stmt.n and shared["outstanding"] == 0
            if drained:
                for _ in range(pool.p):
                    work.put(None)

    with state_lock:
        for _ in range(sum(pool.alive)):
            if not refill_locked():
                break
        if shared["outstanding"] == 0:
            for _ in range(pool.p):
                work.put(None)
    threads_list = [threading.Thread(target=worker_main, args=(w,))
                    for w in range(pool.p) if pool.alive[w]]
    for t in threads_list:
        t.start()
    for t in threads_list:
        t.join()
    if not trace.covers_exactly_once():
        if not any(pool.alive):
            raise AllWorkersFailed([range(0, stmt.n)])
        raise ExecError("threaded run did not cover the iteration space")
    # align buffer order with entry order for the shared commit loop
    paired = [(e, b) for e, b in zip(trace.entries, buffers)]
    buffers[:] = [b if b is not None else _ChunkBuffer() for e, b in paired]
    return trace


# --- redistribution analysis ---

def _forall_partitionings(stmt: ir.Forall, db: Database) -> dict[str, tuple]:
    """Partitioning each multiset is used under inside one forall body."""
    out: dict[str, tuple] = {}

    def visit(stmts, value_var: Optional[str], values_name: Optional[str]):
        for s in stmts:
            if isinstance(s, ir.ForValues) and s.worker == stmt.var:
                visit(s.body, s.var, s.values)
            elif isinstance(s, ir.Forelem):
                dom = s.domain
                if dom.worker == stmt.var:
                    out[dom.multiset] = ("direct", stmt.n)
                elif (dom.filter is not None and value_var is not None
                      and isinstance(dom.filter[1], ir.VarRef)
                      and dom.filter[1].name == value_var):
                    fld = dom.filter[0]
                    ms = db.multisets.get(dom.multiset)
                    if ms is not None:
                        part = partition_values(value_range(ms, fld), stmt.n, fld)
                        out[dom.multiset] = ("indirect", fld, part.segments)
                visit(s.body, value_var, values_name)
            elif isinstance(s, (ir.Forall, ir.ForRange)):
                visit(s.body, value_var, values_name)
    visit(stmt.body, None, None)
    return out


def count_redistributions(program: ir.Program, db: Database) -> RedistributionReport:
    """Conflicting partitionings of one multiset between consecutive
    parallel loops, plus against the database's initial distribution."""
    foralls: list[tuple[tuple, ir.Forall]] = []
    for i, s in enumerate(program.body):
        if isinstance(s, ir.Forall):
            foralls.append(((i,), s))
    events: list[RedistributionEvent] = []
    prev: dict[str, tuple[Optional[tuple], tuple]] = {}
    for name, part in db.initial_partitions.items():
        prev[name] = (None, ("indirect", part.field, part.segments))
    for path, stmt in foralls:
        here = _forall_partitionings(stmt, db)
        for ms, part in here.items():
            if ms in prev:
                prev_path, prev_part = prev[ms]
                if prev_part != part:
                    events.append(RedistributionEvent(ms, prev_part, part,
                                                      prev_path, path))
            prev[ms] = (path, part)
    return RedistributionReport(events)
