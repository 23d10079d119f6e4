"""Loop scheduling: chunked assignment of parallel iterations to workers.

The simulator runs in virtual time and is fully deterministic: each
grant goes to the live worker with the smallest clock (ties to the
lowest id), chunk cost advances that worker's clock, and fail-stop
faults kill a worker during a designated chunk. A failed chunk is
re-dispatched whole once the failure is visible; under the static
policies, where no re-dispatch is possible, the run restarts on the
surviving workers and previously completed chunks are discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from forelem.multiset import DirectBlocks

COMPLETED = "COMPLETED"
FAILED = "FAILED"
DISCARDED = "DISCARDED"


class AllWorkersFailed(RuntimeError):
    """Every worker died before the iteration space was covered."""

    def __init__(self, unfinished: list[range]):
        pending = ", ".join(f"[{r.start},{r.stop})" for r in unfinished)
        super().__init__(f"all workers failed; unfinished iterations: {pending or 'none'}")
        self.unfinished = unfinished


# --- policies ---

@dataclass(frozen=True)
class StaticBlock:
    pass


@dataclass(frozen=True)
class StaticCyclic:
    pass


@dataclass(frozen=True)
class FixedChunk:
    c: int

    def __post_init__(self) -> None:
        if self.c < 1:
            raise ValueError("chunk size must be at least 1")


@dataclass(frozen=True)
class GSS:
    """Guided self-scheduling: each grant takes ceil(remaining / live workers)."""


@dataclass(frozen=True)
class Trapezoid:
    """Chunk sizes decrease linearly from `first` to `last`.

    With the defaults, first = ceil(n / 2p) and last = 1; the planned
    chunk count is C = ceil(2n / (first + last)) and the i-th chunk has
    size floor(first - i * (first - last) / (C - 1)), floored at `last`
    and clamped to what remains.
    """

    first: Optional[int] = None
    last: int = 1

    def __post_init__(self) -> None:
        if self.last < 1 or (self.first is not None and self.first < self.last):
            raise ValueError("trapezoid requires first >= last >= 1")


@dataclass(frozen=True)
class Hybrid:
    """Dynamic scheduling over worker groups; each granted chunk is
    split statically among the group's live members."""

    outer: "ChunkPolicy"
    group: int

    def __post_init__(self) -> None:
        if self.group < 1:
            raise ValueError("group size must be at least 1")
        if isinstance(self.outer, (StaticBlock, StaticCyclic, Hybrid)):
            raise ValueError("hybrid outer policy must be dynamic")


ChunkPolicy = StaticBlock | StaticCyclic | FixedChunk | GSS | Trapezoid | Hybrid


def is_dynamic(policy: ChunkPolicy) -> bool:
    return not isinstance(policy, (StaticBlock, StaticCyclic))


def parse_policy(text: str) -> ChunkPolicy:
    name, _, arg = text.partition(":")
    name = name.lower()
    if name == "static":
        return StaticBlock()
    if name == "cyclic":
        return StaticCyclic()
    if name == "fixed":
        return FixedChunk(int(arg or 1))
    if name == "gss":
        return GSS()
    if name == "tss":
        return Trapezoid()
    if name == "hybrid":
        return Hybrid(GSS(), int(arg or 2))
    raise ValueError(f"unknown scheduling policy {text!r}")


class _Session:
    """Per-run chunk-size state for a dynamic policy."""

    def __init__(self, policy: ChunkPolicy, n: int, p: int):
        self.policy = policy
        self.index = 0
        if isinstance(policy, Trapezoid):
            self.first = policy.first if policy.first is not None else max(1, math.ceil(n / (2 * p)))
            self.last = min(policy.last, self.first)
            planned = math.ceil(2 * n / (self.first + self.last)) if n else 0
            self.delta = (self.first - self.last) / (planned - 1) if planned > 1 else 0.0

    def next(self, remaining: int, p_live: int) -> int:
        if remaining < 1:
            raise ValueError("no iterations remaining")
        policy = self.policy
        if isinstance(policy, GSS):
            size = math.ceil(remaining / max(1, p_live))
        elif isinstance(policy, FixedChunk):
            size = policy.c
        elif isinstance(policy, Trapezoid):
            size = max(self.last, math.floor(self.first - self.index * self.delta))
        else:
            raise TypeError(f"policy {policy!r} does not use dynamic chunking")
        self.index += 1
        return max(1, min(size, remaining))


def next_chunk(policy: ChunkPolicy, remaining: int, p: int) -> int:
    """Size of the first chunk a fresh run would grant; 0 when drained."""
    if remaining == 0:
        return 0
    return _Session(policy, remaining, p).next(remaining, p)


# --- faults and traces ---

@dataclass(frozen=True)
class FaultEvent:
    """Fail-stop trigger: the worker dies during its m-th granted chunk,
    or at a fixed virtual time."""

    worker: int
    after_chunk: Optional[int] = None
    at_time: Optional[float] = None

    def __post_init__(self) -> None:
        if (self.after_chunk is None) == (self.at_time is None):
            raise ValueError("exactly one of after_chunk/at_time must be set")
        if self.after_chunk is not None and self.after_chunk < 1:
            raise ValueError("after_chunk is 1-based")
        if self.at_time is not None and self.at_time <= 0:
            raise ValueError("at_time must be positive")


def parse_fault(text: str) -> FaultEvent:
    """Parse ``worker=W,after-chunk=M`` or ``worker=W,at-time=T``."""
    fields: dict[str, str] = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        fields[key.strip().replace("_", "-")] = val.strip()
    try:
        worker = int(fields.pop("worker"))
    except KeyError:
        raise ValueError(f"fault spec {text!r} is missing worker=") from None
    after = fields.pop("after-chunk", None)
    at = fields.pop("at-time", None)
    if fields:
        raise ValueError(f"unknown fault spec keys: {sorted(fields)}")
    return FaultEvent(worker, after_chunk=int(after) if after is not None else None,
                     at_time=float(at) if at is not None else None)


@dataclass
class TraceEntry:
    worker: int
    start: int
    end: int
    t_grant: float
    t_done: float
    status: str = COMPLETED
    redo_of: Optional[int] = None

    def format_line(self) -> str:
        redo = f" redo_of={self.redo_of}" if self.redo_of is not None else ""
        return (f"{self.worker} {self.start} {self.end} "
                f"{self.t_grant:g} {self.t_done:g} {self.status}{redo}")


@dataclass
class ScheduleTrace:
    n_iters: int
    p: int
    entries: list[TraceEntry] = field(default_factory=list)

    def completed(self) -> list[TraceEntry]:
        return [e for e in self.entries if e.status == COMPLETED]

    def completed_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.completed():
            for i in range(e.start, e.end):
                counts[i] = counts.get(i, 0) + 1
        return counts

    def covers_exactly_once(self) -> bool:
        counts = self.completed_counts()
        return set(counts) == set(range(self.n_iters)) and set(counts.values()) <= {1}

    def completion_time(self) -> float:
        return max((e.t_done for e in self.entries), default=0.0)

    def grant_sizes(self, fresh_only: bool = True) -> list[int]:
        return [e.end - e.start for e in self.entries
                if not (fresh_only and e.redo_of is not None)]

    def format_lines(self) -> list[str]:
        return [e.format_line() for e in self.entries]


class WorkerPool:
    """Worker clocks and liveness, shared across the loops of one run."""

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("worker count must be at least 1")
        self.p = p
        self.clocks = [0.0] * p
        self.alive = [True] * p
        self.dead_at: list[Optional[float]] = [None] * p
        self.grants = [0] * p  # lifetime granted-chunk count, for fault triggers

    def live_ids(self) -> list[int]:
        return [w for w in range(self.p) if self.alive[w]]

    def kill(self, worker: int, t: float) -> None:
        self.alive[worker] = False
        if self.dead_at[worker] is None:
            self.dead_at[worker] = t

    def visible_live(self, t: float) -> int:
        """Workers not yet known dead at virtual time t.

        The grant loop is serialized, so a failure can be simulated
        before chunks that are granted earlier in virtual time; sizing
        decisions must not see into that future.
        """
        return sum(1 for w in range(self.p)
                   if self.dead_at[w] is None or self.dead_at[w] > t)


CostFn = Callable[[int], float]
ExecuteFn = Callable[[int, int, int], float]  # (worker, start, end) -> cost


@dataclass
class _Pending:
    rng: range
    available_at: float
    redo_of: int


def dispatch(n_iters: int, pool: WorkerPool, policy: ChunkPolicy,
             faults: Sequence[FaultEvent] = (), execute: Optional[ExecuteFn] = None,
             cost_fn: Optional[CostFn] = None) -> ScheduleTrace:
    """Drive one parallel loop of ``n_iters`` iterations to completion.

    ``execute`` is called once per granted chunk and returns its cost;
    committing its effects is the caller's business and must only
    happen for entries that end up COMPLETED.
    """
    if cost_fn is None:
        cost_fn = lambda i: 1.0
    if execute is None:
        execute = lambda w, s, e: sum(cost_fn(i) for i in range(s, e))

    trace = ScheduleTrace(n_iters, pool.p)
    if n_iters == 0:
        return trace
    chunk_faults = {f.worker: f.after_chunk for f in faults if f.after_chunk is not None}
    time_faults = {f.worker: f.at_time for f in faults if f.at_time is not None}

    def reap_timed_out() -> None:
        for w, t in time_faults.items():
            if 0 <= w < pool.p and pool.alive[w] and pool.clocks[w] >= t:
                pool.kill(w, t)

    def run_chunk(worker: int, start: int, end: int, redo_of: Optional[int]) -> TraceEntry:
        pool.grants[worker] += 1
        t_grant = pool.clocks[worker]
        cost = execute(worker, start, end)
        t_done = t_grant + cost
        status = COMPLETED
        if chunk_faults.get(worker) == pool.grants[worker]:
            status = FAILED
        at = time_faults.get(worker)
        if at is not None and t_grant < at < t_done:
            status = FAILED
            t_done = at
        if status == FAILED:
            pool.kill(worker, t_done)
        pool.clocks[worker] = t_done
        entry = TraceEntry(worker, start, end, t_grant, t_done, status, redo_of)
        trace.entries.append(entry)
        return entry

    if isinstance(policy, (StaticBlock, StaticCyclic)):
        _dispatch_static(n_iters, pool, policy, trace, run_chunk, reap_timed_out)
    elif isinstance(policy, Hybrid):
        _dispatch_hybrid(n_iters, pool, policy, trace, run_chunk, reap_timed_out, cost_fn)
    else:
        _dispatch_dynamic(n_iters, pool, policy, trace, run_chunk, reap_timed_out)
    return trace


def _unfinished(trace: ScheduleTrace) -> list[range]:
    done = trace.completed_counts()
    out: list[range] = []
    run_start = None
    for i in range(trace.n_iters + 1):
        missing = i < trace.n_iters and i not in done
        if missing and run_start is None:
            run_start = i
        elif not missing and run_start is not None:
            out.append(range(run_start, i))
            run_start = None
    return out


def _dispatch_dynamic(n_iters, pool, policy, trace, run_chunk, reap_timed_out):
    session = _Session(policy, n_iters, pool.p)
    lo = 0
    pending: list[_Pending] = []
    while True:
        reap_timed_out()
        live = pool.live_ids()
        if not live:
            raise AllWorkersFailed(_unfinished(trace))
        if lo >= n_iters and not pending:
            return
        worker = min(live, key=lambda w: (pool.clocks[w], w))
        ready = [q for q in pending if q.available_at <= pool.clocks[worker]]
        if ready:
            q = ready[0]
            pending.remove(q)
        elif lo < n_iters:
            size = session.next(n_iters - lo, pool.visible_live(pool.clocks[worker]))
            q = _Pending(range(lo, lo + size), 0.0, -1)
            lo += size
        else:
            q = min(pending, key=lambda x: x.available_at)
            pending.remove(q)
            pool.clocks[worker] = max(pool.clocks[worker], q.available_at)
        redo = q.redo_of if q.redo_of >= 0 else None
        entry = run_chunk(worker, q.rng.start, q.rng.stop, redo)
        if entry.status == FAILED:
            pending.append(_Pending(q.rng, entry.t_done, len(trace.entries) - 1))


def _static_queues(n_iters: int, policy, workers: list[int]) -> dict[int, list[range]]:
    queues: dict[int, list[range]] = {w: [] for w in workers}
    if isinstance(policy, StaticBlock):
        blocks = DirectBlocks(len(workers))
        for pos, w in enumerate(workers):
            r = blocks.block_range(n_iters, pos)
            if len(r):
                queues[w].append(range(r.start, r.stop))
    else:
        for i in range(n_iters):
            queues[workers[i % len(workers)]].append(range(i, i + 1))
    return queues


def _dispatch_static(n_iters, pool, policy, trace, run_chunk, reap_timed_out):
    # No re-dispatch is possible in a static schedule: on failure the
    # loop restarts on the surviving workers and earlier completions
    # are discarded so that each iteration commits exactly once.
    reap_timed_out()
    if not pool.live_ids():
        raise AllWorkersFailed(_unfinished(trace))
    queues = _static_queues(n_iters, policy, pool.live_ids())
    while True:
        reap_timed_out()
        live = pool.live_ids()
        if not live:
            raise AllWorkersFailed(_unfinished(trace))
        dead_queue = any(queues.get(w) for w in range(pool.p) if not pool.alive[w])
        if dead_queue:
            for e in trace.entries:
                if e.status == COMPLETED:
                    e.status = DISCARDED
            t_restart = max(e.t_done for e in trace.entries)
            for w in live:
                pool.clocks[w] = max(pool.clocks[w], t_restart)
            queues = _static_queues(n_iters, policy, live)
            continue
        candidates = [w for w in live if queues.get(w)]
        if not candidates:
            return
        worker = min(candidates, key=lambda w: (pool.clocks[w], w))
        rng = queues[worker].pop(0)
        entry = run_chunk(worker, rng.start, rng.stop, None)
        if entry.status == FAILED:
            queues[worker].insert(0, range(entry.start, entry.end))


def _dispatch_hybrid(n_iters, pool, policy, trace, run_chunk, reap_timed_out, cost_fn):
    groups = [list(range(g, min(g + policy.group, pool.p)))
              for g in range(0, pool.p, policy.group)]
    session = _Session(policy.outer, n_iters, len(groups))
    lo = 0
    pending: list[_Pending] = []

    def live_members(gi: int) -> list[int]:
        return [w for w in groups[gi] if pool.alive[w]]

    def group_clock(gi: int) -> float:
        members = live_members(gi)
        return max(pool.clocks[w] for w in members) if members else math.inf

    while True:
        reap_timed_out()
        if not pool.live_ids():
            raise AllWorkersFailed(_unfinished(trace))
        live_groups = [gi for gi in range(len(groups)) if live_members(gi)]
        if lo >= n_iters and not pending:
            return
        gi = min(live_groups, key=lambda g: (group_clock(g), g))
        t0 = group_clock(gi)
        ready = [q for q in pending if q.available_at <= t0]
        if ready:
            q = ready[0]
            pending.remove(q)
        elif lo < n_iters:
            visible = sum(1 for g in groups
                          if any(pool.dead_at[w] is None or pool.dead_at[w] > t0
                                 for w in g))
            size = session.next(n_iters - lo, visible)
            q = _Pending(range(lo, lo + size), 0.0, -1)
            lo += size
        else:
            q = min(pending, key=lambda x: x.available_at)
            pending.remove(q)
            t0 = max(t0, q.available_at)
        members = live_members(gi)
        for w in members:
            pool.clocks[w] = t0
        blocks = DirectBlocks(len(members))
        redo = q.redo_of if q.redo_of >= 0 else None
        sub_entries = []
        for pos, w in enumerate(members):
            r = blocks.block_range(len(q.rng), pos)
            if not len(r):
                continue
            sub = run_chunk(w, q.rng.start + r.start, q.rng.start + r.stop, redo)
            sub_entries.append(sub)
        barrier = max(e.t_done for e in sub_entries)
        failed = [e for e in sub_entries if e.status == FAILED]
        if failed:
            # The whole group chunk is re-run elsewhere; surviving
            # members' shares are discarded.
            for e in sub_entries:
                if e.status == COMPLETED:
                    e.status = DISCARDED
            first_failed = trace.entries.index(failed[0])
            pending.append(_Pending(q.rng, barrier, first_failed))
        for w in live_members(gi):
            pool.clocks[w] = barrier


def run_schedule(n_iters: int, p: int, policy: ChunkPolicy,
                 faults: Sequence[FaultEvent] = (),
                 cost_fn: Optional[CostFn] = None) -> ScheduleTrace:
    """Simulate scheduling ``n_iters`` iterations on a fresh pool of p workers."""
    if n_iters < 0:
        raise ValueError("iteration count must be non-negative")
    return dispatch(n_iters, WorkerPool(p), policy, faults, cost_fn=cost_fn)


def makespan(trace: ScheduleTrace) -> float:
    """Largest total cost assigned to any one worker."""
    per_worker: dict[int, float] = {}
    for e in trace.entries:
        per_worker[e.worker] = per_worker.get(e.worker, 0.0) + (e.t_done - e.t_grant)
    return max(per_worker.values(), default=0.0)
