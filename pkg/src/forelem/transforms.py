"""Source-to-source passes over the loop IR.

Every pass is a pure function from program to (program, PassReport).
A pass that cannot establish legality returns the program unchanged
with applied=False and the reason in the report; it never raises for a
legality failure. Dependence testing is conservative: accumulator and
result names with (reads, adds, inits) effect sets, where adds commute
with each other and nothing else commutes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

from forelem import ir

Path = tuple[int, ...]
LoopRef = Union[int, Path]


@dataclass(frozen=True)
class PassReport:
    name: str
    applied: bool
    detail: str
    paths: tuple[Path, ...] = ()

    def __str__(self) -> str:
        state = "applied" if self.applied else "declined"
        where = f" at {', '.join(map(str, self.paths))}" if self.paths else ""
        return f"{self.name}: {state}{where}; {self.detail}"


def _ok(name: str, detail: str, *paths: Path) -> PassReport:
    return PassReport(name, True, detail, tuple(paths))


def _no(name: str, detail: str) -> PassReport:
    return PassReport(name, False, detail)


def _as_path(loop: LoopRef) -> Path:
    return (loop,) if isinstance(loop, int) else tuple(loop)


def _stmt_at(program: ir.Program, path: Path) -> Optional[ir.Stmt]:
    try:
        return ir.get_stmt(program, path)
    except (IndexError, TypeError):
        return None


def _used_names(program: ir.Program) -> set[str]:
    names = (set(program.acc_names()) | set(program.result_decls())
             | set(program.multiset_decls()) | set(program.values_decls()))
    for _, s in ir.iter_stmts(program):
        if isinstance(s, ir.Forelem):
            names.add(s.iterator)
        elif isinstance(s, (ir.Forall, ir.ForRange)):
            names.add(s.var)
        elif isinstance(s, ir.ForValues):
            names.update((s.var, s.worker, s.values))
        for e in ir.iter_exprs(s, recurse=False):
            if isinstance(e, ir.VarRef):
                names.add(e.name)
            elif isinstance(e, ir.SumOverK):
                names.add(e.var)
    return names


def _fresh(taken: set[str], candidates: Sequence[str], base: str) -> str:
    for c in candidates:
        if c not in taken:
            return c
    i = 1
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def commute_conflict(a: ir.Stmt, b: ir.Stmt) -> Optional[str]:
    """Why the two statements may not be swapped, or None if they commute."""
    r1, a1, i1 = ir.stmt_effects(a)
    r2, a2, i2 = ir.stmt_effects(b)
    w1, w2 = a1 | i1, a2 | i2
    for names, kind in ((r1 & w2, "read-write"), (w1 & r2, "write-read"),
                        ((i1 & w2) | (w1 & i2), "write-write")):
        if names:
            return f"{kind} dependence on {', '.join(sorted(names))}"
    return None


# --- loop blocking ---

def block_direct(program: ir.Program, loop: LoopRef, n: int) -> tuple[ir.Program, PassReport]:
    """Split a forelem's index set into n contiguous row blocks under a
    fresh block-index loop. Filtered domains are allowed: partitioning
    rows commutes with selecting them."""
    name = "block_direct"
    path = _as_path(loop)
    stmt = _stmt_at(program, path)
    if not isinstance(stmt, ir.Forelem):
        return program, _no(name, f"target {path} is not a forelem loop")
    if n < 1:
        return program, _no(name, f"partition count {n} is not positive")
    dom = stmt.domain
    if dom.worker is not None:
        return program, _no(name, "index set is already partitioned")
    if dom.distinct is not None:
        return program, _no(name, "distinct-value domains cannot be row-blocked: "
                                  "a value may span block boundaries")
    k = _fresh(_used_names(program), ("k", "k2", "k3"), "k")
    inner = replace(stmt, domain=replace(dom, worker=k))
    blocked = ir.ForRange(k, n, (inner,))
    return ir.splice(program, path, [blocked]), _ok(
        name, f"split {dom.multiset} rows into {n} blocks under {k}", path)


def block_indirect(program: ir.Program, loop: LoopRef, field: str,
                   n: int) -> tuple[ir.Program, PassReport]:
    """Split a forelem by the value range of one field: segment the
    distinct values into n parts, iterate each segment's values, and
    filter the original loop on the current value."""
    name = "block_indirect"
    path = _as_path(loop)
    stmt = _stmt_at(program, path)
    if not isinstance(stmt, ir.Forelem):
        return program, _no(name, f"target {path} is not a forelem loop")
    if n < 1:
        return program, _no(name, f"partition count {n} is not positive")
    dom = stmt.domain
    if dom.worker is not None or dom.filter is not None or dom.distinct is not None:
        return program, _no(name, "value-range blocking needs a plain index set")
    decl = program.decl(dom.multiset)
    if decl is None or not any(f == field for f, _ in decl.fields):
        return program, _no(name, f"{dom.multiset} has no field {field!r}")
    taken = _used_names(program)
    values = _fresh(taken, ("X", "Y", "Z"), "V")
    taken.add(values)
    k = _fresh(taken, ("k", "k2", "k3"), "k")
    taken.add(k)
    l = _fresh(taken, ("l", "l2", "m"), "l")
    inner = replace(stmt, domain=replace(dom, filter=(field, ir.VarRef(l))))
    nest = ir.ForRange(k, n, (ir.ForValues(l, values, k, (inner,)),))
    out = ir.splice(program, path, [nest])
    out = replace(out, decls=out.decls + (ir.ValuesDecl(values, dom.multiset, field),))
    return out, _ok(name, f"segmented {dom.multiset}.{field} values into {n} "
                          f"ranges {values}[{k}]", path)


# --- parallelization ---

def parallelize(program: ir.Program, loop: LoopRef) -> tuple[ir.Program, PassReport]:
    """Turn a blocked for-range into a forall. Legal when every write in
    the body lands in a slot subscripted by the block index, so no flow
    crosses block boundaries."""
    name = "parallelize"
    path = _as_path(loop)
    stmt = _stmt_at(program, path)
    if not isinstance(stmt, ir.ForRange):
        return program, _no(name, f"target {path} is not a for-range loop")
    k = stmt.var
    written: set[str] = set()
    offenders: list[str] = []
    for s in stmt.body:
        for sub in _walk(s):
            if isinstance(sub, (ir.AccumInit, ir.Accumulate)):
                if sub.worker != k:
                    offenders.append(f"write to {sub.acc} not subscripted by {k}")
                written.add(sub.acc)
            elif isinstance(sub, ir.ResultUnion):
                if sub.worker != k:
                    offenders.append(f"union into {sub.result} not subscripted by {k}")
                written.add(sub.result)
            elif isinstance(sub, ir.ResultMerge):
                offenders.append(f"merge of {sub.result} inside the loop")
    for s in stmt.body:
        for sub in _walk(s):
            for e in ir.iter_exprs(sub, recurse=False):
                if isinstance(e, ir.AccRead) and e.worker is None and e.acc in written:
                    offenders.append(f"unsubscripted read of {e.acc} "
                                     f"written in the loop")
    if offenders:
        return program, _no(name, "cross-block dependence: " + "; ".join(offenders[:3]))
    out = ir.splice(program, path, [ir.Forall(k, stmt.n, stmt.body)])
    return out, _ok(name, f"for {k} -> forall {k}, all writes private per {k}", path)


def _walk(stmt: ir.Stmt):
    yield stmt
    for c in ir.stmt_body(stmt) or ():
        yield from _walk(c)


# --- iteration space expansion and code motion ---

def expand_and_hoist(program: ir.Program) -> tuple[ir.Program, PassReport]:
    """Free accumulators from the loops that carry them.

    Group-local scalars (reset, accumulated through a filtered inner
    loop, then read, all per iteration of a grouping loop) are expanded
    over the filter field into keyed cells; the inner loop is hoisted
    out with its filter dropped and the reads become keyed reads.

    Accumulators and results written unsubscripted under a blocked
    for-range are expanded with the block index; per-block zeroing is
    inserted, later scalar reads become sums over the block index, and
    per-block result unions get a merge statement after the loop.
    """
    name = "expand_and_hoist"
    notes: list[str] = []
    paths: list[Path] = []
    rewrote = False
    changed = True
    while changed:
        changed = False
        for idx, stmt in enumerate(program.body):
            out = _expand_group_scalar(program, (idx,), stmt)
            if out is not None:
                program, note = out
                notes.append(note)
                paths.append((idx,))
                rewrote = changed = True
                break
    idx = 0
    while idx < len(program.body):
        stmt = program.body[idx]
        if isinstance(stmt, ir.ForRange):
            out = _expand_block_writes(program, idx, stmt)
            if out is not None:
                program2, note = out
                notes.append(note)
                paths.append((idx,))
                rewrote = rewrote or program2 is not program
                program = program2
        idx += 1
    if not rewrote:
        detail = "; ".join(notes) if notes else "no expandable accumulator found"
        return program, _no(name, detail)
    return program, _ok(name, "; ".join(notes), *paths)


def _expand_group_scalar(program: ir.Program, path: Path,
                         group: ir.Stmt) -> Optional[tuple[ir.Program, str]]:
    if not isinstance(group, ir.Forelem) or len(group.body) < 3:
        return None
    init, inner = group.body[0], group.body[1]
    trailing = group.body[2:]
    if not (isinstance(init, ir.AccumInit) and init.worker is None
            and init.cell is None):
        return None
    acc = init.acc
    if not (isinstance(inner, ir.Forelem) and inner.domain.filter is not None
            and inner.domain.worker is None and inner.domain.distinct is None):
        return None
    field, fexpr = inner.domain.filter
    if not any(isinstance(e, ir.VarRef) and e.name == group.iterator
               or isinstance(e, ir.FieldAccess) and e.iterator == group.iterator
               for e in _expr_nodes(fexpr)):
        return None  # filter does not vary with the group; nothing to expand
    for s in inner.body:
        if not (isinstance(s, ir.Accumulate) and s.acc == acc and s.worker is None
                and s.cell is None):
            return None
        if any(isinstance(e, ir.FieldAccess) and e.iterator != inner.iterator
               for e in _expr_nodes(s.delta)):
            return None  # delta depends on the group row
    for s in trailing:
        if ir.stmt_body(s) is not None:
            return None
        _, adds, inits = ir.stmt_effects(s)
        if acc in adds | inits:
            return None
        for e in ir.iter_exprs(s):
            if isinstance(e, ir.AccRead) and e.acc == acc and (
                    e.worker is not None or e.cell is not None):
                return None
    # the accumulator must have no life outside this group loop
    du = ir.def_use(program)
    refs = set(du.writes.get(acc, [])) | set(du.reads.get(acc, []))
    if any(p[:len(path)] != path for p in refs):
        return None

    key = ir.FieldAccess(inner.domain.multiset, inner.iterator, field)
    hoisted_body = tuple(replace(s, cell=key) for s in inner.body)
    hoisted = ir.Forelem(inner.iterator,
                         replace(inner.domain, filter=None), hoisted_body)

    def keyed_read(e: ir.Expr) -> ir.Expr:
        if isinstance(e, ir.AccRead) and e.acc == acc:
            return replace(e, cell=fexpr)
        return e

    reader = replace(group, body=tuple(ir.map_exprs(s, keyed_read)
                                       for s in trailing))
    out = ir.splice(program, path, [ir.AccumInit(acc), hoisted, reader])
    return out, (f"expanded {acc} over {inner.domain.multiset}.{field} and "
                 f"hoisted the accumulation out of the {group.iterator} loop")


def _expr_nodes(e: ir.Expr):
    yield e
    if isinstance(e, ir.BinOp):
        yield from _expr_nodes(e.lhs)
        yield from _expr_nodes(e.rhs)
    elif isinstance(e, ir.SumOverK):
        yield from _expr_nodes(e.body)
    elif isinstance(e, ir.AccRead) and e.cell is not None:
        yield from _expr_nodes(e.cell)


def _expand_block_writes(program: ir.Program, idx: int,
                         loop: ir.ForRange) -> Optional[tuple[ir.Program, str]]:
    k, n = loop.var, loop.n
    accs: set[str] = set()
    results: set[str] = set()
    inits_inside: set[str] = set()
    for s in loop.body:
        for sub in _walk(s):
            if isinstance(sub, (ir.AccumInit, ir.Accumulate)) and sub.worker is None:
                accs.add(sub.acc)
                if isinstance(sub, ir.AccumInit):
                    inits_inside.add(sub.acc)
            elif isinstance(sub, ir.ResultUnion) and sub.worker is None:
                results.add(sub.result)
            elif isinstance(sub, ir.ResultMerge):
                return None
    if not accs and not results:
        return None

    read_after: set[str] = set()
    for later in program.body[idx + 1:]:
        r, _, _ = ir.stmt_effects(later)
        read_after |= r
    blocked = inits_inside & read_after
    if blocked:
        # zeroing inside the loop makes the final value that of the last
        # block; a per-block expansion plus sum would change it
        which = ", ".join(sorted(blocked))
        return program, (f"left {which} alone: re-initialized inside the loop "
                         f"and read after it")

    def subscribe(s: ir.Stmt) -> ir.Stmt:
        if isinstance(s, (ir.AccumInit, ir.Accumulate)) and s.worker is None \
                and s.acc in accs:
            s = replace(s, worker=k)
        elif isinstance(s, ir.ResultUnion) and s.worker is None \
                and s.result in results:
            s = replace(s, worker=k)
        s = ir.map_exprs(s, lambda e: replace(e, worker=k)
                         if isinstance(e, ir.AccRead) and e.worker is None
                         and e.acc in accs else e)
        body = ir.stmt_body(s)
        if body is not None:
            s = ir.with_body(s, tuple(subscribe(c) for c in body))
        return s

    new_body = tuple(subscribe(s) for s in loop.body)
    zeroed = [ir.AccumInit(a, worker=k) for a in sorted(accs - inits_inside)]
    new_loop = replace(loop, body=tuple(zeroed) + new_body)
    merges = [ir.ResultMerge(r, k, n) for r in sorted(results)]

    def sum_read(e: ir.Expr) -> ir.Expr:
        if isinstance(e, ir.AccRead) and e.worker is None and e.acc in accs:
            return ir.SumOverK(k, n, replace(e, worker=k))
        return e

    tail = [ir.map_exprs(s, sum_read) for s in program.body[idx + 1:]]
    body = program.body[:idx] + (new_loop,) + tuple(merges) + tuple(tail)
    out = replace(program, body=body)
    what = []
    if accs:
        what.append(f"expanded {', '.join(sorted(accs))} per {k} with summed reads")
    if results:
        what.append(f"made unions into {', '.join(sorted(results))} private "
                    f"per {k} and merged after the loop")
    return out, "; ".join(what)


# --- loop fusion and statement reordering ---

def fuse_loops(program: ir.Program, loop_a: LoopRef, loop_b: LoopRef,
               db=None) -> tuple[ir.Program, PassReport]:
    """Fuse two adjacent sibling loops with compatible headers into one.

    Value-range headers over different value lists, and filtered
    forelem pairs over different fields of one multiset, fuse only when
    the two fields' distinct-value sets coincide in the given database;
    without a database those fusions are declined.
    """
    name = "fuse_loops"
    pa, pb = _as_path(loop_a), _as_path(loop_b)
    if pa[:-1] != pb[:-1] or pb[-1] != pa[-1] + 1:
        return program, _no(name, f"{pa} and {pb} are not adjacent siblings")
    a, b = _stmt_at(program, pa), _stmt_at(program, pb)
    if a is None or b is None:
        return program, _no(name, "no statement at the given paths")
    verdict = _header_match(a, b, db, program)
    if verdict is not None:
        return program, _no(name, verdict)
    conflict = commute_conflict(a, b)
    if conflict:
        return program, _no(name, conflict)
    fused = ir.with_body(a, (ir.stmt_body(a) or ()) + _renamed_body(a, b))
    out = ir.splice(program, pb, [])
    out = ir.splice(out, pa, [fused])
    return out, _ok(name, _header_note(a), pa)


def _renamed_body(a: ir.Stmt, b: ir.Stmt) -> tuple[ir.Stmt, ...]:
    if isinstance(a, ir.Forelem) and a.iterator != b.iterator:
        def rn(e: ir.Expr) -> ir.Expr:
            if isinstance(e, ir.FieldAccess) and e.iterator == b.iterator:
                return replace(e, iterator=a.iterator)
            return e
        return tuple(ir.map_exprs(s, rn) for s in ir.stmt_body(b) or ())
    return ir.stmt_body(b) or ()


def _header_note(a: ir.Stmt) -> str:
    if isinstance(a, (ir.Forall, ir.ForRange)):
        return f"fused the two {a.var}-loops over 1..{a.n}"
    if isinstance(a, ir.ForValues):
        return f"fused the two {a.var}-loops over {a.values} segments"
    return f"fused the two loops over {a.domain.multiset}"


def _header_match(a: ir.Stmt, b: ir.Stmt, db, program: ir.Program) -> Optional[str]:
    """None when the headers are fusable, else the reason they are not."""
    if type(a) is not type(b):
        return f"loop kinds differ ({type(a).__name__} vs {type(b).__name__})"
    if isinstance(a, (ir.Forall, ir.ForRange)):
        if (a.var, a.n) != (b.var, b.n):
            return "block index or count differs"
        return None
    if isinstance(a, ir.ForValues):
        if (a.var, a.worker) != (b.var, b.worker):
            return "value variable or block index differs"
        if a.values == b.values:
            return None
        return _same_value_sets(program, db, a.values, b.values)
    if isinstance(a, ir.Forelem):
        if a.iterator != b.iterator:
            return "iterators differ"
        da, db_ = a.domain, b.domain
        if da == db_:
            return None
        if (da.multiset == db_.multiset and da.worker == db_.worker
                and da.distinct is None and db_.distinct is None
                and da.filter is not None and db_.filter is not None
                and da.filter[1] == db_.filter[1]):
            return _row_keyed_fusable(program, db, a, b)
        return "index set expressions differ"
    return "not loops"


def _same_value_sets(program: ir.Program, db, va: str, vb: str) -> Optional[str]:
    if db is None:
        return "no database to compare value lists against"
    decls = program.values_decls()
    da, db_decl = decls.get(va), decls.get(vb)
    if da is None or db_decl is None:
        return "undeclared value list"
    try:
        sa = set(db.multisets[da.multiset].field_values(da.field))
        sb = set(db.multisets[db_decl.multiset].field_values(db_decl.field))
    except KeyError as e:
        return f"multiset {e.args[0]!r} not in the database"
    if sa != sb:
        return (f"{da.multiset}.{da.field} and {db_decl.multiset}."
                f"{db_decl.field} have different distinct-value sets")
    return None


def _row_keyed_fusable(program: ir.Program, db, a: ir.Forelem,
                       b: ir.Forelem) -> Optional[str]:
    """Filtered loops over different fields of one multiset fuse when
    the fields' distinct-value sets coincide (so either filter walks
    every row exactly once across the full value enumeration) and both
    bodies only make row-keyed commutative updates."""
    fa, fb = a.domain.filter[0], b.domain.filter[0]
    if db is None:
        return "no database to compare the two filter fields against"
    ms = db.multisets.get(a.domain.multiset)
    if ms is None:
        return f"multiset {a.domain.multiset!r} not in the database"
    if set(ms.field_values(fa)) != set(ms.field_values(fb)):
        return (f"{a.domain.multiset}.{fa} and {a.domain.multiset}.{fb} "
                f"have different distinct-value sets")
    for loop in (a, b):
        for s in ir.stmt_body(loop) or ():
            if not isinstance(s, (ir.Accumulate, ir.ResultUnion)):
                return "bodies must only accumulate or collect rows"
            for e in ir.iter_exprs(s):
                if isinstance(e, ir.AccRead):
                    return "a body reads an accumulator; per-row coverage " \
                           "would expose a different partial state"
                if isinstance(e, ir.FieldAccess) and e.iterator != loop.iterator:
                    return "a body depends on rows outside the loop"
    return None


def statement_reorder(program: ir.Program, stmt: LoopRef,
                      new_position: int) -> tuple[ir.Program, PassReport]:
    """Move a statement among its siblings when no dependence crosses
    the move."""
    name = "statement_reorder"
    path = _as_path(stmt)
    target = _stmt_at(program, path)
    if target is None:
        return program, _no(name, f"no statement at {path}")
    parent, old = path[:-1], path[-1]
    siblings = list(program.body if not parent
                    else ir.stmt_body(ir.get_stmt(program, parent)))
    if not 0 <= new_position < len(siblings):
        return program, _no(name, f"position {new_position} outside 0.."
                                  f"{len(siblings) - 1}")
    if new_position == old:
        return program, _ok(name, "statement already at the requested position", path)
    lo, hi = sorted((old, new_position))
    crossed = siblings[lo + 1:hi + 1] if old == lo else siblings[lo:hi]
    for other in crossed:
        conflict = commute_conflict(target, other)
        if conflict:
            return program, _no(name, conflict)
    siblings.pop(old)
    siblings.insert(new_position, target)
    if not parent:
        out = replace(program, body=tuple(siblings))
    else:
        out = ir.splice(program, parent,
                        [ir.with_body(ir.get_stmt(program, parent), siblings)])
    return out, _ok(name, f"moved from {old} to {new_position}, "
                          f"crossing {len(crossed)} statements", path)


def fuse_adjacent(program: ir.Program, db=None) -> tuple[ir.Program, PassReport]:
    """Fixpoint fusion sweep: fuse same-kind sibling loops wherever the
    headers match, first shifting displaceable statements out of the
    gap between them."""
    name = "fuse_adjacent"
    notes: list[str] = []
    changed = True
    while changed:
        changed = False
        for parent, body in _bodies(program):
            i = 0
            while i < len(body):
                if not isinstance(body[i], ir.LoopNode):
                    i += 1
                    continue
                j = i + 1
                while j < len(body) and not isinstance(body[j], ir.LoopNode):
                    j += 1
                if j >= len(body) or type(body[i]) is not type(body[j]):
                    i += 1
                    continue
                # Shift the first loop up against the second, then fuse.
                prog2, rep = statement_reorder(program, parent + (i,), j - 1)
                if rep.applied:
                    prog2, rep = fuse_loops(prog2, parent + (j - 1,),
                                            parent + (j,), db=db)
                    if rep.applied:
                        program = prog2
                        notes.append(rep.detail)
                        changed = True
                        break
                i += 1
            if changed:
                break
    if not notes:
        return program, _no(name, "no fusable adjacent loops")
    return program, _ok(name, "; ".join(notes))


def _bodies(program: ir.Program):
    yield (), program.body
    for path, stmt in ir.iter_stmts(program):
        body = ir.stmt_body(stmt)
        if body is not None:
            yield path, body


# --- loop interchange ---

def interchange(program: ir.Program, outer_loop: LoopRef,
                inner_loop: Optional[LoopRef] = None) -> tuple[ir.Program, PassReport]:
    """Swap a perfectly nested forelem pair. A filter on the inner loop
    keyed by the outer row flips into the equivalent filter the other
    way around; iteration-method annotations are dropped because the
    probe direction they encoded no longer exists."""
    name = "interchange"
    po = _as_path(outer_loop)
    pi = _as_path(inner_loop) if inner_loop is not None else po + (0,)
    if pi != po + (0,):
        return program, _no(name, "inner loop is not the outer loop's first child")
    outer = _stmt_at(program, po)
    if not isinstance(outer, ir.Forelem):
        return program, _no(name, f"target {po} is not a forelem loop")
    if len(outer.body) != 1 or not isinstance(outer.body[0], ir.Forelem):
        return program, _no(name, "nest is not perfect: outer body must be "
                                  "exactly the inner loop")
    inner = outer.body[0]
    if outer.iterator == inner.iterator:
        return program, _no(name, f"both loops bind {outer.iterator!r}")
    od, idm = outer.domain, inner.domain
    if od.worker is not None or idm.worker is not None:
        return program, _no(name, "partitioned index sets do not interchange")
    if od.distinct is not None or idm.distinct is not None:
        return program, _no(name, "distinct-value domains do not interchange")

    inner_key = None
    if idm.filter is not None:
        f, e = idm.filter
        if (isinstance(e, ir.FieldAccess) and e.iterator == outer.iterator
                and e.multiset == od.multiset):
            inner_key = (f, e.field)
        elif any(isinstance(x, ir.FieldAccess) and x.iterator == outer.iterator
                 for x in _expr_nodes(e)):
            return program, _no(name, "inner filter uses the outer row in a "
                                      "form that cannot be inverted")
    if od.filter is not None and any(
            isinstance(x, ir.FieldAccess) and x.iterator == inner.iterator
            for x in _expr_nodes(od.filter[1])):
        return program, _no(name, "outer filter depends on the inner loop")

    if inner_key is None:
        new_inner = ir.Forelem(outer.iterator, od, inner.body)
        new_outer = ir.Forelem(inner.iterator, idm, (new_inner,))
    else:
        in_field, out_field = inner_key
        if od.filter is not None:
            return program, _no(name, "cannot invert a keyed filter under an "
                                      "additional outer filter")
        flipped = ir.IndexSetExpr(od.multiset, filter=(
            out_field, ir.FieldAccess(idm.multiset, inner.iterator, in_field)))
        new_inner = ir.Forelem(outer.iterator, flipped, inner.body)
        new_outer = ir.Forelem(inner.iterator,
                               ir.IndexSetExpr(idm.multiset), (new_inner,))
    out = ir.splice(program, po, [new_outer])
    return out, _ok(name, f"now iterating {new_outer.domain.multiset} outside "
                          f"{new_inner.domain.multiset}", po)


# --- vertical integration of producer and consumer loops ---

def merge_consumer(program: ir.Program) -> tuple[ir.Program, PassReport]:
    """Inline a consumer loop over an intermediate result into the loop
    that builds it, eliminating the intermediate. Applies repeatedly
    until no producer/consumer pair is left."""
    name = "merge_consumer"
    notes: list[str] = []
    while True:
        step = _merge_one(program)
        if step is None:
            break
        program, note = step
        notes.append(note)
    if not notes:
        return program, _no(name, "no producer/consumer pair over an "
                                  "intermediate result")
    return program, _ok(name, "; ".join(notes))


def _merge_one(program: ir.Program) -> Optional[tuple[ir.Program, str]]:
    results = program.result_decls()
    du = ir.def_use(program)
    for i, producer in enumerate(program.body):
        if not (isinstance(producer, ir.Forelem) and len(producer.body) == 1):
            continue
        union = producer.body[0]
        if not (isinstance(union, ir.ResultUnion) and union.worker is None):
            continue
        res = union.result
        decl = results.get(res)
        if decl is None or decl.output:
            continue
        if len(du.writes.get(res, [])) != 1:
            continue
        for j in range(i + 1, len(program.body)):
            consumer = program.body[j]
            if not (isinstance(consumer, ir.Forelem)
                    and consumer.domain == ir.IndexSetExpr(res)):
                continue
            reads = du.reads.get(res, [])
            if any(p[0] != j for p in reads):
                break  # someone else reads the intermediate
            between = program.body[i + 1:j]
            if any(commute_conflict(consumer, t) for t in between):
                break
            cols = {f: k for k, (f, _) in enumerate(decl.fields)}

            def inline(e: ir.Expr) -> ir.Expr:
                if isinstance(e, ir.FieldAccess) and e.multiset == res \
                        and e.iterator == consumer.iterator:
                    return union.exprs[cols[e.field]]
                return e

            merged_body = tuple(ir.map_exprs(s, inline) for s in consumer.body)
            # The inlined expressions use the producer's iterator; nested
            # loops that happen to rebind the same name must step aside.
            taken = _used_names(program)
            merged_body = tuple(_unshadow(s, producer.iterator, taken)
                                for s in merged_body)
            merged = ir.Forelem(producer.iterator, producer.domain, merged_body)
            body = (program.body[:i] + (merged,) + between
                    + program.body[j + 1:])
            decls = tuple(d for d in program.decls if d is not decl)
            out = replace(program, decls=decls, body=body)
            return out, (f"inlined the {consumer.iterator} loop over {res} "
                         f"into its producer and dropped {res}")
    return None


def _unshadow(stmt: ir.Stmt, name: str, taken: set[str]) -> ir.Stmt:
    """Rename any loop iterator equal to name to a fresh one, subtree-wide."""
    if isinstance(stmt, ir.Forelem) and stmt.iterator == name:
        if any(isinstance(s, ir.Forelem) and s.iterator == name
               for c in stmt.body for s in _walk(c)):
            return stmt  # a deeper rebinding: leave the shadowing as written
        fresh = _fresh(taken, (name + "2", name + "3"), name)
        taken.add(fresh)

        def rn(e: ir.Expr) -> ir.Expr:
            if isinstance(e, ir.FieldAccess) and e.iterator == name:
                return replace(e, iterator=fresh)
            return e

        body = tuple(ir.map_exprs(s, rn) for s in stmt.body)
        stmt = replace(stmt, iterator=fresh, body=body)
    inner = ir.stmt_body(stmt)
    if inner is not None:
        stmt = ir.with_body(stmt, tuple(_unshadow(s, name, taken) for s in inner))
    return stmt


# --- iteration method selection ---

def select_iteration_method(program: ir.Program, db=None,
                            threshold: int = 64) -> tuple[ir.Program, PassReport]:
    """Annotate nested filtered loops with the lookup scheme the
    executor should charge for: a hash probe once the base multiset is
    large enough to repay building the index, a scan otherwise. The
    annotation changes operation counts, never results."""
    name = "select_iteration_method"
    if db is None:
        return program, _no(name, "no database to size index sets against")
    chosen: list[tuple[Path, str]] = []

    def rewrite(stmts: Sequence[ir.Stmt], prefix: Path,
                forelem_depth: int) -> tuple[ir.Stmt, ...]:
        out = []
        for idx, s in enumerate(stmts):
            path = prefix + (idx,)
            depth = forelem_depth + (1 if isinstance(s, ir.Forelem) else 0)
            body = ir.stmt_body(s)
            if body is not None:
                s = ir.with_body(s, rewrite(body, path, depth))
            if (isinstance(s, ir.Forelem) and forelem_depth > 0
                    and s.domain.filter is not None and s.domain.worker is None
                    and s.domain.multiset in db.multisets):
                method = ("hash" if len(db.multisets[s.domain.multiset])
                          >= threshold else "scan")
                if s.method != method:
                    s = replace(s, method=method)
                chosen.append((path, method))
            out.append(s)
        return tuple(out)

    body = rewrite(program.body, (), 0)
    if not chosen:
        return program, _no(name, "no nested filtered loops to annotate")
    detail = ", ".join(f"{p}: {m}" for p, m in chosen)
    return replace(program, body=body), _ok(name, detail,
                                            *[p for p, _ in chosen])


# --- dead access elimination ---

def eliminate_dead_access(program: ir.Program) -> tuple[ir.Program, PassReport]:
    """Drop top-level statements whose only writes feed accumulators or
    results nothing reads, then the orphaned declarations. Runs to a
    fixpoint so chains of dead feeders unravel."""
    name = "eliminate_dead_access"
    removed_stmts = 0
    removed_decls: list[str] = []
    while True:
        du = ir.def_use(program)
        if du.dead_paths:
            for path in reversed(du.dead_paths):
                program = ir.splice(program, path, [])
            removed_stmts += len(du.dead_paths)
            continue
        referenced: set[str] = set()
        for _, s in ir.iter_stmts(program):
            r, a, i = ir.stmt_effects(s, recurse=False)
            referenced |= r | a | i
            if isinstance(s, ir.ForValues):
                referenced.add(s.values)
            if isinstance(s, ir.Forelem):
                referenced.add(s.domain.multiset)
        orphans = []
        for d in program.decls:
            if isinstance(d, ir.AccDecl) and d.name not in referenced:
                orphans.append(d)
            elif isinstance(d, ir.ResultDecl) and not d.output \
                    and d.name not in referenced:
                orphans.append(d)
            elif isinstance(d, ir.ValuesDecl) and d.name not in referenced:
                orphans.append(d)
        if not orphans:
            break
        removed_decls += [d.name for d in orphans]
        program = replace(program, decls=tuple(
            d for d in program.decls if d not in orphans))
    if not removed_stmts and not removed_decls:
        return program, _no(name, "nothing dead: every access feeds an output")
    bits = []
    if removed_stmts:
        bits.append(f"removed {removed_stmts} statement(s) feeding only dead names")
    if removed_decls:
        bits.append("dropped declarations " + ", ".join(removed_decls))
    return program, _ok(name, "; ".join(bits))


# --- automatic partitioning and the default pipeline ---

def auto_partition(program: ir.Program, n: int = 4) -> tuple[ir.Program, list[PassReport]]:
    """Block every top-level forelem that only produces (never reads
    accumulator state): by value range of the accumulate key when the
    body is a flat keyed accumulation, by row blocks otherwise. Loops
    that read accumulators stay sequential; they consume the expanded
    state after the parallel part."""
    reports: list[PassReport] = []
    for idx in reversed(range(len(program.body))):
        stmt = program.body[idx]
        if not isinstance(stmt, ir.Forelem):
            continue
        dom = stmt.domain
        if dom.worker is not None or dom.distinct is not None:
            continue
        if any(isinstance(e, ir.AccRead) for s in stmt.body
               for e in ir.iter_exprs(s)):
            continue
        key = _common_accumulate_key(stmt)
        if key is not None and dom.filter is None:
            program, rep = block_indirect(program, (idx,), key, n)
        else:
            program, rep = block_direct(program, (idx,), n)
        reports.append(rep)
    return program, reports


def _common_accumulate_key(loop: ir.Forelem) -> Optional[str]:
    key = None
    for s in loop.body:
        if not isinstance(s, ir.Accumulate):
            return None
        if not (isinstance(s.cell, ir.FieldAccess)
                and s.cell.multiset == loop.domain.multiset
                and s.cell.iterator == loop.iterator):
            return None
        if key is None:
            key = s.cell.field
        elif key != s.cell.field:
            return None
    return key


def apply_default_pipeline(program: ir.Program, n_partitions: int = 4, db=None,
                           hash_threshold: int = 64,
                           trace: Optional[list] = None) -> tuple[ir.Program, list[PassReport]]:
    """The compile pipeline: clean, merge, expand group scalars, block,
    expand per block, parallelize, fuse, then pick lookup methods.

    When `trace` is given it receives one (pass name, program) snapshot
    per applied pass."""
    reports: list[PassReport] = []

    def run(fn, *args, **kw):
        nonlocal program
        program, rep = fn(program, *args, **kw)
        reports.append(rep)
        if trace is not None and rep.applied:
            trace.append((rep.name, program))

    run(eliminate_dead_access)
    run(merge_consumer)
    run(expand_and_hoist)
    program, partition_reports = auto_partition(program, n_partitions)
    reports.extend(partition_reports)
    if trace is not None and any(r.applied for r in partition_reports):
        trace.append(("auto_partition", program))
    run(expand_and_hoist)
    for idx in reversed(range(len(program.body))):
        if isinstance(program.body[idx], ir.ForRange):
            run(parallelize, (idx,))
    run(fuse_adjacent, db=db)
    run(select_iteration_method, db=db, threshold=hash_threshold)
    return program, reports
