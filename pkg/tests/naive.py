"""Independent oracles for the test suite.

The interpreter here shares only the parsed AST with the package; its
semantics are written from scratch: plain list scans for every index
set, sequential execution of parallel loops, dict accumulators. No
index structures, no scheduler, no buffering. Chunk-size formulas for
the dynamic schedulers are coded directly from their definitions.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Any, Optional

from forelem import ir


# --- independent partitioning rules ---

def split_sizes(total: int, n: int) -> list[int]:
    """n near-equal block sizes, larger blocks first."""
    base, extra = divmod(total, n)
    return [base + 1] * extra + [base] * (n - extra)


def block_bounds(total: int, n: int, k: int) -> tuple[int, int]:
    """Half-open bounds of 1-based block k."""
    sizes = split_sizes(total, n)
    start = sum(sizes[:k - 1])
    return start, start + sizes[k - 1]


def value_segments(values: list[Any], n: int) -> list[list[Any]]:
    ordered = sorted(set(values))
    sizes = split_sizes(len(ordered), n)
    out, at = [], 0
    for s in sizes:
        out.append(ordered[at:at + s])
        at += s
    return out


# --- naive program interpreter ---

class NaiveRun:
    def __init__(self, program: ir.Program, tables: dict[str, Any]):
        self.program = program
        self.tables = {name: list(ms.rows) for name, ms in tables.items()}
        self.result_fields = {d.name: [f[0] for f in d.fields]
                              for d in program.decls if isinstance(d, ir.ResultDecl)}
        self.ms_fields = {name: list(ms.schema.names)
                          for name, ms in tables.items()}
        self.acc: dict[str, dict[tuple, Any]] = {}
        self.results: dict[str, list[tuple]] = {
            d.name: [] for d in program.decls if isinstance(d, ir.ResultDecl)}
        self.pools: dict[tuple[str, int], list[tuple]] = {}
        self.values_decls = {d.name: d for d in program.decls
                             if isinstance(d, ir.ValuesDecl)}

    def field_index(self, name: str, fld: str) -> int:
        if name in self.ms_fields:
            return self.ms_fields[name].index(fld)
        return self.result_fields[name].index(fld)

    def base_rows(self, name: str) -> list[tuple]:
        if name in self.tables:
            return self.tables[name]
        return list(self.results[name])

    def rows_for(self, dom: ir.IndexSetExpr, env: dict) -> list[tuple]:
        rows = self.base_rows(dom.multiset)
        if dom.worker is not None:
            k = env[dom.worker]
            lo, hi = block_bounds(len(rows), self.worker_bound(env), k)
            rows = rows[lo:hi]
        if dom.filter is not None:
            fld, expr = dom.filter
            idx = self.field_index(dom.multiset, fld)
            want = self.eval(expr, env)
            rows = [r for r in rows if r[idx] == want]
        elif dom.distinct is not None:
            idx = self.field_index(dom.multiset, dom.distinct)
            seen, out = set(), []
            for r in rows:
                if r[idx] not in seen:
                    seen.add(r[idx])
                    out.append(r)
            rows = out
        return rows

    def worker_bound(self, env: dict) -> int:
        return env["__n_workers__"]

    def eval(self, e: ir.Expr, env: dict) -> Any:
        if isinstance(e, (ir.IntLit, ir.FloatLit, ir.StrLit)):
            return e.value
        if isinstance(e, ir.VarRef):
            return env[e.name]
        if isinstance(e, ir.FieldAccess):
            row = env[("row", e.iterator)]
            return row[self.field_index(e.multiset, e.field)]
        if isinstance(e, ir.AccRead):
            w = env[e.worker] if e.worker is not None else None
            c = self.eval(e.cell, env) if e.cell is not None else None
            return self.acc.get(e.acc, {}).get((w, c), 0)
        if isinstance(e, ir.SumOverK):
            total = 0
            for k in range(1, e.n + 1):
                total += self.eval(e.body, dict(env, **{e.var: k}))
            return total
        if isinstance(e, ir.BinOp):
            lhs, rhs = self.eval(e.lhs, env), self.eval(e.rhs, env)
            return lhs + rhs if e.op == "+" else lhs * rhs
        raise TypeError(f"naive eval: {e!r}")

    def exec_block(self, stmts, env: dict) -> None:
        for s in stmts:
            self.exec_stmt(s, env)

    def exec_stmt(self, s: ir.Stmt, env: dict) -> None:
        if isinstance(s, ir.Forelem):
            for row in self.rows_for(s.domain, env):
                inner = dict(env)
                inner[("row", s.iterator)] = row
                self.exec_block(s.body, inner)
        elif isinstance(s, (ir.Forall, ir.ForRange)):
            for k in range(1, s.n + 1):
                inner = dict(env, **{s.var: k})
                inner["__n_workers__"] = s.n
                self.exec_block(s.body, inner)
        elif isinstance(s, ir.ForValues):
            decl = self.values_decls[s.values]
            col = [r[self.field_index(decl.multiset, decl.field)]
                   for r in self.tables[decl.multiset]]
            segs = value_segments(col, env["__n_workers__"])
            for v in segs[env[s.worker] - 1]:
                self.exec_block(s.body, dict(env, **{s.var: v}))
        elif isinstance(s, ir.AccumInit):
            store = self.acc.setdefault(s.acc, {})
            w = env[s.worker] if s.worker is not None else None
            c = self.eval(s.cell, env) if s.cell is not None else None
            for key in [k for k in store
                        if (s.worker is None or k[0] == w)
                        and (s.cell is None or k[1] == c)]:
                del store[key]
        elif isinstance(s, ir.Accumulate):
            store = self.acc.setdefault(s.acc, {})
            w = env[s.worker] if s.worker is not None else None
            c = self.eval(s.cell, env) if s.cell is not None else None
            store[(w, c)] = store.get((w, c), 0) + self.eval(s.delta, env)
        elif isinstance(s, ir.ResultUnion):
            row = tuple(self.eval(x, env) for x in s.exprs)
            if s.worker is not None:
                k = env[s.worker]
                self.pools.setdefault((s.result, k), []).append(row)
            else:
                self.results[s.result].append(row)
        elif isinstance(s, ir.ResultMerge):
            for k in range(1, s.n + 1):
                self.results[s.result].extend(self.pools.pop((s.result, k), []))
        else:
            raise TypeError(f"naive exec: {s!r}")

    def run(self) -> dict[str, list[tuple]]:
        self.exec_block(self.program.body, {})
        out = {}
        for d in self.program.decls:
            if isinstance(d, ir.ResultDecl) and d.output:
                out[d.name] = self.results[d.name]
        return out


def naive_run(program: ir.Program, db) -> dict[str, list[tuple]]:
    tables = db.multisets if hasattr(db, "multisets") else db
    return NaiveRun(program, tables).run()


# --- result comparison ---

def _has_float(rows) -> bool:
    return any(isinstance(v, float) for r in rows for v in r)


def rows_match(expected, actual, rel: float = 1e-9) -> bool:
    expected, actual = list(expected), list(actual)
    if len(expected) != len(actual):
        return False
    if not _has_float(expected) and not _has_float(actual):
        return Counter(expected) == Counter(actual)
    for a, b in zip(sorted(expected), sorted(actual)):
        if len(a) != len(b):
            return False
        for x, y in zip(a, b):
            if isinstance(x, float) or isinstance(y, float):
                if not math.isclose(x, y, rel_tol=rel, abs_tol=1e-12):
                    return False
            elif x != y:
                return False
    return True


def results_match(expected: dict, actual: dict, rel: float = 1e-9) -> bool:
    if set(expected) != set(actual):
        return False
    return all(rows_match(expected[k], actual[k], rel) for k in expected)


# --- brute-force SQL evaluation (over the parsed query, own semantics) ---

def naive_sql(script, tables: dict[str, Any], params: Optional[dict] = None) -> list[tuple]:
    from forelem import sqlfront as sf

    params = params or {}
    data = {name: [dict(zip(ms.schema.names, row))
                   for row in ms.rows]
            for name, ms in (tables.multisets if hasattr(tables, "multisets")
                             else tables).items()}

    def resolve_table(name: str) -> list[dict]:
        for known in data:
            if known.lower() == name.lower():
                return data[known]
        raise KeyError(name)

    def eval_scalar(term, env: dict):
        if isinstance(term, sf.Literal):
            return term.value
        if isinstance(term, sf.Param):
            return params[term.name]
        if isinstance(term, sf.ColRef):
            if term.table is not None:
                return env[term.table][term.column]
            for row in env.values():
                if isinstance(row, dict) and term.column in row:
                    return row[term.column]
            raise KeyError(term.column)
        raise TypeError(term)

    def where_holds(preds, env: dict) -> bool:
        return all(eval_scalar(p.lhs, env) == eval_scalar(p.rhs, env) for p in preds)

    def run_select(q, outer_env: Optional[dict] = None) -> list[tuple]:
        refs = [(t.alias or t.name, t.name) for t in q.tables]
        rel = [{}]
        for alias, name in refs:
            if name in views:
                rows = views[name]
            else:
                rows = resolve_table(name)
            rel = [dict(env, **{alias: row}) for env in rel for row in rows]
        envs = []
        for env in rel:
            full = dict(outer_env or {}, **env)
            if where_holds(q.where, full):
                envs.append(full)

        def item_value(item, env):
            if isinstance(item, sf.ColItem):
                return eval_scalar(sf.ColRef(item.table, item.column), env)
            if isinstance(item, sf.CountSubquery):
                (val,), = run_select(item.query, env)
                return val
            raise TypeError(item)

        aggs = [it for it in q.items if isinstance(it, (sf.CountItem, sf.SumItem))]
        if q.group_by is not None:
            gb = q.group_by
            groups: dict[Any, list[dict]] = {}
            for env in envs:
                key = eval_scalar(sf.ColRef(gb.table, gb.column), env)
                groups.setdefault(key, []).append(env)
            out = []
            for key in groups:
                row = []
                for it in q.items:
                    if isinstance(it, sf.CountItem):
                        if it.distinct and it.column:
                            vals = {eval_scalar(sf.ColRef(None, it.column), e)
                                    for e in groups[key]}
                            row.append(len(vals))
                        else:
                            row.append(len(groups[key]))
                    elif isinstance(it, sf.SumItem):
                        row.append(sum(eval_scalar(sf.ColRef(None, it.column), e)
                                       for e in groups[key]))
                    else:
                        row.append(item_value(it, groups[key][0]))
                out.append(tuple(row))
            return out
        if aggs:
            row = []
            for it in q.items:
                if isinstance(it, sf.CountItem):
                    row.append(len(envs))
                elif isinstance(it, sf.SumItem):
                    row.append(sum(eval_scalar(sf.ColRef(None, it.column), e)
                                   for e in envs))
                else:
                    raise TypeError("bare column beside aggregate without GROUP BY")
            return [tuple(row)]
        out = [tuple(item_value(it, env) for it in q.items) for env in envs]
        if q.distinct:
            seen, deduped = set(), []
            for r in out:
                if r not in seen:
                    seen.add(r)
                    deduped.append(r)
            out = deduped
        return out

    views: dict[str, list[dict]] = {}
    for name, vq in script.views.items():
        rows = run_select(vq)
        cols = []
        for it in vq.items:
            assert isinstance(it, sf.ColItem)
            cols.append(it.column)
        views[name] = [dict(zip(cols, r)) for r in rows]
    return run_select(script.query)


# --- dynamic chunk-size formulas, coded from their definitions ---

def gss_chunk_sizes(n: int, p: int) -> list[int]:
    sizes, remaining = [], n
    while remaining > 0:
        size = math.ceil(remaining / p)
        sizes.append(size)
        remaining -= size
    return sizes


def tss_chunk_sizes(n: int, p: int, first: Optional[int] = None, last: int = 1) -> list[int]:
    if n == 0:
        return []
    f = first if first is not None else max(1, math.ceil(n / (2 * p)))
    l = min(last, f)
    planned = math.ceil(2 * n / (f + l))
    delta = (f - l) / (planned - 1) if planned > 1 else 0.0
    sizes, remaining, i = [], n, 0
    while remaining > 0:
        size = min(remaining, max(l, math.floor(f - i * delta)))
        sizes.append(size)
        remaining -= size
        i += 1
    return sizes
