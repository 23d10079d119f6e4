"""Execution engine: sequential and simulated-parallel runs, stats, faults."""

import dataclasses

import pytest

from forelem import ir
from forelem.engine import (
    Database, ExecError, count_redistributions, run_parallel_sim, run_sequential,
)
from forelem.scheduler import (
    FAILED, AllWorkersFailed, FaultEvent, FixedChunk, GSS, Hybrid, StaticBlock,
    StaticCyclic, Trapezoid, WorkerPool,
)
from forelem.transforms import select_iteration_method
import corpus
import naive


def outputs(outcome):
    return {k: [tuple(r) for r in v.rows] for k, v in outcome.results.items()}


@pytest.mark.parametrize("name", sorted(corpus.ALL_PROGRAMS))
@pytest.mark.parametrize("seed", [0, 7])
def test_sequential_run_matches_naive_interpreter(name, seed):
    base = name[:-4] if name.endswith("_par") else name
    prog = ir.parse_ir(corpus.ALL_PROGRAMS[name])
    db = corpus.corpus_db(base, seed)
    want = naive.naive_run(prog, db)
    got = outputs(run_sequential(prog, db))
    assert naive.results_match(want, got)


@pytest.mark.parametrize("policy", [StaticBlock(), StaticCyclic(), FixedChunk(2),
                                    GSS(), Trapezoid(), Hybrid(GSS(), 2)],
                         ids=["static", "cyclic", "fixed", "gss", "tss", "hybrid"])
@pytest.mark.parametrize("name", sorted(corpus.CORPUS_PAR) + ["two_agg"])
def test_parallel_run_matches_naive_interpreter(name, policy):
    base = name[:-4] if name.endswith("_par") else name
    prog = ir.parse_ir(corpus.ALL_PROGRAMS[name])
    db = corpus.corpus_db(base, 5)
    want = naive.naive_run(prog, db)
    got = outputs(run_parallel_sim(prog, db, pool=4, policy=policy))
    assert naive.results_match(want, got)


@pytest.mark.parametrize("p", [1, 2, 8])
def test_pool_size_does_not_change_results(p):
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    db = corpus.corpus_db("url_count", 2)
    want = naive.naive_run(prog, db)
    got = outputs(run_parallel_sim(prog, db, pool=p))
    assert naive.results_match(want, got)


def test_pool_accepts_a_worker_pool_instance():
    prog = ir.parse_ir(corpus.GRADES_PAR)
    db = corpus.corpus_db("grades", 4)
    pool = WorkerPool(4)
    got = outputs(run_parallel_sim(prog, db, pool=pool))
    assert naive.results_match(naive.naive_run(prog, db), got)


def test_threaded_execution_agrees_with_simulated():
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    db = corpus.corpus_db("url_count", 6)
    sim = outputs(run_parallel_sim(prog, db, pool=4))
    thr = outputs(run_parallel_sim(prog, db, pool=4, threads=True))
    assert naive.results_match(sim, thr)


def test_scan_join_counts_inner_iterations_exactly():
    prog = ir.parse_ir(corpus.JOIN)
    db = corpus.corpus_db("join", 3)
    out = run_sequential(prog, db)
    n_a = len(db.multisets["A"])
    n_b = len(db.multisets["B"])
    assert out.stats.inner_iterations == n_a * n_b
    assert out.stats.hash_probes == 0 and out.stats.hash_builds == 0


def test_hash_join_counts_probes_and_builds_exactly():
    prog, _ = select_iteration_method(ir.parse_ir(corpus.JOIN),
                                      db=corpus.corpus_db("join", 3), threshold=0)
    db = corpus.corpus_db("join", 3)
    out = run_sequential(prog, db)
    assert out.stats.hash_probes == len(db.multisets["A"])
    assert out.stats.hash_builds == 1
    assert out.stats.inner_iterations == 0
    scan = run_sequential(ir.parse_ir(corpus.JOIN), db)
    assert outputs(out) == outputs(scan)


def test_filtered_count_loop_scans_the_whole_base_per_group():
    prog = ir.parse_ir(corpus.URL_COUNT)
    db = corpus.corpus_db("url_count", 1)
    out = run_sequential(prog, db)
    n_rows = len(db.multisets["Access"])
    n_urls = len(set(db.multisets["Access"].field_values("url")))
    assert out.stats.inner_iterations == n_urls * n_rows


def test_parallel_stats_attribute_forall_iterations_to_workers():
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    db = corpus.corpus_db("url_count", 3)
    out = run_parallel_sim(prog, db, pool=4)
    assert len(out.stats.per_worker_iterations) == 4
    n_foralls = sum(isinstance(s, ir.Forall) for s in prog.body)
    assert sum(out.stats.per_worker_iterations) == 4 * n_foralls
    assert len(out.stats.chunks) == n_foralls
    for trace in out.stats.chunks:
        assert trace.covers_exactly_once()


def test_redistribution_counting_between_conflicting_partitionings():
    db = Database({"Table": corpus.gen_table(21)})
    prog = ir.parse_ir(corpus.TWO_AGG)
    report = count_redistributions(prog, db)
    assert report.count == 1
    assert "Table" in report.events[0].describe()
    assert run_sequential(prog, db).stats.redistribution_events == 1
    assert run_parallel_sim(prog, db, pool=4).stats.redistribution_events == 1

    single = ir.parse_ir(corpus.URL_COUNT_PAR)
    dbu = corpus.corpus_db("url_count", 0)
    assert count_redistributions(single, dbu).count == 0


def test_engine_survives_one_worker_loss():
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    db = corpus.corpus_db("url_count", 8)
    want = naive.naive_run(prog, db)
    out = run_parallel_sim(prog, db, pool=4, policy=GSS(),
                           faults=[FaultEvent(0, after_chunk=1)])
    assert naive.results_match(want, outputs(out))
    assert any(e.status == FAILED for t in out.stats.chunks for e in t.entries)


def test_engine_raises_when_every_worker_dies():
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    db = corpus.corpus_db("url_count", 8)
    faults = [FaultEvent(0, after_chunk=1), FaultEvent(1, after_chunk=1)]
    with pytest.raises(AllWorkersFailed):
        run_parallel_sim(prog, db, pool=2, policy=GSS(), faults=faults)


def test_missing_table_is_an_exec_error():
    prog = ir.parse_ir(corpus.REVERSE_LINKS)
    with pytest.raises(ExecError, match="not present"):
        run_sequential(prog, Database({}))


def test_invalid_program_is_refused_up_front():
    prog = ir.parse_ir(corpus.URL_COUNT)
    loop = prog.body[0]
    bad = ir.splice(prog, (0,), [dataclasses.replace(
        loop, domain=dataclasses.replace(loop.domain, multiset="Nope"))])
    with pytest.raises(ExecError, match="does not validate"):
        run_sequential(bad, corpus.corpus_db("url_count", 0))


def test_outcome_exposes_final_accumulators():
    prog = ir.parse_ir(corpus.GRADES)
    db = corpus.corpus_db("grades", 2)
    out = run_sequential(prog, db)
    assert "avg" in out.accumulators
    assert set(out.results) == {"R"}  # non-output Res stays internal
