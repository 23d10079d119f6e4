"""MapReduce derivation from the accumulate-then-read loop pair, and its runner."""

import pathlib

import pytest

from forelem import ir, mapreduce as mr
from forelem.engine import Database, run_sequential
from forelem.multiset import Multiset, Schema
from forelem.transforms import apply_default_pipeline
import corpus

GOLDEN = pathlib.Path(__file__).parent / "data" / "url_count_mr.txt"


def test_detects_the_blocked_counting_pattern():
    pat = mr.detect_pattern(ir.parse_ir(corpus.URL_COUNT_PAR))
    assert pat is not None
    assert (pat.multiset, pat.key_field, pat.delta, pat.reduce, pat.result) == \
        ("Access", "url", 1, mr.ReduceKind.COUNT_VALUES, "R")


def test_detects_the_flat_summing_pattern():
    pat = mr.detect_pattern(ir.parse_ir(corpus.SUM_PER_KEY))
    assert pat is not None
    assert (pat.multiset, pat.key_field, pat.delta, pat.reduce) == \
        ("Table", "field1", "field2", mr.ReduceKind.SUM_VALUES)


def test_detects_the_reverse_link_pattern():
    pat = mr.detect_pattern(ir.parse_ir(corpus.REVERSE_LINKS_PAR))
    assert pat is not None
    assert (pat.multiset, pat.key_field) == ("Links", "target")


@pytest.mark.parametrize("name", ["URL_COUNT", "REVERSE_LINKS", "JOIN",
                                  "GRADES", "TWO_AGG"])
def test_other_shapes_do_not_match(name):
    assert mr.detect_pattern(ir.parse_ir(getattr(corpus, name))) is None


def test_pipeline_output_of_the_sequential_program_matches():
    db = corpus.corpus_db("url_count", 3)
    tprog, _ = apply_default_pipeline(ir.parse_ir(corpus.URL_COUNT), db=db)
    pat = mr.detect_pattern(tprog)
    assert pat is not None and pat.key_field == "url"


def test_url_count_pseudocode_matches_the_golden_file():
    prog = mr.derive_mapreduce(ir.parse_ir(corpus.URL_COUNT_PAR))
    assert prog.value_field is None and prog.value_literal == 1
    assert prog.pseudocode() + "\n" == GOLDEN.read_text()


def test_sum_pseudocode_emits_the_value_field():
    prog = mr.derive_mapreduce(ir.parse_ir(corpus.SUM_PER_KEY))
    assert prog.value_field == "field2"
    text = prog.pseudocode()
    assert "    emitIntermediate(t.field1, t.field2)" in text
    assert "total += v" in text and "emit(key, total)" in text


def test_derive_returns_none_without_the_pattern():
    assert mr.derive_mapreduce(ir.parse_ir(corpus.JOIN)) is None


@pytest.mark.parametrize("pname,dbname", [
    ("URL_COUNT_PAR", "url_count"),
    ("SUM_PER_KEY", "sum_per_key"),
    ("REVERSE_LINKS_PAR", "reverse_links"),
])
def test_mapreduce_is_split_invariant_and_oracle_equal(pname, dbname):
    prog = ir.parse_ir(getattr(corpus, pname))
    m = mr.derive_mapreduce(prog)
    for seed in (0, 7, 13):
        db = corpus.corpus_db(dbname, seed)
        want = run_sequential(prog, db).results[m.result]
        for splits in (1, 2, 4, 8):
            got, trace = mr.run_mapreduce(m, db, splits)
            assert got[m.result] == want
            assert trace.n_map_tasks == splits
            assert trace.n_pairs == len(db.multisets[m.input])


TINY = Database({"Access": Multiset("Access", Schema.of(url="str", time="int"),
                                    [("u1", 1), ("u1", 2), ("u2", 3)])})


def tiny_mr():
    return mr.derive_mapreduce(ir.parse_ir(corpus.URL_COUNT_PAR))


def test_tiny_example_counts_and_traces():
    got, trace = mr.run_mapreduce(tiny_mr(), TINY, 2)
    assert sorted(got["R"].rows) == [("u1", 2), ("u2", 1)]
    assert trace.n_map_tasks == 2
    assert [len(t) for t in trace.pairs] == [2, 1]
    assert dict(trace.groups) == {"u1": [1, 1], "u2": [1]}
    assert trace.to_lines() == ["map u1 1", "map u1 1", "map u2 1",
                                "reduce u1 2", "reduce u2 1"]
    assert [k for k, _ in trace.outputs] == sorted(trace.groups)


def test_split_bounds():
    _, tr1 = mr.run_mapreduce(tiny_mr(), TINY, 1)
    assert tr1.n_map_tasks == 1 and len(tr1.pairs[0]) == 3
    with pytest.raises(ValueError):
        mr.run_mapreduce(tiny_mr(), TINY, 0)
    got, tr9 = mr.run_mapreduce(tiny_mr(), TINY, 9)
    assert sorted(got["R"].rows) == [("u1", 2), ("u2", 1)]
    assert tr9.n_map_tasks == 9 and tr9.n_pairs == 3
