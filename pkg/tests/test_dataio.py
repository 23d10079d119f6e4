"""Data directories (CSV and columnar layouts), result CSVs, stats JSON."""

import json
import random

import pytest

from forelem import dataio
from forelem.engine import Database, ExecStats, run_sequential
from forelem.multiset import DirectBlocks, Multiset, Schema, ValueRangePartition
from forelem import ir
import corpus


def test_csv_layout_round_trip(tmp_path):
    db = corpus.corpus_db("url_count", 3)
    notes = dataio.save_database(db, tmp_path)
    assert notes == []
    assert (tmp_path / "Access.csv").exists()
    assert (tmp_path / "Access.schema.json").exists()
    back = dataio.load_database(tmp_path)
    assert back.multisets["Access"] == db.multisets["Access"]


def test_columnar_layout_round_trip(tmp_path):
    db = corpus.corpus_db("url_count", 3)
    notes = dataio.save_database(db, tmp_path,
                                 columnar={"Access": {"url": "dict"}})
    assert notes == []
    assert (tmp_path / "Access.manifest.json").exists()
    assert not (tmp_path / "Access.csv").exists()
    back = dataio.load_database(tmp_path)
    # loading decodes: a run over the reloaded directory needs no adapter
    assert back.multisets["Access"] == db.multisets["Access"]


def test_columnar_fallback_notes_propagate(tmp_path):
    db = corpus.corpus_db("url_count", 3)
    notes = dataio.save_database(db, tmp_path,
                                 columnar={"Access": {"time": "range"}})
    assert notes and notes[0].startswith("Access:")
    back = dataio.load_database(tmp_path)
    assert back.multisets["Access"] == db.multisets["Access"]


def test_partition_sidecars_round_trip(tmp_path):
    ms = corpus.gen_table(4)
    part = ValueRangePartition("field1", (tuple(range(1, 5)), tuple(range(5, 9))))
    db = Database({"Table": ms}, {"Table": part})
    dataio.save_database(db, tmp_path)
    back = dataio.load_database(tmp_path)
    assert back.initial_partitions["Table"] == part

    db2 = Database({"Table": ms}, {"Table": DirectBlocks(4)})
    dataio.save_database(db2, tmp_path)
    assert dataio.load_database(tmp_path).initial_partitions["Table"] == DirectBlocks(4)


def test_empty_directory_is_refused(tmp_path):
    with pytest.raises(dataio.DataError, match="no .*schema"):
        dataio.load_database(tmp_path)
    with pytest.raises(dataio.DataError):
        dataio.load_database(tmp_path / "missing")


def test_both_layouts_for_one_table_is_an_error(tmp_path):
    db = corpus.corpus_db("url_count", 3)
    dataio.save_database(db, tmp_path)
    dataio.save_database(db, tmp_path, columnar={"Access": {}})
    with pytest.raises(dataio.DataError, match="both layouts"):
        dataio.load_database(tmp_path)


def test_header_mismatch_is_an_error(tmp_path):
    dataio.save_database(corpus.corpus_db("url_count", 3), tmp_path)
    csv_path = tmp_path / "Access.csv"
    csv_path.write_text(csv_path.read_text().replace("url,time", "url,when", 1))
    with pytest.raises(dataio.DataError, match="header"):
        dataio.load_database(tmp_path)


def test_bad_cell_value_is_an_error(tmp_path):
    (tmp_path / "T.schema.json").write_text('{"fields": [["n", "int"]]}')
    (tmp_path / "T.csv").write_text("n\nseven\n")
    with pytest.raises(dataio.DataError, match="is not int"):
        dataio.load_database(tmp_path)


def test_partition_for_unknown_table_is_an_error(tmp_path):
    dataio.save_database(corpus.corpus_db("url_count", 3), tmp_path)
    (tmp_path / "Ghost.partition.json").write_text('{"kind": "direct", "n": 2}')
    with pytest.raises(dataio.DataError, match="unknown table"):
        dataio.load_database(tmp_path)


def test_result_csv_is_order_canonical():
    rows = [(f"u{i % 7}", i) for i in range(30)]
    a = Multiset("R", Schema.of(url="str", cnt="int"), rows)
    shuffled = list(rows)
    random.Random(1).shuffle(shuffled)
    b = Multiset("R", Schema.of(url="str", cnt="int"), shuffled)
    assert dataio.format_result_csv(a) == dataio.format_result_csv(b)
    text = dataio.format_result_csv(a)
    assert text.splitlines()[0] == "url,cnt"
    assert text.endswith("\n")


def test_run_over_saved_directory_reproduces_results(tmp_path):
    db = corpus.corpus_db("url_count", 9)
    prog = ir.parse_ir(corpus.URL_COUNT)
    want = run_sequential(prog, db).results["R"]
    dataio.save_database(db, tmp_path)
    got = run_sequential(prog, dataio.load_database(tmp_path)).results["R"]
    assert got == want


def test_stats_json_key_order_is_fixed():
    stats = ExecStats(inner_iterations=5, hash_probes=2, hash_builds=1)
    text = dataio.format_stats_json(stats, program="p.fl", backend="seq",
                                    seed=3, wall_time_s=0.25)
    data = json.loads(text)
    keys = list(data)
    assert keys[:3] == ["program", "backend", "seed"]
    assert keys[-1] == "wall_time_s"
    assert data["inner_iterations"] == 5
    assert data["n_chunks"] == []
    # unset config keys are left out entirely
    assert "policy" not in data
