"""Data reformatting: dictionary keys, columnar layouts, unused-field dropping."""

import pathlib

import pytest

from forelem import ir, reformat as rf
from forelem.engine import run_parallel_sim, run_sequential
from forelem.multiset import FieldType, Multiset, Schema, SchemaError
import corpus


def test_dictionary_encode_round_trip():
    db = corpus.corpus_db("url_count", 3)
    db2, d = rf.dictionary_encode(db, "Access", "url")
    assert sorted(d.forward.values()) == list(range(len(d)))
    assert d.reverse[0] == db.multisets["Access"].rows[0][0]  # first occurrence first
    assert db2.multisets["Access"].schema.type_of("url") is FieldType.INT
    assert db.multisets["Access"].schema.type_of("url") is FieldType.STR
    back = rf.dictionary_decode(db2, "Access", d)
    assert back.multisets["Access"] == db.multisets["Access"]


def test_dictionary_rejects_non_string_fields():
    db = corpus.corpus_db("url_count", 3)
    with pytest.raises(rf.ReformatError, match="not str"):
        rf.dictionary_encode(db, "Access", "time")
    assert issubclass(rf.ReformatError, TypeError)


def test_encoded_run_decodes_to_the_plain_result():
    db = corpus.corpus_db("url_count", 3)
    prog = ir.parse_ir(corpus.URL_COUNT)
    plain = run_sequential(prog, db).results
    db2, d = rf.dictionary_encode(db, "Access", "url")
    dicts = {("Access", "url"): d}
    prog_e = rf.adapt_program(prog, dicts)
    assert ir.validate(prog_e) == []
    enc = run_sequential(prog_e, db2).results
    assert rf.decode_results(enc, prog, dicts)["R"] == plain["R"]


def test_two_encoded_fields_decode_independently():
    db = corpus.corpus_db("reverse_links", 5)
    prog = ir.parse_ir(corpus.REVERSE_LINKS)
    plain = run_sequential(prog, db).results
    db2, dsrc = rf.dictionary_encode(db, "Links", "source")
    db2, dtgt = rf.dictionary_encode(db2, "Links", "target")
    dicts = {("Links", "source"): dsrc, ("Links", "target"): dtgt}
    enc = run_sequential(rf.adapt_program(prog, dicts), db2).results
    assert rf.decode_results(enc, prog, dicts)["R"] == plain["R"]


def test_auto_reformat_targets_key_fields_only():
    prog = ir.parse_ir(corpus.URL_COUNT)
    db = corpus.corpus_db("url_count", 3)
    plain = run_sequential(prog, db).results
    prog_a, dba, dicts, notes = rf.auto_reformat(prog, db)
    assert set(dicts) == {("Access", "url")}
    enc = run_parallel_sim(prog_a, dba, pool=4).results
    assert rf.decode_results(enc, prog, dicts)["R"] == plain["R"]


def test_auto_reformat_skips_numeric_only_programs():
    prog = ir.parse_ir(corpus.GRADES)
    prog_a, _, dicts, _ = rf.auto_reformat(prog, corpus.corpus_db("grades", 1))
    assert dicts == {} and prog_a is prog


def test_literal_filters_are_mapped_through_the_dictionary():
    text = """\
multiset Links(source: str, target: str);
result R(source: str) output;

forelem (i; i in pLinks.target['p0']) {
  R += (Links[i].source);
}
"""
    lit = ir.parse_ir(text)
    db = corpus.corpus_db("reverse_links", 5)
    lit2, db2, dicts, _ = rf.auto_reformat(lit, db)
    assert ("Links", "target") in dicts
    fname, fval = lit2.body[0].domain.filter
    assert isinstance(fval, ir.IntLit)
    plain = run_sequential(lit, db).results["R"]
    dec = rf.decode_results(run_sequential(lit2, db2).results, lit, dicts)["R"]
    assert dec == plain

    # a literal absent from the data maps to an impossible key
    absent = ir.parse_ir(text.replace("'p0'", "'no_such_page'"))
    a2, dba, da, _ = rf.auto_reformat(absent, db)
    assert run_sequential(a2, dba).results["R"].rows == []
    assert run_sequential(absent, db).results["R"].rows == []


def test_mixed_plain_and_encoded_sources_are_rejected():
    mixed = ir.parse_ir("""\
multiset Links(source: str, target: str);
result R(v: str) output;

forelem (i; i in pLinks.target['p0']) {
  R += (Links[i].source);
}
forelem (j; j in pLinks) {
  R += (Links[j].target);
}
""")
    db, dtgt = rf.dictionary_encode(corpus.corpus_db("reverse_links", 5),
                                    "Links", "target")
    with pytest.raises(rf.ReformatError, match="mixes"):
        rf.adapt_program(mixed, {("Links", "target"): dtgt})


COLS = Multiset("T", Schema.of(id="int", tag="str", w="float"),
                [(1, "a", 0.5), (2, "b", 1.5), (3, "a", 2.5), (4, "c", 3.5)])


def test_columnar_with_range_and_dict_encodings():
    tab = rf.to_columnar(COLS, {"id": "range", "tag": "dict"})
    rng = tab.encodings["id"]
    assert isinstance(rng, rf.RangeDescriptor)
    assert (rng.lo, rng.hi, rng.step) == (1, 4, 1)
    assert isinstance(tab.encodings["tag"], rf.DictKeys)
    assert all(isinstance(v, int) for v in tab.columns["tag"])
    assert tab.notes == ()
    assert rf.from_columnar(tab) == COLS


def test_range_falls_back_to_plain_with_a_note():
    ms = Multiset("U", Schema.of(id="int"), [(1,), (2,), (4,)])
    tab = rf.to_columnar(ms, {"id": "range"})
    assert isinstance(tab.encodings["id"], rf.Plain)
    assert len(tab.notes) == 1 and "progression" in tab.notes[0]
    assert rf.from_columnar(tab) == ms


def test_range_accepts_descending_and_single_row_only_in_row_order():
    down = Multiset("D", Schema.of(id="int"), [(9,), (6,), (3,)])
    tab = rf.to_columnar(down, {"id": "range"})
    assert isinstance(tab.encodings["id"], rf.RangeDescriptor)
    assert rf.from_columnar(tab) == down

    one = Multiset("S", Schema.of(id="int"), [(7,)])
    assert rf.from_columnar(rf.to_columnar(one, {"id": "range"})) == one

    # sorted it would be a progression, but reconstruction must keep row order
    shuffled = Multiset("V", Schema.of(id="int"), [(3,), (1,), (2,)])
    tab = rf.to_columnar(shuffled, {"id": "range"})
    assert isinstance(tab.encodings["id"], rf.Plain)
    assert rf.from_columnar(tab) == shuffled


@pytest.mark.parametrize("request_,exc", [
    ({"tag": "range"}, rf.ReformatError),
    ({"id": "dict"}, rf.ReformatError),
    ({"w": "range"}, rf.ReformatError),
    ({"id": "zigzag"}, rf.ReformatError),
    ({"nope": "dict"}, SchemaError),
])
def test_bad_encoding_requests_are_rejected(request_, exc):
    with pytest.raises(exc):
        rf.to_columnar(COLS, request_)


def test_columnar_disk_round_trip(tmp_path):
    tab = rf.to_columnar(COLS, {"id": "range", "tag": "dict"})
    manifest = rf.save_columnar(tab, tmp_path)
    loaded = rf.load_columnar(manifest)
    assert loaded.to_rows() == COLS
    assert isinstance(loaded.encodings["id"], rf.RangeDescriptor)
    assert isinstance(loaded.encodings["tag"], rf.DictKeys)
    files = sorted(p.name for p in pathlib.Path(tmp_path).iterdir())
    # range columns live entirely in the manifest
    assert files == ["T.manifest.json", "T.tag.col", "T.w.col"]


def test_drop_unused_fields_keeps_only_what_is_read():
    prog = ir.parse_ir(corpus.URL_COUNT)
    db = corpus.corpus_db("url_count", 3)
    plain = run_sequential(prog, db).results
    acc = db.multisets["Access"]
    wide = Multiset("Access", Schema.of(url="str", time="int", extra="int"),
                    [r + (99,) for r in acc.rows])
    db.multisets["Access"] = wide
    db2, rep = rf.drop_unused_fields(prog, db)
    assert set(rep.dropped["Access"]) == {"time", "extra"}
    assert db2.multisets["Access"].schema.names == ("url",)
    assert run_sequential(prog, db2).results["R"] == plain["R"]
    assert "Access" in str(rep) and "time" in str(rep)

    db3, rep2 = rf.drop_unused_fields(prog, db2)
    assert rep2.dropped == {} and "every stored field" in str(rep2)


def test_count_star_survives_dropping_every_field():
    cs = ir.parse_ir("""\
multiset Access(url: str, time: int);
result R(n: int) output;
acc c;

c = 0;
forelem (i; i in pAccess) {
  c += 1;
}
R += (c);
""")
    db = corpus.corpus_db("url_count", 3)
    n = len(db.multisets["Access"])
    db2, rep = rf.drop_unused_fields(cs, db)
    assert set(rep.dropped["Access"]) == {"url", "time"}
    assert run_sequential(cs, db2).results["R"].rows == [(n,)]
