"""Textual loop IR: parsing, printing, structure helpers, def-use, validation."""

import pytest

from forelem import ir
import corpus


@pytest.mark.parametrize("name", sorted(corpus.ALL_PROGRAMS))
def test_parse_pretty_round_trip(name):
    text = corpus.ALL_PROGRAMS[name]
    prog = ir.parse_ir(text)
    printed = ir.pretty(prog)
    again = ir.parse_ir(printed)
    assert ir.pretty(again) == printed
    assert again == prog  # node equality ignores source locations


@pytest.mark.parametrize("name", sorted(corpus.ALL_PROGRAMS))
def test_corpus_programs_validate_clean(name):
    prog = ir.parse_ir(corpus.ALL_PROGRAMS[name])
    assert ir.validate(prog) == []


def test_parse_error_carries_location():
    with pytest.raises(ir.ParseError) as exc:
        ir.parse_ir("multiset A(x: int);\nforelem (i in pA) { }\n")
    assert exc.value.loc[0] == 2
    assert "2:" in str(exc.value)


def test_parse_rejects_stray_characters():
    with pytest.raises(ir.ParseError):
        ir.parse_ir("multiset A(x: int); $")


def diags(text):
    return [d.message for d in ir.validate(ir.parse_ir(text))]


def test_parser_rejects_undeclared_loop_base():
    with pytest.raises(ir.ParseError, match="undeclared name 'B'"):
        ir.parse_ir("""\
multiset A(x: int);
result R(x: int) output;
forelem (i; i in pB) {
  R += (1);
}
""")


def test_validate_catches_undeclared_multiset_in_built_ast():
    # The parser cannot produce this shape; rewrites can.
    import dataclasses
    prog = ir.parse_ir("""\
multiset A(x: int);
result R(x: int) output;
forelem (i; i in pA) {
  R += (A[i].x);
}
""")
    loop = prog.body[0]
    bad = ir.splice(prog, (0,), [dataclasses.replace(
        loop, domain=dataclasses.replace(loop.domain, multiset="B"))])
    assert any("undeclared multiset 'B'" in d.message for d in ir.validate(bad))


def test_validate_catches_unknown_field_and_shadowing():
    msgs = diags("""\
multiset A(x: int);
result R(x: int) output;
forelem (i; i in pA) {
  forelem (i; i in pA) {
    R += (A[i].nope);
  }
}
""")
    assert any("shadows" in m for m in msgs)
    assert any("no field 'nope'" in m for m in msgs)


def test_validate_catches_filter_type_mismatch():
    msgs = diags("""\
multiset A(x: int);
result R(x: int) output;
forelem (i; i in pA.x['s']) {
  R += (A[i].x);
}
""")
    assert any("compares" in m for m in msgs)


def test_validate_catches_nested_forall():
    msgs = diags("""\
multiset A(x: int);
result R(x: int) output;
forall (k = 1; k <= 2; k++) {
  forall (j = 1; j <= 2; j++) {
    R[k] += (1);
  }
}
R = union[k=1:2](R);
""")
    assert any("may not nest" in m for m in msgs)


def test_parser_rejects_undeclared_accumulator():
    with pytest.raises(ir.ParseError, match="undeclared name 'c'"):
        ir.parse_ir("""\
multiset A(x: int);
result R(x: int) output;
forelem (i; i in pA) {
  c += 1;
}
R += (1);
""")


def test_structure_helpers_walk_and_rewrite():
    prog = ir.parse_ir(corpus.URL_COUNT)
    paths = [p for p, _ in ir.iter_stmts(prog)]
    assert paths[0] == (0,)
    assert (1, 1, 0) in paths  # count += 1 inside the counting loop

    counting = ir.get_stmt(prog, (1,))
    assert isinstance(counting, ir.Forelem) and counting.iterator == "g"
    inner = ir.get_stmt(prog, (1, 1))
    assert isinstance(inner, ir.Forelem) and inner.domain.filter is not None

    # delete the G-producing loop, then confirm the body shrank
    cut = ir.splice(prog, (0,), [])
    assert len(cut.body) == len(prog.body) - 1
    # replace a statement with itself: identity
    assert ir.splice(prog, (1,), [counting]) == prog

    rebodied = ir.with_body(counting, counting.body[:1])
    assert len(ir.stmt_body(rebodied)) == 1
    assert ir.stmt_body(ir.get_stmt(prog, (1, 0))) is None  # scalar init has no body


def test_map_exprs_rewrites_literals_everywhere():
    prog = ir.parse_ir(corpus.URL_COUNT)

    def bump(e):
        if isinstance(e, ir.IntLit):
            return ir.IntLit(e.value + 10)
        return e

    stmt = ir.map_exprs(ir.get_stmt(prog, (1,)), bump)
    lits = [e.value for s in [stmt] for e in ir.iter_exprs(s) if isinstance(e, ir.IntLit)]
    assert lits and all(v >= 10 for v in lits)


def test_def_use_on_the_url_count_program():
    prog = ir.parse_ir(corpus.URL_COUNT)
    du = ir.def_use(prog)
    assert du.writes["G"] == [(0, 0)]
    assert du.writes["R"] == [(1, 2)]
    assert set(du.writes["count"]) == {(1, 0), (1, 1, 0)}
    assert (1,) in du.reads["G"]
    assert du.dead == set() and du.dead_paths == []
    assert du.ms_fields_read["Access"] == {"url"}


def test_def_use_flags_dead_names_and_paths():
    prog = ir.parse_ir("""\
multiset A(x: int);
result G(x: int);
result R(n: int) output;
acc c;
acc unused;

unused = 0;
c = 0;
forelem (i; i in pA) {
  G += (A[i].x);
}
forelem (i; i in pA) {
  c += 1;
}
R += (c);
""")
    du = ir.def_use(prog)
    assert du.dead == {"G", "unused"}
    assert (0,) in du.dead_paths  # unused = 0
    assert (2,) in du.dead_paths  # the loop feeding G


def test_stmt_effects_classifies_reads_adds_inits():
    prog = ir.parse_ir(corpus.URL_COUNT)
    reads, adds, inits = ir.stmt_effects(ir.get_stmt(prog, (1,)))
    assert {"G", "count", "Access"} <= reads
    assert adds == {"count", "R"}
    assert inits == {"count"}


def test_values_decl_and_forall_survive_round_trip():
    prog = ir.parse_ir(corpus.URL_COUNT_PAR)
    assert "X" in prog.values_decls()
    foralls = [s for s in prog.body if isinstance(s, ir.Forall)]
    assert foralls and all(f.n == 4 for f in foralls)
    text = ir.pretty(prog)
    assert "values X = Access.url;" in text
    assert "forall (k = 1; k <= 4; k++)" in text
    assert "sum[k=1:4](count[k][Access[i].url])" in text

    join_par = ir.parse_ir(corpus.JOIN_PAR)
    assert isinstance(join_par.body[-1], ir.ResultMerge)
    assert "R = union[k=1:4](R);" in ir.pretty(join_par)
