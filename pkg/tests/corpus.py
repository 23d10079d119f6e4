"""Shared test fixtures: the corpus programs and seeded database generators.

Program texts are frozen strings; tests parse them fresh so that any
grammar regression shows up here first. Generators derive everything
from an explicit seed, with value domains small enough to force
duplicate keys.
"""

from __future__ import annotations

import random

from forelem.engine import Database
from forelem.multiset import FieldType, Multiset, Schema

# URL access count over a request log, grouped-count form: a distinct-url
# view G, then one counting loop per view row.
URL_COUNT = """\
multiset Access(url: str, time: int);
result G(url: str);
result R(url: str, cnt: int) output;
acc count;

forelem (i; i in pAccess.distinct(url)) {
  G += (Access[i].url);
}
forelem (g; g in pG) {
  count = 0;
  forelem (i; i in pAccess.url[G[g].url]) {
    count += 1;
  }
  R += (G[g].url, count);
}
"""

# The same query after value-range partitioning on url and per-worker
# accumulator expansion.
URL_COUNT_PAR = """\
multiset Access(url: str, time: int);
result R(url: str, cnt: int) output;
acc count;
values X = Access.url;

count = 0;
forall (k = 1; k <= 4; k++) {
  count[k] = 0;
  for (l in X[k]) {
    forelem (i; i in pAccess.url[l]) {
      count[k][Access[i].url] += 1;
    }
  }
}
forelem (i; i in pAccess.distinct(url)) {
  R += (Access[i].url, sum[k=1:4](count[k][Access[i].url]));
}
"""

# Incoming-link count per target page.
REVERSE_LINKS = """\
multiset Links(source: str, target: str);
result R(target: str, cnt: int) output;
acc count;

forelem (t; t in pLinks.distinct(target)) {
  count = 0;
  forelem (i; i in pLinks.target[Links[t].target]) {
    count += 1;
  }
  R += (Links[t].target, count);
}
"""

REVERSE_LINKS_PAR = """\
multiset Links(source: str, target: str);
result R(target: str, cnt: int) output;
acc count;
values X = Links.target;

count = 0;
forall (k = 1; k <= 4; k++) {
  count[k] = 0;
  for (l in X[k]) {
    forelem (i; i in pLinks.target[l]) {
      count[k][Links[i].target] += 1;
    }
  }
}
forelem (i; i in pLinks.distinct(target)) {
  R += (Links[i].target, sum[k=1:4](count[k][Links[i].target]));
}
"""

# Equi-join of two tables on A.b_id = B.id.
JOIN = """\
multiset A(field: int, b_id: int);
multiset B(id: int, field: int);
result R(a_field: int, b_field: int) output;

forelem (i; i in pA) {
  forelem (j; j in pB.id[A[i].b_id]) {
    R += (A[i].field, B[j].field);
  }
}
"""

JOIN_PAR = """\
multiset A(field: int, b_id: int);
multiset B(id: int, field: int);
result R(a_field: int, b_field: int) output;

forall (k = 1; k <= 4; k++) {
  forelem (i; i in p[k]A) {
    forelem (j; j in pB.id[A[i].b_id]) @hash {
      R[k] += (A[i].field, B[j].field);
    }
  }
}
R = union[k=1:4](R);
"""

# Weighted grade sum for one student: a select loop feeding a consumer
# loop that folds the pairs into one accumulator.
GRADES = """\
multiset Grades(studentID: int, grade: float, weight: float);
result Res(g: float, w: float);
result R(avg: float) output;
acc avg;

avg = 0.0;
forelem (i; i in pGrades.studentID[1]) {
  Res += (Grades[i].grade, Grades[i].weight);
}
forelem (r; r in pRes) {
  avg += Res[r].g * Res[r].w;
}
R += (avg);
"""

GRADES_PAR = """\
multiset Grades(studentID: int, grade: float, weight: float);
result R(avg: float) output;
acc avg;

avg = 0.0;
forall (k = 1; k <= 4; k++) {
  avg[k] = 0.0;
  forelem (i; i in p[k]Grades.studentID[1]) {
    avg[k] += Grades[i].grade * Grades[i].weight;
  }
}
R += (sum[k=1:4](avg[k]));
"""

# Two value-multiplicity aggregates over the same table, partitioned on
# different fields; the adjacent forall pair forces a redistribution
# until the loops are fused.
TWO_AGG = """\
multiset Table(field1: int, field2: int);
result R1(field1: int, cnt: int) output;
result R2(field2: int, cnt: int) output;
acc count1;
acc count2;
values X = Table.field1;
values Y = Table.field2;

count1 = 0;
count2 = 0;
forall (k = 1; k <= 4; k++) {
  count1[k] = 0;
  for (l in X[k]) {
    forelem (i; i in pTable.field1[l]) {
      count1[k][Table[i].field1] += 1;
    }
  }
}
forall (k = 1; k <= 4; k++) {
  count2[k] = 0;
  for (l in Y[k]) {
    forelem (i; i in pTable.field2[l]) {
      count2[k][Table[i].field2] += 1;
    }
  }
}
forelem (i; i in pTable.distinct(field1)) {
  R1 += (Table[i].field1, sum[k=1:4](count1[k][Table[i].field1]));
}
forelem (i; i in pTable.distinct(field2)) {
  R2 += (Table[i].field2, sum[k=1:4](count2[k][Table[i].field2]));
}
"""

# Per-key sum instead of per-key count: the flat accumulate/read pair.
SUM_PER_KEY = """\
multiset Table(field1: int, field2: int);
result R(field1: int, total: int) output;
acc total;

total = 0;
forelem (i; i in pTable) {
  total[Table[i].field1] += Table[i].field2;
}
forelem (i; i in pTable.distinct(field1)) {
  R += (Table[i].field1, total[Table[i].field1]);
}
"""

SQL_URL_COUNT = "SELECT url, COUNT(url) FROM Access GROUP BY url"

SQL_REVERSE_LINKS = """\
CREATE VIEW target_links AS
    SELECT DISTINCT target FROM Links;
SELECT T.target, (SELECT COUNT(*) FROM Links L
                  WHERE L.target = T.target)
FROM target_links T
"""

SQL_JOIN = "SELECT A.field, B.field FROM A, B WHERE A.b_id = B.id"

SQL_GRADES = "SELECT grade, weight FROM Grades WHERE studentID = :sid"

SQL_DISTINCT_TARGETS = "SELECT DISTINCT target FROM Links"

SQL_COUNT_ALL = "SELECT COUNT(*) FROM Access"

SQL_FILTERED = "SELECT source FROM Links WHERE target = 'p0'"


def gen_access(seed: int, max_rows: int = 120) -> Multiset:
    rng = random.Random(seed)
    n = rng.randrange(40, max_rows + 1)
    urls = [f"http://site{rng.randrange(18)}.example/page" for _ in range(n)]
    rows = [(u, rng.randrange(10_000)) for u in urls]
    return Multiset("Access", Schema.of(url=FieldType.STR, time=FieldType.INT), rows)


def gen_links(seed: int, max_rows: int = 150) -> Multiset:
    rng = random.Random(seed)
    n = rng.randrange(30, max_rows + 1)
    rows = [(f"s{rng.randrange(15)}", f"p{rng.randrange(12)}") for _ in range(n)]
    return Multiset("Links", Schema.of(source=FieldType.STR, target=FieldType.STR), rows)


def gen_join_tables(seed: int, n_a: int = 60, n_b: int = 50) -> tuple[Multiset, Multiset]:
    rng = random.Random(seed)
    a_rows = [(rng.randrange(100), rng.randrange(25)) for _ in range(n_a)]
    b_rows = [(rng.randrange(25), rng.randrange(100)) for _ in range(n_b)]
    a = Multiset("A", Schema.of(field=FieldType.INT, b_id=FieldType.INT), a_rows)
    b = Multiset("B", Schema.of(id=FieldType.INT, field=FieldType.INT), b_rows)
    return a, b


def gen_grades(seed: int) -> Multiset:
    rng = random.Random(seed)
    n = rng.randrange(20, 60)
    rows = [(rng.randrange(1, 6), round(rng.uniform(1.0, 10.0), 2),
             round(rng.uniform(0.5, 3.0), 2)) for _ in range(n)]
    return Multiset("Grades", Schema.of(studentID=FieldType.INT, grade=FieldType.FLOAT,
                                        weight=FieldType.FLOAT), rows)


def gen_table(seed: int, same_value_sets: bool = False) -> Multiset:
    rng = random.Random(seed)
    n = rng.randrange(30, 90)
    f1 = [rng.randrange(1, 9) for _ in range(n)]
    if same_value_sets:
        f2 = list(f1)
        rng.shuffle(f2)
    else:
        f2 = [rng.randrange(5, 15) for _ in range(n)]
    return Multiset("Table", Schema.of(field1=FieldType.INT, field2=FieldType.INT),
                    list(zip(f1, f2)))


def corpus_db(name: str, seed: int) -> Database:
    """Database for one corpus program, derived entirely from the seed."""
    if name in ("url_count", "url_count_par"):
        return Database({"Access": gen_access(seed)})
    if name in ("reverse_links", "reverse_links_par"):
        return Database({"Links": gen_links(seed)})
    if name in ("join", "join_par"):
        a, b = gen_join_tables(seed)
        return Database({"A": a, "B": b})
    if name in ("grades", "grades_par"):
        return Database({"Grades": gen_grades(seed)})
    if name in ("two_agg", "sum_per_key"):
        return Database({"Table": gen_table(seed)})
    raise KeyError(name)


CORPUS = {
    "url_count": URL_COUNT,
    "reverse_links": REVERSE_LINKS,
    "join": JOIN,
    "grades": GRADES,
    "two_agg": TWO_AGG,
}

CORPUS_PAR = {
    "url_count_par": URL_COUNT_PAR,
    "reverse_links_par": REVERSE_LINKS_PAR,
    "join_par": JOIN_PAR,
    "grades_par": GRADES_PAR,
}

ALL_PROGRAMS = {**CORPUS, **CORPUS_PAR, "sum_per_key": SUM_PER_KEY}
