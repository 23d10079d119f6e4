"""Query-compiler toolkit built around a single loop IR over multisets of tuples.

The pipeline: SQL (or textual IR) is lowered to nests of ``forelem`` loops
over index sets, transformation passes partition and parallelize those
loops, and backends execute them -- sequentially, on a simulated worker
pool with dynamic loop scheduling and fault injection, or as a derived
MapReduce program.
"""

from forelem.engine import Database, run_parallel_sim, run_sequential
from forelem.ir import parse_ir, pretty, validate
from forelem.multiset import (
    FieldType,
    HashIndex,
    IndexSet,
    Multiset,
    Schema,
    SchemaError,
    ValueRangePartition,
    build_hash_index,
    enumerate_rows,
    partition_values,
    value_range,
)

__version__ = "0.1.0"

__all__ = [
    "Database",
    "FieldType",
    "HashIndex",
    "IndexSet",
    "Multiset",
    "Schema",
    "SchemaError",
    "ValueRangePartition",
    "build_hash_index",
    "enumerate_rows",
    "parse_ir",
    "partition_values",
    "pretty",
    "run_parallel_sim",
    "run_sequential",
    "validate",
    "value_range",
]
