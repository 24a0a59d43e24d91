"""Frequent itemset mining: Apriori and FP-Growth, sequential and MapReduce-parallel."""

from .apriori import InputError, MiningResult, apriori_mine, count_supports, generate_candidates
from .bench import BenchConfig, BenchmarkRecord, brute_force_oracle, emit_csv, emit_svg_chart, run_benchmark
from .datasets import (ConfigurationError, ParseError, SyntheticParams, TransactionDatabase, absolute_minsup,
                       generate_synthetic, parse_spmf, read_spmf, write_spmf)
from .fpgrowth import build_flist, build_fptree, fpgrowth_mine
from .mapreduce import Backend, BackendKind, iterate, partition, run_stage
from .parallel import mr_apriori, pfp_mine

__version__ = "0.1.0"

__all__ = [
    "Backend", "BackendKind", "BenchConfig", "BenchmarkRecord", "ConfigurationError", "InputError",
    "MiningResult", "ParseError", "SyntheticParams", "TransactionDatabase", "absolute_minsup",
    "apriori_mine", "brute_force_oracle", "build_flist", "build_fptree", "count_supports", "emit_csv",
    "emit_svg_chart", "fpgrowth_mine", "generate_candidates", "generate_synthetic", "iterate",
    "mr_apriori", "parse_spmf", "partition", "pfp_mine", "read_spmf", "run_benchmark", "run_stage",
    "write_spmf",
]
