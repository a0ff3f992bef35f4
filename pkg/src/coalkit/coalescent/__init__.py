"""Tuple-draw event engine, union-find partitions and exact finite-n formulas."""

from .batch import (block_size_samples, block_sizes, component_labels, largest_two,
                    singleton_counts_mc, size_of_block)
from .engine import (Simulation, TrajectoryObservables, TupleEvent, TupleEventLog,
                     default_coalescence_cap, draw_tuples, nontrivial_rate, replay,
                     sample_log, sample_tuple, simulate)
from .exact import (SINGLETON_PMF_MAX_N, block_of, finer_than_prob, merge_rate,
                    merge_rate_sizes, restriction_factor, singleton_count_distribution,
                    singleton_count_pmf)
from .partition import Partition, as_partition

__all__ = [
    "Partition", "as_partition", "TupleEvent", "TupleEventLog", "TrajectoryObservables",
    "Simulation", "sample_tuple", "draw_tuples", "sample_log", "simulate", "replay",
    "nontrivial_rate", "default_coalescence_cap", "merge_rate", "merge_rate_sizes",
    "finer_than_prob", "singleton_count_pmf", "singleton_count_distribution",
    "restriction_factor", "block_of", "SINGLETON_PMF_MAX_N", "component_labels",
    "block_sizes", "size_of_block", "largest_two", "singleton_counts_mc", "block_size_samples",
]
