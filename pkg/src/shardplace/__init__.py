"""Transaction placement and discrete-event simulation for sharded UTXO ledgers."""

from .placement import (ALGORITHMS, Placer, PlacementDecision, ShardFeedback,
                        detect_aggregating, detect_tainted, max_fitness_series,
                        normalize, place_hp, place_stream, select_shard)
from .simulator import CostModel, Request, SimReport, Simulation, plan_requests, simulate
from .txgraph import (Transaction, TxStream, UtxoRef, build_stream,
                      immediate_predecessor_ratio, load_stream, one_parent_ratio,
                      parent_count_histogram, parent_multiset, save_stream)
from .workload import PRESETS, WorkloadSpec, generate, preset

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "PRESETS", "CostModel", "Placer", "PlacementDecision",
    "Request", "ShardFeedback", "SimReport", "Simulation", "Transaction",
    "TxStream", "UtxoRef", "WorkloadSpec", "build_stream", "detect_aggregating",
    "detect_tainted", "generate", "immediate_predecessor_ratio", "load_stream",
    "max_fitness_series", "normalize", "one_parent_ratio",
    "parent_count_histogram", "parent_multiset", "place_hp", "place_stream",
    "plan_requests", "preset", "save_stream", "select_shard", "simulate",
]
