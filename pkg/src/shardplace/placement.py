"""Streaming transaction placers: hashing, greedy, fitness-score variants.

Fitness-based placers attach a per-shard score array to every placed
transaction. A child's array is the weighted sum of its parents' arrays,
with parent weight 1 / (children seen so far, including the arriving
child). Shard selection divides each score by the current partition size
and takes the argmax (lowest index wins ties). The normalizing variant
("optnorm") rescales each stored array to unit sum, which bounds score
propagation; the multiset variant ("v2") lets a parent referenced by k
inputs contribute k edge-weighted terms.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .txgraph import Transaction, TxStream

ALGORITHMS = ("hp", "greedy", "t2s", "v2", "optnorm")
FITNESS_ALGORITHMS = ("t2s", "v2", "optnorm")


@dataclass(frozen=True)
class PlacementDecision:
    arrival_index: int
    tx_id: str
    output_shard: int
    input_shards: frozenset[int]
    cross_shard: bool
    fitness_max: float


@dataclass
class ShardFeedback:
    """Sampled per-shard queue lengths and latencies (ms)."""

    queue_length: np.ndarray
    sampled_latency: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.queue_length) < 0).any() or (np.asarray(self.sampled_latency) < 0).any():
            raise ValueError("feedback values must be non-negative")


def place_hp(tx_id: str, n_s: int) -> int:
    """Hashing placement: the first ceil(log2 n_s) id bits, modulo n_s."""
    if n_s < 1:
        raise ValueError("shard count must be >= 1")
    if n_s == 1:
        return 0
    bits = (n_s - 1).bit_length()
    nhex = (bits + 3) // 4
    prefix = int(tx_id[:nhex], 16) >> (4 * nhex - bits)
    return prefix % n_s


def normalize(fitness: np.ndarray) -> np.ndarray:
    """Rescale to unit sum; argmax is preserved."""
    total = float(fitness.sum())
    if total <= 0:
        raise ValueError("cannot normalize an all-zero fitness array")
    return fitness / total


def select_shard(fitness: np.ndarray, partition_sizes: np.ndarray,
                 feedback: Optional[ShardFeedback] = None,
                 feedback_q: float = 1.0) -> int:
    """Argmax of fitness / partition size, optionally damped by queue length."""
    scores = fitness / np.maximum(partition_sizes, 1)
    if feedback is not None:
        scores = scores / (1.0 + np.asarray(feedback.queue_length, dtype=float) / feedback_q)
    return int(np.argmax(scores))


class Placer:
    """Sequential placement state machine over one stream.

    Transactions must be fed in arrival order. Coinbase transactions are
    placed by hashing and (for fitness algorithms) stored as a one-hot
    array; external parents are one-hot at their pre-assigned shard.
    """

    def __init__(self, algorithm: str, n_s: int,
                 external_parents: Optional[dict[str, int]] = None,
                 feedback_q: float = 100.0):
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
        if n_s < 1:
            raise ValueError("shard count must be >= 1")
        self.algorithm = algorithm
        self.n_s = n_s
        self.feedback_q = feedback_q
        self.partition_sizes = np.zeros(n_s, dtype=np.int64)
        self.children_seen: dict[str, int] = {}
        self.fitness: dict[str, np.ndarray] = {}
        self.output_shard: dict[str, int] = {}
        self.placed = 0
        self.external_parents = dict(external_parents or {})
        for txid, shard in self.external_parents.items():
            if shard >= n_s:
                raise ValueError(f"external parent {txid} assigned to shard {shard} >= {n_s}")
            self.output_shard[txid] = shard
            if algorithm in FITNESS_ALGORITHMS:
                self.fitness[txid] = self._one_hot(shard)

    def _one_hot(self, shard: int) -> np.ndarray:
        arr = np.zeros(self.n_s)
        arr[shard] = 1.0
        return arr

    def _parent_shard(self, parent_id: str) -> int:
        try:
            return self.output_shard[parent_id]
        except KeyError:
            raise ValueError(f"parent {parent_id} not placed yet (stream-order violation)")

    def compute_fitness(self, tx: Transaction) -> np.ndarray:
        """Weighted sum of parent arrays; updates the child counters."""
        if tx.is_coinbase:
            return self._one_hot(place_hp(tx.id, self.n_s))
        edges = Counter(ref.tx for ref in tx.inputs)
        total = np.zeros(self.n_s)
        # Unnormalized scores can legitimately diverge under aggregation-heavy
        # workloads; let them saturate to inf, where argmax and taint
        # detection stay well-defined.
        with np.errstate(over="ignore"):
            for parent, k in edges.items():
                if parent not in self.output_shard:
                    raise ValueError(f"parent {parent} not placed yet (stream-order violation)")
                if self.algorithm == "v2":
                    self.children_seen[parent] = self.children_seen.get(parent, 0) + k
                    w = k / self.children_seen[parent]
                else:
                    self.children_seen[parent] = self.children_seen.get(parent, 0) + 1
                    w = 1.0 / self.children_seen[parent]
                total += w * self.fitness[parent]
        return total

    def _choose_shard(self, tx: Transaction,
                      feedback: Optional[ShardFeedback]) -> tuple[int, Optional[np.ndarray]]:
        if self.algorithm == "hp" or tx.is_coinbase:
            if self.algorithm in FITNESS_ALGORITHMS:
                fit = self.compute_fitness(tx)
                return int(np.argmax(fit)), fit
            return place_hp(tx.id, self.n_s), None
        if self.algorithm == "greedy":
            votes = np.zeros(self.n_s, dtype=np.int64)
            for parent in set(ref.tx for ref in tx.inputs):
                votes[self._parent_shard(parent)] += 1
            return int(np.argmax(votes)), None
        fit = self.compute_fitness(tx)
        shard = select_shard(fit, self.partition_sizes, feedback, self.feedback_q)
        return shard, fit

    def place(self, tx: Transaction,
              feedback: Optional[ShardFeedback] = None) -> PlacementDecision:
        shard, fit = self._choose_shard(tx, feedback)
        if fit is not None:
            stored = normalize(fit) if self.algorithm == "optnorm" else fit
            self.fitness[tx.id] = stored
            fitness_max = float(stored.max())
        else:
            fitness_max = 1.0
        self.output_shard[tx.id] = shard
        self.partition_sizes[shard] += 1
        self.placed += 1
        input_shards = frozenset(self._parent_shard(ref.tx) for ref in tx.inputs)
        cross = bool(input_shards - {shard})
        return PlacementDecision(arrival_index=tx.arrival_index, tx_id=tx.id,
                                 output_shard=shard, input_shards=input_shards,
                                 cross_shard=cross, fitness_max=fitness_max)

    # --- checkpointing ---

    CHECKPOINT_VERSION = 1

    def to_checkpoint(self) -> dict:
        return {
            "format": "shardplace-placer-checkpoint",
            "version": self.CHECKPOINT_VERSION,
            "algorithm": self.algorithm,
            "n_s": self.n_s,
            "feedback_q": self.feedback_q,
            "placed": self.placed,
            "partition_sizes": self.partition_sizes.tolist(),
            "children_seen": self.children_seen,
            "output_shard": self.output_shard,
            "external_parents": self.external_parents,
            "fitness": {k: v.tolist() for k, v in self.fitness.items()},
        }

    def save_checkpoint(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True)

    @classmethod
    def from_checkpoint(cls, data: dict) -> "Placer":
        if data.get("format") != "shardplace-placer-checkpoint":
            raise ValueError("not a placer checkpoint")
        if data.get("version") != cls.CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        placer = cls(data["algorithm"], data["n_s"], feedback_q=data["feedback_q"])
        placer.placed = data["placed"]
        placer.partition_sizes = np.asarray(data["partition_sizes"], dtype=np.int64)
        placer.children_seen = dict(data["children_seen"])
        placer.output_shard = dict(data["output_shard"])
        placer.external_parents = dict(data["external_parents"])
        placer.fitness = {k: np.asarray(v) for k, v in data["fitness"].items()}
        return placer

    @classmethod
    def load_checkpoint(cls, path) -> "Placer":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh))


def place_stream(stream: TxStream, algorithm: str, n_s: int,
                 feedback_source: Optional[Callable[[int], Optional[ShardFeedback]]] = None,
                 placer: Optional[Placer] = None) -> tuple[list[PlacementDecision], Placer]:
    """Place every transaction in arrival order; returns decisions and the
    final placer state. ``feedback_source`` is called with the arrival index
    and may return queue-length feedback (None disables damping for that tx).
    """
    if placer is None:
        placer = Placer(algorithm, n_s, external_parents=stream.external_parents)
    decisions = []
    for tx in stream:
        feedback = feedback_source(tx.arrival_index) if feedback_source else None
        decisions.append(placer.place(tx, feedback))
    return decisions, placer


def detect_aggregating(stream: TxStream, placer: Placer,
                       parent_threshold: int = 10) -> set[str]:
    """Transactions with >= k distinct parents whose stored fitness argmax
    points at the same shard."""
    if parent_threshold < 2:
        raise ValueError("parent_threshold must be >= 2")
    if placer.algorithm not in FITNESS_ALGORITHMS:
        raise ValueError("aggregation detection needs a fitness-based placer")
    found = set()
    for tx in stream:
        parents = set(ref.tx for ref in tx.inputs)
        if len(parents) < parent_threshold:
            continue
        votes: Counter = Counter()
        for p in parents:
            votes[int(np.argmax(placer.fitness[p]))] += 1
        if votes and max(votes.values()) >= parent_threshold:
            found.add(tx.id)
    return found


def detect_tainted(placer: Placer, score_threshold: float = 10.0) -> set[str]:
    """Transactions whose stored fitness max element exceeds the threshold.

    External parents are one-hot and can never qualify for theta > 1.
    """
    if score_threshold <= 1:
        raise ValueError("score_threshold must be > 1")
    return {txid for txid, arr in placer.fitness.items()
            if float(arr.max()) > score_threshold}


def max_fitness_series(decisions: Sequence[PlacementDecision],
                       window: int) -> list[tuple[int, float]]:
    """Per-bucket maximum of fitness_max, for log-scale score tracking."""
    if window < 1:
        raise ValueError("window must be >= 1")
    buckets: dict[int, float] = {}
    for d in decisions:
        b = d.arrival_index // window
        buckets[b] = max(buckets.get(b, -math.inf), d.fitness_max)
    return sorted(buckets.items())


def attach_input_shards(stream: TxStream,
                        decisions: Sequence[PlacementDecision]) -> list[PlacementDecision]:
    """Recompute input_shards (and cross flags) for decisions loaded from CSV,
    where only the output shard survives serialization."""
    if len(decisions) != len(stream):
        raise ValueError("decisions do not cover the stream")
    shard_of = dict(stream.external_parents)
    out = []
    for tx, d in zip(stream, decisions):
        if tx.id != d.tx_id:
            raise ValueError(f"decision order mismatch at {tx.id}")
        input_shards = frozenset(shard_of[ref.tx] for ref in tx.inputs)
        cross = bool(input_shards - {d.output_shard})
        if cross != d.cross_shard:
            raise ValueError(f"inconsistent cross_shard flag for {tx.id}")
        shard_of[tx.id] = d.output_shard
        out.append(PlacementDecision(arrival_index=d.arrival_index, tx_id=d.tx_id,
                                     output_shard=d.output_shard,
                                     input_shards=input_shards, cross_shard=cross,
                                     fitness_max=d.fitness_max))
    return out


def decisions_to_csv(decisions: Iterable[PlacementDecision], algorithm: str, path) -> None:
    """Write decisions as CSV: arrival_index,tx_id,algorithm,output_shard,cross_shard,fitness_max."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("arrival_index,tx_id,algorithm,output_shard,cross_shard,fitness_max\n")
        for d in decisions:
            fh.write(f"{d.arrival_index},{d.tx_id},{algorithm},{d.output_shard},"
                     f"{str(d.cross_shard).lower()},{d.fitness_max!r}\n")
