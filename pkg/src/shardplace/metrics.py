"""Partition-quality and time-series analytics over placement decisions."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .placement import PlacementDecision
from .simulator import SimReport
from .txgraph import TxStream


@dataclass(frozen=True)
class PartitionSummary:
    partition_sizes: tuple[int, ...]
    cross_shard_count: int
    total_non_coinbase: int


def summarize(decisions: Sequence[PlacementDecision], n_s: int,
              stream: Optional[TxStream] = None) -> PartitionSummary:
    sizes = [0] * n_s
    cross = 0
    for d in decisions:
        sizes[d.output_shard] += 1
        cross += d.cross_shard
    coinbase_ids = ({tx.id for tx in stream if tx.is_coinbase}
                    if stream is not None else set())
    non_coinbase = sum(1 for d in decisions if d.tx_id not in coinbase_ids)
    return PartitionSummary(tuple(sizes), cross, non_coinbase)


def cross_shard_ratio(decisions: Sequence[PlacementDecision],
                      stream: Optional[TxStream] = None) -> float:
    """Cross-shard count over non-coinbase count.

    Without the stream, every decision is assumed non-coinbase (coinbase
    decisions are never cross-shard, so the numerator is unaffected).
    """
    if not decisions:
        raise ValueError("no decisions")
    if stream is not None:
        coinbase = {tx.id for tx in stream if tx.is_coinbase}
        denom = sum(1 for d in decisions if d.tx_id not in coinbase)
    else:
        denom = len(decisions)
    if denom == 0:
        raise ValueError("no non-coinbase transactions: ratio undefined")
    return sum(d.cross_shard for d in decisions) / denom


def load_imbalance(partition_sizes: Sequence[int]) -> int:
    """Maximum partition size minus minimum partition size."""
    if len(partition_sizes) < 1:
        raise ValueError("need at least one shard")
    return int(max(partition_sizes) - min(partition_sizes))


def dynamic_loads(decisions: Sequence[PlacementDecision], window: int,
                  n_s: int) -> list[tuple[int, np.ndarray]]:
    """Per-bucket share of placements per shard; shares sum to 1 per
    non-empty bucket."""
    if window < 1:
        raise ValueError("window must be >= 1")
    counts: dict[int, np.ndarray] = {}
    for d in decisions:
        b = d.arrival_index // window
        if b not in counts:
            counts[b] = np.zeros(n_s, dtype=np.int64)
        counts[b][d.output_shard] += 1
    return [(b, c / c.sum()) for b, c in sorted(counts.items()) if c.sum() > 0]


def dynamic_loads_csv(series: list[tuple[int, np.ndarray]], path) -> None:
    """CSV schema: bucket,shard,share."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bucket,shard,share\n")
        for bucket, shares in series:
            for shard, share in enumerate(shares):
                fh.write(f"{bucket},{shard},{float(share)!r}\n")


def summary_grid_csv(rows: list[dict], path) -> None:
    """CSV schema: algorithm,n_shards,cross_ratio,imbalance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("algorithm,n_shards,cross_ratio,imbalance\n")
        for r in rows:
            fh.write(f"{r['algorithm']},{r['n_shards']},{r['cross_ratio']!r},{r['imbalance']}\n")


def fitness_series_csv(series: list[tuple[int, float]], path) -> None:
    """CSV schema: bucket,max_fitness."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bucket,max_fitness\n")
        for bucket, value in series:
            fh.write(f"{bucket},{value!r}\n")


def sim_report_csvs(report: SimReport, out_dir: str) -> dict[str, str]:
    """Write throughput.csv, latency.csv, shard_load.csv and a JSON summary."""
    paths = {}
    p = os.path.join(out_dir, "throughput.csv")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("second,completed\n")
        for sec, count in report.throughput_series:
            fh.write(f"{sec},{count}\n")
    paths["throughput"] = p

    p = os.path.join(out_dir, "latency.csv")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("percentile,latency_ms\n")
        for name in ("p50", "p95", "p99"):
            value = report.latency_percentiles[name]
            fh.write(f"{name},{'' if value is None else repr(value)}\n")
    paths["latency"] = p

    p = os.path.join(out_dir, "shard_load.csv")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("second,shard,busy_fraction,queue_length\n")
        for sec, shard, busy, qlen in report.per_shard_load_series:
            fh.write(f"{sec},{shard},{busy!r},{qlen}\n")
    paths["shard_load"] = p

    p = os.path.join(out_dir, "summary.json")
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"totals": report.totals,
                   "latency_percentiles": report.latency_percentiles},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    paths["summary"] = p
    return paths


def export_report(artifacts: dict[str, object], out_dir: str,
                  force: bool = False) -> str:
    """Write metric artifacts into out_dir plus an index.json listing them.

    ``artifacts`` maps names to writer callables taking a path, or to a
    SimReport. Refuses to reuse a non-empty directory unless force is set.
    """
    if os.path.exists(out_dir):
        if os.listdir(out_dir) and not force:
            raise FileExistsError(
                f"output directory {out_dir} is not empty (use force to overwrite)")
    else:
        os.makedirs(out_dir)
    index = []
    for name, item in artifacts.items():
        if isinstance(item, SimReport):
            for kind, path in sim_report_csvs(item, out_dir).items():
                index.append({"name": f"{name}.{kind}", "path": os.path.basename(path)})
        else:
            path = os.path.join(out_dir, f"{name}.csv")
            item(path)
            index.append({"name": name, "path": os.path.basename(path)})
    index_path = os.path.join(out_dir, "index.json")
    with open(index_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"artifacts": sorted(index, key=lambda e: e["name"])},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    return index_path
