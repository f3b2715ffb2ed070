#!/usr/bin/env python3
"""Render experiment CSVs into figures.

Reads only the documented CSV schemas written by the analysis pipeline; has
no dependency on its internals. Exit codes: 0 success, 1 runtime failure
(missing file, schema mismatch, empty data), 2 usage error.

Usage: plots.py --kind dynamic_loads --in shard_load.csv --out fig.png
"""

import argparse
import sys

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SCHEMAS = {
    "cross_ratio": ["algorithm", "n_shards", "cross_ratio"],
    "imbalance": ["algorithm", "n_shards", "imbalance"],
    "dynamic_loads": ["bucket", "shard", "share"],
    "fitness_series": ["bucket", "max_fitness"],
    "throughput": ["second", "completed"],
    "latency": ["percentile", "latency_ms"],
}


class PlotError(Exception):
    pass


def load_frame(path: str, kind: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise PlotError(f"input file not found: {path}")
    except pd.errors.EmptyDataError:
        raise PlotError(f"empty input: {path}")
    missing = [c for c in SCHEMAS[kind] if c not in frame.columns]
    if missing:
        raise PlotError(f"{path}: missing column {missing[0]!r} "
                        f"(expected {','.join(SCHEMAS[kind])})")
    if frame.empty:
        raise PlotError(f"{path}: no data rows")
    return frame


def plot_cross_ratio(frame: pd.DataFrame, ax):
    for algo, group in frame.groupby("algorithm"):
        g = group.sort_values("n_shards")
        ax.plot(g["n_shards"], g["cross_ratio"], marker="o", label=algo)
    ax.set_xlabel("shards")
    ax.set_ylabel("cross-shard ratio")
    ax.set_ylim(0, 1.05)
    ax.legend()


def plot_imbalance(frame: pd.DataFrame, ax):
    algos = sorted(frame["algorithm"].unique())
    shard_counts = sorted(frame["n_shards"].unique())
    width = 0.8 / len(algos)
    for i, algo in enumerate(algos):
        g = frame[frame["algorithm"] == algo].set_index("n_shards")
        xs = [j + i * width for j in range(len(shard_counts))]
        ys = [g.loc[s, "imbalance"] for s in shard_counts]
        ax.bar(xs, ys, width=width, label=algo)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(shard_counts))],
                  [str(s) for s in shard_counts])
    ax.set_xlabel("shards")
    ax.set_ylabel("load imbalance (max - min)")
    ax.legend()


def plot_dynamic_loads(frame: pd.DataFrame, ax):
    for shard, group in frame.groupby("shard"):
        g = group.sort_values("bucket")
        ax.plot(g["bucket"], g["share"], label=f"shard {shard}")
    ax.set_xlabel("bucket")
    ax.set_ylabel("placement share")
    ax.set_ylim(0, 1.0)
    ax.legend()


def plot_fitness_series(frame: pd.DataFrame, ax):
    values = pd.to_numeric(frame["max_fitness"], errors="coerce")
    finite = frame.assign(max_fitness=values)
    finite = finite[np.isfinite(finite["max_fitness"])]
    if finite.empty:
        raise PlotError("fitness_series: no finite values to plot")
    g = finite.sort_values("bucket")
    ax.plot(g["bucket"], g["max_fitness"], marker=".")
    ax.set_yscale("log")
    ax.set_xlabel("bucket")
    ax.set_ylabel("max fitness score (log scale)")


def plot_throughput(frame: pd.DataFrame, ax):
    g = frame.sort_values("second")
    ax.plot(g["second"], g["completed"], marker=".")
    ax.set_xlabel("second")
    ax.set_ylabel("completed transactions")
    ax.set_ylim(bottom=0)


def plot_latency(frame: pd.DataFrame, ax):
    g = frame.dropna(subset=["latency_ms"])
    if g.empty:
        raise PlotError("latency: no measured percentiles")
    ax.bar(g["percentile"], g["latency_ms"])
    ax.set_xlabel("percentile")
    ax.set_ylabel("latency (ms)")


RENDERERS = {
    "cross_ratio": plot_cross_ratio,
    "imbalance": plot_imbalance,
    "dynamic_loads": plot_dynamic_loads,
    "fitness_series": plot_fitness_series,
    "throughput": plot_throughput,
    "latency": plot_latency,
}


def render(kind: str, in_path: str, out_path: str) -> None:
    frame = load_frame(in_path, kind)
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        RENDERERS[kind](frame, ax)
        ax.set_title(kind.replace("_", " "))
        fig.tight_layout()
        fig.savefig(out_path)
    finally:
        plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=sorted(SCHEMAS))
    parser.add_argument("--in", dest="in_path", required=True)
    parser.add_argument("--out", dest="out_path", required=True)
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.in_path, args.out_path)
    except (PlotError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
