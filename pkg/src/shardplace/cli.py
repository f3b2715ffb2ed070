"""Command-line pipelines: generate, analyze, place, simulate, compare.

Logs go to stderr (SHARDPLACE_LOG sets the level); data goes to files or
stdout. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
All randomness flows from a single --seed; subsystems derive sub-seeds by
hashing the seed with a label.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys

import click

from . import metrics, placement, simulator, txgraph, workload

log = logging.getLogger("shardplace")


def _setup_logging():
    level = os.environ.get("SHARDPLACE_LOG", "INFO").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def _banner(command: str, config: dict):
    """Print the effective configuration so any run is reproducible."""
    items = " ".join(f"{k}={v}" for k, v in sorted(config.items()))
    click.echo(f"# shardplace {command} {items}", err=True)


def load_config_file(path: str) -> dict:
    """Key-value config: one `key = value` per line, # comments allowed."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_SPEC_FIELDS = {f.name: f.type for f in dataclasses.fields(workload.WorkloadSpec)}


def spec_from_config(values: dict) -> workload.WorkloadSpec:
    kwargs = {}
    for key, raw in values.items():
        if key not in _SPEC_FIELDS:
            raise click.UsageError(f"unknown workload spec key {key!r}")
        if key in ("parent_alpha", "chain_burst_prob", "chain_burst_len"):
            kwargs[key] = float(raw)
        elif key == "one_parent_target":
            kwargs[key] = None if raw.lower() == "none" else float(raw)
        else:
            kwargs[key] = int(raw)
    return workload.WorkloadSpec(**kwargs)


def _check_output(path: str, force: bool):
    if os.path.exists(path) and not force:
        raise click.UsageError(f"output {path} exists (use --force to overwrite)")


def _load_stream(path: str, external: str | None) -> txgraph.TxStream:
    try:
        return txgraph.load_stream(path, external_parents_path=external)
    except txgraph.StreamError as exc:
        raise click.ClickException(str(exc))


def _cost_model_from(config: str | None, overrides: dict) -> simulator.CostModel:
    values = {}
    if config:
        for key, raw in load_config_file(config).items():
            values[key] = raw
    kwargs = {}
    for name in ("tx_service", "lock_service", "commit_service", "unlock_service",
                 "link_latency_ms", "bandwidth_mbps"):
        if overrides.get(name) is not None:
            kwargs[name] = overrides[name]
        elif name in values:
            kwargs[name] = float(values[name])
    drive = {}
    for name in ("arrival_rate", "duration_cap", "bucket_s", "feedback_period"):
        if name in values:
            drive[name] = float(values[name])
    unknown = set(values) - set(kwargs) - set(drive)
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
    return simulator.CostModel(**kwargs), drive


@click.group()
def main():
    """Transaction placement and simulation for sharded UTXO ledgers."""
    _setup_logging()


@main.command("gen")
@click.option("--preset", "preset_name", type=click.Choice(workload.PRESETS), default=None)
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="Workload spec file (key = value lines).")
@click.option("--seed", type=int, default=None, help="Overrides the spec seed.")
@click.option("--n-tx", type=int, default=None, help="Overrides the spec size.")
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--external-out", type=click.Path(), default=None,
              help="Also write the external-parents sidecar.")
@click.option("--force", is_flag=True)
def cmd_gen(preset_name, spec_path, seed, n_tx, out, external_out, force):
    """Generate a synthetic transaction stream (JSON-lines)."""
    if (preset_name is None) == (spec_path is None):
        raise click.UsageError("exactly one of --preset or --spec is required")
    spec = workload.preset(preset_name) if preset_name else spec_from_config(load_config_file(spec_path))
    if seed is not None:
        spec = dataclasses.replace(spec, seed=derive_seed(seed, "workload"))
    if n_tx is not None:
        spec = dataclasses.replace(spec, n_tx=n_tx)
    _check_output(out, force)
    _banner("gen", dataclasses.asdict(spec) | {"out": out})
    stream = workload.generate(spec)
    txgraph.save_stream(stream, out, external_parents_path=external_out)
    log.info("wrote %d transactions to %s", len(stream), out)


@main.command("analyze")
@click.argument("stream_path", type=click.Path(exists=True))
@click.option("--external", type=click.Path(exists=True), default=None)
@click.option("--window", type=int, default=10_000, show_default=True)
@click.option("-o", "--out-dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def cmd_analyze(stream_path, external, window, out_dir, force):
    """Dependency statistics: parent-count histogram and one-parent ratio."""
    stream = _load_stream(stream_path, external)
    _banner("analyze", {"stream": stream_path, "window": window, "out_dir": out_dir})
    hist = txgraph.parent_count_histogram(stream)
    ratio = txgraph.one_parent_ratio(stream, window)

    def write_hist(path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("parent_count,tx_count\n")
            for k, v in hist.items():
                fh.write(f"{k},{v}\n")

    def write_ratio(path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("bucket,one_parent_fraction\n")
            for b, f in ratio:
                fh.write(f"{b},{f!r}\n")

    index = metrics.export_report({"parent_count_histogram": write_hist,
                                   "one_parent_ratio": write_ratio},
                                  out_dir, force=force)
    log.info("analysis index at %s", index)


def _run_placement(stream, algorithm, n_s):
    return placement.place_stream(stream, algorithm, n_s)


@main.command("place")
@click.argument("stream_path", type=click.Path(exists=True))
@click.option("--external", type=click.Path(exists=True), default=None)
@click.option("-a", "--algorithm", type=click.Choice(placement.ALGORITHMS), required=True)
@click.option("-s", "--shards", "n_s", type=int, required=True)
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Write the final placer state (JSON).")
@click.option("--tainted-threshold", type=float, default=10.0, show_default=True)
@click.option("--force", is_flag=True)
def cmd_place(stream_path, external, algorithm, n_s, out, checkpoint,
              tainted_threshold, force):
    """Place every transaction; write the decisions CSV and a summary line."""
    if n_s < 1:
        raise click.UsageError("shard count must be >= 1")
    _check_output(out, force)
    stream = _load_stream(stream_path, external)
    _banner("place", {"stream": stream_path, "algorithm": algorithm, "n_s": n_s, "out": out})
    decisions, placer = _run_placement(stream, algorithm, n_s)
    placement.decisions_to_csv(decisions, algorithm, out)
    if checkpoint:
        placer.save_checkpoint(checkpoint)
    ratio = metrics.cross_shard_ratio(decisions, stream) if decisions else 0.0
    imbalance = metrics.load_imbalance(placer.partition_sizes)
    click.echo(f"placed={len(decisions)} cross_shard_ratio={ratio:.4f} imbalance={imbalance}")
    if algorithm in placement.FITNESS_ALGORITHMS:
        tainted = placement.detect_tainted(placer, tainted_threshold)
        if tainted:
            click.echo(f"warning: {len(tainted)} tainted transactions "
                       f"(max fitness > {tainted_threshold})", err=True)


def read_decisions_csv(path) -> tuple[list[placement.PlacementDecision], str]:
    """Read a decisions CSV back (input_shards are not stored; cross_shard is)."""
    decisions = []
    algorithm = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            algorithm = row["algorithm"]
            decisions.append(placement.PlacementDecision(
                arrival_index=int(row["arrival_index"]), tx_id=row["tx_id"],
                output_shard=int(row["output_shard"]),
                input_shards=frozenset(), cross_shard=row["cross_shard"] == "true",
                fitness_max=float(row["fitness_max"])))
    return decisions, algorithm


@main.command("simulate")
@click.argument("stream_path", type=click.Path(exists=True))
@click.option("--external", type=click.Path(exists=True), default=None)
@click.option("--decisions", "decisions_path", type=click.Path(exists=True), default=None,
              help="Reuse a decisions CSV (mutually exclusive with -a).")
@click.option("-a", "--algorithm", type=click.Choice(placement.ALGORITHMS), default=None)
@click.option("-s", "--shards", "n_s", type=int, default=None)
@click.option("--feedback", is_flag=True, help="Enable feedback load balancing (needs -a).")
@click.option("--feedback-period", type=float, default=0.1, show_default=True,
              help="Feedback sample period in seconds.")
@click.option("--rate", type=float, default=1000.0, show_default=True, help="Arrival rate (tps).")
@click.option("--duration-cap", type=float, default=None, help="Virtual-time cap (s).")
@click.option("--arrivals", type=click.Choice(["uniform", "poisson"]), default="uniform",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tx-service", type=float, default=None)
@click.option("--lock-service", type=float, default=None)
@click.option("--commit-service", type=float, default=None)
@click.option("--unlock-service", type=float, default=None)
@click.option("--link-latency-ms", type=float, default=None)
@click.option("-o", "--out-dir", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def cmd_simulate(stream_path, external, decisions_path, algorithm, n_s, feedback,
                 feedback_period, rate, duration_cap, arrivals, seed, config_path,
                 tx_service, lock_service, commit_service, unlock_service,
                 link_latency_ms, out_dir, force):
    """Simulate executing a placed stream; write report CSVs + JSON summary."""
    if (decisions_path is None) == (algorithm is None):
        raise click.UsageError("exactly one of --decisions or --algorithm is required")
    if feedback and algorithm is None:
        raise click.UsageError("--feedback requires online placement (-a)")
    if feedback and feedback_period <= 0:
        raise click.UsageError("feedback period must be > 0")
    cost, drive = _cost_model_from(config_path, {
        "tx_service": tx_service, "lock_service": lock_service,
        "commit_service": commit_service, "unlock_service": unlock_service,
        "link_latency_ms": link_latency_ms})
    rate = drive.get("arrival_rate", rate)
    duration_cap = drive.get("duration_cap", duration_cap)
    stream = _load_stream(stream_path, external)
    _banner("simulate", {"stream": stream_path, "algorithm": algorithm,
                         "decisions": decisions_path, "n_s": n_s, "rate": rate,
                         "feedback": feedback, "seed": seed,
                         "cost": dataclasses.asdict(cost)})
    if decisions_path is not None:
        decisions, _ = read_decisions_csv(decisions_path)
        decisions = placement.attach_input_shards(stream, decisions)
        sim = simulator.Simulation(stream, cost, rate, decisions=decisions,
                                   n_s=n_s, duration_cap_s=duration_cap,
                                   arrival_process=arrivals,
                                   seed=derive_seed(seed, "sim"))
    else:
        if n_s is None:
            raise click.UsageError("-s/--shards is required with --algorithm")
        placer = placement.Placer(algorithm, n_s,
                                  external_parents=stream.external_parents)
        sim = simulator.Simulation(
            stream, cost, rate, placer=placer, duration_cap_s=duration_cap,
            arrival_process=arrivals, seed=derive_seed(seed, "sim"),
            feedback_period_s=feedback_period if feedback else None)
    report = sim.run()
    index = metrics.export_report({"sim": report}, out_dir, force=force)
    click.echo(f"completed={report.totals['completed']} aborted={report.totals['aborted']} "
               f"tps={report.totals['tps']:.1f} truncated={report.totals['truncated']}")
    log.info("report index at %s", index)


@main.command("compare")
@click.argument("stream_path", type=click.Path(exists=True))
@click.option("--external", type=click.Path(exists=True), default=None)
@click.option("-a", "--algorithms", required=True,
              help="Comma-separated algorithm list (e.g. hp,t2s,optnorm).")
@click.option("-s", "--shards", "shard_list", required=True,
              help="Comma-separated shard counts (e.g. 2,4,16,64).")
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--force", is_flag=True)
def cmd_compare(stream_path, external, algorithms, shard_list, out, force):
    """Sweep (algorithm, shard count) cells; write the summary grid CSV."""
    algos = [a.strip() for a in algorithms.split(",") if a.strip()]
    for a in algos:
        if a not in placement.ALGORITHMS:
            raise click.UsageError(f"unknown algorithm {a!r}")
    try:
        shard_counts = [int(s) for s in shard_list.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError(f"bad shard list {shard_list!r}")
    if any(s < 1 for s in shard_counts):
        raise click.UsageError("shard counts must be >= 1")
    _check_output(out, force)
    stream = _load_stream(stream_path, external)
    _banner("compare", {"stream": stream_path, "algorithms": ",".join(algos),
                        "shards": ",".join(map(str, shard_counts)), "out": out})
    rows = []
    for algo in algos:
        for n_s in shard_counts:
            decisions, placer = placement.place_stream(stream, algo, n_s)
            rows.append({"algorithm": algo, "n_shards": n_s,
                         "cross_ratio": metrics.cross_shard_ratio(decisions, stream),
                         "imbalance": metrics.load_imbalance(placer.partition_sizes)})
            log.info("compare cell %s n_s=%d done", algo, n_s)
    metrics.summary_grid_csv(rows, out)


def entrypoint():
    try:
        main(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except (OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
