"""Discrete-event simulation of a sharded ledger with a lock/commit protocol.

Each shard is a single FIFO server; the client coordinates its own
transactions and is fully pipelined (it never blocks on one transaction
before submitting the next). Single-shard transactions take one TX request
at the output shard. Cross-shard transactions lock every input shard, then
commit at the output shard once all locks succeed; on an (injected) lock
failure the client unlocks the successfully locked shards and the
transaction aborts.

One global virtual clock, ordered event heap, no wall-clock dependence.
Time unit is microseconds internally.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .placement import Placer, PlacementDecision, ShardFeedback
from .txgraph import Transaction, TxStream

US_PER_S = 1_000_000.0
US_PER_MS = 1_000.0


@dataclass(frozen=True)
class CostModel:
    """Request service times (microseconds) and link latency (ms).

    unlock_service defaults to lock_service (no separate published figure;
    unlocking touches the same UTXO bookkeeping as locking).
    """

    tx_service: float = 211.0
    lock_service: float = 438.0
    commit_service: float = 259.0
    unlock_service: Optional[float] = None
    link_latency_ms: float = 100.0
    bandwidth_mbps: float = 500.0  # recorded, not enforced as a queue

    def __post_init__(self):
        for name in ("tx_service", "lock_service", "commit_service",
                     "link_latency_ms", "bandwidth_mbps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.unlock_service is not None and self.unlock_service < 0:
            raise ValueError("unlock_service must be >= 0")

    @property
    def unlock(self) -> float:
        return self.lock_service if self.unlock_service is None else self.unlock_service

    def service_time(self, kind: str) -> float:
        return {"TX": self.tx_service, "LOCK": self.lock_service,
                "COMMIT": self.commit_service, "UNLOCK": self.unlock}[kind]

    @property
    def link_latency_us(self) -> float:
        return self.link_latency_ms * US_PER_MS

    def step_breakdown(self) -> dict[str, dict[str, float]]:
        """Itemized per-step cost table for what-if studies; each request's
        steps sum to its configured service time."""
        return {
            "TX": {"Sig": 0.60 * self.tx_service,
                   "UTXO_exist_value": 0.25 * self.tx_service,
                   "Spend_add": 0.15 * self.tx_service},
            "LOCK": {"Sig": 0.30 * self.lock_service,
                     "UTXO_exist": 0.15 * self.lock_service,
                     "Sign": 0.25 * self.lock_service,
                     "Send": 0.22 * self.lock_service,
                     "Spend_add": 0.08 * self.lock_service},
            "COMMIT": {"Shard_sig": 0.80 * self.commit_service,
                       "UTXO_value": 0.10 * self.commit_service,
                       "Spend_add": 0.10 * self.commit_service},
        }


@dataclass(frozen=True)
class Request:
    kind: str  # TX | LOCK | COMMIT | UNLOCK
    tx: str
    shard: int


def plan_requests(tx: Transaction, decision: PlacementDecision) -> list[list[Request]]:
    """Request phases for one transaction. Each inner list is issued
    together; the next phase waits for all replies of the previous one."""
    if decision.tx_id != tx.id:
        raise ValueError("decision does not correspond to the transaction")
    if not decision.cross_shard:
        return [[Request("TX", tx.id, decision.output_shard)]]
    locks = [Request("LOCK", tx.id, s) for s in sorted(decision.input_shards)]
    return [locks, [Request("COMMIT", tx.id, decision.output_shard)]]


@dataclass
class TxTrace:
    """Protocol audit record for one transaction."""

    submit: float
    lock_finish: dict[int, float] = field(default_factory=dict)
    lock_failed: set[int] = field(default_factory=set)
    commit_start: Optional[float] = None
    commit_finish: Optional[float] = None
    unlock_shards: set[int] = field(default_factory=set)
    tx_finish: Optional[float] = None
    aborted: bool = False


@dataclass
class SimReport:
    throughput_series: list[tuple[int, int]]                  # (second, completed in bucket)
    latency_percentiles: dict[str, Optional[float]]           # p50/p95/p99 in ms
    per_shard_load_series: list[tuple[int, int, float, int]]  # (second, shard, busy frac, queue)
    totals: dict
    bucket_counts: list[dict]       # cumulative submitted/completed/aborted per bucket
    busy_time_us: np.ndarray        # total busy time per shard
    traces: Optional[dict[str, TxTrace]] = None


class _Shard:
    __slots__ = ("busy_until", "busy_total", "busy_bucket", "outstanding")

    def __init__(self):
        self.busy_until = 0.0
        self.busy_total = 0.0
        self.busy_bucket = 0.0
        self.outstanding = 0  # requests received and not yet served


class Simulation:
    """One simulation run. Construct, optionally inject lock failures, run().

    Either precomputed ``decisions`` or a ``placer`` (online placement,
    enabling feedback load balancing) must be supplied.
    """

    def __init__(self, stream: TxStream, cost_model: CostModel,
                 arrival_rate_tps: float,
                 decisions: Optional[Sequence[PlacementDecision]] = None,
                 placer: Optional[Placer] = None,
                 n_s: Optional[int] = None,
                 duration_cap_s: Optional[float] = None,
                 arrival_process: str = "uniform",
                 seed: int = 0,
                 bucket_s: float = 1.0,
                 feedback_period_s: Optional[float] = None,
                 keep_traces: bool = False):
        if arrival_rate_tps <= 0:
            raise ValueError("arrival_rate must be > 0")
        if arrival_process not in ("uniform", "poisson"):
            raise ValueError(f"unknown arrival process {arrival_process!r}")
        if decisions is None and placer is None:
            raise ValueError("need precomputed decisions or a placer")
        if feedback_period_s is not None and feedback_period_s <= 0:
            raise ValueError("feedback sample period must be > 0")
        self.stream = stream
        self.cost = cost_model
        self.rate = arrival_rate_tps
        self.decisions = list(decisions) if decisions is not None else None
        if self.decisions is not None and len(self.decisions) != len(stream):
            raise ValueError("decisions do not cover the stream")
        self.placer = placer
        if n_s is not None:
            self.n_s = n_s
        elif placer is not None:
            self.n_s = placer.n_s
        else:
            self.n_s = 1 + max((max(d.output_shard, *(d.input_shards or {0}))
                                for d in self.decisions), default=0)
        self.duration_cap_us = duration_cap_s * US_PER_S if duration_cap_s else None
        self.arrival_process = arrival_process
        self.rng = np.random.default_rng(seed)
        self.bucket_us = bucket_s * US_PER_S
        self.feedback_period_us = (feedback_period_s * US_PER_S
                                   if feedback_period_s else None)
        self.keep_traces = keep_traces
        self.fail_lock_txs: set[str] = set()
        self.placed_decisions: list[PlacementDecision] = []
        self._shards: list[_Shard] = []

    def inject_lock_failure(self, tx_ids: set[str]) -> None:
        """Mark transactions whose lowest-indexed input shard's LOCK fails."""
        if self.decisions is not None:
            cross = {d.tx_id for d in self.decisions if d.cross_shard}
            bad = set(tx_ids) - cross
            if bad:
                raise ValueError(
                    f"cannot inject lock failure on single-shard txs: {sorted(bad)[:3]}")
        self.fail_lock_txs |= set(tx_ids)

    def _queue_lengths(self) -> np.ndarray:
        return np.array([s.outstanding for s in self._shards], dtype=np.int64)

    def feedback_probe(self, shard: int) -> ShardFeedback:
        """Current queue length and latency estimate for one shard."""
        fb = self._global_feedback()
        return ShardFeedback(queue_length=fb.queue_length[shard:shard + 1],
                             sampled_latency=fb.sampled_latency[shard:shard + 1])

    def _global_feedback(self) -> ShardFeedback:
        q = self._queue_lengths()
        drain_ms = q * self.cost.lock_service / US_PER_MS
        return ShardFeedback(queue_length=q,
                             sampled_latency=self.cost.link_latency_ms + drain_ms)

    def run(self) -> SimReport:
        cost = self.cost
        link = cost.link_latency_us
        self._shards = shards = [_Shard() for _ in range(self.n_s)]
        seq = itertools.count()
        events: list = []

        def push(t, kind, payload):
            heapq.heappush(events, (t, next(seq), kind, payload))

        txs = self.stream.transactions
        n = len(txs)
        if self.arrival_process == "uniform":
            arrivals = np.arange(n) / self.rate * US_PER_S
        else:
            arrivals = np.cumsum(self.rng.exponential(US_PER_S / self.rate, size=n))
        for i, t in enumerate(arrivals):
            push(float(t), "arrive", i)

        traces: dict[str, TxTrace] = {}
        # txid -> {"waiting": shards, "ok": shards, "fail_shard": int|None, "commit": phase}
        pending_locks: dict[str, dict] = {}
        submit_time: dict[str, float] = {}
        completed_latency_ms: list[float] = []
        submitted = completed = aborted = 0
        completed_in_bucket = 0
        bucket_idx = 0
        truncated = False
        now = 0.0
        last_feedback_t: Optional[float] = None
        last_feedback: Optional[ShardFeedback] = None
        throughput: list[tuple[int, int]] = []
        bucket_counts: list[dict] = []
        load_series: list[tuple[int, int, float, int]] = []

        def close_bucket(b: int):
            nonlocal completed_in_bucket
            throughput.append((b, completed_in_bucket))
            bucket_counts.append({"second": b, "submitted": submitted,
                                  "completed": completed, "aborted": aborted,
                                  "pending": submitted - completed - aborted})
            boundary = (b + 1) * self.bucket_us
            for sid, sh in enumerate(shards):
                # scheduled service time past the boundary belongs to later buckets
                overhang = max(0.0, sh.busy_until - boundary)
                in_bucket = max(0.0, sh.busy_bucket - overhang)
                load_series.append((b, sid, min(1.0, in_bucket / self.bucket_us),
                                    sh.outstanding))
                sh.busy_bucket = overhang
            completed_in_bucket = 0

        def serve(req: Request, t: float):
            sh = shards[req.shard]
            start = max(t, sh.busy_until)
            dur = cost.service_time(req.kind)
            finish = start + dur
            sh.busy_until = finish
            sh.busy_total += dur
            sh.busy_bucket += dur
            sh.outstanding += 1
            if req.kind == "COMMIT" and self.keep_traces:
                traces[req.tx].commit_start = start
            push(finish, "served", req)

        def finish_tx(txid: str, t: float):
            nonlocal completed, completed_in_bucket
            completed += 1
            completed_in_bucket += 1
            completed_latency_ms.append((t - submit_time[txid]) / US_PER_MS)

        while events:
            t, _, kind, payload = heapq.heappop(events)
            if self.duration_cap_us is not None and t > self.duration_cap_us:
                now = self.duration_cap_us
                truncated = (submitted < n
                             or submitted - completed - aborted > 0)
                break
            now = t
            while t >= (bucket_idx + 1) * self.bucket_us:
                close_bucket(bucket_idx)
                bucket_idx += 1

            if kind == "arrive":
                tx = txs[payload]
                if self.placer is not None:
                    fb = None
                    if self.feedback_period_us is not None:
                        if (last_feedback_t is None
                                or t - last_feedback_t >= self.feedback_period_us):
                            last_feedback = self._global_feedback()
                            last_feedback_t = t
                        fb = last_feedback
                    decision = self.placer.place(tx, fb)
                    self.placed_decisions.append(decision)
                else:
                    decision = self.decisions[payload]
                if tx.id in self.fail_lock_txs and not decision.cross_shard:
                    raise ValueError(f"cannot inject lock failure on single-shard tx {tx.id}")
                submitted += 1
                submit_time[tx.id] = t
                if self.keep_traces:
                    traces[tx.id] = TxTrace(submit=t)
                phases = plan_requests(tx, decision)
                if len(phases) == 2:
                    lock_shards = {r.shard for r in phases[0]}
                    pending_locks[tx.id] = {
                        "waiting": set(lock_shards), "ok": set(),
                        "fail_shard": (min(lock_shards)
                                       if tx.id in self.fail_lock_txs else None),
                        "commit": phases[1],
                    }
                for r in phases[0]:
                    push(t + link, "request", r)

            elif kind == "request":
                serve(payload, t)

            elif kind == "served":
                req: Request = payload
                shards[req.shard].outstanding -= 1
                if req.kind == "TX":
                    if self.keep_traces:
                        traces[req.tx].tx_finish = t
                    finish_tx(req.tx, t)
                elif req.kind == "COMMIT":
                    if self.keep_traces:
                        traces[req.tx].commit_finish = t
                    finish_tx(req.tx, t)
                elif req.kind == "LOCK":
                    if self.keep_traces:
                        traces[req.tx].lock_finish[req.shard] = t
                    push(t + link, "lock_reply", req)
                # UNLOCK replies carry no further action

            else:  # lock_reply at the client
                req = payload
                state = pending_locks[req.tx]
                state["waiting"].discard(req.shard)
                if req.shard == state["fail_shard"]:
                    if self.keep_traces:
                        traces[req.tx].lock_failed.add(req.shard)
                else:
                    state["ok"].add(req.shard)
                if not state["waiting"]:
                    if state["fail_shard"] is not None:
                        for shard_id in sorted(state["ok"]):
                            push(t + link, "request",
                                 Request("UNLOCK", req.tx, shard_id))
                            if self.keep_traces:
                                traces[req.tx].unlock_shards.add(shard_id)
                        aborted += 1
                        if self.keep_traces:
                            traces[req.tx].aborted = True
                    else:
                        for r in state["commit"]:
                            push(t + link, "request", r)
                    del pending_locks[req.tx]

        close_bucket(bucket_idx)

        lat = np.array(completed_latency_ms)
        if len(lat):
            percentiles = {"p50": float(np.percentile(lat, 50)),
                           "p95": float(np.percentile(lat, 95)),
                           "p99": float(np.percentile(lat, 99))}
        else:
            percentiles = {"p50": None, "p95": None, "p99": None}
        elapsed_s = max(now / US_PER_S, 1e-9)
        totals = {"submitted": submitted, "completed": completed,
                  "aborted": aborted, "pending": submitted - completed - aborted,
                  "tps": completed / elapsed_s, "abort_count": aborted,
                  "truncated": truncated, "elapsed_s": elapsed_s,
                  "n_shards": self.n_s}
        return SimReport(throughput_series=throughput,
                         latency_percentiles=percentiles,
                         per_shard_load_series=load_series,
                         totals=totals, bucket_counts=bucket_counts,
                         busy_time_us=np.array([s.busy_total for s in shards]),
                         traces=traces if self.keep_traces else None)


def simulate(stream: TxStream, decisions: Sequence[PlacementDecision],
             cost_model: CostModel, arrival_rate_tps: float,
             duration_cap_s: Optional[float] = None, **kwargs) -> SimReport:
    """Convenience wrapper: run one simulation with precomputed decisions."""
    sim = Simulation(stream, cost_model, arrival_rate_tps, decisions=decisions,
                     duration_cap_s=duration_cap_s, **kwargs)
    return sim.run()
