"""Deterministic synthetic transaction-stream generator.

Streams reproduce the structural traits of real UTXO histories: power-law
parent counts, a configurable one-parent fraction, runs of transactions
spending their immediate predecessor, and periodic fan-in "aggregation"
bursts that stress fitness-based placers.

Randomness comes from a single numpy PCG64 generator seeded from the spec,
so generation is a pure function of the spec.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .txgraph import Transaction, TxStream, UtxoRef, build_stream


@dataclass(frozen=True)
class WorkloadSpec:
    n_tx: int = 100_000
    seed: int = 1
    coinbase_rate: int = 1          # coinbase txs at the start of each block
    block_size: int = 1000          # txs per block (labeling only)
    parent_alpha: float = 2.2       # power-law exponent for parent counts
    max_parents: int = 20
    one_parent_target: float | None = None   # fraction of 1-parent txs; None = pure power law
    chain_burst_prob: float = 0.0   # per-tx probability of starting a predecessor-spending run
    chain_burst_len: float = 0.0    # mean run length (followers per run)
    agg_period: int = 0             # txs between aggregation bursts; 0 disables
    agg_fan_in: int = 10
    agg_depth: int = 50
    outputs_per_tx: int = 2

    def validate(self) -> None:
        if self.n_tx < 1:
            raise ValueError("n_tx must be >= 1")
        if not (0 <= self.chain_burst_prob <= 1):
            raise ValueError("chain_burst_prob must be in [0, 1]")
        if self.one_parent_target is not None and not (0 <= self.one_parent_target <= 1):
            raise ValueError("one_parent_target must be in [0, 1]")
        if self.agg_period and self.agg_fan_in < 2:
            raise ValueError("agg_fan_in must be >= 2")
        if self.max_parents < 1:
            raise ValueError("max_parents must be >= 1")
        if self.block_size < 1 or self.coinbase_rate < 0:
            raise ValueError("block_size must be >= 1 and coinbase_rate >= 0")
        if self.outputs_per_tx < 1:
            raise ValueError("outputs_per_tx must be >= 1")
        if self.chain_burst_prob > 0 and self.chain_burst_len < 1:
            raise ValueError("chain_burst_len must be >= 1 when chain bursts are enabled")


PRESETS = ("bitcoin-like", "chain-burst", "aggregation-storm", "uniform-random")


def preset(name: str) -> WorkloadSpec:
    """Named workload presets targeting published structural statistics."""
    if name == "bitcoin-like":
        # ~75% one-parent transactions, power-law tail.
        return WorkloadSpec(parent_alpha=2.2, max_parents=20, one_parent_target=0.75)
    if name == "chain-burst":
        # Followers make up ~20% of txs: p * mean_len / (1 + p * mean_len) = 0.2.
        return WorkloadSpec(parent_alpha=2.2, max_parents=20, one_parent_target=0.75,
                            chain_burst_prob=0.0125, chain_burst_len=20.0)
    if name == "aggregation-storm":
        # Periodic fan-in bursts plus heavy multi-parent mixing so amplified
        # scores leak across lineages; frequent coinbases seed independent
        # components that keep normalizing placers balanced.
        return WorkloadSpec(parent_alpha=2.2, max_parents=8, one_parent_target=0.3,
                            coinbase_rate=10, block_size=250,
                            agg_period=10_000, agg_fan_in=10, agg_depth=50)
    if name == "uniform-random":
        return WorkloadSpec(parent_alpha=2.0, max_parents=10, one_parent_target=None)
    raise KeyError(f"unknown preset {name!r}")


class _Pool:
    """Unspent-output pool with O(1) uniform sampling and removal."""

    def __init__(self):
        self.items: list[UtxoRef] = []

    def __len__(self):
        return len(self.items)

    def add(self, ref: UtxoRef):
        self.items.append(ref)

    def take_at(self, i: int) -> UtxoRef:
        last = self.items.pop()
        if i == len(self.items):
            return last
        ref = self.items[i]
        self.items[i] = last
        return ref

    def take_uniform(self, rng: np.random.Generator) -> UtxoRef:
        return self.take_at(int(rng.integers(len(self.items))))


def _zipf_sampler(alpha: float, lo: int, hi: int):
    """Inverse-CDF sampler for a truncated power law on [lo, hi]."""
    support = np.arange(lo, hi + 1)
    pmf = support.astype(float) ** (-alpha)
    cdf = np.cumsum(pmf / pmf.sum())

    def sample(rng: np.random.Generator) -> int:
        return int(support[np.searchsorted(cdf, rng.random())])

    return sample


class _Generator:
    def __init__(self, spec: WorkloadSpec):
        spec.validate()
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.pool = _Pool()
        self.txs: list[Transaction] = []
        self.tail_sampler = _zipf_sampler(spec.parent_alpha, 2, max(2, spec.max_parents))
        self.full_sampler = _zipf_sampler(spec.parent_alpha, 1, spec.max_parents)
        self.chain_followers_left = 0
        self.agg_seed_output: UtxoRef | None = None  # reserved output chaining bursts
        self.agg_plan: list = []  # queued burst steps

    def _new_id(self) -> str:
        return self.rng.bytes(32).hex()

    def _emit(self, inputs: list[UtxoRef], output_count: int,
              withhold: int = 0) -> Transaction:
        """Append one tx; outputs [0, output_count - withhold) enter the pool."""
        i = len(self.txs)
        tx = Transaction(id=self._new_id(), inputs=tuple(inputs),
                         output_count=output_count,
                         block_height=i // self.spec.block_size, arrival_index=i)
        self.txs.append(tx)
        for k in range(output_count - withhold):
            self.pool.add(UtxoRef(tx=tx.id, index=k))
        return tx

    def _emit_coinbase(self):
        self._emit([], self.spec.outputs_per_tx)

    def _sample_parent_count(self) -> int:
        target = self.spec.one_parent_target
        if target is None:
            return self.full_sampler(self.rng)
        if self.rng.random() < target:
            return 1
        return self.tail_sampler(self.rng)

    def _emit_ordinary(self):
        k = min(self._sample_parent_count(), len(self.pool))
        if k == 0:
            self._emit_coinbase()
            return
        inputs = [self.pool.take_uniform(self.rng) for _ in range(k)]
        self._emit(inputs, self.spec.outputs_per_tx)

    def _emit_chain_follower(self):
        prev = self.txs[-1]
        # Spend the highest pooled output of the predecessor; it was just added.
        for i in range(len(self.pool.items) - 1, -1, -1):
            if self.pool.items[i].tx == prev.id:
                ref = self.pool.take_at(i)
                self._emit([ref], self.spec.outputs_per_tx)
                return
        self.chain_followers_left = 0  # predecessor fully spent; abandon run
        self._emit_ordinary()

    def _plan_burst(self):
        """Queue one aggregation burst: root, then depth rounds of fan-in
        children followed by an aggregator. Each aggregator withholds one
        output to seed the next burst's root, chaining score growth."""
        fan_in, depth = self.spec.agg_fan_in, self.spec.agg_depth
        self.agg_plan = [("root",)]
        for _ in range(depth):
            self.agg_plan.extend(("child", j) for j in range(fan_in))
            self.agg_plan.append(("aggregate",))
        self._burst_root: Transaction | None = None
        self._burst_children: list[Transaction] = []

    def _emit_burst_step(self):
        step = self.agg_plan.pop(0)
        fan_in = self.spec.agg_fan_in
        if step[0] == "root":
            if self.agg_seed_output is not None:
                inputs = [self.agg_seed_output]
                self.agg_seed_output = None
            elif len(self.pool):
                inputs = [self.pool.take_uniform(self.rng)]
            else:
                inputs = []
            self._burst_root = self._emit(inputs, fan_in, withhold=fan_in)
            self._burst_children = []
        elif step[0] == "child":
            ref = UtxoRef(tx=self._burst_root.id, index=step[1])
            # Children reserve their last output for the aggregator; the rest
            # enter the pool so ordinary txs can pick up tainted outputs.
            out_count = max(2, self.spec.outputs_per_tx)
            self._burst_children.append(self._emit([ref], out_count, withhold=1))
        else:  # aggregate
            inputs = [UtxoRef(tx=c.id, index=c.output_count - 1)
                      for c in self._burst_children]
            # All aggregator outputs are reserved: 0..fan_in-1 for the next
            # round's children, fan_in for the next burst's root.
            agg = self._emit(inputs, fan_in + 1, withhold=fan_in + 1)
            self.agg_seed_output = UtxoRef(tx=agg.id, index=fan_in)
            self._burst_root = agg
            self._burst_children = []

    def run(self) -> TxStream:
        spec = self.spec
        next_burst = spec.agg_period if spec.agg_period else None
        while len(self.txs) < spec.n_tx:
            i = len(self.txs)
            if i % spec.block_size < spec.coinbase_rate:
                self._emit_coinbase()
                continue
            if self.agg_plan:
                self._emit_burst_step()
                continue
            if next_burst is not None and i >= next_burst and len(self.pool):
                if spec.agg_fan_in > spec.n_tx:
                    raise ValueError("aggregation fan_in exceeds stream size")
                self._plan_burst()
                next_burst += spec.agg_period
                self._emit_burst_step()
                continue
            if self.chain_followers_left > 0 and not self.txs[-1].is_coinbase:
                self.chain_followers_left -= 1
                self._emit_chain_follower()
                continue
            if (spec.chain_burst_prob > 0 and len(self.pool)
                    and self.rng.random() < spec.chain_burst_prob):
                self.chain_followers_left = int(self.rng.geometric(1.0 / spec.chain_burst_len))
            self._emit_ordinary()
        return build_stream(self.txs[:spec.n_tx])


def generate(spec: WorkloadSpec) -> TxStream:
    """Generate a validated, topologically ordered stream from the spec."""
    return _Generator(spec).run()


def spec_with(base: WorkloadSpec, **overrides) -> WorkloadSpec:
    return replace(base, **overrides)
