import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardplace import txgraph, workload
from shardplace.txgraph import StreamError, Transaction, UtxoRef


def txid(n: int) -> str:
    return f"{n:064x}"


def make_tx(n, inputs=(), outs=2, block=0, arrival=0):
    return Transaction(id=txid(n), inputs=tuple(UtxoRef(txid(p), i) for p, i in inputs),
                       output_count=outs, block_height=block, arrival_index=arrival)


class TestLoadStream:
    def test_single_coinbase(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(json.dumps({"id": txid(1), "inputs": [], "outs": 1, "block": 0}) + "\n")
        stream = txgraph.load_stream(path)
        assert len(stream) == 1
        assert stream.external_parents == {}
        assert stream.transactions[0].is_coinbase

    def test_child_before_parent_names_child(self, tmp_path):
        path = tmp_path / "s.jsonl"
        b_spends_a = {"id": txid(0xB), "inputs": [{"tx": txid(0xA), "idx": 0}],
                      "outs": 1, "block": 0}
        a = {"id": txid(0xA), "inputs": [], "outs": 1, "block": 0}
        path.write_text(json.dumps(b_spends_a) + "\n" + json.dumps(a) + "\n")
        with pytest.raises(StreamError, match=txid(0xB)):
            txgraph.load_stream(path)

    def test_double_spend(self, tmp_path):
        path = tmp_path / "s.jsonl"
        lines = [
            {"id": txid(0xA), "inputs": [], "outs": 1, "block": 0},
            {"id": txid(0xB), "inputs": [{"tx": txid(0xA), "idx": 0}], "outs": 1, "block": 0},
            {"id": txid(0xC), "inputs": [{"tx": txid(0xA), "idx": 0}], "outs": 1, "block": 0},
        ]
        path.write_text("".join(json.dumps(x) + "\n" for x in lines))
        with pytest.raises(StreamError, match="double spend"):
            txgraph.load_stream(path)

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(json.dumps({"id": txid(1), "inputs": [], "outs": 1, "block": 0})
                        + "\n{not json\n")
        with pytest.raises(StreamError, match="line 2"):
            txgraph.load_stream(path)

    def test_duplicate_txid(self, tmp_path):
        path = tmp_path / "s.jsonl"
        rec = json.dumps({"id": txid(1), "inputs": [], "outs": 1, "block": 0})
        path.write_text(rec + "\n" + rec + "\n")
        with pytest.raises(StreamError, match="duplicate"):
            txgraph.load_stream(path)

    def test_unknown_parent_needs_sidecar(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(json.dumps({"id": txid(2), "inputs": [{"tx": txid(9), "idx": 0}],
                                    "outs": 1, "block": 0}) + "\n")
        with pytest.raises(StreamError, match="external-parents"):
            txgraph.load_stream(path)
        sidecar = tmp_path / "ext.jsonl"
        sidecar.write_text(json.dumps({"id": txid(9), "shard": 3}) + "\n")
        stream = txgraph.load_stream(path, external_parents_path=sidecar)
        assert stream.external_parents == {txid(9): 3}

    def test_output_index_out_of_range(self, tmp_path):
        path = tmp_path / "s.jsonl"
        lines = [
            {"id": txid(0xA), "inputs": [], "outs": 1, "block": 0},
            {"id": txid(0xB), "inputs": [{"tx": txid(0xA), "idx": 5}], "outs": 1, "block": 0},
        ]
        path.write_text("".join(json.dumps(x) + "\n" for x in lines))
        with pytest.raises(StreamError, match="only 1 outputs"):
            txgraph.load_stream(path)


def test_roundtrip_is_bijective(tmp_path):
    spec = dataclasses.replace(workload.preset("bitcoin-like"), n_tx=500, seed=5)
    stream = workload.generate(spec)
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    txgraph.save_stream(stream, p1)
    reloaded = txgraph.load_stream(p1)
    assert reloaded.transactions == stream.transactions
    txgraph.save_stream(reloaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


class TestParentMultiset:
    def test_multiplicity(self):
        tx = make_tx(9, [(0xA, 0), (0xA, 1), (0xB, 0)])
        assert txgraph.parent_multiset(tx) == {txid(0xA): 2, txid(0xB): 1}

    def test_coinbase_empty(self):
        assert txgraph.parent_multiset(make_tx(9)) == {}

    def test_single(self):
        assert txgraph.parent_multiset(make_tx(9, [(0xA, 0)])) == {txid(0xA): 1}


class TestParentCountHistogram:
    def test_coinbase_excluded(self):
        txs = [make_tx(0, outs=4, arrival=0)]
        txs += [make_tx(i, [(0, i - 1)], arrival=i) for i in (1, 2, 3)]
        stream = txgraph.build_stream(txs)
        assert txgraph.parent_count_histogram(stream) == {1: 3}

    def test_multi_input_same_parent_counts_once(self):
        txs = [make_tx(0, outs=2), make_tx(1, [(0, 0), (0, 1)], arrival=1)]
        stream = txgraph.build_stream(txs)
        assert txgraph.parent_count_histogram(stream) == {1: 1}

    def test_power_law_slope_matches_generator(self):
        # Log-log regression slope should recover the configured exponent.
        spec = workload.WorkloadSpec(n_tx=100_000, seed=11, parent_alpha=2.2,
                                     max_parents=100, one_parent_target=None,
                                     outputs_per_tx=3)
        stream = workload.generate(spec)
        hist = txgraph.parent_count_histogram(stream)
        ks = np.array([k for k, v in hist.items() if v >= 5])
        vs = np.array([hist[k] for k in ks])
        slope, _ = np.polyfit(np.log(ks), np.log(vs), 1)
        assert abs(slope - (-2.2)) < 0.3

    def test_sum_equals_non_coinbase_count(self):
        spec = dataclasses.replace(workload.preset("bitcoin-like"), n_tx=2000, seed=3)
        stream = workload.generate(spec)
        non_coinbase = sum(1 for tx in stream if not tx.is_coinbase)
        assert sum(txgraph.parent_count_histogram(stream).values()) == non_coinbase


class TestOneParentRatio:
    def test_arithmetic(self):
        txs = [make_tx(0, outs=8)]
        txs += [make_tx(i, [(0, i - 1)], arrival=i) for i in (1, 2, 3)]
        txs.append(make_tx(4, [(0, 3), (1, 0)], arrival=4))
        stream = txgraph.build_stream(txs)
        # bucket of 5: coinbase excluded, 3 of 4 non-coinbase have one parent
        assert txgraph.one_parent_ratio(stream, 5) == [(0, 0.75)]

    def test_all_coinbase_bucket_absent(self):
        stream = txgraph.build_stream([make_tx(i, arrival=i) for i in range(4)])
        assert txgraph.one_parent_ratio(stream, 2) == []

    def test_bitcoin_like_hits_target(self):
        spec = dataclasses.replace(workload.preset("bitcoin-like"), n_tx=50_000)
        stream = workload.generate(spec)
        [(_, ratio)] = txgraph.one_parent_ratio(stream, len(stream))
        assert abs(ratio - 0.75) < 0.02

    def test_window_validation(self):
        stream = txgraph.build_stream([make_tx(0)])
        with pytest.raises(ValueError):
            txgraph.one_parent_ratio(stream, 0)

    def test_all_one_parent_gives_exactly_one(self):
        txs = [make_tx(0, outs=20)]
        txs += [make_tx(i, [(0, i - 1)], arrival=i) for i in range(1, 15)]
        stream = txgraph.build_stream(txs)
        assert all(f == 1.0 for _, f in txgraph.one_parent_ratio(stream, 4))


class TestImmediatePredecessorRatio:
    def test_perfect_chain(self):
        txs = [make_tx(0)]
        txs += [make_tx(i, [(i - 1, 0)], arrival=i) for i in range(1, 5)]
        stream = txgraph.build_stream(txs)
        assert txgraph.immediate_predecessor_ratio(stream, [(0, 1)]) == [1.0]

    def test_no_chains(self):
        txs = [make_tx(0, outs=8)]
        txs += [make_tx(1, [(0, 0)], arrival=1), make_tx(2, [(0, 1)], arrival=2),
                make_tx(3, [(0, 2)], arrival=3)]
        stream = txgraph.build_stream(txs)
        # txs 2 and 3 spend tx 0, not their immediate predecessor; tx 1 does
        assert txgraph.immediate_predecessor_ratio(stream, [(0, 1)]) == [1 / 3]

    def test_chain_burst_preset_fraction(self):
        spec = dataclasses.replace(workload.preset("chain-burst"), n_tx=50_000)
        stream = workload.generate(spec)
        max_block = stream.transactions[-1].block_height
        [frac] = txgraph.immediate_predecessor_ratio(stream, [(0, max_block + 1)])
        assert abs(frac - 0.20) < 0.02

    def test_overlapping_ranges_rejected(self):
        stream = txgraph.build_stream([make_tx(0)])
        with pytest.raises(ValueError):
            txgraph.immediate_predecessor_ratio(stream, [(0, 10), (5, 15)])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 120))
def test_generated_streams_validate_and_bound_parents(seed, n):
    spec = workload.WorkloadSpec(n_tx=n, seed=seed, block_size=20,
                                 one_parent_target=0.6, max_parents=5)
    stream = workload.generate(spec)
    for tx in stream:
        if not tx.is_coinbase:
            support = len(set(r.tx for r in tx.inputs))
            assert 1 <= support <= len(tx.inputs)
