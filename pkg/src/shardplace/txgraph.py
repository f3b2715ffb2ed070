"""UTXO transaction-stream data model, ingestion, and dependency statistics."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

TXID_BYTES = 32


class StreamError(ValueError):
    """Raised when a transaction stream violates the format or UTXO rules."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def validate_txid(value: str) -> str:
    """Check that a transaction id is 64 lowercase hex chars (32 bytes)."""
    if not isinstance(value, str) or not _HEX64.match(value):
        raise ValueError(f"invalid transaction id {value!r}: expected 64 lowercase hex chars")
    return value


@dataclass(frozen=True)
class UtxoRef:
    """Reference to one output of a prior transaction."""

    tx: str
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"negative output index {self.index}")


@dataclass(frozen=True)
class Transaction:
    id: str
    inputs: tuple[UtxoRef, ...]
    output_count: int
    block_height: int
    arrival_index: int

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs

    def __post_init__(self):
        if self.output_count < 1:
            raise ValueError(f"tx {self.id}: output_count must be >= 1")
        if self.block_height < 0 or self.arrival_index < 0:
            raise ValueError(f"tx {self.id}: negative block height or arrival index")


@dataclass(frozen=True)
class TxStream:
    """Validated, topologically ordered transaction stream.

    Immutable after construction and safe to share read-only across threads.
    ``external_parents`` maps ids of parents placed before the stream's start
    to their pre-assigned shard.
    """

    transactions: tuple[Transaction, ...]
    external_parents: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self):
        return iter(self.transactions)

    def by_id(self) -> dict[str, Transaction]:
        return {tx.id: tx for tx in self.transactions}


def build_stream(transactions: Iterable[Transaction],
                 external_parents: Optional[dict[str, int]] = None) -> TxStream:
    """Validate a transaction sequence and wrap it in a TxStream.

    Enforces: unique ids, no double spends, in-stream parents precede
    children, out-of-stream parents declared in ``external_parents``,
    in-stream output indices within the parent's output count.
    """
    external_parents = dict(external_parents or {})
    txs = tuple(transactions)
    seen: dict[str, Transaction] = {}
    spent: set[UtxoRef] = set()
    for lineno, tx in enumerate(txs, start=1):
        if tx.id in seen:
            raise StreamError(f"duplicate transaction id {tx.id}", lineno)
        for ref in tx.inputs:
            if ref in spent:
                raise StreamError(
                    f"double spend of output ({ref.tx}, {ref.index}) by tx {tx.id}", lineno)
            spent.add(ref)
            parent = seen.get(ref.tx)
            if parent is not None:
                if ref.index >= parent.output_count:
                    raise StreamError(
                        f"tx {tx.id} references output {ref.index} of {ref.tx}, "
                        f"which has only {parent.output_count} outputs", lineno)
            elif ref.tx not in external_parents:
                raise StreamError(
                    f"tx {tx.id} spends unknown parent {ref.tx} "
                    f"(not earlier in stream, not in external-parents sidecar)", lineno)
        seen[tx.id] = tx
    return TxStream(transactions=txs, external_parents=external_parents)


def _parse_record(line: str, lineno: int, arrival_index: int) -> Transaction:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise StreamError(f"malformed JSON: {exc.msg}", lineno) from exc
    if not isinstance(obj, dict):
        raise StreamError("record is not a JSON object", lineno)
    try:
        txid = validate_txid(obj["id"])
        raw_inputs = obj["inputs"]
        outs = obj["outs"]
        block = obj["block"]
    except KeyError as exc:
        raise StreamError(f"missing field {exc.args[0]!r}", lineno) from exc
    except ValueError as exc:
        raise StreamError(str(exc), lineno) from exc
    if not isinstance(raw_inputs, list):
        raise StreamError("'inputs' must be a list", lineno)
    if not isinstance(outs, int) or isinstance(outs, bool) or outs < 1:
        raise StreamError(f"'outs' must be a positive integer, got {outs!r}", lineno)
    if not isinstance(block, int) or isinstance(block, bool) or block < 0:
        raise StreamError(f"'block' must be a non-negative integer, got {block!r}", lineno)
    inputs = []
    for inp in raw_inputs:
        try:
            ptx = validate_txid(inp["tx"])
            idx = inp["idx"]
        except (TypeError, KeyError) as exc:
            raise StreamError("each input needs 'tx' and 'idx' fields", lineno) from exc
        except ValueError as exc:
            raise StreamError(str(exc), lineno) from exc
        if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
            raise StreamError(f"input 'idx' must be a non-negative integer, got {idx!r}", lineno)
        inputs.append(UtxoRef(tx=ptx, index=idx))
    try:
        return Transaction(id=txid, inputs=tuple(inputs), output_count=outs,
                           block_height=block, arrival_index=arrival_index)
    except ValueError as exc:
        raise StreamError(str(exc), lineno) from exc


def load_external_parents(path) -> dict[str, int]:
    """Load the external-parents sidecar (JSON-lines of {"id", "shard"})."""
    parents: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                txid = validate_txid(obj["id"])
                shard = obj["shard"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StreamError(f"bad external-parent record: {exc}", lineno) from exc
            if not isinstance(shard, int) or isinstance(shard, bool) or shard < 0:
                raise StreamError(f"'shard' must be a non-negative integer, got {shard!r}", lineno)
            if txid in parents:
                raise StreamError(f"duplicate external parent {txid}", lineno)
            parents[txid] = shard
    return parents


def load_stream(path, format: str = "jsonl",
                external_parents_path=None) -> TxStream:
    """Load and validate a JSON-lines transaction stream.

    arrival_index is assigned by line order. Parents absent from the stream
    must be pre-declared in the external-parents sidecar.
    """
    if format != "jsonl":
        raise ValueError(f"unknown stream format {format!r}")
    external = load_external_parents(external_parents_path) if external_parents_path else {}
    txs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            txs.append(_parse_record(line, lineno, arrival_index=len(txs)))
    return build_stream(txs, external)


def serialize_transaction(tx: Transaction) -> str:
    """Canonical single-line form: fixed field order, compact separators."""
    obj = {
        "id": tx.id,
        "inputs": [{"tx": r.tx, "idx": r.index} for r in tx.inputs],
        "outs": tx.output_count,
        "block": tx.block_height,
    }
    return json.dumps(obj, separators=(",", ":"))


def save_stream(stream: TxStream, path, external_parents_path=None) -> None:
    """Write the canonical JSON-lines form (LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tx in stream.transactions:
            fh.write(serialize_transaction(tx))
            fh.write("\n")
    if external_parents_path is not None:
        with open(external_parents_path, "w", encoding="utf-8", newline="\n") as fh:
            for txid, shard in stream.external_parents.items():
                fh.write(json.dumps({"id": txid, "shard": shard}, separators=(",", ":")))
                fh.write("\n")


def parent_multiset(tx: Transaction) -> Counter:
    """Parent ids with multiplicity = number of inputs referencing each.

    The deduplicated key set is the parent set used by set-based placement.
    """
    return Counter(ref.tx for ref in tx.inputs)


def parent_count_histogram(stream: TxStream) -> dict[int, int]:
    """Distinct-parent-count histogram over non-coinbase transactions."""
    hist: Counter = Counter()
    for tx in stream:
        if tx.is_coinbase:
            continue
        hist[len(set(ref.tx for ref in tx.inputs))] += 1
    return dict(sorted(hist.items()))


def one_parent_ratio(stream: TxStream, window: int) -> list[tuple[int, float]]:
    """Per-bucket fraction of non-coinbase txs with exactly one distinct parent.

    Buckets with no non-coinbase transactions are omitted.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n_buckets = (len(stream) + window - 1) // window
    denom = [0] * n_buckets
    num = [0] * n_buckets
    for tx in stream:
        if tx.is_coinbase:
            continue
        b = tx.arrival_index // window
        denom[b] += 1
        if len(set(ref.tx for ref in tx.inputs)) == 1:
            num[b] += 1
    return [(b, num[b] / denom[b]) for b in range(n_buckets) if denom[b] > 0]


def immediate_predecessor_ratio(stream: TxStream,
                                ranges: list[tuple[int, int]]) -> list[float]:
    """For each [lo, hi) block-height range, the fraction of non-coinbase txs
    spending an output of the transaction immediately before them in arrival
    order."""
    for i, (lo, hi) in enumerate(ranges):
        if lo >= hi:
            raise ValueError(f"empty range [{lo}, {hi})")
        for lo2, hi2 in ranges[i + 1:]:
            if lo < hi2 and lo2 < hi:
                raise ValueError("ranges must be non-overlapping")
    results = []
    txs = stream.transactions
    for lo, hi in ranges:
        total = 0
        hits = 0
        for i, tx in enumerate(txs):
            if tx.is_coinbase or not (lo <= tx.block_height < hi):
                continue
            total += 1
            if i > 0 and any(ref.tx == txs[i - 1].id for ref in tx.inputs):
                hits += 1
        results.append(hits / total if total else 0.0)
    return results
