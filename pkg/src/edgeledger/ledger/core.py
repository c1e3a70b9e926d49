"""The execute-order-commit pipeline."""
from __future__ import annotations

import logging
import os
import threading
from pathlib import Path
from typing import Iterable, Sequence

from edgeledger.clock import SystemClock
from edgeledger.errors import (
    LedgerUnavailableError,
    ReadOnlyViolationError,
    ReplayMismatchError,
    UnknownOperationError,
)
from edgeledger.ledger.chain import (
    Block,
    LedgerTransaction,
    VerificationReport,
    apply_writes,
    canonical_json,
    digest,
    encode_record,
    load_log_file,
    replay,
    state_digest,
    verify_chain,
    verify_log_file,
)
from edgeledger.ledger.contract import Contract, MapView, TxContext, invoke

log = logging.getLogger(__name__)

DEFAULT_MAX_TXS = 10
DEFAULT_BLOCK_TIMEOUT_MS = 500


def make_tx_id(seq: int, timestamp_ms: int, contract: str, operation: str, args: Sequence[str]) -> str:
    return digest(canonical_json([seq, timestamp_ms, contract, operation, list(args)]))[:32]


class Ledger:
    """Single-orderer permissioned ledger.

    Transactions execute serially against the committed state plus the write
    sets still waiting in the queue, then wait for the block that carries them.
    A block is cut when ``max_txs`` transactions are queued or when
    ``block_timeout_ms`` has passed since the first one was queued. Queries
    run against the last committed snapshot and never take the ordering lock.
    """

    def __init__(
        self,
        contracts: Iterable[Contract] = (),
        *,
        path: str | os.PathLike | None = None,
        max_txs: int = DEFAULT_MAX_TXS,
        block_timeout_ms: int = DEFAULT_BLOCK_TIMEOUT_MS,
        clock=None,
        fsync: bool = True,
    ):
        if max_txs < 1:
            raise ValueError("max_txs must be at least 1")
        if block_timeout_ms < 0:
            raise ValueError("block_timeout_ms must be non-negative")
        self.max_txs = max_txs
        self.block_timeout_ms = block_timeout_ms
        self._clock = clock or SystemClock()
        self._fsync = fsync
        self._contracts: dict[str, Contract] = {}
        for contract in contracts:
            self.register(contract)

        self._lock = threading.Condition()
        self._queue: list[LedgerTransaction] = []
        self._pending: dict[str, bytes | None] = {}
        self._deadline: float | None = None
        self._closed = False
        self._path = Path(path) if path is not None else None
        self._file = None

        if self._path is not None and self._path.exists() and self._path.stat().st_size > 0:
            self._blocks = load_log_file(self._path)
        else:
            self._blocks = [Block.genesis()]
            if self._path is not None:
                self._path.parent.mkdir(parents=True, exist_ok=True)
                self._path.write_bytes(b"")
                self._append_to_log(self._blocks[0])
        self._committed: dict[str, bytes] = replay(self._blocks)
        self._tx_ids = {tx.tx_id for b in self._blocks for tx in b.txs}
        self._seq = len(self._tx_ids)
        self._committed_seq = self._seq
        self._last_ts = max((tx.timestamp_ms for b in self._blocks for tx in b.txs), default=0)

    # -- registry -----------------------------------------------------------------
    def register(self, contract: Contract) -> None:
        if not contract.name:
            raise ValueError("contract has no name")
        self._contracts[contract.name] = contract

    @property
    def contracts(self) -> dict[str, Contract]:
        return dict(self._contracts)

    def _resolve(self, contract: str, operation: str):
        try:
            target = self._contracts[contract]
        except KeyError:
            raise UnknownOperationError(f"unknown contract {contract!r}") from None
        _, submit = target.resolve(operation)
        return target, submit

    # -- write path ---------------------------------------------------------------
    def enqueue(self, contract: str, operation: str, args: Sequence[str]) -> LedgerTransaction:
        """Execute and queue a transaction without waiting for its block."""
        with self._lock:
            return self._enqueue_locked(contract, operation, list(args))[0]

    def submit(self, contract: str, operation: str, args: Sequence[str]) -> LedgerTransaction:
        """Execute, order and wait until the transaction's block is committed."""
        with self._lock:
            tx, seq = self._enqueue_locked(contract, operation, list(args))
            while self._committed_seq <= seq:
                if self._closed:
                    raise LedgerUnavailableError("ledger closed before commit")
                remaining = self._deadline - self._clock.monotonic()
                if remaining <= 0:
                    self._cut_locked()
                else:
                    self._clock.wait(self._lock, remaining)
            return tx

    def _enqueue_locked(self, contract: str, operation: str, args: list[str]) -> tuple[LedgerTransaction, int]:
        if self._closed:
            raise LedgerUnavailableError("ledger is closed")
        if not all(isinstance(a, str) for a in args):
            raise TypeError("transaction args must be strings")
        target, submit = self._resolve(contract, operation)
        if not submit:
            raise ReadOnlyViolationError(f"{contract}.{operation} is a query; evaluate it instead")
        timestamp = max(self._clock.now_ms(), self._last_ts)
        seq = self._seq
        tx_id = make_tx_id(seq, timestamp, contract, operation, args)
        if tx_id in self._tx_ids:
            raise LedgerUnavailableError(f"transaction id collision {tx_id}")
        ctx = TxContext(
            MapView(self._committed, self._pending), self._contracts, tx_id=tx_id, timestamp_ms=timestamp
        )
        result = invoke(target, ctx, operation, args)
        tx = LedgerTransaction(
            tx_id=tx_id,
            contract=contract,
            operation=operation,
            args=tuple(args),
            timestamp_ms=timestamp,
            writes=ctx.write_set(),
            result=result if isinstance(result, str) else "",
        )
        self._seq += 1
        self._last_ts = timestamp
        self._tx_ids.add(tx_id)
        self._queue.append(tx)
        self._pending.update(tx.writes)
        if len(self._queue) == 1:
            self._deadline = self._clock.monotonic() + self.block_timeout_ms / 1000
        if len(self._queue) >= self.max_txs:
            self._cut_locked()
        return tx, seq

    def cut_block(self) -> Block | None:
        """Close the queued transactions into a block; no-op on an empty queue."""
        with self._lock:
            return self._cut_locked()

    def cut_if_due(self) -> Block | None:
        with self._lock:
            if self._deadline is not None and self._clock.monotonic() >= self._deadline:
                return self._cut_locked()
            return None

    def _cut_locked(self) -> Block | None:
        if not self._queue:
            return None
        block = Block.seal(len(self._blocks), self._blocks[-1].block_hash, self._queue)
        if self._path is not None:
            self._append_to_log(block)
        committed = dict(self._committed)
        for tx in block.txs:
            apply_writes(committed, tx.writes)
        self._committed = committed
        self._blocks.append(block)
        self._committed_seq += len(block.txs)
        self._queue = []
        self._pending = {}
        self._deadline = None
        log.debug("cut block %d with %d txs", block.height, len(block.txs))
        self._clock.notify_all(self._lock)
        return block

    def _append_to_log(self, block: Block) -> None:
        if self._file is None:
            self._file = open(self._path, "ab")
        self._file.write(encode_record(block))
        self._file.flush()
        if self._fsync:
            os.fsync(self._file.fileno())

    # -- read path ----------------------------------------------------------------
    def evaluate(self, contract: str, operation: str, args: Sequence[str]) -> bytes:
        if self._closed:
            raise LedgerUnavailableError("ledger is closed")
        target, submit = self._resolve(contract, operation)
        if submit:
            raise ReadOnlyViolationError(f"{contract}.{operation} is a transaction; submit it instead")
        ctx = TxContext(MapView(self._committed), self._contracts, read_only=True)
        result = invoke(target, ctx, operation, list(args))
        return result.encode("utf-8")

    def range_query(self, prefix: str) -> list[tuple[str, bytes]]:
        return MapView(self._committed).range(prefix)

    def get(self, key: str) -> bytes | None:
        return self._committed.get(key)

    # -- inspection ---------------------------------------------------------------
    @property
    def blocks(self) -> list[Block]:
        return list(self._blocks)

    @property
    def height(self) -> int:
        return self._blocks[-1].height

    @property
    def queued(self) -> int:
        return len(self._queue)

    @property
    def path(self) -> Path | None:
        return self._path

    def world_state(self) -> dict[str, bytes]:
        return dict(self._committed)

    def state_digest(self) -> str:
        return state_digest(self._committed)

    def transactions(self) -> list[LedgerTransaction]:
        return [tx for b in self._blocks for tx in b.txs]

    def verify_chain(self) -> VerificationReport:
        if self._path is not None:
            if self._file is not None:
                self._file.flush()
            return verify_log_file(self._path)
        return verify_chain(self._blocks)

    def close(self) -> None:
        with self._lock:
            self._cut_locked()
            self._closed = True
            if self._file is not None:
                self._file.close()
                self._file = None
            self._clock.notify_all(self._lock)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def reexecute(blocks: Sequence[Block], contracts: Iterable[Contract]) -> dict[str, bytes]:
    """Re-run every logged transaction from an empty state.

    Raises ReplayMismatchError if a transaction's recomputed write set differs
    from the one recorded in its block.
    """
    registry = {c.name: c for c in contracts}
    state: dict[str, bytes] = {}
    for block in blocks:
        for tx in block.txs:
            ctx = TxContext(MapView(state), registry, tx_id=tx.tx_id, timestamp_ms=tx.timestamp_ms)
            try:
                target = registry[tx.contract]
            except KeyError:
                raise ReplayMismatchError(f"block {block.height}: unknown contract {tx.contract}") from None
            invoke(target, ctx, tx.operation, tx.args)
            if ctx.write_set() != tx.writes:
                raise ReplayMismatchError(f"block {block.height}: tx {tx.tx_id} writes differ on replay")
            apply_writes(state, tx.writes)
    return state
