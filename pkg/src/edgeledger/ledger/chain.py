"""Blocks, transactions, their canonical encoding and chain verification."""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from edgeledger.errors import LedgerCorruptError

ZERO_HASH = "0" * 64
_LEN = struct.Struct(">I")


def canonical_json(obj: object) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False).encode("utf-8")


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class LedgerTransaction:
    tx_id: str
    contract: str
    operation: str
    args: tuple[str, ...]
    timestamp_ms: int
    # (key, value) pairs sorted by key; value None is a tombstone
    writes: tuple[tuple[str, bytes | None], ...]
    result: str = ""

    def to_record(self) -> dict:
        return {
            "txId": self.tx_id,
            "contract": self.contract,
            "operation": self.operation,
            "args": list(self.args),
            "timestampMs": self.timestamp_ms,
            "writes": [[k, None if v is None else v.decode("utf-8")] for k, v in self.writes],
            "result": self.result,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LedgerTransaction":
        if list(rec) != ["txId", "contract", "operation", "args", "timestampMs", "writes", "result"]:
            raise ValueError(f"unexpected transaction fields {list(rec)}")
        writes = []
        for key, value in rec["writes"]:
            if not isinstance(key, str) or not (value is None or isinstance(value, str)):
                raise ValueError("malformed write")
            writes.append((key, None if value is None else value.encode("utf-8")))
        args = rec["args"]
        if not all(isinstance(a, str) for a in args):
            raise ValueError("transaction args must be strings")
        ts = rec["timestampMs"]
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise ValueError("timestampMs must be an integer")
        return cls(
            tx_id=rec["txId"],
            contract=rec["contract"],
            operation=rec["operation"],
            args=tuple(args),
            timestamp_ms=ts,
            writes=tuple(writes),
            result=rec["result"],
        )


def block_digest(height: int, prev_hash: str, txs: Sequence[LedgerTransaction]) -> str:
    return digest(canonical_json([height, prev_hash, [tx.to_record() for tx in txs]]))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    txs: tuple[LedgerTransaction, ...]
    block_hash: str

    @classmethod
    def seal(cls, height: int, prev_hash: str, txs: Iterable[LedgerTransaction]) -> "Block":
        txs = tuple(txs)
        return cls(height, prev_hash, txs, block_digest(height, prev_hash, txs))

    @classmethod
    def genesis(cls) -> "Block":
        return cls.seal(0, ZERO_HASH, ())

    def compute_hash(self) -> str:
        return block_digest(self.height, self.prev_hash, self.txs)

    def to_record(self) -> dict:
        return {
            "height": self.height,
            "prevHash": self.prev_hash,
            "txs": [tx.to_record() for tx in self.txs],
            "blockHash": self.block_hash,
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_record())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Block":
        rec = json.loads(raw.decode("utf-8"))
        if not isinstance(rec, dict) or list(rec) != ["height", "prevHash", "txs", "blockHash"]:
            raise ValueError("unexpected block fields")
        block = cls(
            height=rec["height"],
            prev_hash=rec["prevHash"],
            txs=tuple(LedgerTransaction.from_record(t) for t in rec["txs"]),
            block_hash=rec["blockHash"],
        )
        if block.to_bytes() != raw:
            raise ValueError("record is not in canonical form")
        return block


@dataclass(frozen=True)
class VerificationReport:
    valid: bool
    first_bad_height: int | None = None
    reason: str = ""
    blocks: int = 0

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "firstBadHeight": self.first_bad_height,
            "reason": self.reason,
            "blocks": self.blocks,
        }


def verify_chain(blocks: Sequence[Block]) -> VerificationReport:
    prev = ZERO_HASH
    seen: set[str] = set()
    for index, block in enumerate(blocks):
        problem = None
        if block.height != index:
            problem = f"height {block.height} at position {index}"
        elif block.prev_hash != prev:
            problem = "prevHash does not match previous blockHash"
        elif block.compute_hash() != block.block_hash:
            problem = "blockHash does not match contents"
        elif index > 0 and not block.txs:
            problem = "empty non-genesis block"
        elif index == 0 and block.txs:
            problem = "genesis block carries transactions"
        else:
            for tx in block.txs:
                if tx.tx_id in seen:
                    problem = f"duplicate txId {tx.tx_id}"
                    break
                seen.add(tx.tx_id)
        if problem:
            return VerificationReport(False, index, problem, len(blocks))
        prev = block.block_hash
    return VerificationReport(True, None, "", len(blocks))


def encode_record(block: Block) -> bytes:
    payload = block.to_bytes()
    return _LEN.pack(len(payload)) + payload


def decode_log(data: bytes) -> tuple[list[Block], VerificationReport | None]:
    """Split a block log into blocks; stops at the first undecodable record."""
    blocks: list[Block] = []
    offset = 0
    while offset < len(data):
        height = len(blocks)
        if offset + _LEN.size > len(data):
            return blocks, VerificationReport(False, height, "truncated length prefix", height)
        (size,) = _LEN.unpack_from(data, offset)
        offset += _LEN.size
        if offset + size > len(data):
            return blocks, VerificationReport(False, height, "truncated block record", height)
        raw = data[offset : offset + size]
        offset += size
        try:
            blocks.append(Block.from_bytes(raw))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            return blocks, VerificationReport(False, height, f"undecodable block record: {exc}", height)
    return blocks, None


def verify_log(data: bytes) -> VerificationReport:
    blocks, failure = decode_log(data)
    report = verify_chain(blocks)
    if not report.valid:
        return report
    if failure is not None:
        return VerificationReport(False, failure.first_bad_height, failure.reason, len(blocks) + 1)
    if not blocks:
        return VerificationReport(False, 0, "missing genesis block", 0)
    return report


def verify_log_file(path: str | os.PathLike) -> VerificationReport:
    return verify_log(Path(path).read_bytes())


def load_log_file(path: str | os.PathLike) -> list[Block]:
    data = Path(path).read_bytes()
    report = verify_log(data)
    if not report.valid:
        raise LedgerCorruptError(
            f"{path}: block {report.first_bad_height}: {report.reason}", report.first_bad_height
        )
    return decode_log(data)[0]


def apply_writes(state: dict[str, bytes], writes: Iterable[tuple[str, bytes | None]]) -> None:
    for key, value in writes:
        if value is None:
            state.pop(key, None)
        else:
            state[key] = value


def replay(blocks: Iterable[Block]) -> dict[str, bytes]:
    """World state obtained by applying every committed write set from genesis."""
    state: dict[str, bytes] = {}
    for block in blocks:
        for tx in block.txs:
            apply_writes(state, tx.writes)
    return state


def state_digest(state: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for key in sorted(state, key=lambda k: k.encode("utf-8")):
        value = state[key]
        h.update(_LEN.pack(len(key.encode())) + key.encode() + _LEN.pack(len(value)) + value)
    return h.hexdigest()
