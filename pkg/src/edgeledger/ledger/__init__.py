"""Minimal permissioned ledger: hash-chained blocks over a key-value world state."""
from edgeledger.ledger.chain import (
    ZERO_HASH,
    Block,
    LedgerTransaction,
    VerificationReport,
    decode_log,
    load_log_file,
    replay,
    state_digest,
    verify_chain,
    verify_log,
    verify_log_file,
)
from edgeledger.ledger.contract import Contract, MapView, TxContext, query, transaction
from edgeledger.ledger.core import DEFAULT_BLOCK_TIMEOUT_MS, DEFAULT_MAX_TXS, Ledger, reexecute

__all__ = [
    "ZERO_HASH",
    "Block",
    "Contract",
    "DEFAULT_BLOCK_TIMEOUT_MS",
    "DEFAULT_MAX_TXS",
    "Ledger",
    "LedgerTransaction",
    "MapView",
    "TxContext",
    "VerificationReport",
    "decode_log",
    "load_log_file",
    "query",
    "reexecute",
    "replay",
    "state_digest",
    "transaction",
    "verify_chain",
    "verify_log",
    "verify_log_file",
]
