"""Contract base class and the execution context handed to contract code."""
from __future__ import annotations

import inspect
from typing import Callable, ClassVar, Mapping, Protocol

from edgeledger.errors import ReadOnlyViolationError, UnknownOperationError, ValidationError


def transaction(name: str, *, submit: bool = True):
    """Register a contract method as a ledger operation called ``name``.

    ``submit=False`` marks a query: it may only be evaluated and must not write.
    """

    def mark(fn):
        fn.__ledger_op__ = (name, submit)
        return fn

    return mark


def query(name: str):
    return transaction(name, submit=False)


class Contract:
    name: ClassVar[str] = ""
    _operations: ClassVar[dict[str, tuple[str, bool]]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        ops: dict[str, tuple[str, bool]] = {}
        for klass in reversed(cls.__mro__):
            for attr, value in vars(klass).items():
                marker = getattr(value, "__ledger_op__", None)
                if marker is not None:
                    ops[marker[0]] = (attr, marker[1])
        cls._operations = ops

    @classmethod
    def operation_names(cls) -> dict[str, bool]:
        return {name: submit for name, (_, submit) in cls._operations.items()}

    def resolve(self, operation: str) -> tuple[Callable[..., str], bool]:
        try:
            attr, submit = self._operations[operation]
        except KeyError:
            raise UnknownOperationError(f"{self.name}: unknown operation {operation!r}") from None
        return getattr(self, attr), submit


class StateView(Protocol):
    def get(self, key: str) -> bytes | None: ...

    def range(self, prefix: str) -> list[tuple[str, bytes]]: ...


class MapView:
    """A committed snapshot, optionally overlaid with not-yet-committed writes."""

    def __init__(self, base: Mapping[str, bytes], overlay: Mapping[str, bytes | None] | None = None):
        self._base = base
        self._overlay = overlay or {}

    def get(self, key: str) -> bytes | None:
        if key in self._overlay:
            return self._overlay[key]
        return self._base.get(key)

    def range(self, prefix: str) -> list[tuple[str, bytes]]:
        merged = {k: v for k, v in self._base.items() if k.startswith(prefix)}
        for k, v in self._overlay.items():
            if k.startswith(prefix):
                if v is None:
                    merged.pop(k, None)
                else:
                    merged[k] = v
        return sorted(merged.items(), key=lambda kv: kv[0].encode("utf-8"))


def invoke(contract: Contract, ctx: "TxContext", operation: str, args: list[str] | tuple[str, ...]) -> str:
    fn, submit = contract.resolve(operation)
    if ctx.read_only and submit:
        raise ReadOnlyViolationError(f"{contract.name}.{operation} is a transaction, not a query")
    try:
        inspect.signature(fn).bind(ctx, *args)
    except TypeError:
        raise ValidationError(f"{contract.name}.{operation}: wrong number of arguments ({len(args)})") from None
    return fn(ctx, *args)


class TxContext:
    """What contract code sees: keyed reads/writes, prefix scans, tx metadata."""

    def __init__(
        self,
        view: StateView,
        registry: Mapping[str, Contract],
        *,
        tx_id: str = "",
        timestamp_ms: int | None = None,
        read_only: bool = False,
    ):
        self._view = view
        self._registry = registry
        self._writes: dict[str, bytes | None] = {}
        self.tx_id = tx_id
        self.timestamp_ms = timestamp_ms
        self.read_only = read_only

    def get_state(self, key: str) -> bytes | None:
        if key in self._writes:
            return self._writes[key]
        return self._view.get(key)

    def get_range(self, prefix: str) -> list[tuple[str, bytes]]:
        if not self._writes:
            return self._view.range(prefix)
        return MapView(dict(self._view.range(prefix)), self._writes).range(prefix)

    def put_state(self, key: str, value: bytes) -> None:
        if self.read_only:
            raise ReadOnlyViolationError(f"write to {key!r} during evaluation")
        if not isinstance(value, bytes):
            raise TypeError("state values are bytes")
        value.decode("utf-8")
        self._writes[key] = value

    def del_state(self, key: str) -> None:
        if self.read_only:
            raise ReadOnlyViolationError(f"delete of {key!r} during evaluation")
        self._writes[key] = None

    def invoke(self, contract: str, operation: str, *args: str) -> str:
        """Call another contract's operation inside this transaction."""
        try:
            target = self._registry[contract]
        except KeyError:
            raise UnknownOperationError(f"unknown contract {contract!r}") from None
        return invoke(target, self, operation, args)

    def write_set(self) -> tuple[tuple[str, bytes | None], ...]:
        return tuple(sorted(self._writes.items(), key=lambda kv: kv[0].encode("utf-8")))
