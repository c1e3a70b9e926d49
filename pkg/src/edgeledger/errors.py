"""Exception hierarchy shared by the ledger, the contracts and the gateway."""


class LedgerError(Exception):
    """Base class for everything raised by the ledger pipeline."""


class UnknownOperationError(LedgerError):
    """The contract or operation is not registered."""


class ReadOnlyViolationError(LedgerError):
    """A query attempted to write, or a transaction was evaluated."""


class LedgerUnavailableError(LedgerError):
    """The ledger is closed or could not be opened."""


class LedgerCorruptError(LedgerUnavailableError):
    """The persisted block log failed verification."""

    def __init__(self, message: str, height: int | None = None):
        super().__init__(message)
        self.height = height


class ReplayMismatchError(LedgerError):
    """Re-executing a logged transaction produced different writes."""


class ContractError(LedgerError):
    """A contract rejected the transaction; no state was changed."""


class ValidationError(ContractError):
    pass


class NotFoundError(ContractError):
    pass


class DuplicateError(ContractError):
    pass


class NoEligibleServerError(NotFoundError):
    """Selection filtered every candidate server away."""
