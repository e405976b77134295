"""Shared exception types with CLI exit-code mapping."""


class ContractViolation(ValueError):
    """A caller broke an operation precondition (bad shapes, stale cache)."""


class NumericalError(RuntimeError):
    """Non-finite values appeared where finite math was required."""


class PolicyFault(NumericalError):
    """The policy network emitted non-finite outputs; the run must abort."""
