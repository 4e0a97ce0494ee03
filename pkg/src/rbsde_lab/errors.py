"""Exception hierarchy shared by every module."""

from __future__ import annotations


class RBSDEError(Exception):
    """Base class for all errors raised by rbsde_lab."""


class InvalidParameter(RBSDEError, ValueError):
    pass


class SliceMismatch(RBSDEError, ValueError):
    pass


class LatticeMismatch(RBSDEError, ValueError):
    pass


class DomainError(RBSDEError, ValueError):
    pass


class WrongClass(RBSDEError, ValueError):
    """The generator's declared assumption class does not fit the operation."""


class TooLarge(RBSDEError, ValueError):
    pass


class ScenarioError(RBSDEError, ValueError):
    """Scenario data violates its invariants (e.g. L_T > xi at some node)."""


class SolverError(RBSDEError, RuntimeError):
    """Failure inside the backward sweep. ``node`` is ``(i, j)`` when known."""

    clause = "solver"

    def __init__(self, message: str, node: tuple[int, int] | None = None):
        self.node = node
        where = f", node={node}" if node is not None else ""
        message = f"{message} [clause={self.clause}{where}]"
        super().__init__(message)


class RootNotBracketed(SolverError):
    clause = "root-not-bracketed"


class MaxIterations(SolverError):
    clause = "max-iterations"


class ContractionViolated(SolverError):
    clause = "contraction-guard"


class NonFiniteValue(SolverError):
    clause = "nonfinite-value"
