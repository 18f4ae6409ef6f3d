"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class AfemError(Exception):
    """Base class for all package errors."""


class ParseError(AfemError):
    pass


class NonConforming(AfemError):
    def __init__(self, edge, msg: str = ""):
        self.edge = edge
        super().__init__(msg or f"hanging node on edge {edge}")


class MatchingViolation(AfemError):
    def __init__(self, tri, other, msg: str = ""):
        self.tri = tri
        self.other = other
        super().__init__(
            msg or f"shared edge is refinement edge of {tri} but not of {other}")


class AlreadyBisected(AfemError):
    pass


class PrecisionExhausted(AfemError):
    """Midpoint no longer representable at the fixed dyadic scale."""


class NotAPopulation(AfemError):
    def __init__(self, person=None, msg: str = ""):
        self.person = person
        super().__init__(msg or f"person {person} has a parent outside the set")


class NotAMidpoint(AfemError):
    pass


class NotNested(AfemError):
    pass


class ChainNotFound(AfemError):
    pass


class CannotPlace(AfemError):
    pass


class DegenerateElement(AfemError):
    pass


class NoConvergence(AfemError):
    def __init__(self, max_iters: int, residual: float):
        self.max_iters = max_iters
        self.residual = residual
        super().__init__(
            f"CG did not converge in {max_iters} iterations "
            f"(relative residual {residual:.3e})")


class GuaranteeViolated(AfemError):
    pass


class BudgetExceeded(AfemError):
    pass
