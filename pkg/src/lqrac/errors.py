"""Exception types raised by the solvers, oracles, and learners."""


class LqracError(Exception):
    """Base class for all package-specific errors."""


class AsymmetricInput(LqracError):
    """A matrix that must be symmetric violates the symmetry tolerance."""


class DimensionMismatch(LqracError):
    """Vector/matrix dimensions are inconsistent with the declared shapes."""


class ConvergenceFailure(LqracError):
    """An iterative solver exhausted its iteration budget."""


class UnstableMatrix(LqracError):
    """Spectral radius >= 1 where a Schur-stable matrix is required."""


class NotControllable(LqracError):
    """The pair (A, B) fails the controllability rank test."""


class UnstablePolicy(LqracError):
    """A feedback gain with rho(A - B K) >= 1 was passed where the
    closed loop must be mean-square stable (the average cost is infinite)."""


class UnstableInitialPolicy(UnstablePolicy):
    """Training started from an unstable gain; the method requires a
    stabilizing initial policy."""


class NumericalOverflow(LqracError):
    """The simulated state norm exceeded the divergence cap; the policy in
    force is destabilizing the closed loop."""


class InvalidSchedule(LqracError):
    """A primal-dual step-size schedule violates one of its admissibility
    inequalities; carries the first violated condition and iteration."""

    def __init__(self, condition: str, t: int):
        self.condition = condition
        self.t = t
        super().__init__(f"schedule condition {condition!r} violated at t={t}")


class EpochBudgetExceeded(LqracError):
    """A multi-epoch critic run hit its total sample cap."""


class GuardViolation(LqracError):
    """An exact-gradient run violated a guaranteed invariant (spectral
    radius envelope or cost bound); indicates a bug, not noise."""
