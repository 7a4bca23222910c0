"""Exception types raised by bicens."""


class BicensError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(BicensError, ValueError):
    """An argument is outside the domain an operation accepts."""


class ContractViolationError(BicensError, ValueError):
    """A precondition on a coefficient vector (typically feasibility) failed."""


class NonFiniteLikelihoodError(BicensError, ArithmeticError):
    """A realized quadrant probability fell below the probability floor.

    Attributes
    ----------
    index : int
        Position of the first offending observation in the dataset.
    probability : float
        The offending probability value.
    """

    def __init__(self, index, probability):
        self.index = int(index)
        self.probability = float(probability)
        super().__init__(
            f"observation {self.index}: realized probability "
            f"{self.probability:.3g} is below the floor"
        )


class InfeasibleDataError(BicensError):
    """Some observation has zero probability for every feasible coefficient vector."""

    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        super().__init__(
            "observations with identically zero probability over the "
            f"feasible set: {self.indices[:10]}"
            + (" ..." if len(self.indices) > 10 else "")
        )


class StallError(BicensError):
    """The step-halving line search exhausted its halvings without improvement."""
