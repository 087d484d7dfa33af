"""Exception types raised by the solvers and loaders."""


class InvalidInput(ValueError):
    """Problem data violates a structural requirement (shape, sign, finiteness)."""


class InstanceFormatError(InvalidInput):
    """An instance document could not be parsed; ``field`` names the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"field '{field}': {message}")


class NumericalOverflow(ArithmeticError):
    """An entry of the intermediate plan overflows double precision."""


class NumericalFailure(RuntimeError):
    """A solver could not make progress (line-search collapse, zero row mass...)."""


class Infeasible(ValueError):
    """The linear program has an empty feasible set."""
