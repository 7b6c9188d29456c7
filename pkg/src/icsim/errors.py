"""Exception hierarchy shared by all modules."""


class IcsimError(Exception):
    """Base class for all package-specific errors."""


class ZeroMassAtom(IcsimError):
    """A density was requested at a point of zero probability."""


class MismatchedSupport(IcsimError):
    """Two distributions do not live on the same support universe."""


class OutOfRange(IcsimError):
    """A numeric argument fell outside its admissible range."""


class AlphabetMismatch(IcsimError):
    """A protocol and a source disagree on the input alphabets."""


class SupportViolation(IcsimError):
    """A conditional law places mass where its conditioning event has none."""


class TailMassViolated(IcsimError):
    """Declared spectrum intervals leak more mass than was budgeted."""


class InfeasibleBudget(IcsimError):
    """A communication budget cannot meet the requested error target."""


class ZeroVariance(IcsimError):
    """A second-order prediction was requested for a degenerate spectrum."""


class ParameterRange(IcsimError):
    """A bound evaluator was called with parameters outside its domain."""


class TooLarge(IcsimError):
    """An exact enumeration would exceed the configured size cap."""
