"""Exception types raised across the package."""


class CmdpError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CmdpError, ValueError):
    """Inputs have inconsistent shapes or out-of-range values."""


class MultipleRecurrentClasses(CmdpError):
    """The support graph has more than one closed communicating class."""

    def __init__(self, classes):
        self.classes = [sorted(int(s) for s in c) for c in classes]
        super().__init__(f"model is not unichain: closed classes {self.classes}")


class SingularSystemError(CmdpError):
    """A linear system that is full rank for unichain models was singular."""


class Infeasible(CmdpError):
    """No occupancy measure satisfies the cost constraint."""


class NonFiniteUpdate(CmdpError, FloatingPointError):
    """A primal or dual update produced NaN or Inf."""


class UnknownEnvironment(CmdpError, KeyError):
    pass


class GenerationFailed(CmdpError):
    pass


class DegenerateFit(CmdpError, ValueError):
    pass
