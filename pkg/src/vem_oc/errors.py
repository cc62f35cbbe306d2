"""Exception hierarchy for the solver."""


class VemError(Exception):
    """Base class for all solver errors."""


class ProblemDefinitionError(VemError):
    """The problem callbacks or dimensions are inconsistent."""


class EvaluationError(VemError):
    """A callback produced a non-finite value."""


class InvalidGridError(VemError, ValueError):
    pass


class AssemblyError(VemError):
    """A transition table or kernel entry came out non-finite."""


class ControllabilityError(VemError):
    """The terminal-multiplier matrix is singular or badly conditioned."""


class MultiplierSolveError(VemError):
    """The KKT multiplier system could not be solved."""

    def __init__(self, message, condition=None, active=None):
        super().__init__(message)
        self.condition = condition
        self.active = active


class ActiveSetError(MultiplierSolveError):
    """The working-set iteration hit its cap without settling."""


class PropagationError(VemError):
    pass


class StiffnessError(VemError):
    """Step size underflow in the variation-time integrator."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class InfeasibleInitError(VemError):
    """The initial trajectory violates dynamics, terminal or path constraints."""
