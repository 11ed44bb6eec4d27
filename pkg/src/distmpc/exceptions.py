"""Exception types raised by distmpc."""


class ContractError(ValueError):
    """An argument violates a documented shape or range contract."""


class NumericalError(ArithmeticError):
    """A solver met a non-finite objective or gradient."""


class InfeasibleError(ValueError):
    """A constraint set is empty."""


class UndefinedRatioError(ZeroDivisionError):
    """A cost ratio has a zero denominator."""


class SolverFailure(RuntimeError):
    """A solve failed inside a closed-loop run.

    Carries the agent and time step where it happened so drivers can report
    them.
    """

    def __init__(self, message, agent=None, step=None):
        super().__init__(message)
        self.agent = agent
        self.step = step
