class RematError(Exception):
    """Base class for scheduling errors."""


class InfeasibleError(RematError):
    """No schedule satisfies the constraints."""


class BudgetError(InfeasibleError, ValueError):
    """The memory budget cannot even hold the constant overhead."""


class SolverTimeout(RematError):
    """The time limit expired before any feasible schedule was found."""


class NumericalError(RematError):
    """The LP backend reported a numerical failure."""
