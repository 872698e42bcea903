"""Exception types raised across the package."""


class RmdpError(Exception):
    """Base class for all package errors."""


class ModelError(RmdpError, ValueError):
    """Invalid model or configuration input."""


class MissingColumn(ModelError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing column '{column}'{where}")


class NonStochasticRow(ModelError):
    def __init__(self, state, action, residual):
        self.state = state
        self.action = action
        self.residual = residual
        super().__init__(
            f"transition row (state={state}, action={action}) sums to 1{residual:+.3e}")


class NegativeProbability(ModelError):
    def __init__(self, state, action, next_state, value):
        self.state, self.action, self.next_state, self.value = state, action, next_state, value
        super().__init__(
            f"negative probability {value} for ({state}, {action}) -> {next_state}")


class BadDiscount(ModelError):
    def __init__(self, discount):
        self.discount = discount
        super().__init__(f"discount must lie strictly inside (0, 1), got {discount}")


class NegativeBudget(ModelError):
    def __init__(self, budget):
        self.budget = budget
        super().__init__(f"budget must be nonnegative, got {budget}")


class DegenerateSupport(ModelError):
    def __init__(self, msg="empty support"):
        super().__init__(msg)


class BadCapacity(ModelError):
    def __init__(self, capacity, msg=None):
        self.capacity = capacity
        super().__init__(msg or f"invalid inventory capacity {capacity}")


class BadBracket(RmdpError, ValueError):
    def __init__(self, u_min, u_max):
        self.u_min, self.u_max = u_min, u_max
        super().__init__(f"bisection bracket is empty: u_min={u_min} > u_max={u_max}")


class UnsupportedRectangularity(RmdpError, ValueError):
    pass


class SolverError(RmdpError, RuntimeError):
    """Raised when a numerical procedure fails to deliver a result."""


class MaxIterExceeded(SolverError):
    def __init__(self, msg, result=None):
        self.result = result
        super().__init__(msg)


class NonConvergence(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class NumericalFailure(SolverError):
    pass
