"""Exception types shared across the package."""


class UsageError(ValueError):
    """A caller violated an operation's precondition or supplied bad config."""


class BudgetExceededError(UsageError):
    """Predicted simulation cost exceeds the configured budget cap."""


class NonFiniteError(RuntimeError):
    """A non-finite value surfaced inside an estimator; the whole call aborts."""


class LevelCapError(RuntimeError):
    """Level scan hit the cap before the accuracy target was met."""

    def __init__(self, message: str, max_level: int, best_bound: float):
        super().__init__(message)
        self.max_level = max_level
        self.best_bound = best_bound


class StabilityError(UsageError):
    """Explicit finite-difference step size violates the stability bound."""

    def __init__(self, message: str, required_steps: int):
        super().__init__(message)
        self.required_steps = required_steps
