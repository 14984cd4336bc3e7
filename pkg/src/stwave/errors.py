"""Exception types shared across the package."""


class StwaveError(Exception):
    pass


class ParameterError(StwaveError, ValueError):
    """Invalid or incompatible parameters."""


class DomainError(StwaveError, ValueError):
    """Evaluation point outside the admissible domain."""


class PreconditionError(StwaveError, ValueError):
    """Input violates a documented precondition."""


class DivergenceError(StwaveError, ArithmeticError):
    """An integral or iteration failed to converge."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history


class SingularSectionError(StwaveError, ArithmeticError):
    def __init__(self, msg, sigma_min):
        super().__init__(msg)
        self.sigma_min = sigma_min
