"""Exception types shared across the solvers."""


class DomainError(ValueError):
    """An argument lies outside the domain of a model formula."""


class NoRootInBracket(RuntimeError):
    """Residual signs at the bracket ends do not enclose a root."""


class InfeasibleTarget(ValueError):
    """The requested constraint level cannot be met by any policy."""


class NonConvergence(RuntimeError):
    """An iterative search hit its iteration cap."""


class NoRootPair(RuntimeError):
    """A threshold equation has fewer than two roots."""


class GuardrailExceeded(ValueError):
    """The brute-force oracle was asked to handle too many states."""
