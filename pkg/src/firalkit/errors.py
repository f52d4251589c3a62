"""Exception types shared across the toolkit."""


class NumericalError(Exception):
    """Base class for numerical failures (CLI exit code 2)."""


class NotPositiveDefiniteError(NumericalError):
    """A Cholesky pivot was not positive; the matrix is not SPD."""


class BreakdownError(NumericalError):
    """CG encountered p'Ap <= 0, so the operator is not SPD."""


class ConvergenceError(NumericalError):
    """An iterative eigenvalue routine failed to converge."""


class SingularMatrixError(NumericalError):
    """A matrix stayed singular even after ridge repair."""


class DenominatorNonpositiveError(NumericalError):
    """A rank-one inverse update would destroy positive definiteness."""


class SizeCapError(ValueError):
    """A dense oracle path was asked to exceed its size cap."""


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""
