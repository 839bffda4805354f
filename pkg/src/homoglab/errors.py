"""Exception types shared across the package."""


class HomoglabError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HomoglabError, ValueError):
    pass


class NotCoerciveError(HomoglabError):
    """Raised when a compressed operator fails the coercivity check."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NotAdmissibleError(HomoglabError):
    pass


class InadmissibleKernelError(NotAdmissibleError):
    """Kernel violates the contraction bound needed for 1 - k* to be coercive."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class IllPosedAtFrequencyError(HomoglabError):
    def __init__(self, message, frequency=None):
        super().__init__(message)
        self.frequency = frequency


class NotReducibleError(HomoglabError):
    pass


class ConfigError(HomoglabError):
    """Invalid experiment configuration; ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
