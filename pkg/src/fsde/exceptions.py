"""Exception types shared across the package."""


class FsdeError(Exception):
    """Base class for all errors raised by this package."""


class FsdeValueError(FsdeError, ValueError):
    """An argument or configuration violates a documented precondition."""


class MlOverflowError(FsdeError, OverflowError):
    """A Mittag-Leffler value exceeds the double-precision range.

    Raised instead of silently returning ``inf`` so that weighted norms
    cannot be poisoned by non-finite weights.
    """


class BlowUpError(FsdeError, ArithmeticError):
    """A simulated path became non-finite.

    Attributes
    ----------
    path, node : int
        First offending path index and grid node.
    """

    def __init__(self, message, path=None, node=None):
        super().__init__(message)
        self.path = path
        self.node = node


class ConvergenceError(FsdeError, RuntimeError):
    """An iterative procedure exhausted its budget without converging."""
