"""Exception types shared across the package."""


class QpdeconError(Exception):
    """Base class for all package-specific errors."""


class DegenerateData(QpdeconError):
    """All observations identical; no grid can be built."""


class OutOfRange(QpdeconError):
    """A datum falls outside the histogram bin range."""


class IndexOutOfGrid(QpdeconError):
    """A constraint anchor index lies outside the grid."""


class EmptySupport(QpdeconError):
    """A support restriction keeps fewer than two grid points."""


class GridTooSmall(QpdeconError):
    """The grid has too few points for the requested operator."""


class DimensionMismatch(QpdeconError):
    """Arrays passed to an operation have incompatible shapes."""


class SingularMatrix(QpdeconError):
    """A linear system could not be factorized even after jitter."""


class SolverFailure(QpdeconError):
    """The QP solver did not reach an optimal status."""


class AllZero(QpdeconError):
    """A vector has no positive entry left to rescale."""


class InvalidProbability(QpdeconError):
    """A probability level lies outside (0, 1)."""


class NumericalOverflow(QpdeconError):
    """A Fourier-domain integrand overflowed (bandwidth too small)."""


class SelectionRequired(QpdeconError):
    """Graphical smoothing selection was requested; a human must pick a value.

    Carries the diagnostic curves so a caller can render them before
    aborting.
    """

    def __init__(self, message, scree=None, sure=None):
        super().__init__(message)
        self.scree = scree
        self.sure = sure
