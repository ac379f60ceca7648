"""Roughness penalties for the deconvolution objective.

Two penalty kinds are supported: squared second differences of the
density (curvature), and squared distance to a moment-matched Gaussian
reference density.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, GridTooSmall

REG_D2 = "d2"
REG_GAUSS = "gauss"
REG_AUTO = "auto"


def second_difference_matrix(K):
    """Second-difference operator with rows (1, -2, 1).

    Parameters
    ----------
    K : int
        Dimension of the density vector (at least 3).

    Returns
    -------
    ndarray of shape (K - 2, K)

    Raises
    ------
    GridTooSmall
        If K < 3.
    """
    if K < 3:
        raise GridTooSmall(f"second differences need K >= 3, got K={K}")
    D = np.zeros((K - 2, K))
    for r in range(K - 2):
        D[r, r] = 1.0
        D[r, r + 1] = -2.0
        D[r, r + 2] = 1.0
    return D


def gaussian_reference(data, noise, grid):
    """Moment-matched Gaussian reference density on the grid.

    The mean is the sample mean of the observations; the variance is the
    sample variance (n - 1 denominator) minus the noise variance, floored
    at delta^2 so the reference stays proper when the difference is not
    positive.  The vector is the plain normal pdf at the grid points, not
    renormalized to the grid.

    Returns
    -------
    ndarray of length grid.K
    """
    y = np.asarray(data, dtype=float)
    if y.size < 2:
        raise DimensionMismatch("reference density needs at least 2 observations")
    mean = float(np.mean(y))
    var = float(np.var(y, ddof=1)) - noise.variance
    floor = grid.delta * grid.delta
    var = max(var, floor)
    x = grid.points
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


@dataclass(frozen=True)
class Regularizer:
    """Penalty kind plus its data (the reference vector for ``gauss``)."""

    kind: str
    reference: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (REG_D2, REG_GAUSS):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == REG_GAUSS and self.reference is None:
            raise ValueError("gaussian-reference regularizer needs a reference vector")

    def quad_matrix(self, dim, delta):
        """Matrix R with penalty f'Rf (+ linear/constant parts for gauss).

        The curvature penalty is the summed squared discrete second
        derivative, so the stencil rows carry a 1/delta^2 factor and R
        picks up 1/delta^4.  This keeps the penalty (and the weight that
        multiplies it) on a scale independent of the grid resolution.
        """
        if self.kind == REG_D2:
            D = second_difference_matrix(dim)
            return (D.T @ D) / float(delta) ** 4
        return np.eye(dim)

    def linear_target(self, dim):
        """Vector q such that the penalty is ||f - q||^2 up to form."""
        if self.kind == REG_D2:
            return np.zeros(dim)
        if self.reference.shape != (dim,):
            raise DimensionMismatch(
                f"reference has shape {self.reference.shape}, expected ({dim},)")
        return self.reference


def penalty_value(reg, f):
    """Evaluate the raw penalty Q(f) for a density vector.

    ||D2 f||^2 for the curvature kind, ||f - f_ref||^2 for the Gaussian
    reference kind.  This is the plain stencil value; the objective uses
    the grid-aware ``effective_penalty``.
    """
    f = np.asarray(f, dtype=float)
    if reg.kind == REG_D2:
        D = second_difference_matrix(f.size)
        r = D @ f
        return float(r @ r)
    q = reg.linear_target(f.size)
    r = f - q
    return float(r @ r)


def effective_penalty(reg, f, delta):
    """Penalty term as it enters the objective, f'Rf - 2q'f + q'q.

    Equals penalty_value / delta^4 for the curvature kind (squared
    discrete second derivative on the grid) and plain penalty_value for
    the reference kind, matching ``Regularizer.quad_matrix``.
    """
    if reg.kind == REG_D2:
        return penalty_value(reg, f) / float(delta) ** 4
    return penalty_value(reg, f)
