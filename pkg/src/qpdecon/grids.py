"""Observation grid, histogram density, noise models, convolution matrix.

The estimation pipeline discretizes the observed sample onto an equally
spaced grid, turns the sample into a histogram density on that grid, and
represents the additive-noise convolution as a K x K matrix acting on
densities evaluated at the grid points.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .errors import DegenerateData, DimensionMismatch, OutOfRange

MAX_BIN_COUNT = 200


@dataclass(frozen=True)
class Grid:
    """Equally spaced evaluation grid x_1 < x_2 < ... < x_K.

    Parameters
    ----------
    x1, xK : float
        First and last grid point.
    K : int
        Number of grid points (at least 2).
    """

    x1: float
    xK: float
    K: int
    delta: float = field(init=False)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"grid needs at least 2 points, got K={self.K}")
        if not self.xK > self.x1:
            raise ValueError(f"grid endpoints must satisfy x1 < xK, got [{self.x1}, {self.xK}]")
        object.__setattr__(self, "delta", (self.xK - self.x1) / (self.K - 1))

    @property
    def points(self):
        """Grid points as an array of length K, spaced exactly by delta."""
        return self.x1 + self.delta * np.arange(self.K)

    @property
    def lower_edge(self):
        """Left boundary of the first bin, x1 - delta/2."""
        return self.x1 - 0.5 * self.delta

    @property
    def upper_edge(self):
        """Right boundary of the last bin, xK + delta/2."""
        return self.xK + 0.5 * self.delta


@dataclass(frozen=True)
class HistogramDensity:
    """Histogram of the observed sample, scaled to integrate to one.

    heights[j] = counts[j] / (n * delta), so delta * sum(heights) = 1.
    """

    grid: Grid
    heights: np.ndarray
    counts: np.ndarray
    n: int

    def __post_init__(self):
        if self.heights.shape != (self.grid.K,):
            raise DimensionMismatch(
                f"heights has shape {self.heights.shape}, expected ({self.grid.K},)")
        if np.any(self.heights < 0):
            raise ValueError("histogram heights must be nonnegative")
        total = self.grid.delta * float(np.sum(self.heights))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"histogram mass is {total:.17g}, expected 1 within 1e-12")


def default_bin_count(n):
    """Default number of grid points for a sample of size n.

    Grows like 3 * sqrt(n) and is capped at 200; never below 3.

    Parameters
    ----------
    n : int
        Sample size (positive).

    Returns
    -------
    int
    """
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    return max(3, round(min(MAX_BIN_COUNT, 3.0 * math.sqrt(n))))


def build_grid(data, K):
    """Build the equally spaced grid spanning the observed sample.

    The first grid point is min(data) and the last is max(data).

    Parameters
    ----------
    data : array_like
        Observed sample.
    K : int
        Number of grid points.

    Returns
    -------
    Grid

    Raises
    ------
    DegenerateData
        If all observations are identical.
    """
    y = np.asarray(data, dtype=float)
    if y.size == 0:
        raise DegenerateData("cannot build a grid from an empty sample")
    lo = float(np.min(y))
    hi = float(np.max(y))
    if not hi > lo:
        raise DegenerateData(f"all {y.size} observations equal {lo}; no grid span")
    return Grid(x1=lo, xK=hi, K=int(K))


def histogram(data, grid):
    """Bin the sample into the grid's cells and scale to a density.

    Bin j is the half-open interval [x_j - delta/2, x_j + delta/2); the
    last bin is closed on the right so max(data) is included.

    Parameters
    ----------
    data : array_like
        Observed sample.
    grid : Grid

    Returns
    -------
    HistogramDensity

    Raises
    ------
    OutOfRange
        If any datum falls outside the bin range.
    """
    y = np.asarray(data, dtype=float)
    if y.size == 0:
        raise DegenerateData("cannot histogram an empty sample")
    pos = (y - grid.x1) / grid.delta
    idx = np.floor(pos + 0.5).astype(int)
    # Closed right edge of the top bin.
    at_edge = idx == grid.K
    idx[at_edge & (y <= grid.upper_edge)] = grid.K - 1
    bad = (idx < 0) | (idx > grid.K - 1)
    if np.any(bad):
        worst = y[bad][0]
        raise OutOfRange(
            f"{int(np.sum(bad))} observation(s) outside "
            f"[{grid.lower_edge:.6g}, {grid.upper_edge:.6g}], e.g. {worst:.6g}")
    counts = np.bincount(idx, minlength=grid.K).astype(float)
    n = y.size
    heights = counts / (n * grid.delta)
    return HistogramDensity(grid=grid, heights=heights, counts=counts, n=n)


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianNoise:
    """Zero-mean Gaussian noise with variance sigma2."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError(f"gaussian noise needs sigma2 > 0, got {self.sigma2}")

    @property
    def variance(self):
        return self.sigma2

    @property
    def std(self):
        return math.sqrt(self.sigma2)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(-0.5 * u * u / self.sigma2) / math.sqrt(2.0 * math.pi * self.sigma2)

    def cf(self, omega):
        """Characteristic function exp(-sigma2 * omega^2 / 2)."""
        omega = np.asarray(omega, dtype=float)
        return np.exp(-0.5 * self.sigma2 * omega * omega)

    def sample(self, rng, n):
        return rng.normal(0.0, self.std, size=n)


@dataclass(frozen=True)
class LaplaceNoise:
    """Zero-mean Laplace noise with the given scale parameter."""

    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"laplace noise needs scale > 0, got {self.scale}")

    @property
    def variance(self):
        return 2.0 * self.scale * self.scale

    @property
    def std(self):
        return math.sqrt(self.variance)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(-np.abs(u) / self.scale) / (2.0 * self.scale)

    def cf(self, omega):
        """Characteristic function 1 / (1 + scale^2 omega^2)."""
        omega = np.asarray(omega, dtype=float)
        return 1.0 / (1.0 + self.scale * self.scale * omega * omega)

    def sample(self, rng, n):
        return rng.laplace(0.0, self.scale, size=n)


@dataclass(frozen=True)
class TabulatedNoise:
    """Noise density given by a table of (u, density) pairs.

    Values between table points are linearly interpolated; the density is
    zero outside the tabulated range.  The table is renormalized so the
    trapezoid integral is exactly one.
    """

    u: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if u.ndim != 1 or u.shape != d.shape or u.size < 2:
            raise DimensionMismatch("noise table needs matching 1-d u and density columns")
        if np.any(np.diff(u) <= 0):
            raise ValueError("noise table abscissae must be strictly increasing")
        if np.any(d < 0):
            raise ValueError("noise table densities must be nonnegative")
        total = float(np.trapezoid(d, u))
        if not 0.9 < total < 1.1:
            raise ValueError(f"noise table integrates to {total:.4g}, expected about 1")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "density", d / total)

    @property
    def variance(self):
        m1 = float(np.trapezoid(self.u * self.density, self.u))
        m2 = float(np.trapezoid(self.u * self.u * self.density, self.u))
        return m2 - m1 * m1

    @property
    def std(self):
        return math.sqrt(self.variance)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.interp(u, self.u, self.density, left=0.0, right=0.0)

    def cf(self, omega):
        """Characteristic function by trapezoid integration of the table."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        phase = np.exp(1j * omega[:, None] * self.u[None, :])
        vals = np.trapezoid(phase * self.density[None, :], self.u, axis=1)
        return vals

    def sample(self, rng, n):
        """Inverse-cdf draws from the piecewise-linear density."""
        mids = 0.5 * (self.density[:-1] + self.density[1:]) * np.diff(self.u)
        cdf = np.concatenate([[0.0], np.cumsum(mids)])
        cdf /= cdf[-1]
        return np.interp(rng.uniform(size=n), cdf, self.u)


def convolution_matrix(grid, noise):
    """K x K matrix mapping a latent density on the grid to the blurred one.

    Entry (i, j) is delta * f_Z(x_i - x_j), so the product C f approximates
    the convolution (f * f_Z) evaluated at the grid points.  Entries are
    computed per lag, making the Toeplitz structure exact in floating point.

    Parameters
    ----------
    grid : Grid
    noise : noise model with a ``pdf`` method

    Returns
    -------
    ndarray of shape (K, K)
    """
    lags = grid.delta * np.arange(grid.K)
    col = grid.delta * np.asarray(noise.pdf(lags), dtype=float)
    row = grid.delta * np.asarray(noise.pdf(-lags), dtype=float)
    return toeplitz(col, row)


# ---------------------------------------------------------------------------
# Input parsing
# ---------------------------------------------------------------------------

def parse_noise_spec(spec):
    """Parse a noise description string into a noise model.

    Grammar::

        gaussian:sigma2=<real>
        laplace:scale=<real>
        table:<path.csv>

    The table file has two columns (u, density) with an optional header.
    """
    spec = spec.strip()
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise ValueError(f"noise spec {spec!r} has no ':' separator")
    kind = kind.lower()
    if kind == "gaussian":
        return GaussianNoise(sigma2=_keyed_value(rest, "sigma2", spec))
    if kind == "laplace":
        return LaplaceNoise(scale=_keyed_value(rest, "scale", spec))
    if kind == "table":
        if not os.path.exists(rest):
            raise FileNotFoundError(f"noise table {rest!r} not found")
        u, d = _read_table(rest)
        return TabulatedNoise(u=u, density=d)
    raise ValueError(f"unknown noise kind {kind!r} in {spec!r}")


def _keyed_value(text, key, spec):
    name, sep, value = text.partition("=")
    if not sep or name.strip() != key:
        raise ValueError(f"noise spec {spec!r} must look like '...:{key}=<real>'")
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"noise spec {spec!r} has a non-numeric {key}") from None


def _read_table(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            rec = [c.strip() for c in rec if c.strip()]
            if not rec:
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: non-numeric row {rec!r}") from None
            if len(vals) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValueError(f"noise table {path!r} contains no rows")
    arr = np.asarray(rows, dtype=float)
    return arr[:, 0], arr[:, 1]


def load_observations(path):
    """Read a single-column CSV of observations.

    An optional header cell named ``y`` (any case) is skipped.

    Returns
    -------
    ndarray of float

    Raises
    ------
    DegenerateData
        If the file contains no observations.
    """
    values = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            rec = [c.strip() for c in rec if c.strip()]
            if not rec:
                continue
            if len(rec) != 1:
                raise ValueError(f"{path}:{lineno}: expected one column, got {len(rec)}")
            cell = rec[0]
            try:
                values.append(float(cell))
            except ValueError:
                if lineno == 1 and cell.strip('"').lower() == "y":
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric value {cell!r}") from None
    if not values:
        raise DegenerateData(f"input file {path!r} contains no observations")
    return np.asarray(values, dtype=float)
