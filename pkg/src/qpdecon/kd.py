"""Kernel deconvolution baseline via Fourier inversion.

The estimate divides the empirical characteristic function by the noise
characteristic function, damps it with a compactly supported kernel
transform, and inverts numerically:

    f_hat(x) = (1/2pi) int K_ft(h w) ecf(w) / cf_Z(w) exp(-i w x) dw

integrated over w in [-1/h, 1/h] with composite Simpson weights.
"""

import math

import numpy as np
from scipy.integrate import simpson

from .errors import NumericalOverflow

KERNEL_RECT = "rect"
KERNEL_TRIW = "triw"

BANDWIDTH_RULE = "rule"
DEFAULT_OMEGA_POINTS = 4097
_CHUNK = 512


def kernel_ft(kernel, t):
    """Fourier transform of the damping kernel, supported on [-1, 1].

    ``rect`` is the indicator of [-1, 1]; ``triw`` is (1 - t^2)^3 there.
    """
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) <= 1.0
    if kernel == KERNEL_RECT:
        return inside.astype(float)
    if kernel == KERNEL_TRIW:
        w = np.where(inside, 1.0 - t * t, 0.0)
        return w * w * w
    raise ValueError(f"unknown kernel {kernel!r}")


def rule_of_thumb_bandwidth(n, noise):
    """Bandwidth sqrt(2) * sd(Z) * sqrt(log n).

    Parameters
    ----------
    n : int
        Sample size (at least 2 so the log is positive).
    noise : noise model with a ``std`` property
    """
    if n < 2:
        raise ValueError(f"bandwidth rule needs n >= 2, got n={n}")
    return math.sqrt(2.0) * noise.std * math.sqrt(math.log(n))


def kd_estimate(data, noise, grid, kernel=KERNEL_RECT, h=BANDWIDTH_RULE,
                omega_points=DEFAULT_OMEGA_POINTS):
    """Kernel deconvolution estimate on the grid points.

    The returned values are the real part of the inversion integral; they
    may be negative or integrate away from one, so callers producing a
    density should rescale (see ``estimator.retro_in``).

    Parameters
    ----------
    data : array_like
    noise : noise model with a ``cf`` method
    grid : Grid
    kernel : str
        ``rect`` or ``triw``.
    h : float or "rule"
        Bandwidth; the string picks the rule-of-thumb value.
    omega_points : int
        Simpson abscissae over [-1/h, 1/h] (odd).

    Returns
    -------
    ndarray of length grid.K

    Raises
    ------
    NumericalOverflow
        If the noise characteristic function underflows on the
        integration range.
    """
    vals = _kd_complex(data, noise, grid, kernel, h, omega_points)
    return vals.real


def _kd_complex(data, noise, grid, kernel=KERNEL_RECT, h=BANDWIDTH_RULE,
                omega_points=DEFAULT_OMEGA_POINTS):
    """Full complex inversion integral (the imaginary part is a residue)."""
    y = np.asarray(data, dtype=float)
    if y.size == 0:
        raise ValueError("kernel deconvolution needs a nonempty sample")
    if h == BANDWIDTH_RULE:
        h = rule_of_thumb_bandwidth(y.size, noise)
    h = float(h)
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if omega_points < 3 or omega_points % 2 == 0:
        raise ValueError(f"omega_points must be odd and >= 3, got {omega_points}")

    om = np.linspace(-1.0 / h, 1.0 / h, omega_points)
    damp = kernel_ft(kernel, h * om)
    cf_z = np.asarray(noise.cf(om))
    active = damp != 0.0
    if np.any(np.abs(cf_z[active]) == 0.0) or not np.all(np.isfinite(cf_z)):
        raise NumericalOverflow(
            f"noise characteristic function vanishes on the integration "
            f"range at bandwidth h={h:g}")

    ecf = np.zeros(om.size, dtype=complex)
    for start in range(0, y.size, _CHUNK):
        block = y[start:start + _CHUNK]
        ecf += np.exp(1j * om[:, None] * block[None, :]).sum(axis=1)
    ecf /= y.size

    integrand = np.where(active, damp * ecf / np.where(active, cf_z, 1.0), 0.0)
    if not np.all(np.isfinite(integrand)):
        raise NumericalOverflow(
            f"inversion integrand overflowed at bandwidth h={h:g}")
    phases = np.exp(-1j * grid.points[:, None] * om[None, :])
    vals = simpson(phases * integrand[None, :], x=om, axis=1) / (2.0 * math.pi)
    if not np.all(np.isfinite(vals)):
        raise NumericalOverflow(f"inversion integral overflowed at bandwidth h={h:g}")
    return vals


def oracle_bandwidth(spec, method, candidates):
    """Bandwidth minimizing the aggregate quantile error in simulation.

    Runs the simulation harness once per candidate (same seed, so every
    candidate sees identical replicates) and keeps the aggregate-error
    minimizer.

    Parameters
    ----------
    spec : SimulationSpec
    method : MethodSpec
        A kernel-deconvolution method; its bandwidth field is overridden.
    candidates : sequence of float

    Returns
    -------
    (float, dict)
        Winning bandwidth and aggregate error per candidate.
    """
    from .simlab import sweep_parameter
    return sweep_parameter(spec, method, "h", candidates)
