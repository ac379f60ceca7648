"""End-to-end latent-density estimation from a noisy sample.

``fit`` runs the whole pipeline: grid and histogram construction,
convolution matrix, penalty-weight selection, the constrained QP solve,
and extraction of cdf and quantiles from the fitted density.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec, build_constraints, parse_constraint_spec
from .errors import AllZero, InvalidProbability, SelectionRequired, SolverFailure
from .grids import HistogramDensity, Grid, build_grid, convolution_matrix, default_bin_count, histogram
from .qp import STATUS_OPTIMAL, QPSolution, mode_search_solve, solve
from .regularization import (REG_AUTO, REG_D2, REG_GAUSS, Regularizer,
                             gaussian_reference)
from .selection import (MODE_ALL, VARIANT_APPROX, ScreeCurve, SureCurve,
                        scree_curve, select_lambda, select_regularizer)

DEFAULT_PROBS = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99)

LAMBDA_SURE = "sure"
LAMBDA_SCREE = "scree"

SMALL_SAMPLE = 30
CONSTRAINT_TOL = 1e-8


def cdf_from_pdf(pdf, delta):
    """Cdf at the grid points by midpoint accumulation.

    Each grid point sits at the center of its bin, so the mass picked up
    at point j is all earlier bins plus half of bin j:
    cdf[j] = delta * (sum_{i<j} pdf[i] + pdf[j] / 2).
    """
    pdf = np.asarray(pdf, dtype=float)
    return delta * (np.cumsum(pdf) - 0.5 * pdf)


def quantile(grid, pdf, cdf, p):
    """Quantile by linear interpolation of the grid against the cdf.

    The interpolation nodes extend half a bin beyond each end, where the
    cdf is exactly 0 and (up to rounding, capped at 1) the total mass.
    Results clamp to [x1 - delta/2, xK + delta/2].

    Parameters
    ----------
    p : float or array_like
        Probability level(s) in (0, 1).
    """
    ps = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((ps <= 0.0) | (ps >= 1.0)):
        raise InvalidProbability(f"probability levels must lie in (0, 1), got {p}")
    total = min(grid.delta * float(np.sum(pdf)), 1.0)
    xs = np.concatenate([[grid.lower_edge], grid.points, [grid.upper_edge]])
    cs = np.concatenate([[0.0], cdf, [total]])
    cs = np.maximum.accumulate(cs)
    out = np.interp(ps, cs, xs)
    out = np.clip(out, grid.lower_edge, grid.upper_edge)
    return float(out[0]) if np.isscalar(p) else out


def retro_in(values, delta):
    """Rescale a vector into a valid density: zero negatives, renormalize.

    A vector that is already a valid density is returned unchanged, which
    makes the operation idempotent.

    Raises
    ------
    AllZero
        If no positive entry remains after zeroing.
    """
    v = np.asarray(values, dtype=float)
    clipped = np.maximum(v, 0.0)
    total = delta * float(np.sum(clipped))
    if total <= 0.0:
        raise AllZero("no positive mass left after zeroing negatives")
    if np.all(v >= 0.0) and abs(total - 1.0) <= 1e-10:
        return v.copy()
    return clipped / total


@dataclass(frozen=True)
class DensityEstimate:
    """Fitted latent density with its cdf, quantiles, and diagnostics."""

    grid: Grid
    pdf: np.ndarray
    cdf: np.ndarray
    quantiles: dict
    lam: float
    regularizer: str
    constraints: str
    histogram: HistogramDensity | None = None
    solution: QPSolution | None = None
    constraint_set: object = None
    sure: SureCurve | None = None
    scree: ScreeCurve | None = None

    def pdf_at(self, x):
        """Density by linear interpolation, zero outside the grid."""
        return np.interp(np.asarray(x, dtype=float), self.grid.points, self.pdf,
                         left=0.0, right=0.0)

    def cdf_at(self, x):
        """Cdf by linear interpolation over the extended node set."""
        total = min(self.grid.delta * float(np.sum(self.pdf)), 1.0)
        xs = np.concatenate([[self.grid.lower_edge], self.grid.points,
                             [self.grid.upper_edge]])
        cs = np.maximum.accumulate(np.concatenate([[0.0], self.cdf, [total]]))
        return np.interp(np.asarray(x, dtype=float), xs, cs, left=0.0, right=1.0)

    def quantile(self, p):
        return quantile(self.grid, self.pdf, self.cdf, p)

    def max_violation(self):
        """Largest shortfall of the declared constraints at the solution."""
        if self.constraint_set is None:
            return max(0.0, float(-np.min(self.pdf)))
        a, b = self.constraint_set.support
        return self.constraint_set.max_violation(self.pdf[a:b + 1])

    def to_dict(self, diagnostics=None):
        """JSON-ready dictionary (arrays as lists, full precision)."""
        return {
            "grid": {"x1": self.grid.x1, "xK": self.grid.xK,
                     "K": self.grid.K, "delta": self.grid.delta},
            "pdf": [float(v) for v in self.pdf],
            "cdf": [float(v) for v in self.cdf],
            "quantiles": {repr(float(p)): float(v) for p, v in self.quantiles.items()},
            "lambda": float(self.lam),
            "regularizer": self.regularizer,
            "constraints": self.constraints,
            "diagnostics": dict(diagnostics or {}),
        }


def fit(data, noise, constraints="in", regularizer=REG_AUTO, lam=LAMBDA_SURE,
        K=None, lambdas=None, selection_mode=MODE_ALL, variant=VARIANT_APPROX,
        probs=DEFAULT_PROBS):
    """Estimate the latent density from noisy observations.

    Parameters
    ----------
    data : array_like
        Observed sample of Y = X + Z.
    noise : noise model
        Known density of Z (see the grids module).
    constraints : str or ConstraintSpec
        Shape constraints; the grammar is documented in
        ``parse_constraint_spec``.
    regularizer : str or Regularizer
        ``"d2"``, ``"gauss"``, ``"auto"`` (risk-based choice between the
        two), or a prebuilt Regularizer.
    lam : float or str
        Penalty weight; ``"sure"`` selects it by risk minimization,
        ``"scree"`` emits the graphical curve and raises
        SelectionRequired for a human to pick a value.
    K : int, optional
        Grid size (default grows like 3 sqrt(n), capped at 200).
    lambdas : array_like, optional
        Penalty-weight grid for selection.
    selection_mode : str
        ``"all"`` (fit error from the constrained solve, default) or
        ``"equality"``.
    variant : str
        Optimism variant for the risk estimate.
    probs : sequence of float
        Probability levels for the reported quantiles.

    Returns
    -------
    DensityEstimate
    """
    y = np.asarray(data, dtype=float)
    n = y.size
    if n < SMALL_SAMPLE:
        warnings.warn(f"only {n} observations; the estimate will be unstable",
                      stacklevel=2)
    if K is None:
        K = default_bin_count(n)
    grid = build_grid(y, K)
    hist = histogram(y, grid)
    cspec = parse_constraint_spec(constraints) if isinstance(constraints, str) else constraints
    cset = build_constraints(cspec, grid)
    a, b = cset.support
    C = convolution_matrix(grid, noise)
    if (a, b) != (0, grid.K - 1):
        C = C[:, a:b + 1]
    f_y = hist.heights
    delta = grid.delta

    static_rows = cset.rows
    if cset.mode_index is not None:
        static_rows = cset.solver_rows

    reg, sure = _pick_regularizer(regularizer, y, noise, cset, C, f_y, delta, n,
                                  lam, lambdas, selection_mode, static_rows, variant)

    scree = None
    if lam == LAMBDA_SCREE:
        scree = scree_curve(C, f_y, delta, reg, lambdas=lambdas, ineq_rows=static_rows)
        if sure is None:
            sure = select_lambda(C, f_y, delta, n, reg, lambdas=lambdas,
                                 mode=selection_mode, ineq_rows=static_rows,
                                 variant=variant)
        raise SelectionRequired(
            "graphical selection requested: inspect the curve and refit "
            "with an explicit penalty weight", scree=scree, sure=sure)
    if lam == LAMBDA_SURE:
        if sure is None:
            sure = select_lambda(C, f_y, delta, n, reg, lambdas=lambdas,
                                 mode=selection_mode, ineq_rows=static_rows,
                                 variant=variant)
        lam_value = sure.chosen_lambda
    else:
        lam_value = float(lam)

    if cset.mode_search:
        peak = min(max(int(np.argmax(f_y)) - a, 0), cset.dim - 1)
        sol, mode_idx = mode_search_solve(C, f_y, lam_value, reg, delta, cset,
                                          peak_hint=peak)
    else:
        sol = solve(C, f_y, lam_value, reg, delta, ineq_rows=static_rows)
    if sol.status != STATUS_OPTIMAL:
        raise SolverFailure(
            f"solver ended with status {sol.status!r} "
            f"(kkt residual {sol.kkt_residual:.2e}) at lambda={lam_value:g}")

    f_red = sol.fX.copy()
    f_red[(f_red < 0.0) & (f_red >= -1e-9)] = 0.0
    violation = cset.max_violation(f_red)
    if cset.mode_search:
        from .constraints import unimodal_rows
        extra = unimodal_rows(cset.dim, mode_idx) @ f_red
        violation = max(violation, float(-np.min(extra)), 0.0)
    if violation > CONSTRAINT_TOL:
        raise SolverFailure(
            f"fitted density violates a declared constraint by {violation:.2e}")

    pdf = cset.embed(f_red)
    cdf = cdf_from_pdf(pdf, delta)
    qs = {float(p): quantile(grid, pdf, cdf, float(p)) for p in probs}
    return DensityEstimate(grid=grid, pdf=pdf, cdf=cdf, quantiles=qs,
                           lam=lam_value, regularizer=reg.kind,
                           constraints=cspec.describe(), histogram=hist,
                           solution=sol, constraint_set=cset, sure=sure,
                           scree=scree)


def _pick_regularizer(regularizer, y, noise, cset, C, f_y, delta, n, lam,
                      lambdas, selection_mode, static_rows, variant):
    """Resolve the regularizer argument, running risk selection for auto."""
    if isinstance(regularizer, Regularizer):
        return regularizer, None
    if regularizer == REG_D2:
        return Regularizer(kind=REG_D2), None
    if regularizer == REG_GAUSS:
        ref = gaussian_reference(y, noise, cset.subgrid)
        return Regularizer(kind=REG_GAUSS, reference=ref), None
    if regularizer != REG_AUTO:
        raise ValueError(f"unknown regularizer {regularizer!r}")
    ref = gaussian_reference(y, noise, cset.subgrid)
    candidates = {
        REG_D2: Regularizer(kind=REG_D2),
        REG_GAUSS: Regularizer(kind=REG_GAUSS, reference=ref),
    }
    grid_for_choice = lambdas
    if isinstance(lam, (int, float)):
        grid_for_choice = [float(lam)]
    kind, curves = select_regularizer(C, f_y, delta, n, candidates,
                                      lambdas=grid_for_choice, mode=selection_mode,
                                      ineq_rows=static_rows, variant=variant)
    return candidates[kind], curves[kind]
