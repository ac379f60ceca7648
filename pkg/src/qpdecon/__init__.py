"""Latent density estimation from noisy observations.

Estimates the density, cdf, and quantiles of a latent variable X from a
sample of Y = X + Z with known noise density, by solving a regularized
quadratic program with optional shape constraints, with automatic or
graphical smoothing selection.  A Fourier kernel-deconvolution baseline
and a seeded simulation harness are included.
"""

from .constraints import ConstraintSpec, build_constraints, parse_constraint_spec
from .errors import QpdeconError, SelectionRequired
from .estimator import DensityEstimate, fit
from .grids import (GaussianNoise, Grid, HistogramDensity, LaplaceNoise,
                    TabulatedNoise, build_grid, convolution_matrix,
                    default_bin_count, histogram, load_observations,
                    parse_noise_spec)
from .kd import kd_estimate, oracle_bandwidth, rule_of_thumb_bandwidth
from .qp import QPSolution, assemble, mode_search_solve, solve
from .regularization import (Regularizer, effective_penalty, gaussian_reference,
                             penalty_value, second_difference_matrix)
from .selection import (ScreeCurve, SureCurve, closed_form_equality,
                        multinomial_sigma, scree_curve, select_lambda,
                        select_regularizer, sure_penalty)
from .simlab import (SimulationReport, SimulationSpec, aggregate_mae,
                     oracle_lambda, run_simulation, true_quantile,
                     uncentered_correlation)

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec", "build_constraints", "parse_constraint_spec",
    "QpdeconError", "SelectionRequired",
    "DensityEstimate", "fit",
    "Grid", "HistogramDensity", "GaussianNoise", "LaplaceNoise", "TabulatedNoise",
    "build_grid", "convolution_matrix", "default_bin_count", "histogram",
    "load_observations", "parse_noise_spec",
    "kd_estimate", "oracle_bandwidth", "rule_of_thumb_bandwidth",
    "QPSolution", "assemble", "mode_search_solve", "solve",
    "Regularizer", "effective_penalty", "gaussian_reference", "penalty_value",
    "second_difference_matrix",
    "ScreeCurve", "SureCurve", "closed_form_equality", "multinomial_sigma",
    "scree_curve", "select_lambda", "select_regularizer", "sure_penalty",
    "SimulationReport", "SimulationSpec", "aggregate_mae", "oracle_lambda",
    "run_simulation", "true_quantile", "uncentered_correlation",
    "__version__",
]
