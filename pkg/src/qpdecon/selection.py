"""Automatic and graphical selection of the penalty weight.

The equality-only estimate is affine in the histogram, f_hat = B h + b,
which yields a covariance-penalty estimate of prediction error: observed
fit error plus a trace term built from B and the multinomial covariance of
the histogram.  Minimizing that estimate over a grid of penalty weights
gives the automatic choice; the scree curve of penalty values against the
weight supports a graphical choice.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SingularMatrix
from .qp import STATUS_OPTIMAL, solve, tikhonov_jitter
from .regularization import REG_D2, effective_penalty

MODE_EQUALITY = "equality"
MODE_ALL = "all"

VARIANT_APPROX = "approx"
VARIANT_FULL = "full"

LAMBDA_GRID_LO = 1e-6
LAMBDA_GRID_HI = 1e2
LAMBDA_GRID_SIZE = 61


def default_lambda_grid():
    """Log-spaced penalty-weight grid, 61 points on [1e-6, 1e2]."""
    return np.geomspace(LAMBDA_GRID_LO, LAMBDA_GRID_HI, LAMBDA_GRID_SIZE)


@dataclass(frozen=True)
class ClosedForm:
    """Affine map of the equality-only estimate: f_hat = B h + b."""

    B: np.ndarray
    b: np.ndarray

    def apply(self, f_y):
        return self.B @ f_y + self.b


def closed_form_equality(C, f_y, lam, reg, delta):
    """Equality-only estimate and its affine map in the histogram.

    With D = C'C + lam R (R the penalty quadratic) and q the penalty
    target, the minimizer of the objective under delta 1'f = 1 alone is
    B f_y + b where

        M = inv(D) - inv(D) 1 1' inv(D) / (1' inv(D) 1)
        B = M C'
        b = lam M q + inv(D) 1 / (delta 1' inv(D) 1)

    The same diagonal jitter used inside the solver factorization is
    applied to D, so both routes factor the identical system.

    Returns
    -------
    (fX, ClosedForm)
        The estimate for this histogram and the reusable affine map.
    """
    C = np.asarray(C, dtype=float)
    f_y = np.asarray(f_y, dtype=float)
    Kr = C.shape[1]
    R = reg.quad_matrix(Kr, delta)
    q = reg.linear_target(Kr)
    D = C.T @ C + lam * R
    Dinv = _jittered_inverse(D)
    u = Dinv @ np.ones(Kr)
    s = float(np.sum(u))
    M = Dinv - np.outer(u, u) / s
    B = M @ C.T
    b = lam * (M @ q) + u / (delta * s)
    fX = B @ f_y + b
    return fX, ClosedForm(B=B, b=b)


def _jittered_inverse(D):
    jitter = tikhonov_jitter(2.0 * D) / 2.0
    eye = np.eye(D.shape[0])
    for boost in (1.0, 1e3, 1e6):
        try:
            factor = cho_factor(D + boost * jitter * eye, lower=True)
            return cho_solve(factor, eye)
        except np.linalg.LinAlgError:
            continue
    raise SingularMatrix("penalized normal matrix is not positive definite")


def multinomial_sigma(f_y, n, delta):
    """Multinomial covariance of the histogram heights.

    With cell probabilities p = delta * f_y, the covariance of the scaled
    counts is (diag(p) - p p') / (n delta^2).
    """
    f_y = np.asarray(f_y, dtype=float)
    p = delta * f_y
    return (np.diag(p) - np.outer(p, p)) / (n * delta * delta)


def sure_penalty(C, B, f_y, n, delta, variant=VARIANT_APPROX):
    """Optimism term 2 tr[C B Sigma_hat] of the risk estimate.

    The ``approx`` variant drops the rank-one part of the multinomial
    covariance, leaving 2 tr[C B diag(f_y)] / (n delta); the ``full``
    variant keeps it, subtracting 2 f_y' C B f_y / n.
    """
    f_y = np.asarray(f_y, dtype=float)
    diag_cb = np.einsum("ij,ji->i", C, B)
    value = 2.0 * float(diag_cb @ f_y) / (n * delta)
    if variant == VARIANT_FULL:
        value -= 2.0 * float(f_y @ (C @ (B @ f_y))) / n
    elif variant != VARIANT_APPROX:
        raise ValueError(f"unknown variant {variant!r}")
    return value


@dataclass(frozen=True)
class SureCurve:
    """Risk-estimate curve over the penalty-weight grid.

    ``err`` is the observed fit error, ``penalty`` the optimism term, and
    ``sure`` their sum; ``chosen_index`` marks the minimizer (invalid
    solves carry NaN and are skipped).
    """

    lambdas: np.ndarray
    err: np.ndarray
    penalty: np.ndarray
    sure: np.ndarray
    chosen_index: int
    regularizer: str
    mode: str

    @property
    def chosen_lambda(self):
        return float(self.lambdas[self.chosen_index])

    def to_csv(self, path):
        """Write columns lambda,err,penalty,sure (6 significant digits)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "err", "penalty", "sure"])
            for row in zip(self.lambdas, self.err, self.penalty, self.sure):
                w.writerow([f"{v:.6g}" for v in row])


@dataclass(frozen=True)
class ScreeCurve:
    """Penalty value of the fitted estimate against the penalty weight.

    ``elbow_index`` marks the maximum-curvature point of the curve on
    log-log axes, scaled to the unit box; it is advisory, the final choice
    stays with the caller.
    """

    lambdas: np.ndarray
    q_values: np.ndarray
    err_values: np.ndarray
    elbow_index: int

    @property
    def elbow_lambda(self):
        return float(self.lambdas[self.elbow_index])

    def to_csv(self, path):
        """Write columns lambda,q (6 significant digits)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "q"])
            for lam, q in zip(self.lambdas, self.q_values):
                w.writerow([f"{lam:.6g}", f"{q:.6g}"])


def select_lambda(C, f_y, delta, n, reg, lambdas=None, mode=MODE_ALL,
                  ineq_rows=None, variant=VARIANT_APPROX, nonneg=True):
    """Risk-minimizing penalty weight over a grid.

    For each weight the optimism term always comes from the equality-only
    affine map; the fit-error term comes either from that same map
    (``mode="equality"``) or from the full constrained solve
    (``mode="all"``, the default).  Constrained solves are warm started
    from the neighboring weight's active set.

    Parameters
    ----------
    C : ndarray (K, Kr)
    f_y : ndarray (K,)
    delta : float
    n : int
        Sample size behind the histogram.
    reg : Regularizer
    lambdas : array_like, optional
        Weight grid (default ``default_lambda_grid()``).
    mode : str
        ``"all"`` or ``"equality"``.
    ineq_rows : ndarray, optional
        Shape rows for the constrained solves.
    variant : str
        Optimism variant, ``"approx"`` or ``"full"``.

    Returns
    -------
    SureCurve
    """
    if mode not in (MODE_EQUALITY, MODE_ALL):
        raise ValueError(f"unknown mode {mode!r}")
    lambdas = np.asarray(default_lambda_grid() if lambdas is None else lambdas, dtype=float)
    m = lambdas.size
    err = np.full(m, np.nan)
    pen = np.full(m, np.nan)
    # Sweep from the smoothest weight down, reusing the active set.
    order = np.argsort(lambdas)[::-1]
    warm = None
    for i in order:
        lam = float(lambdas[i])
        fX, cf = closed_form_equality(C, f_y, lam, reg, delta)
        pen[i] = sure_penalty(C, cf.B, f_y, n, delta, variant)
        if mode == MODE_ALL:
            sol = solve(C, f_y, lam, reg, delta, ineq_rows=ineq_rows,
                        warm_start=warm, nonneg=nonneg)
            if sol.status != STATUS_OPTIMAL:
                warm = None
                continue
            warm = sol.active
            fX = sol.fX
        r = f_y - C @ fX
        err[i] = float(r @ r)
    sure = err + pen
    if np.all(np.isnan(sure)):
        raise SingularMatrix("no penalty weight produced a valid solve")
    chosen = int(np.nanargmin(sure))
    return SureCurve(lambdas=lambdas, err=err, penalty=pen, sure=sure,
                     chosen_index=chosen, regularizer=reg.kind, mode=mode)


def select_regularizer(C, f_y, delta, n, candidates, lambdas=None, mode=MODE_ALL,
                       ineq_rows=None, variant=VARIANT_APPROX):
    """Pick the penalty kind whose best risk estimate is smallest.

    ``candidates`` maps kind name to Regularizer.  Ties go to the
    curvature kind when it is among the candidates.

    Returns
    -------
    (str, dict)
        Winning kind and every curve keyed by kind.
    """
    curves = {}
    for kind, reg in candidates.items():
        curves[kind] = select_lambda(C, f_y, delta, n, reg, lambdas=lambdas,
                                     mode=mode, ineq_rows=ineq_rows, variant=variant)
    def best_value(kind):
        c = curves[kind]
        return float(c.sure[c.chosen_index])
    ranked = sorted(curves, key=lambda k: (best_value(k), k != REG_D2))
    return ranked[0], curves


def scree_curve(C, f_y, delta, reg, lambdas=None, ineq_rows=None, nonneg=True):
    """Penalty values of the fitted estimates over the weight grid.

    Solves the constrained problem at every weight (warm started) and
    records Q(f_hat); the fit error is kept alongside for diagnostics.

    Returns
    -------
    ScreeCurve
    """
    lambdas = np.asarray(default_lambda_grid() if lambdas is None else lambdas, dtype=float)
    m = lambdas.size
    q_vals = np.full(m, np.nan)
    err_vals = np.full(m, np.nan)
    order = np.argsort(lambdas)[::-1]
    warm = None
    for i in order:
        lam = float(lambdas[i])
        sol = solve(C, f_y, lam, reg, delta, ineq_rows=ineq_rows,
                    warm_start=warm, nonneg=nonneg)
        if sol.status != STATUS_OPTIMAL:
            warm = None
            continue
        warm = sol.active
        q_vals[i] = effective_penalty(reg, sol.fX, delta)
        r = f_y - C @ sol.fX
        err_vals[i] = float(r @ r)
    elbow = _elbow_index(lambdas, q_vals)
    return ScreeCurve(lambdas=lambdas, q_values=q_vals, err_values=err_vals,
                      elbow_index=elbow)


def _elbow_index(lambdas, q_values):
    """Maximum-curvature point of (log lambda, log Q) scaled to the unit box.

    Degenerate curves (flat, or fewer than three usable points) fall back
    to the smallest weight.
    """
    good = np.isfinite(q_values) & (q_values > 0)
    if np.count_nonzero(good) < 3:
        return 0
    x = np.log(lambdas[good])
    y = np.log(q_values[good])
    if np.ptp(x) <= 0 or np.ptp(y) <= 1e-12 * max(1.0, np.max(np.abs(y))):
        return int(np.flatnonzero(good)[0])
    u = (x - x.min()) / np.ptp(x)
    v = (y - y.min()) / np.ptp(y)
    du = np.gradient(u)
    dv = np.gradient(v)
    ddu = np.gradient(du)
    ddv = np.gradient(dv)
    denom = (du * du + dv * dv) ** 1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.abs(du * ddv - dv * ddu) / denom
    kappa[~np.isfinite(kappa)] = 0.0
    # Endpoints carry one-sided derivatives; keep the interior.
    if kappa.size > 2:
        kappa[0] = 0.0
        kappa[-1] = 0.0
    best = int(np.argmax(kappa))
    return int(np.flatnonzero(good)[best])
