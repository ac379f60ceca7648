"""Constrained quadratic program at the heart of the density estimator.

The estimate solves

    min_f ||h - C f||^2 + lam * Q(f)
    s.t.  delta * 1'f = 1,  G f >= 0

where h is the histogram density, C the convolution matrix (possibly
column-reduced by a support restriction), Q the penalty, and G stacks
nonnegativity with any shape-constraint rows.

The solver is an active-set iteration started from the equality-only
minimizer: repeatedly add the most violated inequality as an equality and
drop rows whose multiplier turns negative.  A cycle guard switches the
pivoting to smallest-index (Bland-style) order; if that trips too, a dense
operator-splitting iteration with an exact polish step takes over.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DimensionMismatch
from .regularization import effective_penalty

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max-iterations"
STATUS_INFEASIBLE = "infeasible"

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
KKT_TOL_BASE = 1e-8
MAX_ITER_FACTOR = 50


def tikhonov_jitter(M):
    """Diagonal shift 1e-12 * trace(M) / dim used inside factorizations only."""
    return 1e-12 * float(np.trace(M)) / M.shape[0]


@dataclass(frozen=True)
class QPSolution:
    """Solver output: density vector plus diagnostics.

    ``objective`` is the data-fit-plus-penalty value (constants included),
    ``active`` the inequality rows held as equalities at the solution, and
    ``status`` one of optimal, max-iterations, infeasible.
    """

    fX: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    active: tuple = ()


def assemble(C, f_y, lam, reg, delta):
    """Quadratic form (H, g) of the objective for the given penalty.

    H = 2 (C'C + lam R) and g = -2 (C'h + lam q), where R is the penalty
    quadratic and q its target (zero for the curvature kind, the reference
    density for the Gaussian kind).  The value f'Hf/2 + g'f equals the
    full objective minus constants ||h||^2 (+ lam ||q||^2).

    Parameters
    ----------
    C : ndarray (K, Kr)
    f_y : ndarray (K,)
    lam : float
    reg : Regularizer
    delta : float
        Grid spacing (scales the curvature penalty).

    Returns
    -------
    (H, g) : ndarray (Kr, Kr), ndarray (Kr,)
    """
    C = np.asarray(C, dtype=float)
    f_y = np.asarray(f_y, dtype=float)
    if C.shape[0] != f_y.size:
        raise DimensionMismatch(f"C has {C.shape[0]} rows but f_y has {f_y.size} entries")
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    Kr = C.shape[1]
    R = reg.quad_matrix(Kr, delta)
    q = reg.linear_target(Kr)
    H = 2.0 * (C.T @ C + lam * R)
    g = -2.0 * (C.T @ f_y + lam * q)
    return H, g


def objective_value(C, f_y, lam, reg, delta, f):
    """Full objective ||h - C f||^2 + lam Q(f) with the grid-aware penalty."""
    r = f_y - C @ f
    return float(r @ r) + lam * effective_penalty(reg, f, delta)


def solve(C, f_y, lam, reg, delta, ineq_rows=None, warm_start=None, max_iter=None,
          nonneg=True):
    """Solve the constrained deconvolution QP.

    Parameters
    ----------
    C : ndarray (K, Kr)
        Convolution matrix, columns possibly reduced to a support window.
    f_y : ndarray (K,)
        Histogram density.
    lam : float
        Penalty weight.
    reg : Regularizer
    delta : float
        Grid spacing (defines the integrate-to-one row).
    ineq_rows : ndarray (m, Kr), optional
        Shape-constraint rows G with G f >= 0.
    warm_start : sequence of int, optional
        Inequality row indices (into the internal stacked system) to seed
        the active set, as returned in ``QPSolution.active``.
    max_iter : int, optional
        Cap on active-set iterations (default 50 * Kr).
    nonneg : bool
        Enforce f >= 0 (on by default; disable for an equality-only solve).

    Returns
    -------
    QPSolution
    """
    H, g = assemble(C, f_y, lam, reg, delta)
    scale = 1.0 + float(np.linalg.norm(C, "fro"))

    def objective(f):
        return objective_value(C, f_y, lam, reg, delta, f)

    return solve_assembled(H, g, delta, ineq_rows=ineq_rows, warm_start=warm_start,
                           max_iter=max_iter, objective=objective, kkt_scale=scale,
                           nonneg=nonneg)


def solve_assembled(H, g, delta, ineq_rows=None, warm_start=None, max_iter=None,
                    objective=None, kkt_scale=1.0, nonneg=True):
    """Active-set solve of min f'Hf/2 + g'f, delta 1'f = 1, G f >= 0.

    See ``solve`` for the wrapped form with the full objective reported.
    """
    Kr = H.shape[0]
    G = _stack_inequalities(Kr, ineq_rows, nonneg)
    a_eq = np.full(Kr, delta)
    Hj = H + tikhonov_jitter(H) * np.eye(Kr)
    if max_iter is None:
        max_iter = MAX_ITER_FACTOR * Kr

    work = sorted(set(int(i) for i in warm_start or ()) & set(range(G.shape[0])))
    seen = set()
    bland = False
    f = None
    iterations = 0
    status = STATUS_MAX_ITER

    while iterations < max_iter:
        iterations += 1
        f, mu = _kkt_solve(Hj, g, a_eq, G, work)
        if f is None:
            status = STATUS_INFEASIBLE
            break
        # Drop a row whose multiplier went negative.
        neg = [(mu[k], k) for k in range(len(work)) if mu[k] < -DUAL_TOL]
        if neg:
            if bland:
                k = min(k for _, k in neg)
            else:
                k = min(neg)[1]
            work.pop(k)
            key = frozenset(work)
            if key in seen:
                if not bland:
                    bland = True
                    seen.clear()
                else:
                    break
            seen.add(key)
            continue
        # Add the most violated inactive row.
        slack = G @ f
        slack[work] = 0.0
        viol = np.flatnonzero(slack < -FEAS_TOL)
        if viol.size == 0:
            status = STATUS_OPTIMAL
            break
        add = int(viol[0]) if bland else int(viol[np.argmin(slack[viol])])
        work = sorted(work + [add])
        key = frozenset(work)
        if key in seen:
            if not bland:
                bland = True
                seen.clear()
            else:
                break
        seen.add(key)

    if status != STATUS_OPTIMAL:
        f, work, fb_status = _splitting_fallback(Hj, g, a_eq, G)
        status = fb_status if f is not None else STATUS_INFEASIBLE

    if f is None:
        nan = np.full(Kr, np.nan)
        return QPSolution(fX=nan, objective=np.nan, kkt_residual=np.inf,
                          iterations=iterations, status=STATUS_INFEASIBLE)

    resid = _kkt_residual(H, g, a_eq, delta, G, work, f)
    if status == STATUS_OPTIMAL and resid > KKT_TOL_BASE * kkt_scale:
        status = STATUS_MAX_ITER
    obj = objective(f) if objective is not None else float(0.5 * f @ H @ f + g @ f)
    return QPSolution(fX=f, objective=obj, kkt_residual=resid, iterations=iterations,
                      status=status, active=tuple(work))


def mode_search_solve(C, f_y, lam, reg, delta, cset, candidates=None, peak_hint=None,
                      max_iter=None):
    """Solve one QP per candidate peak index and keep the best.

    Ties in the objective (within 1e-12 relative) break toward the
    candidate nearest ``peak_hint`` (the histogram argmax mapped into the
    reduced index range), then toward the smaller index.

    Parameters
    ----------
    cset : ConstraintSet
        Provides static rows and per-candidate unimodal rows.
    candidates : iterable of int, optional
        Candidate peak indices (default: every index).

    Returns
    -------
    (QPSolution, int)
        Best solution and its peak index.
    """
    dim = C.shape[1]
    if candidates is None:
        candidates = range(dim)
    if peak_hint is None:
        peak_hint = min(int(np.argmax(f_y)), dim - 1)
    results = []
    for m in candidates:
        rows = cset.rows_with_mode(m)
        sol = solve(C, f_y, lam, reg, delta, ineq_rows=rows, max_iter=max_iter)
        results.append((m, sol))
    ok = [(m, s) for m, s in results if s.status == STATUS_OPTIMAL]
    pool = ok if ok else results
    best_obj = min(s.objective for _, s in pool)
    tol = 1e-12 * (1.0 + abs(best_obj))
    tied = [(m, s) for m, s in pool if s.objective <= best_obj + tol]
    m, sol = min(tied, key=lambda ms: (abs(ms[0] - peak_hint), ms[0]))
    return sol, m


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------

def _stack_inequalities(Kr, ineq_rows, nonneg=True):
    """Nonnegativity rows followed by deduplicated shape rows."""
    blocks = [np.eye(Kr)] if nonneg else []
    if ineq_rows is not None and np.size(ineq_rows):
        G = np.asarray(ineq_rows, dtype=float)
        if G.ndim != 2 or G.shape[1] != Kr:
            raise DimensionMismatch(f"inequality rows have shape {G.shape}, expected (m, {Kr})")
        blocks.append(G)
    if not blocks:
        return np.zeros((0, Kr))
    stacked = np.vstack(blocks)
    _, keep = np.unique(stacked, axis=0, return_index=True)
    return stacked[np.sort(keep)]


def _kkt_solve(Hj, g, a_eq, G, work):
    """Equality-constrained solve treating the working rows as equalities.

    Returns (f, mu) with mu the working-row multipliers, or (None, None)
    if the system is inconsistent.
    """
    Kr = Hj.shape[0]
    A = np.vstack([a_eq[None, :], G[work]]) if work else a_eq[None, :]
    m = A.shape[0]
    M = np.zeros((Kr + m, Kr + m))
    M[:Kr, :Kr] = Hj
    M[:Kr, Kr:] = A.T
    M[Kr:, :Kr] = A
    rhs = np.concatenate([-g, [1.0], np.zeros(m - 1)])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    f = sol[:Kr]
    y = sol[Kr:]
    if not np.all(np.isfinite(f)):
        return None, None
    # Consistency of the working equalities.
    gap = A @ f
    gap[0] -= 1.0
    if np.max(np.abs(gap)) > 1e-6 * (1.0 + np.max(np.abs(A))):
        return None, None
    return f, -y[1:]


def _kkt_residual(H, g, a_eq, delta, G, work, f):
    """Worst violation among stationarity, feasibility, complementarity."""
    A = np.vstack([a_eq[None, :], G[work]]) if work else a_eq[None, :]
    rhs = np.concatenate([[1.0], np.zeros(A.shape[0] - 1)])
    y, *_ = np.linalg.lstsq(A.T, -(H @ f + g), rcond=None)
    stat = float(np.max(np.abs(H @ f + g + A.T @ y)))
    eq = abs(delta * float(np.sum(f)) - 1.0)
    slack = G @ f
    feas = max(0.0, float(-np.min(slack))) if slack.size else 0.0
    comp = float(np.max(np.abs(y[1:] * slack[work]))) if work else 0.0
    return max(stat, eq, feas, comp)


def _splitting_fallback(Hj, g, a_eq, G, iters=20000, tol=1e-11):
    """Operator-splitting iteration with an exact active-set polish.

    Alternates a KKT solve in f with a projection of the slack onto the
    nonnegative orthant, then re-solves the equality system on the
    near-active rows to recover a machine-precision vertex.
    """
    Kr = Hj.shape[0]
    m = G.shape[0]
    rho = max(float(np.trace(Hj)) / max(m, 1), 1e-8)
    KKT = np.zeros((Kr + 1, Kr + 1))
    KKT[:Kr, :Kr] = Hj + rho * (G.T @ G)
    KKT[:Kr, Kr] = a_eq
    KKT[Kr, :Kr] = a_eq
    piv = lu_factor(KKT)
    z = np.zeros(m)
    u = np.zeros(m)
    f = np.zeros(Kr)
    for _ in range(iters):
        rhs = np.concatenate([-g + rho * (G.T @ (z - u)), [1.0]])
        f = lu_solve(piv, rhs)[:Kr]
        Gf = G @ f
        z_new = np.maximum(Gf + u, 0.0)
        r_dual = rho * float(np.max(np.abs(G.T @ (z_new - z)))) if m else 0.0
        z = z_new
        u += Gf - z
        r_prim = float(np.max(np.abs(Gf - z))) if m else 0.0
        if r_prim < tol and r_dual < tol:
            break
    # Polish: exact solve on the apparently active rows.
    for thresh in (1e-7, 1e-9, 1e-5):
        work = sorted(int(i) for i in np.flatnonzero(z <= thresh))
        fp, mu = _kkt_solve(Hj, g, a_eq, G, work)
        if fp is None:
            continue
        keep = sorted(work[k] for k in range(len(work)) if mu[k] > -DUAL_TOL)
        if keep != work:
            fp2, mu2 = _kkt_solve(Hj, g, a_eq, G, keep)
            if fp2 is not None and np.min(G @ fp2) >= -FEAS_TOL and np.all(mu2 >= -DUAL_TOL):
                return fp2, keep, STATUS_OPTIMAL
        if np.min(G @ fp) >= -FEAS_TOL and np.all(mu >= -DUAL_TOL):
            return fp, work, STATUS_OPTIMAL
    work = sorted(int(i) for i in np.flatnonzero(z <= 1e-7))
    return f, work, STATUS_MAX_ITER
