"""Linear inequality rows encoding shape constraints on the latent density.

Every constraint is a set of rows A such that A f >= 0 elementwise.  Rows
are built on a zero-based index range; real-coordinate anchors are snapped
to the nearest grid index first.  A support restriction drops grid columns
outside the kept window and all other row sets are rebuilt on the reduced
index range.
"""

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptySupport, IndexOutOfGrid
from .grids import Grid

NONINCREASING_RIGHT = "nonincreasing-right"
NONDECREASING_LEFT = "nondecreasing-left"


def monotone_rows(K, index, direction):
    """Rows forcing monotonicity on one side of an anchor index.

    ``nonincreasing-right`` ties every adjacent pair from ``index`` on:
    f_j - f_{j+1} >= 0.  ``nondecreasing-left`` mirrors the signs for the
    pairs up to ``index``.

    Parameters
    ----------
    K : int
        Grid dimension.
    index : int
        Zero-based anchor.
    direction : str
        One of ``nonincreasing-right``, ``nondecreasing-left``.

    Returns
    -------
    ndarray of shape (m, K)
    """
    _check_index(K, index)
    if direction == NONINCREASING_RIGHT:
        pairs = range(index, K - 1)
        lo, hi = 1.0, -1.0
    elif direction == NONDECREASING_LEFT:
        pairs = range(0, index)
        lo, hi = -1.0, 1.0
    else:
        raise ValueError(f"unknown direction {direction!r}")
    rows = np.zeros((len(pairs), K))
    for r, j in enumerate(pairs):
        rows[r, j] = lo
        rows[r, j + 1] = hi
    return rows


def convex_rows(K, index, side):
    """Rows forcing convexity on one side of an anchor index.

    Each row is the pattern (1, -2, 1) over a consecutive triple.  Side
    ``right`` covers triples starting at ``index`` and later; side ``left``
    covers triples ending at ``index`` or earlier.

    Returns
    -------
    ndarray of shape (m, K)
    """
    _check_index(K, index)
    if side == "right":
        starts = range(index, K - 2)
    elif side == "left":
        starts = range(0, index - 1)
    else:
        raise ValueError(f"unknown side {side!r}")
    rows = np.zeros((len(starts), K))
    for r, j in enumerate(starts):
        rows[r, j] = 1.0
        rows[r, j + 1] = -2.0
        rows[r, j + 2] = 1.0
    return rows


def unimodal_rows(K, mode):
    """Rows forcing a single peak at the given mode index.

    The density is nondecreasing up to the mode and nonincreasing from it:
    K - 1 rows in total.  A mode at either end reduces to one-sided
    monotonicity.
    """
    _check_index(K, mode)
    up = monotone_rows(K, mode, NONDECREASING_LEFT)
    down = monotone_rows(K, mode, NONINCREASING_RIGHT)
    return np.vstack([up, down])


def apply_support(K, a, b):
    """Kept column indices for a support restriction to [a, b].

    Returns
    -------
    ndarray of int
        Indices a..b inclusive.

    Raises
    ------
    EmptySupport
        If fewer than two grid points would remain.
    """
    _check_index(K, a)
    _check_index(K, b)
    if b - a + 1 < 2:
        raise EmptySupport(f"support [{a}, {b}] keeps {max(0, b - a + 1)} grid point(s)")
    return np.arange(a, b + 1)


def _check_index(K, index):
    if not 0 <= index <= K - 1:
        raise IndexOutOfGrid(f"index {index} outside grid 0..{K - 1}")


def snap_to_index(grid, x):
    """Nearest grid index for a real coordinate.

    A coordinate exactly midway between two grid points snaps toward the
    grid center.  Coordinates within half a bin beyond either end are
    clamped to the end index.

    Raises
    ------
    IndexOutOfGrid
        If ``x`` lies outside the covered interval.
    """
    if not grid.lower_edge <= x <= grid.upper_edge:
        raise IndexOutOfGrid(
            f"coordinate {x:.6g} outside covered interval "
            f"[{grid.lower_edge:.6g}, {grid.upper_edge:.6g}]")
    t = (x - grid.x1) / grid.delta
    lo = int(np.floor(t))
    frac = t - lo
    if abs(frac - 0.5) <= 1e-12 and 0 <= lo < grid.K - 1:
        center = 0.5 * (grid.K - 1)
        cands = sorted((lo, lo + 1), key=lambda j: (abs(j - center), j))
        return cands[0]
    j = int(np.floor(t + 0.5))
    return min(max(j, 0), grid.K - 1)


# ---------------------------------------------------------------------------
# User-level constraint description
# ---------------------------------------------------------------------------

MODE_AUTO = "auto"


@dataclass(frozen=True)
class ConstraintSpec:
    """Shape constraints in real coordinates, before snapping to a grid.

    Integrate-to-one and nonnegativity are always enforced; the optional
    fields add shape restrictions.  ``mode`` may be a coordinate or
    ``"auto"`` to search the peak location.
    """

    monotone_right: float | None = None
    monotone_left: float | None = None
    convex_right: float | None = None
    convex_left: float | None = None
    mode: float | str | None = None
    support: tuple[float, float] | None = None

    def describe(self):
        """Canonical spec string (inverse of parse_constraint_spec)."""
        parts = ["in"]
        if self.monotone_right is not None:
            parts.append(f"mright:{self.monotone_right:g}")
        if self.monotone_left is not None:
            parts.append(f"mleft:{self.monotone_left:g}")
        if self.convex_right is not None:
            parts.append(f"cright:{self.convex_right:g}")
        if self.convex_left is not None:
            parts.append(f"cleft:{self.convex_left:g}")
        if self.mode is not None:
            parts.append("u:auto" if self.mode == MODE_AUTO else f"u:{self.mode:g}")
        if self.support is not None:
            parts.append(f"s:{self.support[0]:g},{self.support[1]:g}")
        return ",".join(parts)


_SPEC_TOKEN = re.compile(r"s:[^,]+,[^,]+|[^,]+")


def parse_constraint_spec(text):
    """Parse a comma-separated constraint string.

    Grammar::

        in                      always-on baseline (integrate, nonnegative)
        mright:<x>  mleft:<x>   monotone tail anchored at coordinate x
        cright:<x>  cleft:<x>   convex tail anchored at coordinate x
        u:<x> | u:auto          single peak at x, or searched
        s:<lo>,<hi>             support restricted to [lo, hi]

    Returns
    -------
    ConstraintSpec
    """
    fields = {}
    text = text.strip()
    if not text:
        return ConstraintSpec()
    for token in _SPEC_TOKEN.findall(text):
        token = token.strip()
        if token == "in":
            continue
        key, sep, value = token.partition(":")
        if not sep:
            raise ValueError(f"constraint token {token!r} is missing ':'")
        name = {
            "mright": "monotone_right", "mleft": "monotone_left",
            "cright": "convex_right", "cleft": "convex_left",
            "u": "mode", "s": "support",
        }.get(key)
        if name is None:
            raise ValueError(f"unknown constraint token {token!r}")
        if name in fields:
            raise ValueError(f"duplicate constraint token {key!r}")
        if name == "mode":
            fields[name] = MODE_AUTO if value == MODE_AUTO else _real(value, token)
        elif name == "support":
            lo_s, _, hi_s = value.partition(",")
            lo, hi = _real(lo_s, token, infinite_ok=True), _real(hi_s, token, infinite_ok=True)
            if not lo < hi:
                raise ValueError(f"support bounds must satisfy lo < hi in {token!r}")
            fields[name] = (lo, hi)
        else:
            fields[name] = _real(value, token)
    return ConstraintSpec(**fields)


def _real(text, token, infinite_ok=False):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"non-numeric value in constraint token {token!r}") from None
    if not infinite_ok and not np.isfinite(v):
        raise ValueError(f"constraint token {token!r} needs a finite coordinate")
    return v


# ---------------------------------------------------------------------------
# Grid-bound constraint set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSet:
    """Constraint rows snapped and built for one particular grid.

    ``support`` is the kept index window (a, b) on the full grid; ``rows``
    collects the monotone/convex/fixed-mode rows on the reduced dimension.
    When ``mode_search`` is set the peak location is unknown and the solver
    must try each candidate via ``rows_with_mode``.
    """

    grid: Grid
    subgrid: Grid
    spec: ConstraintSpec
    support: tuple[int, int]
    rows: np.ndarray
    mode_index: int | None
    mode_search: bool

    @property
    def dim(self):
        return self.support[1] - self.support[0] + 1

    @property
    def solver_rows(self):
        """All inequality rows for a solve, including a fixed-mode peak."""
        if self.mode_index is None:
            return self.rows
        return self.rows_with_mode(self.mode_index)

    def rows_with_mode(self, mode_index):
        """Static rows plus unimodal rows for one candidate peak index."""
        return np.vstack([self.rows, unimodal_rows(self.dim, mode_index)])

    def max_violation(self, f_reduced):
        """Largest shortfall of A f >= 0 over the declared rows (0 if none)."""
        worst = float(-np.min(f_reduced))
        rows = self.solver_rows
        if rows.shape[0]:
            worst = max(worst, float(-np.min(rows @ f_reduced)))
        return max(worst, 0.0)

    def embed(self, f_reduced):
        """Pad a reduced-dimension vector with zeros at dropped indices."""
        full = np.zeros(self.grid.K)
        a, b = self.support
        full[a:b + 1] = f_reduced
        return full


def build_constraints(spec, grid):
    """Snap a ConstraintSpec to a grid and materialize its rows.

    Support bounds are clamped into the covered interval before snapping,
    so half-infinite supports like ``s:0,inf`` work on any grid.  All other
    anchors must lie inside the covered interval.
    """
    if spec.support is not None:
        lo = min(max(spec.support[0], grid.lower_edge), grid.upper_edge)
        hi = min(max(spec.support[1], grid.lower_edge), grid.upper_edge)
        a = snap_to_index(grid, lo)
        b = snap_to_index(grid, hi)
        keep = apply_support(grid.K, a, b)
        a, b = int(keep[0]), int(keep[-1])
    else:
        a, b = 0, grid.K - 1
    pts = grid.points
    subgrid = Grid(x1=float(pts[a]), xK=float(pts[b]), K=b - a + 1) if (a, b) != (0, grid.K - 1) else grid
    dim = b - a + 1

    def reduced(x):
        return min(max(snap_to_index(grid, x) - a, 0), dim - 1)

    blocks = []
    if spec.monotone_right is not None:
        blocks.append(monotone_rows(dim, reduced(spec.monotone_right), NONINCREASING_RIGHT))
    if spec.monotone_left is not None:
        blocks.append(monotone_rows(dim, reduced(spec.monotone_left), NONDECREASING_LEFT))
    if spec.convex_right is not None:
        blocks.append(convex_rows(dim, reduced(spec.convex_right), "right"))
    if spec.convex_left is not None:
        blocks.append(convex_rows(dim, reduced(spec.convex_left), "left"))

    mode_index = None
    mode_search = False
    if spec.mode == MODE_AUTO:
        mode_search = True
    elif spec.mode is not None:
        mode_index = reduced(spec.mode)

    rows = np.vstack(blocks) if blocks else np.zeros((0, dim))
    return ConstraintSet(grid=grid, subgrid=subgrid, spec=spec, support=(a, b),
                         rows=rows, mode_index=mode_index, mode_search=mode_search)
