"""Dense bounded-variable revised simplex.

The decoy-state programs are small (a few dozen rows, a few hundred columns)
but badly scaled: right-hand sides span 1e-14 .. 1e-5 while coefficients are
O(1).  Rows are therefore equilibrated by their right-hand side before
solving; all tolerances below refer to the equilibrated problem.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
DEFAULT_MAX_ITER = 1_000_000
# Consecutive degenerate pivots tolerated under Dantzig pricing before
# falling back to Bland's rule.
_DEGENERATE_SWITCH = 25
_STALL_TOL = 1e-11

RELATIONS = ("<=", ">=", "==")


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class IterationLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """``sense`` c.x subject to rows[i].x (relation[i]) rhs[i], lower <= x <= upper."""

    objective: np.ndarray
    rows: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: str = "min"
    row_labels: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        a = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if a.size == 0:
            a = np.zeros((0, c.size))
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        n = c.size
        if a.shape[1] != n or lo.size != n or hi.size != n:
            raise ValueError("inconsistent variable dimensions")
        if a.shape[0] != b.size or len(self.relations) != b.size:
            raise ValueError("inconsistent constraint dimensions")
        if any(r not in RELATIONS for r in self.relations):
            raise ValueError(f"relations must be one of {RELATIONS}")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("objective, rows and rhs must be finite")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "rows", a)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "relations", tuple(self.relations))

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Signed constraint violation per row (positive means violated)."""
        ax = self.rows @ x
        out = np.empty(self.n_rows)
        for i, rel in enumerate(self.relations):
            if rel == "<=":
                out[i] = ax[i] - self.rhs[i]
            elif rel == ">=":
                out[i] = self.rhs[i] - ax[i]
            else:
                out[i] = abs(ax[i] - self.rhs[i])
        return out


@dataclass
class LpSolution:
    status: LpStatus
    objective: float
    x: np.ndarray
    iterations: int
    basis: tuple[int, ...] = ()
    # Equilibrated standard form used to certify optimality post hoc.
    _standard: "_StandardForm | None" = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass
class _StandardForm:
    a: np.ndarray  # m x N, columns: structural | slack | artificial
    b: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_struct: int
    # structural column scales: z_j = x_j * col_scale_j
    col_scale: np.ndarray | None = None


def _standardize(lp: LinearProgram):
    """Equilibrate rows, then columns, and append one slack per row.

    Rows are divided by |rhs| so that slacks and tolerances are relative to
    each constraint's own size; structural columns are then divided by their
    largest entry, so a tolerance on a variable means the same as one on a
    row.  Returns (A, b, lo, hi, col_scale) of ``A z = b`` over
    z = (x * col_scale, s).
    """
    m, n = lp.n_rows, lp.n_vars
    a = lp.rows.copy()
    b = lp.rhs.copy()
    for i in range(m):
        scale = abs(b[i])
        if scale == 0.0:
            scale = np.max(np.abs(a[i])) if np.any(a[i]) else 1.0
        a[i] /= scale
        b[i] /= scale
    col_scale = np.max(np.abs(a), axis=0) if m else np.ones(n)
    col_scale[col_scale == 0.0] = 1.0
    a /= col_scale
    slack_lo = np.empty(m)
    slack_hi = np.empty(m)
    for i, rel in enumerate(lp.relations):
        if rel == "<=":
            slack_lo[i], slack_hi[i] = 0.0, np.inf
        elif rel == ">=":
            slack_lo[i], slack_hi[i] = -np.inf, 0.0
        else:
            slack_lo[i] = slack_hi[i] = 0.0
    full = np.hstack([a, np.eye(m)])
    lo = np.concatenate([lp.lower * col_scale, slack_lo])
    hi = np.concatenate([lp.upper * col_scale, slack_hi])
    return full, b, lo, hi, col_scale


def _initial_nonbasic_value(lo: float, hi: float) -> float:
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


class _Simplex:
    """State of one primal bounded-variable simplex run over ``A z = b``."""

    def __init__(self, a, b, lo, hi, basis, x, max_iter):
        self.a = a
        self.b = b
        self.lo = lo
        self.hi = hi
        self.basis = list(basis)
        self.x = x
        self.max_iter = max_iter
        self.iterations = 0
        self._lu = None

    def _factor(self):
        self._lu = scipy.linalg.lu_factor(self.a[:, self.basis], check_finite=False)

    def _solve(self, rhs, trans=0):
        return scipy.linalg.lu_solve(self._lu, rhs, trans=trans, check_finite=False)

    def _recompute_basic(self):
        nonbasic = np.ones(self.a.shape[1], dtype=bool)
        nonbasic[self.basis] = False
        r = self.b - self.a[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self._solve(r)

    def reduced_costs(self, c):
        pi = self._solve(c[self.basis], trans=1)
        return c - self.a.T @ pi

    def _streak(self, streak: int, best: float, c) -> tuple[int, float]:
        """Update the count of pivots since the objective last improved.

        Progress is measured on the recomputed objective against the best
        value so far.  The predicted gain d_q * step is not enough: near
        optimality, rounding in the basic solve can undo a tiny predicted
        gain, and pivots then alternate forever between two bases.
        """
        now = float(c @ self.x)
        if now < best - _STALL_TOL * max(1.0, abs(best)):
            return 0, now
        return streak + 1, best

    def _ratio_test(self, alpha, direction) -> tuple[float, int, bool]:
        """Harris two-pass ratio test: (step, leaving position, leaves at upper).

        Pass one finds the largest step allowed when every basic bound is
        relaxed by the feasibility tolerance; pass two picks, among the rows
        blocking within that step, the one with the largest pivot element.
        Preferring large pivots keeps the basis well conditioned, which
        matters for the nearly dependent columns of the decoy programs.
        Returns position -1 when no basic variable blocks.
        """
        candidates = []
        relaxed_max = np.inf
        for pos, var in enumerate(self.basis):
            rate = -direction * alpha[pos]
            if rate == 0.0:
                continue
            if rate < 0 and np.isfinite(self.lo[var]):
                room, to_hi = self.x[var] - self.lo[var], False
            elif rate > 0 and np.isfinite(self.hi[var]):
                room, to_hi = self.hi[var] - self.x[var], True
            else:
                continue
            room = max(room, 0.0)
            relaxed_max = min(relaxed_max, (room + FEAS_TOL) / abs(rate))
            candidates.append((room / abs(rate), pos, var, to_hi))
        if not candidates:
            return np.inf, -1, False
        pivot_floor = PIVOT_TOL * float(np.max(np.abs(alpha)))
        best = None
        for exact, pos, var, to_hi in candidates:
            if exact > relaxed_max:
                continue
            # tiny pivots only as a last resort
            key = (abs(alpha[pos]) <= pivot_floor, -abs(alpha[pos]), var)
            if best is None or key < best[0]:
                best = (key, exact, pos, to_hi)
        return best[1], best[2], best[3]

    def run(self, c) -> LpStatus:
        n_total = self.a.shape[1]
        degenerate_streak = 0
        self._factor()
        self._recompute_basic()
        best = float(c @ self.x)
        while True:
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex exceeded {self.max_iter} pivots")
            d = self.reduced_costs(c)
            is_basic = np.zeros(n_total, dtype=bool)
            is_basic[self.basis] = True
            at_lo = np.isclose(self.x, self.lo, rtol=0.0, atol=FEAS_TOL) & np.isfinite(self.lo)
            at_hi = np.isclose(self.x, self.hi, rtol=0.0, atol=FEAS_TOL) & np.isfinite(self.hi)
            fixed = at_lo & at_hi
            can_inc = ~is_basic & ~fixed & ~at_hi & (d < -OPT_TOL)
            can_dec = ~is_basic & ~fixed & ~at_lo & (d > OPT_TOL)
            eligible = np.flatnonzero(can_inc | can_dec)
            if eligible.size == 0:
                return LpStatus.OPTIMAL
            if degenerate_streak >= _DEGENERATE_SWITCH:
                q = int(eligible[0])  # Bland
            else:
                mags = np.abs(d[eligible])
                q = int(eligible[np.flatnonzero(mags == mags.max())[0]])
            direction = 1.0 if can_inc[q] else -1.0

            alpha = self._solve(self.a[:, q])
            step, leave_pos, leave_to_hi = self._ratio_test(alpha, direction)
            flip = self.hi[q] - self.lo[q]
            if flip <= step:
                # entering variable reaches its opposite bound first
                if not np.isfinite(flip):
                    return LpStatus.UNBOUNDED
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self._recompute_basic()
                self.iterations += 1
                degenerate_streak, best = self._streak(degenerate_streak, best, c)
                continue
            if leave_pos < 0:
                return LpStatus.UNBOUNDED
            leaving = self.basis[leave_pos]
            self.x[q] += direction * step
            self.x[self.basis] -= direction * step * alpha
            self.x[leaving] = self.hi[leaving] if leave_to_hi else self.lo[leaving]
            self.basis[leave_pos] = q
            self.iterations += 1
            self._factor()
            self._recompute_basic()
            degenerate_streak, best = self._streak(degenerate_streak, best, c)


def solve(lp: LinearProgram, max_iter: int = DEFAULT_MAX_ITER) -> LpSolution:
    """Solve ``lp`` with a two-phase bounded-variable revised simplex.

    Deterministic: pricing is Dantzig's rule with lowest-index tie breaking,
    switching to Bland's rule after a run of degenerate pivots.
    """
    a, b, lo, hi, col_scale = _standardize(lp)
    m, n_std = a.shape
    n = lp.n_vars

    x = np.array([_initial_nonbasic_value(lo[j], hi[j]) for j in range(n_std)])
    resid = b - a @ x
    signs = np.where(resid >= 0, 1.0, -1.0)
    a1 = np.hstack([a, np.diag(signs)])
    lo1 = np.concatenate([lo, np.zeros(m)])
    hi1 = np.concatenate([hi, np.full(m, np.inf)])
    x1 = np.concatenate([x, np.abs(resid)])
    basis = list(range(n_std, n_std + m))

    c_phase1 = np.concatenate([np.zeros(n_std), np.ones(m)])
    runner = _Simplex(a1, b, lo1, hi1, basis, x1, max_iter)
    if m:
        runner.run(c_phase1)
    infeasibility = float(np.sum(runner.x[n_std:]))
    if infeasibility > FEAS_TOL * max(1, m):
        return LpSolution(
            LpStatus.INFEASIBLE, np.nan, runner.x[:n] / col_scale, runner.iterations,
            tuple(runner.basis)
        )

    # Freeze artificials at zero; any still basic stay degenerate.
    runner.hi[n_std:] = 0.0
    runner.x[n_std:] = 0.0
    sign = 1.0 if lp.sense == "min" else -1.0
    c2 = np.concatenate([sign * lp.objective / col_scale, np.zeros(m + m)])
    status = runner.run(c2)
    xs = np.clip(runner.x[:n] / col_scale, lp.lower, lp.upper)
    std = _StandardForm(runner.a, b, c2, runner.lo.copy(), runner.hi.copy(), n, col_scale)
    obj = float(lp.objective @ xs) if status is LpStatus.OPTIMAL else (
        -np.inf if lp.sense == "min" else np.inf
    )
    return LpSolution(status, obj, xs, runner.iterations, tuple(runner.basis), std)


def certify(solution: LpSolution, tol: float = OPT_TOL) -> bool:
    """Re-derive reduced costs at the returned basis from scratch.

    True when no nonbasic variable offers an improving direction.
    """
    std = solution._standard
    if std is None or not solution.optimal:
        return False
    basis = list(solution.basis)
    b_mat = std.a[:, basis]
    pi = np.linalg.solve(b_mat.T, std.c[basis])
    d = std.c - std.a.T @ pi
    nonbasic = np.ones(std.a.shape[1], dtype=bool)
    nonbasic[basis] = False
    nonbasic &= std.hi > std.lo
    z = _reconstruct(std, solution)
    at_lo = np.isclose(z, std.lo, atol=FEAS_TOL) & np.isfinite(std.lo)
    at_hi = np.isclose(z, std.hi, atol=FEAS_TOL) & np.isfinite(std.hi)
    improving = nonbasic & (((d < -tol) & ~at_hi) | ((d > tol) & ~at_lo))
    return not bool(np.any(improving))


def _reconstruct(std: _StandardForm, solution: LpSolution) -> np.ndarray:
    """Full standard-form point (structural, slack, artificial) at the basis."""
    n_std = std.a.shape[1]
    z = np.zeros(n_std)
    scale = std.col_scale if std.col_scale is not None else 1.0
    z[: std.n_struct] = solution.x * scale
    m = std.b.size
    # slacks follow from the rows; artificials are frozen at zero
    z[std.n_struct : std.n_struct + m] = std.b - std.a[:, : std.n_struct] @ z[: std.n_struct]
    return z
