"""Linear programs bounding the single-photon yield and error of the X basis.

Variables are the photon-number-resolved yields y^{m,n} (or bit-error
products b^{m,n} = y^{m,n} e^{m,n}) for 0 <= m, n <= s_cut, flattened as
``m * (s_cut + 1) + n``.  Each of the nine X-basis flux pairs contributes a
lower and an upper row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from . import simplex
from .finite_size import bound_observed_rates, gaussian_interval
from .protocol import (
    X_LABELS,
    MeasurementSet,
    SecurityAnalysis,
    Variant,
    YieldBounds,
    poisson_weights,
)


class InfeasibleLPError(RuntimeError):
    """Raised when a yield or error program has no feasible point."""

    def __init__(self, message: str, lp: simplex.LinearProgram):
        super().__init__(message)
        self.lp = lp


def gamma_ij(mu_i: float, mu_j: float, s_cut: int) -> float:
    """Probability mass of photon-number pairs outside the truncated square.

    Equals e^-(mu_i+mu_j) [P_i T_j + T_i P_j + T_i T_j] with P the partial
    exponential sum up to s_cut and T = e^mu - P its tail.  The tails are
    evaluated through the regularised incomplete gamma function, which
    avoids the cancellation in e^mu - P.
    """
    if mu_i < 0 or mu_j < 0 or s_cut < 0:
        raise ValueError("fluxes and s_cut must be non-negative")
    tail_i = float(gammainc(s_cut + 1, mu_i)) if mu_i > 0 else 0.0
    tail_j = float(gammainc(s_cut + 1, mu_j)) if mu_j > 0 else 0.0
    head_i, head_j = 1.0 - tail_i, 1.0 - tail_j
    return head_i * tail_j + tail_i * head_j + tail_i * tail_j


def target_index(s_cut: int) -> int:
    return (s_cut + 1) + 1


def coefficient_row(mu_i: float, mu_j: float, s_cut: int) -> np.ndarray:
    return np.outer(poisson_weights(mu_i, s_cut), poisson_weights(mu_j, s_cut)).ravel()


@dataclass(frozen=True)
class FluxPairConstraintData:
    """Per flux pair (row-major over (u, v, w)^2): fluxes, Q, B = Q*E, N, gamma."""

    fluxes: tuple[tuple[float, float], ...]
    gain: np.ndarray
    ber: np.ndarray
    count: np.ndarray
    gamma: np.ndarray
    s_cut: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.fluxes) != 9:
            raise ValueError("need all nine X-basis flux pairs")
        if np.any(self.gain < 0) or np.any(self.ber < 0):
            raise ValueError("gains and bit-error rates must be non-negative")
        if np.any(self.ber > self.gain * (1 + 1e-12)):
            raise ValueError("bit-error rate exceeds gain")

    def rows(self) -> np.ndarray:
        return np.array([coefficient_row(a, b, self.s_cut) for a, b in self.fluxes])


def constraint_data(measurements: MeasurementSet, s_cut: int) -> FluxPairConstraintData:
    mus = measurements.params.x_fluxes
    fluxes = tuple((mus[i], mus[j]) for i in range(3) for j in range(3))
    labels = tuple(f"{X_LABELS[i]}{X_LABELS[j]}" for i in range(3) for j in range(3))
    return FluxPairConstraintData(
        fluxes=fluxes,
        gain=measurements.x_gain.ravel().copy(),
        ber=measurements.x_ber.ravel().copy(),
        count=measurements.n_x.ravel().copy(),
        gamma=np.array([gamma_ij(a, b, s_cut) for a, b in fluxes]),
        s_cut=s_cut,
        labels=labels,
    )


def _adjusted(data: FluxPairConstraintData, analysis: SecurityAnalysis, which: str):
    """(lower, upper) right-hand-side targets before the gamma/unit clipping."""
    value = data.gain if which == "yield" else data.ber
    if analysis.variant is Variant.ASYMPTOTIC:
        return value, value
    if analysis.variant is Variant.GAUSSIAN:
        return gaussian_interval(value, data.count, analysis.n_sigma)
    rates = bound_observed_rates(data.gain, data.ber, data.count, analysis.epsilon_0)
    if which == "yield":
        return rates.q_lower, rates.q_upper
    return rates.b_lower, rates.b_upper


def _build(
    data: FluxPairConstraintData,
    analysis: SecurityAnalysis,
    which: str,
    slack: float = 0.0,
) -> simplex.LinearProgram:
    if data.s_cut != analysis.s_cut:
        raise ValueError("constraint data built for a different s_cut")
    lo_target, hi_target = _adjusted(data, analysis, which)
    lower = np.maximum(lo_target * (1 - slack) - data.gamma, 0.0)
    upper = np.minimum(hi_target * (1 + slack), 1.0)
    coeffs = data.rows()
    n_var = coeffs.shape[1]
    objective = np.zeros(n_var)
    objective[target_index(data.s_cut)] = 1.0
    labels = data.labels or tuple(str(k) for k in range(9))
    return simplex.LinearProgram(
        objective=objective,
        rows=np.vstack([coeffs, coeffs]),
        relations=(">=",) * 9 + ("<=",) * 9,
        rhs=np.concatenate([lower, upper]),
        lower=np.zeros(n_var),
        upper=np.ones(n_var),
        sense="min" if which == "yield" else "max",
        row_labels=tuple(f"{lab}:lower" for lab in labels) + tuple(f"{lab}:upper" for lab in labels),
    )


def build_yield_lp(data, analysis, slack: float = 0.0) -> simplex.LinearProgram:
    """Program minimising y^{1,1} subject to the gain constraints."""
    if np.any(data.gain < 0):
        raise ValueError("negative gain")
    return _build(data, analysis, "yield", slack)


def build_error_lp(data, analysis, slack: float = 0.0) -> simplex.LinearProgram:
    """Program maximising b^{1,1} subject to the bit-error-rate constraints."""
    return _build(data, analysis, "error", slack)


def minimal_relaxation(lp: simplex.LinearProgram) -> float:
    """Smallest t >= 0 making ``rhs_lo (1 - t) <= A x <= rhs_hi (1 + t)`` feasible.

    Only meaningful for programs from :func:`build_yield_lp` /
    :func:`build_error_lp`, whose rows come in (lower, upper) halves.
    """
    m = lp.n_rows // 2
    a = lp.rows[:m]
    lo, hi = lp.rhs[:m], lp.rhs[m:]
    n = lp.n_vars
    rows = np.vstack([np.hstack([a, lo[:, None]]), np.hstack([a, -hi[:, None]])])
    objective = np.zeros(n + 1)
    objective[-1] = 1.0
    aux = simplex.LinearProgram(
        objective=objective,
        rows=rows,
        relations=(">=",) * m + ("<=",) * m,
        rhs=np.concatenate([lo, hi]),
        lower=np.zeros(n + 1),
        upper=np.concatenate([np.ones(n), [1.0]]),
    )
    sol = simplex.solve(aux)
    if not sol.optimal:
        raise InfeasibleLPError("relaxation program failed", lp)
    return float(sol.x[-1])


def _solve_target(
    data: FluxPairConstraintData, analysis: SecurityAnalysis, which: str
) -> tuple[float, float]:
    """Optimal target value and the relaxation that was needed (0 if none)."""
    build = build_yield_lp if which == "yield" else build_error_lp
    lp = build(data, analysis)
    sol = simplex.solve(lp)
    slack = 0.0
    if sol.status is simplex.LpStatus.INFEASIBLE:
        if not analysis.relax_inconsistent:
            raise InfeasibleLPError(f"{which} program is infeasible", lp)
        t_min = minimal_relaxation(lp)
        # margin so the widened system is feasible under solver tolerances
        slack = t_min * (1 + 1e-3) + 1e-9
        lp = build(data, analysis, slack)
        sol = simplex.solve(lp)
        if not sol.optimal:
            raise InfeasibleLPError(f"{which} program infeasible after relaxation", lp)
    elif not sol.optimal:
        raise InfeasibleLPError(f"{which} program ended with status {sol.status.value}", lp)
    value = float(np.clip(sol.x[target_index(data.s_cut)], 0.0, 1.0))
    return value, slack


def estimate_bounds(measurements: MeasurementSet, analysis: SecurityAnalysis) -> YieldBounds:
    """Solve the yield and error programs and derive y_X, e_X and y_Z bounds."""
    data = constraint_data(measurements, analysis.s_cut)
    y_x, slack_y = _solve_target(data, analysis, "yield")
    b_x, slack_b = _solve_target(data, analysis, "error")
    e_x = min(b_x / y_x, 1.0) if y_x > 0 else 1.0
    y_z = max(y_x - analysis.theta_yield, 0.0) if analysis.finite else y_x
    return YieldBounds(
        y_x_11_lower=y_x,
        e_x_11_upper=e_x,
        y_z_11_lower=y_z,
        b_x_11_upper=b_x,
        relaxation=(slack_y, slack_b),
    )
