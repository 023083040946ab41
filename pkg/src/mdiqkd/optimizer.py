"""Multi-start downhill-simplex search over the free protocol parameters.

The free variables are ``(s, u, v, p_z_s, p_x_u, p_x_v)``; the vacuum-like
decoy ``w`` is held fixed and ``p_x_w`` absorbs the remaining probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .decoy_lp import InfeasibleLPError, estimate_bounds
from .physics import DEFAULT_QUADRATURE_POINTS, SystemModel, simulate_measurements
from .protocol import ProtocolParameters, SecurityAnalysis, Variant, secure_key_rate
from .simplex import IterationLimitError

FREE_VARIABLES = ("s", "u", "v", "p_z_s", "p_x_u", "p_x_v")
DEFAULT_W = 2e-4
PENALTY_BPS = -1e12
XATOL = 1e-4
MAX_EVALUATIONS = 2000
DEFAULT_SEED = 20240101


@dataclass(frozen=True)
class OptimizationProblem:
    model: SystemModel
    n_total: float
    analysis: SecurityAnalysis = field(
        default_factory=lambda: SecurityAnalysis(Variant.COMPOSABLE)
    )
    w: float = DEFAULT_W
    quadrature_points: int = DEFAULT_QUADRATURE_POINTS

    def __post_init__(self):
        if not self.n_total >= 1:
            raise ValueError("n_total must be at least 1")
        if not 0 <= self.w < 1:
            raise ValueError("w must lie in [0, 1)")

    def parameters(self, candidate) -> ProtocolParameters:
        """ProtocolParameters for a candidate; raises ValueError when infeasible."""
        s, u, v, p_z, p_u, p_v = (float(c) for c in candidate)
        return ProtocolParameters(s, u, v, self.w, p_z, p_u, p_v, 1.0 - p_z - p_u - p_v)


@dataclass(frozen=True)
class OptimizationResult:
    candidate: np.ndarray
    rate_bps: float
    no_key: bool
    evaluations: int
    # (start index, final candidate, final rate) per start, in start order
    starts: tuple = ()

    @property
    def parameters(self) -> dict[str, float]:
        return dict(zip(FREE_VARIABLES, map(float, self.candidate)))


def _violation(candidate, w: float) -> float:
    """Total amount by which a candidate leaves the feasible region (0 if inside)."""
    s, u, v, p_z, p_u, p_v = candidate
    p_w = 1.0 - p_z - p_u - p_v
    gaps = [
        -s, s - 1, -u, u - 1, -v, v - 1,
        -p_z, p_z - 1, -p_u, p_u - 1, -p_v, p_v - 1, -p_w, p_w - 1,
        u - s, v - u, w - v,
    ]
    return float(sum(max(g, 0.0) for g in gaps))


def _evaluate(candidate, problem: OptimizationProblem) -> tuple[float, float]:
    """(rate in bps, search guide) for one candidate.

    The guide equals the rate where a key exists.  Below the threshold it is
    the (negative) secret fraction per detected Z-basis event, which unlike
    the rate does not shrink towards zero as all intensities vanish, so the
    search is not drawn to that trivial corner.
    """
    candidate = np.asarray(candidate, dtype=float)
    if candidate.shape != (len(FREE_VARIABLES),) or not np.all(np.isfinite(candidate)):
        return PENALTY_BPS, PENALTY_BPS
    violation = _violation(candidate, problem.w)
    if violation > 0:
        # graded so the search is pushed back towards the feasible region
        penalty = PENALTY_BPS * (1.0 + violation)
        return penalty, penalty
    try:
        params = problem.parameters(candidate)
        ms = simulate_measurements(
            params, problem.model, problem.n_total, problem.quadrature_points
        )
        report = secure_key_rate(ms, estimate_bounds(ms, problem.analysis), problem.analysis)
    except (ValueError, InfeasibleLPError, IterationLimitError):
        # boundary cases such as s == u, or a program the data cannot satisfy
        return PENALTY_BPS, PENALTY_BPS
    rate = report.raw_rate_per_clock * problem.model.clock_hz
    if rate > 0:
        return rate, rate
    if ms.z_gain > 0:
        return rate, report.raw_rate_per_clock / ms.z_gain
    return rate, -1.0


def fitness(candidate, problem: OptimizationProblem) -> float:
    """Key rate in bps of a candidate, or a large negative penalty if infeasible.

    Feasible candidates that yield no key return the (negative) unclamped
    rate.
    """
    return _evaluate(candidate, problem)[0]


def _to_candidate(unit, w: float) -> np.ndarray:
    """Map a point of the unit cube to a candidate.

    Intensities are nested (u as a fraction of s above w, v as a fraction
    of u above w) and probabilities are stick-broken, so every interior
    point of the cube satisfies the ordering and probability constraints.
    """
    a, b, c, d, e, f = unit
    s = w + a * (1 - w)
    u = w + b * (s - w)
    v = w + c * (u - w)
    p_z = d
    p_u = e * (1 - p_z)
    p_v = f * (1 - p_z - p_u)
    return np.array([s, u, v, p_z, p_u, p_v])


def _to_unit(candidate, w: float) -> np.ndarray:
    """Inverse of :func:`_to_candidate` for feasible candidates."""
    s, u, v, p_z, p_u, p_v = candidate
    return np.array([
        (s - w) / (1 - w),
        (u - w) / (s - w),
        (v - w) / (u - w),
        p_z,
        p_u / (1 - p_z),
        p_v / (1 - p_z - p_u),
    ])


def starting_points(
    seeds: int, problem: OptimizationProblem | None = None, seed: int = DEFAULT_SEED,
    pool: int | None = None,
) -> np.ndarray:
    """Deterministic Latin-hypercube starts in unit-cube coordinates.

    With a ``problem``, a larger pool is screened and the ``seeds`` points
    with the best search guide (see :func:`_evaluate`) are returned, ties
    going to the earlier sample; otherwise the first ``seeds`` samples are.
    """
    if seeds < 1:
        raise ValueError("need at least one start")
    size = seeds if problem is None else max(pool or 8 * seeds, seeds)
    sampler = qmc.LatinHypercube(d=len(FREE_VARIABLES), seed=seed)
    # keep away from faces where the mapping degenerates (s == u, p == 0)
    unit = 0.02 + 0.96 * sampler.random(size)
    if problem is None:
        return unit
    scores = np.array([_evaluate(_to_candidate(x, problem.w), problem)[1] for x in unit])
    order = np.argsort(-scores, kind="stable")
    return unit[order[:seeds]]


def optimize(
    problem: OptimizationProblem,
    seeds: int = 8,
    seed: int = DEFAULT_SEED,
    extra_starts=(),
    max_evaluations: int = MAX_EVALUATIONS,
) -> OptimizationResult:
    """Best candidate over Nelder-Mead runs from Latin-hypercube starts.

    The search runs in the unit-cube coordinates of :func:`_to_candidate`
    with box bounds, so the simplex never leaves the feasible region through
    the ordering or probability constraints.  ``extra_starts`` (candidates in
    natural coordinates) are appended after the generated starts.  Ties
    between starts go to the lower start index.
    """
    starts = list(starting_points(seeds, problem, seed))
    starts += [_to_unit(np.asarray(x, dtype=float), problem.w) for x in extra_starts]
    best_x, best_rate = None, -np.inf
    total = 0
    history = []
    for index, z0 in enumerate(starts):
        seen = {"x": _to_candidate(z0, problem.w), "rate": -np.inf}

        def objective(z):
            x = _to_candidate(z, problem.w)
            rate, guide = _evaluate(x, problem)
            if rate > seen["rate"]:
                seen["x"], seen["rate"] = x, rate
            return -guide

        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * len(FREE_VARIABLES),
            options={"xatol": XATOL, "fatol": np.inf, "maxfev": max_evaluations},
        )
        total += res.nfev
        # best point ever evaluated, which the final simplex may not contain
        history.append((index, seen["x"], seen["rate"]))
        if seen["rate"] > best_rate:
            best_x, best_rate = seen["x"], seen["rate"]
    return OptimizationResult(
        candidate=best_x,
        rate_bps=max(best_rate, 0.0),
        no_key=not best_rate > 0,
        evaluations=total,
        starts=tuple(history),
    )
