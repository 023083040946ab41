"""Statistical fluctuation bounds for finite samples.

Two flavours are provided: the Gaussian ``n_sigma`` fluctuation function and
the multiplicative Chernoff bounds used for composable security.  Counts are
treated as real numbers, since counts reconstructed from rounded gains
(C = Q * N) are not integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def gaussian_fluctuation(zeta: float, n_sigma: float) -> float:
    """Relative fluctuation ``n_sigma / sqrt(zeta)`` of an expected count ``zeta``."""
    if not zeta > 0:
        raise ValueError(f"expected count must be positive, got {zeta}")
    if not n_sigma > 0:
        raise ValueError(f"n_sigma must be positive, got {n_sigma}")
    return n_sigma / math.sqrt(zeta)


def gaussian_interval(rate, count, n_sigma: float):
    """``rate * [1 -/+ F(count * rate, n_sigma)]`` for arrays of rates and counts.

    Written as ``rate -/+ n_sigma * sqrt(rate / count)`` so that zero-rate
    cells give a zero-width interval instead of a division by zero.
    """
    rate = np.asarray(rate, dtype=float)
    count = np.asarray(count, dtype=float)
    if np.any(count <= 0):
        raise ValueError("sample counts must be positive")
    if np.any(rate < 0):
        raise ValueError("rates must be non-negative")
    half = n_sigma * np.sqrt(rate / count)
    return rate - half, rate + half


def chernoff_g(x: float, y: float) -> float:
    """g(x, y) = sqrt(x * ln(y**-2))."""
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if not 0 < y < 1:
        raise ValueError(f"y must lie in (0, 1), got {y}")
    # ln(y^-2) = -2 ln y; avoids underflow of y**2 for tiny y
    return math.sqrt(x * -2.0 * math.log(y))


@dataclass(frozen=True)
class BoundedCount:
    observed: float
    upper: float
    lower: float
    epsilon_0: float

    def __post_init__(self):
        if not (0 <= self.lower <= self.observed <= self.upper):
            raise ValueError(f"inconsistent bounded count {self}")


def bound_count(observed: float, epsilon_0: float) -> BoundedCount:
    """Chernoff upper/lower bounds on a count, each failing with prob. <= epsilon_0."""
    if observed < 0:
        raise ValueError(f"count must be non-negative, got {observed}")
    if not 0 < epsilon_0 < 1:
        raise ValueError(f"epsilon_0 must lie in (0, 1), got {epsilon_0}")
    # log(eps^2) and log(eps^4) computed directly: eps^4 underflows for eps ~ 1e-100
    upper = observed + math.sqrt(observed * -4.0 * math.log(epsilon_0))
    lower = max(observed - math.sqrt(observed * -8.0 * math.log(epsilon_0)), 0.0)
    return BoundedCount(float(observed), upper, lower, epsilon_0)


@dataclass(frozen=True)
class BoundedRates:
    """Chernoff-bounded gains and bit-error rates, one entry per flux pair."""

    q_upper: np.ndarray
    q_lower: np.ndarray
    b_upper: np.ndarray
    b_lower: np.ndarray
    # True where a zero lower-bounded sample size forced the worst case.
    degenerate: np.ndarray

    def __post_init__(self):
        if np.any(self.q_lower > self.q_upper) or np.any(self.b_lower > self.b_upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.q_lower < 0) or np.any(self.b_lower < 0):
            raise ValueError("negative bounded rate")


def bound_rates(
    sent: list[BoundedCount],
    detected: list[BoundedCount],
    errors: list[BoundedCount],
) -> BoundedRates:
    """Q^ = C^/N_, Q_ = C_/N^, B^ = EC^/N_, B_ = EC_/N^ per flux pair."""
    if not len(sent) == len(detected) == len(errors):
        raise ValueError("need one (N, C, EC) triple per flux pair")
    k = len(sent)
    q_hi, q_lo, b_hi, b_lo = (np.zeros(k) for _ in range(4))
    degenerate = np.zeros(k, dtype=bool)
    for i, (n, c, ec) in enumerate(zip(sent, detected, errors)):
        if n.lower > 0:
            q_hi[i] = c.upper / n.lower
            b_hi[i] = ec.upper / n.lower
        else:
            q_hi[i] = b_hi[i] = 1.0
            degenerate[i] = True
        if n.upper > 0:
            q_lo[i] = c.lower / n.upper
            b_lo[i] = ec.lower / n.upper
    return BoundedRates(q_hi, q_lo, b_hi, b_lo, degenerate)


def bound_observed_rates(gain, ber, count, epsilon_0: float) -> BoundedRates:
    """Bound rates given per-pair gains Q, bit-error rates B = Q*E and sample sizes N.

    Counts are reconstructed as C = Q*N and EC = B*N.
    """
    gain = np.ravel(gain)
    ber = np.ravel(ber)
    count = np.ravel(count)
    sent = [bound_count(n, epsilon_0) for n in count]
    detected = [bound_count(q * n, epsilon_0) for q, n in zip(gain, count)]
    errors = [bound_count(b * n, epsilon_0) for b, n in zip(ber, count)]
    return bound_rates(sent, detected, errors)
