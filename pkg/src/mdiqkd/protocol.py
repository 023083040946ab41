"""Protocol-level types and the secure key rate of four-intensity decoy MDI-QKD."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .finite_size import bound_count, chernoff_g

DEFAULT_CLOCK_HZ = 1e9
# Finite-size correction Delta = 300.5 / N_tot of the composable analysis.
COMPOSABLE_DELTA_NUMERATOR = 300.5
X_LABELS = ("u", "v", "w")


class Variant(str, enum.Enum):
    ASYMPTOTIC = "asymptotic"
    GAUSSIAN = "gaussian"
    COMPOSABLE = "composable"


@dataclass(frozen=True)
class ProtocolParameters:
    """Intensities (mean photon numbers) and preparation probabilities.

    ``s`` is the Z-basis signal; ``u > v > w`` are the X-basis decoys.
    """

    s: float
    u: float
    v: float
    w: float
    p_z_s: float
    p_x_u: float
    p_x_v: float
    p_x_w: float

    def __post_init__(self):
        for name in ("s", "u", "v"):
            val = getattr(self, name)
            if not 0 < val < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if not 0 <= self.w < 1:
            raise ValueError(f"w must lie in [0, 1), got {self.w}")
        if not (self.s > self.u > self.v > self.w):
            raise ValueError("intensities must satisfy s > u > v > w")
        probs = (self.p_z_s, self.p_x_u, self.p_x_v, self.p_x_w)
        if any(not 0 < p < 1 for p in probs):
            raise ValueError("preparation probabilities must lie in (0, 1)")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"preparation probabilities sum to {sum(probs)}, not 1")

    @property
    def x_fluxes(self) -> tuple[float, float, float]:
        return (self.u, self.v, self.w)

    @property
    def x_probs(self) -> tuple[float, float, float]:
        return (self.p_x_u, self.p_x_v, self.p_x_w)


@dataclass(frozen=True)
class MeasurementSet:
    """Gains and QBERs of every (basis, flux pair) plus the sample size.

    ``x_gain[i, j]`` is the gain when Alice sends flux ``(u, v, w)[i]`` and
    Bob sends ``(u, v, w)[j]``.
    """

    params: ProtocolParameters
    n_total: float
    z_gain: float
    z_qber: float
    x_gain: np.ndarray
    x_qber: np.ndarray
    clock_hz: float = DEFAULT_CLOCK_HZ
    label: str = ""

    def __post_init__(self):
        xg = np.array(self.x_gain, dtype=float)
        xe = np.array(self.x_qber, dtype=float)
        if xg.shape != (3, 3) or xe.shape != (3, 3):
            raise ValueError("X-basis gain and QBER must be 3x3 matrices")
        xg.setflags(write=False)
        xe.setflags(write=False)
        object.__setattr__(self, "x_gain", xg)
        object.__setattr__(self, "x_qber", xe)
        values = np.concatenate([[self.z_gain, self.z_qber], xg.ravel(), xe.ravel()])
        if not np.all(np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
            raise ValueError("gains and QBERs must lie in [0, 1]")
        if not self.clock_hz > 0:
            raise ValueError("clock rate must be positive")
        if self.n_z < 1 or np.any(self.n_x < 1):
            raise ValueError("derived sample counts must be at least 1")

    @property
    def n_z(self) -> float:
        return self.params.p_z_s**2 * self.n_total

    @property
    def n_x(self) -> np.ndarray:
        p = np.array(self.params.x_probs)
        return np.outer(p, p) * self.n_total

    @property
    def x_ber(self) -> np.ndarray:
        return self.x_gain * self.x_qber


@dataclass(frozen=True)
class SecurityAnalysis:
    variant: Variant = Variant.ASYMPTOTIC
    n_sigma: float = 7.0
    epsilon_0: float = 4e-13
    s_cut: int = 15
    theta_yield: float = 1.5e-6
    f_ec: float = 1.16
    # Widen inconsistent constraint systems by the smallest uniform relative
    # slack that restores feasibility instead of raising.
    relax_inconsistent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.n_sigma > 0:
            raise ValueError("n_sigma must be positive")
        if not 0 < self.epsilon_0 < 1:
            raise ValueError("epsilon_0 must lie in (0, 1)")
        if self.s_cut < 2:
            raise ValueError("s_cut must be at least 2")
        if self.f_ec < 1:
            raise ValueError("f_ec must be at least 1")
        if self.theta_yield < 0:
            raise ValueError("theta_yield must be non-negative")

    @property
    def finite(self) -> bool:
        return self.variant is not Variant.ASYMPTOTIC


@dataclass(frozen=True)
class YieldBounds:
    y_x_11_lower: float
    e_x_11_upper: float
    y_z_11_lower: float
    b_x_11_upper: float = math.nan
    # Relative widening applied to (yield, error) constraint systems.
    relaxation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("y_x_11_lower", "e_x_11_upper", "y_z_11_lower"):
            val = getattr(self, name)
            if not 0 <= val <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.y_z_11_lower > self.y_x_11_lower:
            raise ValueError("Z-basis yield bound cannot exceed the X-basis bound")


@dataclass(frozen=True)
class KeyRateReport:
    rate_per_clock: float
    rate_bps: float
    raw_rate_per_clock: float
    no_key: bool
    analysis: SecurityAnalysis
    bounds: YieldBounds
    q_z_11: float
    ec_leak: float
    delta: float
    extras: dict = field(default_factory=dict)


def binary_entropy(p: float) -> float:
    if not 0 <= p <= 1:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0 or p == 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def poisson_weight(mu: float, n: int) -> float:
    """e^-mu mu^n / n!, via log-gamma."""
    if mu < 0 or n < 0:
        raise ValueError("mu and n must be non-negative")
    if mu == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - gammaln(n + 1))


def poisson_weights(mu: float, s_cut: int) -> np.ndarray:
    """Vector of poisson_weight(mu, n) for n = 0..s_cut."""
    return np.array([poisson_weight(mu, n) for n in range(s_cut + 1)])


def q_z_11(
    bounds: YieldBounds,
    params: ProtocolParameters,
    analysis: SecurityAnalysis,
    n_total: float | None = None,
) -> float:
    """Lower bound on the single-photon Z-basis gain entering the key rate."""
    y = bounds.y_z_11_lower
    s = params.s
    if analysis.variant is not Variant.COMPOSABLE:
        return y * (params.p_z_s * s * math.exp(-s)) ** 2
    if n_total is None or n_total < 1:
        raise ValueError("composable analysis needs n_total >= 1")
    n_z_lower = bound_count(params.p_z_s**2 * n_total, analysis.epsilon_0).lower
    x = s * s * math.exp(-2 * s) * y * n_z_lower
    # max{x - g, 0}: see README, "Composable single-photon gain"
    return max(x - chernoff_g(x, analysis.epsilon_0), 0.0) / n_total


def secure_key_rate(
    measurements: MeasurementSet, bounds: YieldBounds, analysis: SecurityAnalysis
) -> KeyRateReport:
    """R = q11 [1 - h(e11)] - f_EC Q_Z h(E_Z) - Delta, clamped at zero."""
    q11 = q_z_11(bounds, measurements.params, analysis, measurements.n_total)
    leak = analysis.f_ec * measurements.z_gain * binary_entropy(measurements.z_qber)
    if analysis.variant is Variant.COMPOSABLE:
        delta = COMPOSABLE_DELTA_NUMERATOR / measurements.n_total
    else:
        delta = 0.0
    raw = q11 * (1 - binary_entropy(bounds.e_x_11_upper)) - leak - delta
    rate = max(raw, 0.0)
    return KeyRateReport(
        rate_per_clock=rate,
        rate_bps=rate * measurements.clock_hz,
        raw_rate_per_clock=raw,
        no_key=raw <= 0,
        analysis=analysis,
        bounds=bounds,
        q_z_11=q11,
        ec_leak=leak,
        delta=delta,
    )
