"""Physical model of two time-bin weak-coherent-state transmitters and the
untrusted beamsplitter node.

Each user's pulse is a coherent state over an (early, late) pair of time
bins.  Light from the two users meets on a 50:50 beamsplitter; given the
random inter-user global phase ``theta`` every (detector, bin) slot holds a
coherent state, so the four slots click independently.  Averaging over
``theta`` is done with a periodic trapezoid rule, which is spectrally
accurate for these smooth periodic integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .protocol import MeasurementSet, ProtocolParameters

FIBRE_LOSS_DB_PER_KM = 0.16
DEFAULT_QUADRATURE_POINTS = 256
MIN_QUADRATURE_POINTS = 16
# X-basis QBER floor of weak coherent states
WCP_X_QBER_FLOOR = 0.25

# Slot order used for click patterns: detector 1 early/late, detector 2 early/late.
SLOTS = ("d1_early", "d1_late", "d2_early", "d2_late")


@dataclass(frozen=True)
class SystemModel:
    """Physical parameters of the link and measurement node.

    ``gate_efficiency`` is the fraction of a pulse's detections that land in
    the detection gate, and ``z_error_floor`` is a phenomenological
    probability of misassigning the time bin of a Z-basis event.  Neither has
    a first-principles model here; :func:`calibrated_model` fits them.
    """

    channel_loss_db_per_arm: float = 15.0
    detector_efficiency: float = 0.73
    node_insertion_loss_db: float = 1.4
    dark_count_prob_per_gate: float = 40.0 * 300e-12
    indistinguishability: float = 1.0
    clock_hz: float = 1e9
    time_bin_separation_s: float = 500e-12
    pulse_duration_s: float = 75e-12
    misalignment_phase_rad: float = 0.0
    gate_efficiency: float = 1.0
    z_error_floor: float = 0.0

    def __post_init__(self):
        for name in ("detector_efficiency", "dark_count_prob_per_gate",
                     "indistinguishability", "gate_efficiency", "z_error_floor"):
            val = getattr(self, name)
            if not 0 <= val <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.channel_loss_db_per_arm < 0 or self.node_insertion_loss_db < 0:
            raise ValueError("losses must be non-negative")
        if not self.clock_hz > 0:
            raise ValueError("clock rate must be positive")
        if not 0 < self.time_bin_separation_s <= 1 / self.clock_hz:
            raise ValueError("time-bin separation must lie within one clock period")
        if not self.pulse_duration_s > 0:
            raise ValueError("pulse duration must be positive")

    @property
    def arm_transmittance(self) -> float:
        return 10 ** (-self.channel_loss_db_per_arm / 10)

    @property
    def node_efficiency(self) -> float:
        """Detection efficiency behind the beamsplitter input (eta_total)."""
        return (
            self.detector_efficiency
            * 10 ** (-self.node_insertion_loss_db / 10)
            * self.gate_efficiency
        )

    @property
    def total_loss_db(self) -> float:
        return 2 * self.channel_loss_db_per_arm

    def with_total_loss(self, total_loss_db: float) -> "SystemModel":
        return replace(self, channel_loss_db_per_arm=total_loss_db / 2)


# Least-squares fit (log gains, QBERs) to the bundled fixtures at all seven
# losses, rounded; the w-w cell is excluded from the fit.
CALIBRATION = {
    "indistinguishability": 0.97,
    "gate_efficiency": 0.93,
    "z_error_floor": 0.0075,
}


def calibrated_model(total_loss_db: float = 30.0, **overrides) -> SystemModel:
    """SystemModel with the repository's calibrated free parameters."""
    params = {**CALIBRATION, **overrides}
    return SystemModel(channel_loss_db_per_arm=total_loss_db / 2, **params)


def loss_to_distance_km(loss_db: float) -> float:
    return loss_db / FIBRE_LOSS_DB_PER_KM


@dataclass(frozen=True)
class BellOutcome:
    p_singlet: float
    p_error_given_singlet: float

    def __post_init__(self):
        for name in ("p_singlet", "p_error_given_singlet"):
            val = getattr(self, name)
            if not -1e-15 <= val <= 1 + 1e-15:
                raise ValueError(f"{name} outside [0, 1]: {val}")


def click_probability(intensity, model: SystemModel):
    """Threshold-detector click probability for mean photon number ``intensity``
    arriving at the node."""
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ValueError("intensity must be non-negative")
    p = 1.0 - (1.0 - model.dark_count_prob_per_gate) * np.exp(-model.node_efficiency * intensity)
    return p if p.ndim else float(p)


def _theta_grid(points: int) -> np.ndarray:
    if points < MIN_QUADRATURE_POINTS:
        raise ValueError(f"need at least {MIN_QUADRATURE_POINTS} quadrature points")
    return 2 * np.pi * np.arange(points) / points


def _bin_amplitudes(basis: str, bit: int, mu: float):
    """(early, late) intensity and phase of one user's state before the channel."""
    if basis == "Z":
        return (mu, 0.0) if bit == 0 else (0.0, mu), (0.0, 0.0)
    if basis == "X":
        return (mu / 2, mu / 2), (0.0, math.pi * bit)
    raise ValueError(f"unknown basis {basis!r}")


def slot_intensities(basis, bit_a, bit_b, mu_a, mu_b, model, theta):
    """Mean photon numbers of the four (detector, bin) slots at each theta.

    Returns an array of shape (4, len(theta)) in :data:`SLOTS` order.
    """
    if mu_a < 0 or mu_b < 0:
        raise ValueError("fluxes must be non-negative")
    t = model.arm_transmittance
    (ia_e, ia_l), (pa_e, pa_l) = _bin_amplitudes(basis, bit_a, mu_a * t)
    (ib_e, ib_l), (pb_e, pb_l) = _bin_amplitudes(basis, bit_b, mu_b * t)
    xi = model.indistinguishability
    # Bob's late bin carries the residual inter-user phase error
    phase_e = theta + pb_e - pa_e
    phase_l = theta + pb_l - pa_l + model.misalignment_phase_rad
    cross_e = 2 * xi * math.sqrt(ia_e * ib_e) * np.cos(phase_e)
    cross_l = 2 * xi * math.sqrt(ia_l * ib_l) * np.cos(phase_l)
    tot_e = ia_e + ib_e
    tot_l = ia_l + ib_l
    out = np.array([
        (tot_e + cross_e) / 2,
        (tot_l + cross_l) / 2,
        (tot_e - cross_e) / 2,
        (tot_l - cross_l) / 2,
    ])
    return np.maximum(out, 0.0)


def click_pattern_probabilities(
    basis, bit_a, bit_b, mu_a, mu_b, model, points=DEFAULT_QUADRATURE_POINTS
) -> np.ndarray:
    """Theta-averaged probability of all 16 click patterns.

    Pattern index k has bit ``i`` set when slot ``SLOTS[i]`` clicks.
    """
    theta = _theta_grid(points)
    p = click_probability(slot_intensities(basis, bit_a, bit_b, mu_a, mu_b, model, theta), model)
    probs = np.empty(16)
    for k in range(16):
        term = np.ones_like(theta)
        for i in range(4):
            term = term * (p[i] if (k >> i) & 1 else 1.0 - p[i])
        probs[k] = term.mean()
    return probs


# Psi^- patterns: (d1 early, d2 late) and (d1 late, d2 early), exclusively.
PSI_MINUS_PATTERNS = (0b1001, 0b0110)


def bell_outcome(
    basis: str,
    bit_a: int,
    bit_b: int,
    mu_a: float,
    mu_b: float,
    model: SystemModel,
    points: int = DEFAULT_QUADRATURE_POINTS,
) -> BellOutcome:
    """Probability of a Psi^- announcement and of it carrying a bit error.

    Psi^- heralds anticorrelated bits in both bases, so an announced event
    is an error when ``bit_a == bit_b``.  In the Z basis the error
    assignment is additionally flipped with probability ``z_error_floor``.
    """
    theta = _theta_grid(points)
    p = click_probability(slot_intensities(basis, bit_a, bit_b, mu_a, mu_b, model, theta), model)
    d1e, d1l, d2e, d2l = p
    singlet = d1e * d2l * (1 - d1l) * (1 - d2e) + d1l * d2e * (1 - d1e) * (1 - d2l)
    p_singlet = float(singlet.mean())
    err = 1.0 if bit_a == bit_b else 0.0
    if basis == "Z":
        f = model.z_error_floor
        err = err * (1 - f) + (1 - err) * f
    return BellOutcome(p_singlet, err)


def gain_and_qber(basis, mu_a, mu_b, model, points=DEFAULT_QUADRATURE_POINTS):
    """Gain and QBER averaged over equiprobable bit choices."""
    gain = 0.0
    wrong = 0.0
    for bit_a in (0, 1):
        for bit_b in (0, 1):
            out = bell_outcome(basis, bit_a, bit_b, mu_a, mu_b, model, points)
            gain += out.p_singlet / 4
            wrong += out.p_singlet * out.p_error_given_singlet / 4
    qber = wrong / gain if gain > 0 else 0.0
    return gain, qber


def simulate_measurements(
    params: ProtocolParameters,
    model: SystemModel,
    n_total: float,
    points: int = DEFAULT_QUADRATURE_POINTS,
    label: str = "",
) -> MeasurementSet:
    z_gain, z_qber = gain_and_qber("Z", params.s, params.s, model, points)
    mus = params.x_fluxes
    x_gain = np.zeros((3, 3))
    x_qber = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            x_gain[i, j], x_qber[i, j] = gain_and_qber("X", mus[i], mus[j], model, points)
    return MeasurementSet(
        params=params,
        n_total=n_total,
        z_gain=z_gain,
        z_qber=z_qber,
        x_gain=x_gain,
        x_qber=x_qber,
        clock_hz=model.clock_hz,
        label=label,
    )


def mode_overlap(delay_s: float, model: SystemModel) -> float:
    """Indistinguishability of two Gaussian pulses offset by ``delay_s``.

    Amplitude envelopes with intensity FWHM T overlap as exp(-ln2 d^2 / T^2).
    """
    tau = model.pulse_duration_s / math.sqrt(math.log(2))
    return model.indistinguishability * math.exp(-((delay_s / tau) ** 2))


def hom_coincidence(mu: float, delay_s: float, model: SystemModel,
                    points: int = DEFAULT_QUADRATURE_POINTS) -> float:
    """Probability that both beamsplitter outputs click for single-bin pulses."""
    theta = _theta_grid(points)
    i = mu * model.arm_transmittance
    xi = mode_overlap(delay_s, model) if math.isfinite(delay_s) else 0.0
    cross = 2 * xi * i * np.cos(theta)
    p1 = click_probability(np.maximum((2 * i + cross) / 2, 0.0), model)
    p2 = click_probability(np.maximum((2 * i - cross) / 2, 0.0), model)
    return float(np.mean(p1 * p2))


def hom_visibility(mu: float, delay_s: float, model: SystemModel,
                   points: int = DEFAULT_QUADRATURE_POINTS) -> float:
    """V = [C(inf) - C(delay)] / C(inf)."""
    if not mu > 0:
        raise ValueError("flux must be positive")
    c_far = hom_coincidence(mu, math.inf, model, points)
    return (c_far - hom_coincidence(mu, delay_s, model, points)) / c_far


# --- laser detuning -------------------------------------------------------

def phase_error(delta_t_s, delta_f_hz):
    """Inter-bin phase error 2 pi dt df accumulated by a frequency offset."""
    if np.any(np.asarray(delta_t_s) < 0):
        raise ValueError("time-bin separation must be non-negative")
    return 2 * np.pi * np.asarray(delta_t_s) * np.asarray(delta_f_hz) + 0.0


def x_qber_penalty(delta_phi_rad):
    """Increase of the X-basis QBER above its 25% floor for a phase error."""
    return 0.25 * (1 - np.cos(delta_phi_rad))


@dataclass(frozen=True)
class DetuningPoint:
    delta_f_hz: float
    clock_hz: float
    delta_phi_rad: float
    qber_penalty: float


def detuning_point(delta_f_hz: float, clock_hz: float) -> DetuningPoint:
    """Phase error and QBER penalty for equally spaced bins (dt = half a period)."""
    if not clock_hz > 0:
        raise ValueError("clock rate must be positive")
    phi = float(phase_error(1 / (2 * clock_hz), delta_f_hz))
    return DetuningPoint(float(delta_f_hz), float(clock_hz), phi, float(x_qber_penalty(phi)))


def detuning_map(clock_hz, detuning_hz, capped: bool = True) -> np.ndarray:
    """X-basis QBER on a (clock, detuning) grid, equally spaced bins.

    Rows follow ``clock_hz``, columns ``detuning_hz``.  With ``capped`` the
    QBER saturates at 50%, the random-guess worst case.
    """
    clock = np.atleast_1d(np.asarray(clock_hz, dtype=float))
    detuning = np.atleast_1d(np.asarray(detuning_hz, dtype=float))
    if np.any(clock <= 0):
        raise ValueError("clock rates must be positive")
    dt = 1 / (2 * clock)
    qber = WCP_X_QBER_FLOOR + x_qber_penalty(phase_error(dt[:, None], detuning[None, :]))
    return np.minimum(qber, 0.5) if capped else qber


def drift_to_qber_series(delta_f_hz, clock_hz: float) -> np.ndarray:
    """QBER penalty for each sample of a measured beat-note series."""
    samples = np.asarray(delta_f_hz, dtype=float)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise ValueError(f"non-finite detuning sample at index {int(bad[0])}")
    return x_qber_penalty(phase_error(1 / (2 * clock_hz), samples))


# --- phase randomisation ----------------------------------------------------

def phase_randomization_density(x):
    """Density of (1 + cos phi) / 2 for phi uniform on [0, 2 pi)."""
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0) | (x >= 1)):
        raise ValueError("density is defined on the open interval (0, 1)")
    return 1.0 / (np.pi * np.sqrt(x * (1 - x)))


def phase_randomization_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return 2.0 / np.pi * np.arcsin(np.sqrt(x))
