"""Attenuated pulse source, free-space loss budget and Bob's polarization optics.

All randomness comes from an explicit ``numpy.random.Generator``; nothing here
holds state between calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

__all__ = [
    "PolarizationState",
    "ProtocolKind",
    "RouteOutcome",
    "LinkBudget",
    "ClockBase",
    "PhotonBatch",
    "DAY_BACKGROUND_HZ",
    "NIGHT_BACKGROUND_HZ",
    "overlap",
    "sample_photon_number",
    "sample_nonempty_slots",
    "survive_channel",
    "route_polarization",
    "transmission_probability",
    "sample_background",
    "predict_sift_rate",
    "b92_state",
    "bb84_state",
]

DAY_BACKGROUND_HZ = 2.0e6
NIGHT_BACKGROUND_HZ = 1.0e3


class PolarizationState(IntEnum):
    """Linear polarization states; the value is the angle in degrees."""

    H = 0
    P45 = 45
    V = 90
    M45 = 135


class ProtocolKind(str, Enum):
    B92 = "b92"
    BB84 = "bb84"


class RouteOutcome(IntEnum):
    DETECTOR_0 = 0
    DETECTOR_1 = 1
    ABSORBED = 2


def overlap(a: PolarizationState, b: PolarizationState) -> float:
    """|<a|b>|^2 for linear polarizations."""
    return math.cos(math.radians(a - b)) ** 2


def b92_state(bit: int) -> PolarizationState:
    return PolarizationState.P45 if bit else PolarizationState.V


def bb84_state(basis: int, bit: int) -> PolarizationState:
    if basis == 0:
        return PolarizationState.V if bit else PolarizationState.H
    return PolarizationState.M45 if bit else PolarizationState.P45


@dataclass(frozen=True)
class LinkBudget:
    mu: float = 0.15
    path_loss_db: float = 5.0
    filter_transmissivity: float = 0.48
    quantum_efficiency: float = 0.5
    extinction_ratio: float = 500.0
    background_rate_hz: float = NIGHT_BACKGROUND_HZ
    splitter_ratio: float = 0.5
    quantum_wavelength_nm: float = 845.0
    classical_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        for name in ("filter_transmissivity", "quantum_efficiency", "splitter_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.path_loss_db < 0:
            raise ValueError("path_loss_db must be >= 0")
        if not self.extinction_ratio > 1:
            raise ValueError("extinction_ratio must exceed 1")
        if self.background_rate_hz < 0:
            raise ValueError("background_rate_hz must be >= 0")

    @property
    def channel_transmission(self) -> float:
        """Per-photon survival probability from transmit aperture to the APD."""
        return 10.0 ** (-self.path_loss_db / 10.0) * self.filter_transmissivity

    @property
    def leak_probability(self) -> float:
        if math.isinf(self.extinction_ratio):
            return 0.0
        return 1.0 / (self.extinction_ratio + 1.0)

    def with_mu(self, mu: float) -> LinkBudget:
        return replace(self, mu=mu)


@dataclass(frozen=True)
class ClockBase:
    bit_period_ps: int = 800
    pulse_spacing_bits: int = 4
    pulse_width_ps: int = 250
    board_word_bits: int = 10
    board_clock_hz: float = 1.25e8
    phase_offset_ps: int = 0

    def __post_init__(self):
        if self.bit_period_ps <= 0 or self.pulse_spacing_bits < 2:
            raise ValueError("bit_period_ps must be positive and pulse_spacing_bits >= 2")

    @property
    def line_rate_hz(self) -> float:
        return self.board_clock_hz * self.board_word_bits

    @property
    def pulse_period_ps(self) -> int:
        return self.bit_period_ps * self.pulse_spacing_bits

    @property
    def transmission_rate_hz(self) -> float:
        return self.line_rate_hz / self.pulse_spacing_bits

    @property
    def gate_width_ps(self) -> int:
        return 2 * self.bit_period_ps

    def emit_time_ps(self, slot_index):
        return slot_index * self.pulse_period_ps + self.phase_offset_ps


@dataclass(frozen=True)
class PhotonBatch:
    slot_index: int
    count: int
    state: PolarizationState
    emit_time_ps: int


def sample_photon_number(mu: float, rng: np.random.Generator, size=None):
    """Poisson photon number of an attenuated pulse."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if mu == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    return rng.poisson(mu, size)


def _zero_truncated_poisson(mu: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # inverse CDF over n >= 1; the table runs until the tail underflows
    n_max = max(8, int(mu + 12 * math.sqrt(mu) + 12))
    n = np.arange(1, n_max + 1)
    log_pmf = n * math.log(mu) - mu - np.cumsum(np.log(n))
    pmf = np.exp(log_pmf) / -math.expm1(-mu)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64) + 1


def sample_nonempty_slots(mu: float, n_slots: int, rng: np.random.Generator):
    """Sparse equivalent of ``sample_photon_number`` over ``n_slots`` pulses.

    Returns (slot offsets, photon counts) for the pulses that carry at least one
    photon.  Empty-pulse gaps are geometric and counts are zero-truncated
    Poisson, which reproduces the per-pulse Poisson law exactly while touching
    only the occupied slots.
    """
    if mu == 0 or n_slots == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    p = -math.expm1(-mu)
    expected = n_slots * p
    draw = int(expected + 6 * math.sqrt(expected) + 16)
    positions = np.cumsum(rng.geometric(p, draw)) - 1
    while positions[-1] < n_slots:
        more = np.cumsum(rng.geometric(p, draw)) + positions[-1]
        positions = np.concatenate((positions, more))
    positions = positions[positions < n_slots]
    return positions, _zero_truncated_poisson(mu, len(positions), rng)


def survive_channel(batch: PhotonBatch, budget: LinkBudget, rng: np.random.Generator) -> PhotonBatch:
    """Binomially thin a pulse by the path loss and filter transmissivity."""
    if batch.count == 0:
        return batch
    survivors = int(rng.binomial(batch.count, budget.channel_transmission))
    return replace(batch, count=survivors)


def transmission_probability(state: PolarizationState, analyzer: PolarizationState, budget: LinkBudget) -> float:
    """Probability of passing an analyzer with a finite extinction floor."""
    c2 = overlap(state, analyzer)
    leak = budget.leak_probability
    return c2 * (1.0 - leak) + (1.0 - c2) * leak


# B92 receiver: arm 0 -> analyzer -45 on detector 0, arm 1 -> analyzer H on detector 1
B92_ANALYZERS = (PolarizationState.M45, PolarizationState.H)


def route_polarization(state: PolarizationState, budget: LinkBudget, rng: np.random.Generator) -> RouteOutcome:
    """Route one photon through the 50/50 splitter and one transmission analyzer."""
    arm = 0 if rng.random() < budget.splitter_ratio else 1
    analyzer = B92_ANALYZERS[arm]
    if rng.random() < transmission_probability(state, analyzer, budget):
        return RouteOutcome(arm)
    return RouteOutcome.ABSORBED


def sample_background(rate_hz: float, window_ps: float, rng: np.random.Generator, start_ps: float = 0.0) -> np.ndarray:
    """Homogeneous Poisson arrival times (ps, sorted) over one detector window."""
    if rate_hz < 0 or window_ps <= 0:
        raise ValueError("rate must be >= 0 and window positive")
    if rate_hz == 0:
        return np.empty(0, dtype=np.float64)
    n = rng.poisson(rate_hz * window_ps * 1e-12)
    return np.sort(start_ps + rng.random(n) * window_ps)


def predict_sift_rate(budget: LinkBudget, clock: ClockBase, protocol: ProtocolKind) -> float:
    """Ideal sifted-key rate in bits/s.

    Excludes the gate mask acceptance, coincidence discards and processing
    capacity; those are applied by the simulator.
    """
    if budget.mu < 0:
        raise ValueError("mu must be non-negative")
    conclusive = 0.25 if ProtocolKind(protocol) is ProtocolKind.B92 else 0.5
    return (
        clock.transmission_rate_hz
        * budget.mu
        * budget.channel_transmission
        * budget.quantum_efficiency
        * conclusive
    )
