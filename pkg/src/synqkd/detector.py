"""APD response: quantum efficiency, timing jitter, bin gating and coincidences.

The jitter density is a Gaussian core plus, with probability ``tail_fraction``,
an exponentially distributed extra delay (an exponentially modified Gaussian).
Gating places the pulse centre at the start of bin 0 of its group; the mean
transit delay ``offset_ps`` moves the detection peak into the gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

from .photonics import ClockBase, LinkBudget

__all__ = [
    "FRAME_BITS",
    "Cause",
    "JitterModel",
    "DetectionEvent",
    "GateDecision",
    "MaskFractions",
    "sample_jitter",
    "detect",
    "gate",
    "gate_times",
    "coincidence_filter",
    "histogram",
    "fwhm",
    "mass_span",
    "mask_fractions",
    "monte_carlo_mask_fractions",
    "apply_dead_time",
]

FRAME_BITS = 2048


class Cause(IntEnum):
    SIGNAL = 0
    INTERSYMBOL = 1
    BACKGROUND = 2
    LEAK = 3

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class JitterModel:
    # calibrated by synqkd.harness.calibrate.calibrate_jitter against a 93 %
    # mask acceptance, 0.5 % next-group leakage and a 550 ps FWHM
    core_sigma_ps: float = 220.8640
    tail_fraction: float = 0.241245
    tail_decay_ps: float = 626.257
    offset_ps: float = 784.104
    # detector dead time after each click; 0 disables it
    dead_time_ps: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.tail_fraction < 1.0:
            raise ValueError("tail_fraction must lie in [0, 1)")
        if self.core_sigma_ps < 0 or self.tail_decay_ps < 0 or self.dead_time_ps < 0:
            raise ValueError("jitter widths and dead time must be non-negative")

    @classmethod
    def delta(cls, offset_ps: float = 0.0) -> JitterModel:
        return cls(core_sigma_ps=0.0, tail_fraction=0.0, tail_decay_ps=0.0, offset_ps=offset_ps)

    def pdf(self, t):
        """Density of the detection delay (ps^-1); requires a non-zero core."""
        t = np.asarray(t, dtype=float)
        s, f, tau = self.core_sigma_ps, self.tail_fraction, self.tail_decay_ps
        z = (t - self.offset_ps) / s
        core = np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))
        if f == 0.0 or tau == 0.0:
            return core
        return (1 - f) * core + f * _emg_scaled(z, s / tau) / tau

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        s, f, tau = self.core_sigma_ps, self.tail_fraction, self.tail_decay_ps
        z = (t - self.offset_ps) / s
        core = special.ndtr(z)
        if f == 0.0 or tau == 0.0:
            return core
        tail = core - _emg_scaled(z, s / tau)
        return (1 - f) * core + f * tail


def _emg_scaled(z, k):
    """exp(k^2/2 - k z) * erfc((k - z)/sqrt 2) / 2, stable on both sides."""
    arg = (k - z) / math.sqrt(2)
    with np.errstate(over="ignore", invalid="ignore"):
        left = np.exp(-0.5 * z * z) * special.erfcx(arg)
        right = np.exp(0.5 * k * k - k * z) * special.erfc(arg)
    return 0.5 * np.where(arg > 0, left, right)


@dataclass(frozen=True)
class DetectionEvent:
    time_ps: int
    detector_id: int
    slot_index: int | None
    cause: Cause
    arm: int = 0

    def __post_init__(self):
        if self.time_ps < 0:
            raise ValueError("detection time must be non-negative")
        if self.cause is Cause.BACKGROUND and self.slot_index is not None:
            raise ValueError("background events have no originating slot")


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    group: int
    bin_in_group: int
    frame_bit_position: int
    detector_id: int
    time_ps: int
    arm: int = 0

    @property
    def frame_index(self) -> int:
        return self.group // FRAME_BITS


@dataclass(frozen=True)
class MaskFractions:
    """Where a pulse's detections land relative to the gate grid."""

    accepted: float
    leak_next: float
    other_accepted: float
    rejected: float

    @property
    def total(self) -> float:
        return self.accepted + self.leak_next + self.other_accepted + self.rejected


def sample_jitter(model: JitterModel, rng: np.random.Generator, size=None):
    """Detection delay in ps: Gaussian core, plus an exponential tail with
    probability ``tail_fraction``."""
    n = 1 if size is None else size
    delay = model.offset_ps + model.core_sigma_ps * rng.standard_normal(n)
    if model.tail_fraction > 0.0:
        tail = rng.random(n) < model.tail_fraction
        delay = delay + np.where(tail, rng.exponential(model.tail_decay_ps or 1.0, n), 0.0)
    return float(delay[0]) if size is None else delay


def detect(
    time_ps: float,
    detector_id: int,
    budget: LinkBudget,
    model: JitterModel,
    rng: np.random.Generator,
    slot_index: int | None = None,
    cause: Cause = Cause.SIGNAL,
    arm: int = 0,
) -> DetectionEvent | None:
    """One photon arriving at an APD; fires with the quantum efficiency."""
    if rng.random() >= budget.quantum_efficiency:
        return None
    t = int(round(time_ps + sample_jitter(model, rng)))
    if t < 0:
        return None
    return DetectionEvent(t, detector_id, slot_index, cause, arm)


def gate(event: DetectionEvent, clock: ClockBase) -> GateDecision:
    if event.time_ps < 0:
        raise ValueError("negative detection time")
    b = event.time_ps // clock.bit_period_ps
    group, in_group = divmod(b, clock.pulse_spacing_bits)
    return GateDecision(
        accepted=in_group < 2,
        group=group,
        bin_in_group=in_group,
        frame_bit_position=group % FRAME_BITS,
        detector_id=event.detector_id,
        time_ps=event.time_ps,
        arm=event.arm,
    )


def gate_times(times_ps: np.ndarray, clock: ClockBase):
    """Vectorised gate: returns (group, bin_in_group, accepted)."""
    times_ps = np.asarray(times_ps, dtype=np.int64)
    if times_ps.size and times_ps.min() < 0:
        raise ValueError("negative detection time")
    b = times_ps // clock.bit_period_ps
    group, in_group = np.divmod(b, clock.pulse_spacing_bits)
    return group, in_group, in_group < 2


def coincidence_filter(decisions: Sequence[GateDecision]) -> list[GateDecision]:
    """Drop the group if two detectors fired in it; otherwise keep the earliest."""
    accepted = [d for d in decisions if d.accepted]
    if not accepted:
        return []
    if len({d.group for d in accepted}) > 1:
        raise ValueError("decisions span more than one group")
    if len({(d.arm, d.detector_id) for d in accepted}) > 1:
        return []
    return [min(accepted, key=lambda d: d.time_ps)]


def histogram(events: Iterable[DetectionEvent] | np.ndarray, modulo_ps: float, bin_width_ps: float = 12.2):
    """Fold arrival times modulo the pulse period and bin them.

    Returns (bin_start_ps, counts).  Accepts events or a plain time array.
    """
    if bin_width_ps <= 0:
        raise ValueError("bin_width_ps must be positive")
    if isinstance(events, np.ndarray):
        times = events
    else:
        times = np.array([e.time_ps for e in events], dtype=np.int64)
    if times.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    n_bins = int(math.ceil(modulo_ps / bin_width_ps))
    if np.issubdtype(times.dtype, np.integer) and float(modulo_ps).is_integer():
        return np.arange(n_bins) * bin_width_ps, _apportion(times, int(modulo_ps), bin_width_ps, n_bins)
    folded = np.mod(times.astype(float), modulo_ps)
    idx = np.minimum((folded // bin_width_ps).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return np.arange(n_bins) * bin_width_ps, counts


def _apportion(times: np.ndarray, period: int, bin_width_ps: float, n_bins: int) -> np.ndarray:
    """Histogram of whole-picosecond stamps, each spread over its 1 ps interval.

    Plain binning would alias: a 12.2 ps bin holds 12 or 13 integer stamps.
    Fractional counts are rounded by largest remainder so the total is exact.
    """
    per_ps = np.bincount(np.mod(times, period), minlength=period)
    cum = np.concatenate(([0], np.cumsum(per_ps)))
    edges = np.minimum(np.arange(n_bins + 1) * bin_width_ps, period)
    exact = np.diff(np.interp(edges, np.arange(period + 1), cum))
    counts = np.floor(exact + 1e-9).astype(np.int64)
    short = int(len(times) - counts.sum())
    if short > 0:
        counts[np.argsort(-(exact - counts), kind="stable")[:short]] += 1
    return counts


def fwhm(bin_start_ps: np.ndarray, counts: np.ndarray) -> float | None:
    """FWHM by linear interpolation at the half-maximum crossings (circular)."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0 or counts.max() <= 0:
        return None
    width = bin_start_ps[1] - bin_start_ps[0] if len(bin_start_ps) > 1 else 1.0
    n = len(counts)
    peak = int(np.argmax(counts))
    half = counts[peak] / 2.0

    def crossing(step: int) -> float:
        i = peak
        for k in range(1, n):
            j = (peak + step * k) % n
            if counts[j] < half:
                # interpolate between centres of bins i and j
                frac = (counts[i] - half) / (counts[i] - counts[j])
                return (k - 1 + frac) * width
            i = j
        return n * width / 2

    return crossing(1) + crossing(-1)


def mass_span(bin_start_ps: np.ndarray, counts: np.ndarray, coverage: float = 0.99) -> float | None:
    """Width of the central interval holding ``coverage`` of the histogram."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return None
    width = bin_start_ps[1] - bin_start_ps[0]
    cum = np.cumsum(counts) / total
    lo_q, hi_q = (1 - coverage) / 2, 1 - (1 - coverage) / 2
    centres = bin_start_ps + width / 2
    return float(np.interp(hi_q, cum, centres) - np.interp(lo_q, cum, centres))


def mask_fractions(model: JitterModel, clock: ClockBase, groups: int = 6) -> MaskFractions:
    """Mask statistics of one pulse by quadrature of the jitter density."""
    period = clock.pulse_period_ps
    gate_w = clock.gate_width_ps
    phase = clock.phase_offset_ps
    if model.core_sigma_ps == 0.0:
        t = model.offset_ps + phase
        g, r = divmod(t, period)
        hit = r < gate_w
        return MaskFractions(float(hit and g == 0), float(hit and g == 1), float(hit and g not in (0, 1)), float(not hit))

    def mass(lo, hi):
        # split at the core centre so quad sees the narrow peak
        pts = [p for p in (model.offset_ps,) if lo < p < hi]
        val, _ = integrate.quad(model.pdf, lo - phase, hi - phase, points=pts or None, limit=200, epsabs=1e-13)
        return val

    accepted = mass(0, gate_w)
    leak = mass(period, period + gate_w)
    other = sum(mass(g * period, g * period + gate_w) for g in range(-groups, groups + 1) if g not in (0, 1))
    rejected = 1.0 - accepted - leak - other
    return MaskFractions(accepted, leak, other, rejected)


def monte_carlo_mask_fractions(model: JitterModel, clock: ClockBase, rng: np.random.Generator, n: int = 1_000_000):
    """Monte Carlo counterpart of :func:`mask_fractions`.

    Returns (MaskFractions, standard errors as MaskFractions).
    """
    t = clock.phase_offset_ps + sample_jitter(model, rng, n)
    g = np.floor_divide(t, clock.pulse_period_ps)
    in_gate = np.mod(t, clock.pulse_period_ps) < clock.gate_width_ps
    acc = np.mean(in_gate & (g == 0))
    leak = np.mean(in_gate & (g == 1))
    other = np.mean(in_gate & (g != 0) & (g != 1))
    rej = 1.0 - acc - leak - other
    se = [math.sqrt(max(p * (1 - p), 1e-300) / n) for p in (acc, leak, other, rej)]
    return MaskFractions(float(acc), float(leak), float(other), float(rej)), MaskFractions(*se)


def apply_dead_time(times_ps: np.ndarray, keys: np.ndarray, dead_time_ps: float, last_fire: dict[int, float]) -> np.ndarray:
    """Mask of clicks that survive each detector's dead time.

    ``times_ps`` must be sorted.  ``last_fire`` maps detector key to the time
    of its previous surviving click and is updated in place, so a stream can
    be processed in consecutive chunks.
    """
    keep = np.ones(len(times_ps), dtype=bool)
    if dead_time_ps <= 0:
        return keep
    for k in np.unique(keys).tolist():
        idx = np.flatnonzero(keys == k)
        last = last_fire.get(k, -math.inf)
        for i, t in zip(idx.tolist(), times_ps[idx].tolist()):
            if t - last < dead_time_ps:
                keep[i] = False
            else:
                last = t
        last_fire[k] = last
    return keep
