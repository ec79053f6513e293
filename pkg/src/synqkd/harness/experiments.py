"""Parameter sweeps and timing-histogram experiments, with their CSV forms."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..detector import FRAME_BITS, Cause, fwhm, histogram, mass_span
from ..protocol import generate_frame
from .config import SimConfig
from .engine import OpticalLink, SimMetrics, run

__all__ = [
    "SWEEP_HEADER",
    "JITTER_HEADER",
    "derive_seed",
    "sweep_mu",
    "sweep_csv",
    "JitterResult",
    "jitter_experiment",
    "jitter_csv",
]

SWEEP_HEADER = ("mu", "sifted_rate_bps", "qber", "frames_dropped")
JITTER_HEADER = ("bin_start_ps", "count_312MHz", "count_78MHz")
LINE_RATE_HZ = 1.25e9


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for the ``index``-th run of a sweep."""
    state = np.random.SeedSequence([seed, index]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def sweep_mu(config: SimConfig, mu_values, workers: int = 1) -> list[SimMetrics]:
    """One simulation per mean photon number, each with its own derived seed."""
    mu_values = [float(m) for m in mu_values]
    if any(m <= 0 for m in mu_values):
        raise ValueError("mean photon numbers must be positive")
    if mu_values != sorted(mu_values):
        raise ValueError("mean photon numbers must be sorted")
    configs = [config.with_mu(m).replace(seed=derive_seed(config.seed, i)) for i, m in enumerate(mu_values)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(run, configs))
    return [run(c) for c in configs]


def sweep_csv(results: list[SimMetrics], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for m in results:
        w.writerow((f"{m.mu:.4f}", f"{m.sifted_rate_bps:.1f}", f"{m.qber:.6f}", str(m.frames_dropped)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass
class JitterResult:
    rate_hz: float
    bin_start_ps: np.ndarray
    counts: np.ndarray
    fwhm_ps: float | None
    span99_ps: float | None  # central 99 % of signal clicks
    span999_ps: float | None
    events: int


def _arrival_times(config: SimConfig, n_events: int, include_background: bool):
    """APD click times from the full optical path, until ``n_events`` signal
    clicks; returns (times, is_background)."""
    ss = np.random.SeedSequence(config.seed)
    frame_rng, photon_rng, bg_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    link = OpticalLink(config, photon_rng, bg_rng)
    frame_ps = FRAME_BITS * config.clock.pulse_period_ps
    index, block, n_signal = 0, 64, 0
    chunks = []
    while n_signal < n_events:
        frames = [generate_frame(frame_rng, config.protocol, index + k) for k in range(block)]
        link.transmit(index, frames)
        index += block
        ev = link.release(index * frame_ps)
        if not include_background:
            ev = ev[ev[:, 2] != int(Cause.BACKGROUND)]
        n_signal += int(np.sum(ev[:, 2] != int(Cause.BACKGROUND)))
        chunks.append(ev[:, :3:2])
    ev = np.concatenate(chunks)
    return ev[:, 0], ev[:, 1] == int(Cause.BACKGROUND)


def jitter_experiment(
    config: SimConfig,
    rates_hz=(312.5e6, 78.125e6),
    n_events: int = 1_000_000,
    bin_width_ps: float = 12.2,
    include_background: bool = True,
) -> list[JitterResult]:
    """Folded arrival-time histograms of the detector output at each pulse rate."""
    out = []
    for rate in rates_hz:
        spacing = LINE_RATE_HZ / rate
        if abs(spacing - round(spacing)) > 1e-9:
            raise ValueError(f"{rate} Hz is not a whole-bit pulse spacing")
        cfg = config.replace(clock=replace(config.clock, pulse_spacing_bits=int(round(spacing))))
        t, bg = _arrival_times(cfg, n_events, include_background)
        t = t - cfg.clock.phase_offset_ps
        period = cfg.clock.pulse_period_ps
        start, counts = histogram(t, period, bin_width_ps)
        # spans describe the detector response, so they leave out background
        _, sig = histogram(t[~bg], period, bin_width_ps)
        out.append(JitterResult(rate, start, counts, fwhm(start, counts), mass_span(start, sig, 0.99),
                                mass_span(start, sig, 0.999), int(counts.sum())))
    return out


def jitter_csv(results: list[JitterResult], path: str | Path | None = None) -> str:
    """Histograms side by side; shorter periods are padded with zero counts."""
    if len(results) != 2:
        raise ValueError("the histogram CSV holds exactly two rates")
    n = max(len(r.counts) for r in results)
    width = results[0].bin_start_ps[1] - results[0].bin_start_ps[0]
    cols = [np.pad(r.counts, (0, n - len(r.counts))) for r in results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(JITTER_HEADER)
    for i in range(n):
        w.writerow((f"{i * width:.1f}", str(int(cols[0][i])), str(int(cols[1][i]))))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
