"""Fitting routines behind the committed jitter and capacity defaults.

Jitter: for a given tail decay, the tail fraction is found by bisection so
the mask acceptance hits its target; the tail decay is in turn bisected so
the next-group leakage hits its target.  At every step the core width is
re-solved so the composite FWHM stays fixed, and the mean transit delay puts
the density's peak at the centre of the gate.

Capacity: one capacity-free session per mean photon number gives the
per-frame report and sifted-bit counts; the queue is then replayed offline
while bisecting on the per-report service rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from ..detector import FRAME_BITS, JitterModel, mask_fractions
from ..photonics import ClockBase
from ..protocol import CapacityModel, CapacityQueue
from .config import SimConfig

__all__ = [
    "CalibrationError",
    "JitterFit",
    "shape_stats",
    "calibrate_jitter",
    "capacity_profile",
    "plateau_rate",
    "calibrate_capacity",
]

GAUSS_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class JitterFit:
    model: JitterModel
    acceptance: float
    leakage: float
    fwhm_ps: float


def shape_stats(sigma: float, f: float, tau: float) -> tuple[float, float]:
    """(mode, FWHM) of the jitter density with zero offset."""
    m = JitterModel(sigma, f, tau, 0.0)
    pdf = lambda t: float(m.pdf(t))  # noqa: E731
    res = optimize.minimize_scalar(lambda t: -pdf(t), bounds=(-sigma, sigma + tau), method="bounded",
                                   options={"xatol": 1e-4})
    mode = float(res.x)
    half = pdf(mode) / 2
    g = lambda t: pdf(t) - half  # noqa: E731
    left = optimize.brentq(g, mode - 10 * sigma - 1, mode, xtol=1e-6)
    right = optimize.brentq(g, mode, mode + 10 * sigma + 40 * tau + 1, xtol=1e-6)
    return mode, right - left


def _sigma_for_fwhm(f: float, tau: float, target: float) -> float:
    hi = target / GAUSS_FWHM
    if f == 0.0:
        return hi
    return optimize.brentq(lambda s: shape_stats(s, f, tau)[1] - target, 1e-3 * target, hi * 1.0001, xtol=1e-6)


def _model(f: float, tau: float, fwhm_ps: float, clock: ClockBase) -> JitterModel:
    sigma = _sigma_for_fwhm(f, tau, fwhm_ps)
    mode, _ = shape_stats(sigma, f, tau)
    centre = clock.gate_width_ps / 2 - clock.phase_offset_ps
    return JitterModel(sigma, f, tau, centre - mode)


def _fraction_for_acceptance(tau: float, acceptance: float, fwhm_ps: float, clock: ClockBase, f_max: float) -> float:
    acc = lambda f: mask_fractions(_model(f, tau, fwhm_ps, clock), clock).accepted - acceptance  # noqa: E731
    lo, hi = acc(0.0), acc(f_max)
    if lo < 0 or hi > 0:
        raise CalibrationError(
            f"acceptance {acceptance} unreachable at tail decay {tau:.1f} ps; "
            f"achievable range [{hi + acceptance:.4f}, {lo + acceptance:.4f}]"
        )
    return optimize.brentq(acc, 0.0, f_max, xtol=1e-7)


def calibrate_jitter(
    acceptance: float = 0.93,
    leakage: float = 0.005,
    fwhm_ps: float = 550.0,
    clock: ClockBase = ClockBase(),
    tau_bounds: tuple[float, float] = (20.0, 4000.0),
    f_max: float = 0.9,
) -> JitterFit:
    """Fit the jitter density to mask acceptance, leakage and FWHM targets.

    A perfect mask (acceptance 1, leakage 0) is met by a delta response at
    the gate centre.  Targets with no solution raise CalibrationError, naming
    the leakage range reachable at the requested acceptance.
    """
    if acceptance == 1.0 and leakage == 0.0:
        model = JitterModel.delta(clock.gate_width_ps / 2 - clock.phase_offset_ps)
        return JitterFit(model, 1.0, 0.0, 0.0)
    if not (0 < acceptance < 1 and 0 < leakage < 1 and acceptance + leakage <= 1):
        raise CalibrationError("targets must lie in (0, 1) with acceptance + leakage <= 1")

    def leak_error(tau: float) -> float:
        f = _fraction_for_acceptance(tau, acceptance, fwhm_ps, clock, f_max)
        return mask_fractions(_model(f, tau, fwhm_ps, clock), clock).leak_next - leakage

    # short tails cannot pull the acceptance down far enough; start from the
    # shortest decay at which the acceptance target is reachable
    lo_tau = None
    for tau in np.geomspace(*tau_bounds, 24):
        try:
            lo = leak_error(tau)
        except CalibrationError:
            continue
        lo_tau = tau
        break
    if lo_tau is None:
        raise CalibrationError(f"acceptance {acceptance} unreachable for tail decays in {tau_bounds} ps")
    hi_tau = tau_bounds[1]
    hi = leak_error(hi_tau)
    if lo > 0 or hi < 0:
        raise CalibrationError(
            f"leakage {leakage} unreachable with acceptance {acceptance} and FWHM {fwhm_ps} ps; "
            f"achievable leakage range [{lo + leakage:.5f}, {hi + leakage:.5f}]"
        )
    tau = optimize.brentq(leak_error, lo_tau, hi_tau, xtol=1e-4)
    f = _fraction_for_acceptance(tau, acceptance, fwhm_ps, clock, f_max)
    model = _model(f, tau, fwhm_ps, clock)
    mf = mask_fractions(model, clock)
    _, width = shape_stats(model.core_sigma_ps, f, tau)
    return JitterFit(model, mf.accepted, mf.leak_next, width)


def capacity_profile(config: SimConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-frame (reports, sifted bits) of a capacity-free run, and its duration."""
    from .engine import run_session

    cfg = config.replace(capacity=replace(config.capacity, enabled=False))
    session = run_session(cfg)
    n = session.metrics.frames_offered
    reports = np.asarray(session.alice_reports, dtype=np.int64)
    idx = (session.alice_tags[:, 0] - cfg.initial_frame_number) % (1 << 32)
    sifted = np.bincount(idx, minlength=n)
    return reports, sifted, session.metrics.duration_s


def plateau_rate(reports: np.ndarray, sifted: np.ndarray, duration_s: float, model: CapacityModel,
                 frame_duration_s: float) -> float:
    """Sifted rate after replaying the capacity queue over one profile."""
    queue = CapacityQueue(model)
    kept = 0
    for i, (r, s) in enumerate(zip(reports.tolist(), sifted.tolist())):
        if queue.offer((i + 1) * frame_duration_s, r):
            kept += s
    return kept / duration_s


def calibrate_capacity(
    config: SimConfig,
    target_bps: float = 1.0e6,
    mu_values=(0.2, 0.3, 0.4),
    bounds_hz: tuple[float, float] = (1e5, 1e8),
) -> CapacityModel:
    """Per-report service rate whose saturated sifted rate averages ``target_bps``
    over ``mu_values``; the other queue parameters are kept."""
    frame_s = FRAME_BITS * config.clock.pulse_period_ps * 1e-12
    profiles = [capacity_profile(config.with_mu(mu)) for mu in mu_values]
    base = replace(config.capacity, enabled=True)

    def err(log_rate: float) -> float:
        model = replace(base, report_rate_hz=math.exp(log_rate))
        rates = [plateau_rate(r, s, d, model, frame_s) for r, s, d in profiles]
        return float(np.mean(rates)) - target_bps

    lo, hi = math.log(bounds_hz[0]), math.log(bounds_hz[1])
    if err(lo) > 0 or err(hi) < 0:
        raise CalibrationError(f"target {target_bps:g} bps not reachable with report rates in {bounds_hz}")
    log_rate = optimize.brentq(err, lo, hi, xtol=1e-5)
    return replace(base, report_rate_hz=float(f"{math.exp(log_rate):.5g}"))
