import math

import numpy as np
import pytest
from scipy import stats

from synqkd.photonics import (
    ClockBase,
    LinkBudget,
    PhotonBatch,
    PolarizationState as P,
    ProtocolKind,
    RouteOutcome,
    b92_state,
    bb84_state,
    overlap,
    predict_sift_rate,
    route_polarization,
    sample_background,
    sample_nonempty_slots,
    sample_photon_number,
    survive_channel,
    transmission_probability,
)


def poisson_pmf(mu, n):
    return math.exp(-mu) * mu**n / math.factorial(n)


def test_angle_map_and_overlap():
    assert (P.V, P.P45, P.H, P.M45) == (90, 45, 0, 135)
    assert overlap(P.V, P.H) == pytest.approx(0.0, abs=1e-15)
    assert overlap(P.V, P.M45) == pytest.approx(0.5)
    assert overlap(P.P45, P.M45) == pytest.approx(0.0, abs=1e-15)
    assert overlap(P.H, P.H) == 1.0


def test_state_maps():
    assert (b92_state(0), b92_state(1)) == (P.V, P.P45)
    assert [bb84_state(b, v) for b in (0, 1) for v in (0, 1)] == [P.H, P.V, P.P45, P.M45]


def test_clock_invariants():
    c = ClockBase()
    assert c.bit_period_ps * 1e-12 * 1.25e9 == pytest.approx(1.0)
    assert c.transmission_rate_hz == 312.5e6
    assert c.gate_width_ps == 1600
    assert c.emit_time_ps(10) == 32000
    assert ClockBase(phase_offset_ps=7).emit_time_ps(1) == 3207


def test_budget_validation():
    with pytest.raises(ValueError):
        LinkBudget(mu=-0.1)
    with pytest.raises(ValueError):
        LinkBudget(quantum_efficiency=1.5)
    with pytest.raises(ValueError):
        LinkBudget(extinction_ratio=1.0)
    with pytest.raises(ValueError):
        LinkBudget(path_loss_db=-1)
    with pytest.raises(ValueError):
        LinkBudget(background_rate_hz=-1)


def test_mu_zero_always_empty():
    rng = np.random.default_rng(0)
    assert sample_photon_number(0.0, rng) == 0
    assert not sample_photon_number(0.0, rng, 1000).any()


def test_single_and_multi_photon_fractions():
    rng = np.random.default_rng(1)
    n = sample_photon_number(0.1, rng, 1_000_000)
    assert np.mean(n == 1) == pytest.approx(0.0905, abs=0.003)
    assert np.mean(n >= 2) == pytest.approx(1 - math.exp(-0.1) * 1.1, abs=0.001)


@pytest.mark.parametrize("mu", [0.05, 0.1, 0.2])
def test_poisson_chi_square(mu):
    rng = np.random.default_rng(int(mu * 1000))
    n = sample_photon_number(mu, rng, 1_000_000)
    obs = np.bincount(n, minlength=4)[:3].astype(float)
    obs = np.append(obs, len(n) - obs.sum())
    exp = np.array([poisson_pmf(mu, k) for k in range(3)])
    exp = np.append(exp, 1 - exp.sum()) * len(n)
    assert stats.chisquare(obs, exp).pvalue > 0.01


@pytest.mark.parametrize("mu", [0.05, 0.15, 1.5])
def test_sparse_slots_are_poisson(mu):
    rng = np.random.default_rng(7)
    n_slots = 400_000
    pos, counts = sample_nonempty_slots(mu, n_slots, rng)
    assert pos.min() >= 0 and pos.max() < n_slots and np.all(np.diff(pos) > 0)
    full = np.zeros(n_slots, dtype=np.int64)
    full[pos] = counts
    obs = np.bincount(full, minlength=4)[:3].astype(float)
    obs = np.append(obs, n_slots - obs.sum())
    exp = np.array([poisson_pmf(mu, k) for k in range(3)])
    exp = np.append(exp, 1 - exp.sum()) * n_slots
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_sparse_slots_empty_cases():
    rng = np.random.default_rng(0)
    for mu, n in ((0.0, 100), (0.1, 0)):
        pos, counts = sample_nonempty_slots(mu, n, rng)
        assert pos.size == counts.size == 0


def test_survival_probability_value():
    assert LinkBudget().channel_transmission == pytest.approx(10 ** -0.5 * 0.48)
    assert LinkBudget().channel_transmission == pytest.approx(0.1518, abs=1e-4)


def test_survive_channel_trivial_cases():
    rng = np.random.default_rng(0)
    empty = PhotonBatch(0, 0, P.V, 0)
    assert survive_channel(empty, LinkBudget(), rng) == empty
    lossless = LinkBudget(path_loss_db=0, filter_transmissivity=1)
    batch = PhotonBatch(3, 5, P.P45, 9600)
    assert survive_channel(batch, lossless, rng) == batch


def test_thinning_composes():
    rng = np.random.default_rng(4)
    a = LinkBudget(path_loss_db=2, filter_transmissivity=1)
    b = LinkBudget(path_loss_db=3, filter_transmissivity=1)
    ab = LinkBudget(path_loss_db=5, filter_transmissivity=1)
    n = 20_000
    two = [survive_channel(survive_channel(PhotonBatch(0, 10, P.V, 0), a, rng), b, rng).count for _ in range(n)]
    one = [survive_channel(PhotonBatch(0, 10, P.V, 0), ab, rng).count for _ in range(n)]
    p = ab.channel_transmission
    for sample in (two, one):
        assert np.mean(sample) == pytest.approx(10 * p, abs=4 * math.sqrt(10 * p * (1 - p) / n))
        assert np.var(sample) == pytest.approx(10 * p * (1 - p), rel=0.05)


def test_transmission_examples():
    b = LinkBudget()
    assert transmission_probability(P.V, P.M45, b) == pytest.approx(0.5)
    assert transmission_probability(P.V, P.H, b) == pytest.approx(1 / 501)
    ideal = LinkBudget(extinction_ratio=math.inf)
    assert transmission_probability(P.H, P.H, ideal) == 1.0


@pytest.mark.parametrize("state", list(P))
def test_route_probabilities_sum_to_one(state):
    rng = np.random.default_rng(int(state))
    b = LinkBudget()
    n = 40_000
    outcomes = np.bincount([route_polarization(state, b, rng) for _ in range(n)], minlength=3) / n
    expected = [0.5 * transmission_probability(state, P.M45, b), 0.5 * transmission_probability(state, P.H, b)]
    expected.append(1 - sum(expected))
    assert outcomes.sum() == pytest.approx(1.0)
    assert np.allclose(outcomes, expected, atol=0.01)


def test_route_blocked_detector_never_fires_without_leak():
    rng = np.random.default_rng(2)
    b = LinkBudget(extinction_ratio=math.inf)
    # V is orthogonal to H (detector 1), +45 orthogonal to -45 (detector 0)
    assert RouteOutcome.DETECTOR_1 not in {route_polarization(P.V, b, rng) for _ in range(5000)}
    assert RouteOutcome.DETECTOR_0 not in {route_polarization(P.P45, b, rng) for _ in range(5000)}


def test_background_counts():
    rng = np.random.default_rng(0)
    assert sample_background(0.0, 1e12, rng).size == 0
    day = sample_background(2.0e6, 1e12, rng)
    assert day.size == pytest.approx(2.0e6, abs=5 * math.sqrt(2.0e6))
    night = sample_background(1.0e3, 1e12, rng, start_ps=5e11)
    assert night.size == pytest.approx(1000, abs=5 * math.sqrt(1000))
    assert night.min() >= 5e11 and night.max() < 1.5e12 and np.all(np.diff(night) >= 0)
    with pytest.raises(ValueError):
        sample_background(1.0, 0.0, rng)


def test_background_uniform():
    rng = np.random.default_rng(3)
    t = sample_background(1e6, 1e11, rng)
    assert stats.kstest(t / 1e11, "uniform").pvalue > 0.01


def test_predict_sift_rate():
    b = LinkBudget(mu=0.15)
    c = ClockBase()
    oracle = 312.5e6 * 0.15 * 10 ** (-0.5) * 0.48 * 0.5 * 0.25
    b92 = predict_sift_rate(b, c, ProtocolKind.B92)
    assert b92 == pytest.approx(oracle, rel=1e-12)
    assert b92 == pytest.approx(8.88e5, rel=0.01)
    assert predict_sift_rate(b, c, ProtocolKind.BB84) == pytest.approx(2 * b92)
    assert predict_sift_rate(b.with_mu(0.0), c, ProtocolKind.B92) == 0.0
    assert predict_sift_rate(b.with_mu(0.3), c, ProtocolKind.B92) == pytest.approx(2 * b92)


def test_seeded_streams_identical():
    a = sample_nonempty_slots(0.15, 100_000, np.random.default_rng(42))
    b = sample_nonempty_slots(0.15, 100_000, np.random.default_rng(42))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
