import socket
import threading
from dataclasses import replace

import numpy as np
import pytest

from synqkd import transport as tp
from synqkd.detector import JitterModel, mask_fractions
from synqkd.harness import SimConfig, parse_config, run, run_session
from synqkd.harness.calibrate import CalibrationError, calibrate_capacity, calibrate_jitter, shape_stats
from synqkd.harness.cli import main
from synqkd.harness.engine import read_key, run_alice, run_bob, write_key
from synqkd.harness.experiments import (
    JITTER_HEADER,
    SWEEP_HEADER,
    derive_seed,
    jitter_csv,
    jitter_experiment,
    sweep_csv,
    sweep_mu,
)
from synqkd.photonics import ClockBase, LinkBudget, ProtocolKind, predict_sift_rate
from synqkd.protocol import CapacityModel

SHORT = 0.02
NO_CAP = CapacityModel(enabled=False)


def short(**kw):
    kw.setdefault("duration_s", SHORT)
    return SimConfig.create(**kw)


def test_same_seed_same_metrics():
    assert run(short(seed=5)) == run(short(seed=5))
    assert run(short(seed=5)) != run(short(seed=6))


def test_metrics_invariants():
    m = run(short(mu=0.15))
    assert m.sifted_rate_bps == pytest.approx(m.sifted_bits / m.duration_s)
    assert sum(m.qber_by_cause.values()) == pytest.approx(m.qber)
    assert m.frames_processed + m.frames_dropped == m.frames_offered
    assert m.frames_offered % 64 == 0
    assert m.predicted_rate_bps == pytest.approx(predict_sift_rate(LinkBudget(mu=0.15), ClockBase(), "b92"))


def test_zero_mu_leaves_only_background():
    session = run_session(short(mu=0.0, duration_s=0.1, daylight=True))
    m = session.metrics
    assert m.sifted_bits > 0
    assert m.qber_by_cause["background"] == pytest.approx(m.qber)
    assert m.qber == pytest.approx(0.5, abs=0.05)


def test_rate_matches_prediction_times_mask():
    cfg = short(mu=0.1, duration_s=0.1, capacity=NO_CAP)
    m = run(cfg)
    expected = m.predicted_rate_bps * mask_fractions(cfg.jitter, cfg.clock).accepted
    assert m.sifted_rate_bps == pytest.approx(expected, rel=0.05)


def test_bb84_doubles_rate_with_small_qber():
    b92 = run(short(duration_s=0.05, capacity=NO_CAP))
    bb84 = run(short(duration_s=0.05, capacity=NO_CAP, protocol=ProtocolKind.BB84))
    assert bb84.sifted_rate_bps == pytest.approx(2 * b92.sifted_rate_bps, rel=0.05)
    assert bb84.qber < 0.015


def test_keys_identical_on_both_sides():
    s = run_session(short(protocol=ProtocolKind.BB84))
    assert np.array_equal(s.alice_tags, s.bob_tags)
    assert s.metrics.qber == pytest.approx(np.mean(s.alice_key != s.bob_key))


def test_dead_time_removes_clicks():
    base = short(mu=0.4, capacity=NO_CAP)
    dead = base.replace(jitter=replace(base.jitter, dead_time_ps=50_000.0))
    assert run(dead).clicks < run(base).clicks


def test_entropy_file_source(tmp_path):
    path = tmp_path / "entropy.bin"
    path.write_bytes(np.random.default_rng(1).bytes(2 * 1024 * 1024))
    cfg = short(entropy_file=str(path), duration_s=0.01)
    a, b = run_session(cfg), run_session(cfg)
    assert np.array_equal(a.alice_key, b.alice_key)
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(EOFError):
        run(cfg)


def test_transport_string_requires_role_runner():
    with pytest.raises(ValueError):
        run(short(transport="127.0.0.1:1"))


def test_two_process_roles_over_loopback_match_in_process():
    cfg = short(seed=77)
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        addr = f"127.0.0.1:{s.getsockname()[1]}"
    box = {}

    def bob():
        ep = tp.listen(addr, timeout=10)
        box["bob"] = run_bob(cfg, ep)
        ep.shutdown()

    t = threading.Thread(target=bob)
    t.start()
    ep = tp.connect(addr, retry_s=10)
    alice = run_alice(cfg, ep)
    ep.shutdown()
    t.join()
    ref = run_session(cfg)
    assert np.array_equal(alice.alice_key, ref.alice_key)
    assert np.array_equal(box["bob"].bob_key, ref.bob_key)
    assert np.array_equal(box["bob"].bob_tags, ref.bob_tags)


def test_key_file_round_trip(tmp_path):
    s = run_session(short(duration_s=0.005))
    write_key(tmp_path / "k.csv", s.bob_key, s.bob_tags)
    bits, tags = read_key(tmp_path / "k.csv")
    assert np.array_equal(bits, s.bob_key) and np.array_equal(tags, s.bob_tags)


def test_sweep_monotone_without_capacity_and_csv_format():
    results = sweep_mu(short(capacity=NO_CAP), [0.05, 0.1, 0.15, 0.2])
    rates = [m.sifted_rate_bps for m in results]
    assert all(b > a for a, b in zip(rates, rates[1:]))
    text = sweep_csv(results)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(SWEEP_HEADER)
    for line in lines[1:]:
        mu, rate, qber, dropped = line.split(",")
        assert len(mu.split(".")[1]) == 4 and len(rate.split(".")[1]) == 1
        assert len(qber.split(".")[1]) == 6 and dropped.isdigit()
    assert lines[1].startswith("0.0500,")


def test_sweep_validation_and_seeds():
    with pytest.raises(ValueError):
        sweep_mu(short(), [0.2, 0.1])
    with pytest.raises(ValueError):
        sweep_mu(short(), [0.0])
    assert derive_seed(1, 0) != derive_seed(1, 1) and derive_seed(1, 0) == derive_seed(1, 0)


def test_jitter_experiment_zero_jitter_single_bin():
    cfg = short(background_rate_hz=0.0, jitter=JitterModel.delta(100.0))
    results = jitter_experiment(cfg, n_events=2000)
    for r in results:
        assert np.count_nonzero(r.counts) == 1 and r.counts.sum() == r.events
        assert r.fwhm_ps <= 12.2


def test_jitter_csv_layout():
    results = jitter_experiment(short(), n_events=5000)
    lines = jitter_csv(results).strip().split("\n")
    assert lines[0] == ",".join(JITTER_HEADER)
    assert len(lines) - 1 == len(results[1].counts)  # the 78 MHz period is the longer one
    assert lines[-1].split(",")[1] == "0"  # shorter histogram is zero-padded


def test_calibrate_trivial_and_infeasible():
    fit = calibrate_jitter(1.0, 0.0)
    assert fit.model.core_sigma_ps == 0 and mask_fractions(fit.model, ClockBase()).accepted == 1.0
    with pytest.raises(CalibrationError, match="achievable|unreachable"):
        calibrate_jitter(0.93, 0.05)
    with pytest.raises(CalibrationError):
        calibrate_jitter(0.5, 0.6)


def test_shape_stats_gaussian_limit():
    mode, width = shape_stats(200.0, 0.0, 0.0)
    assert mode == pytest.approx(0.0, abs=0.01) and width == pytest.approx(2.35482 * 200, rel=1e-4)


def test_calibrate_capacity_reaches_target():
    cfg = short(duration_s=0.01)
    cap = calibrate_capacity(cfg, target_bps=6e5, mu_values=(0.2, 0.3))
    assert cap.enabled and cap.report_rate_hz > 0
    rates = [run(cfg.with_mu(mu).replace(capacity=cap)).sifted_rate_bps for mu in (0.2, 0.3)]
    assert np.mean(rates) == pytest.approx(6e5, rel=0.03)


def test_cli_run_and_config(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["run", "--mu", "0.1", "--duration-s", "0.005", "--out", str(out), "--keys", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in out.read_text().strip().split("\n")[1:])
    assert float(rows["mu"]) == 0.1 and "qber_by_cause_leak" in rows
    assert (tmp_path / "alice_key.csv").exists() and (tmp_path / "bob_key.csv").exists()
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 3\n")
    assert main(["run", "--config", str(cfg)]) == 2


def test_cli_sweep_and_jitter_write_figures(tmp_path):
    sweep = tmp_path / "sweep.csv"
    assert main(["sweep", "--mu-values", "0.1,0.2", "--duration-s", "0.005", "--out", str(sweep), "--plot"]) == 0
    assert sweep.read_text().startswith("mu,sifted_rate_bps,qber,frames_dropped\n")
    assert sweep.with_suffix(".png").stat().st_size > 0
    jit = tmp_path / "jitter.csv"
    assert main(["jitter", "--events", "3000", "--out", str(jit), "--plot"]) == 0
    assert jit.with_suffix(".png").stat().st_size > 0


def test_cli_calibrate_prints_loadable_config(capsys):
    assert main(["calibrate", "--target", "jitter"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.jitter.tail_fraction == pytest.approx(JitterModel().tail_fraction, rel=1e-4)
    assert cfg.jitter.offset_ps == pytest.approx(JitterModel().offset_ps, rel=1e-4)


def test_default_jitter_widths():
    """The default profile is 550 ps wide and puts the quoted 3.5 ns spread
    between its 99 % and 99.9 % signal spans."""
    fast, slow = jitter_experiment(short(), n_events=200_000, include_background=False)
    assert fast.fwhm_ps == pytest.approx(550, abs=25)
    assert slow.span99_ps < 3500 < slow.span999_ps
