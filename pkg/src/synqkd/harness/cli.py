"""Command line entry point: ``synqkd run|sweep|jitter|calibrate``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import transport
from ..photonics import DAY_BACKGROUND_HZ, ProtocolKind
from .config import ConfigError, SimConfig, dump_config, load_config

log = logging.getLogger("synqkd")

DEFAULT_SWEEP = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--mu", type=float, help="mean photon number per pulse")
    p.add_argument("--protocol", choices=[k.value for k in ProtocolKind])
    p.add_argument("--daylight", action="store_true", help="use the 2 MHz daytime background")
    p.add_argument("--duration-s", type=float, help="simulated seconds per run")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="CSV output path")
    p.add_argument("--plot", action="store_true", help="also write a PNG figure next to the CSV")


def build_config(args) -> SimConfig:
    config = load_config(args.config) if args.config else SimConfig()
    budget = config.budget
    if args.mu is not None:
        budget = replace(budget, mu=args.mu)
    if args.daylight:
        budget = replace(budget, background_rate_hz=DAY_BACKGROUND_HZ)
    changes = {"budget": budget}
    if args.daylight:
        changes["daylight"] = True
    if args.protocol:
        changes["protocol"] = ProtocolKind(args.protocol)
    if args.duration_s is not None:
        changes["duration_s"] = args.duration_s
    if args.seed is not None:
        changes["seed"] = args.seed
    return config.replace(**changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", "value"))
    for k, v in metrics.as_dict().items():
        if isinstance(v, dict):
            for sub, x in v.items():
                w.writerow((f"{k}_{sub}", _fmt(x)))
        else:
            w.writerow((k, _fmt(v)))
    return buf.getvalue()


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        log.info("wrote %s", out)


def cmd_run(args) -> int:
    from .engine import run_alice, run_bob, run_session, write_key

    config = build_config(args)
    keys = Path(args.keys) if args.keys else None
    if keys:
        keys.mkdir(parents=True, exist_ok=True)
    if args.listen or args.connect:
        if args.listen:
            ep = transport.listen(args.listen, "bob", timeout=args.timeout)
            result = run_bob(config, ep)
            bits, tags, name = result.bob_key, result.bob_tags, "bob"
        else:
            ep = transport.connect(args.connect, "alice", retry_s=args.timeout)
            result = run_alice(config, ep)
            bits, tags, name = result.alice_key, result.alice_tags, "alice"
        ep.shutdown()
        if keys:
            write_key(keys / f"{name}_key.csv", bits, tags)
        print(f"{name}: {len(bits)} sifted bits in {result.elapsed_s:.1f} s")
        return 0
    result = run_session(config)
    if keys:
        write_key(keys / "alice_key.csv", result.alice_key, result.alice_tags)
        write_key(keys / "bob_key.csv", result.bob_key, result.bob_tags)
    _emit(metrics_csv(result.metrics), args.out)
    m = result.metrics
    log.info("sifted %.0f bps (predicted %.0f before the mask), QBER %.3f %%, %.1f s wall",
             m.sifted_rate_bps, m.predicted_rate_bps, 100 * m.qber, result.elapsed_s)
    return 0


def cmd_sweep(args) -> int:
    from .experiments import sweep_csv, sweep_mu

    config = build_config(args)
    if args.no_capacity:
        config = config.replace(capacity=replace(config.capacity, enabled=False))
    mus = [float(x) for x in args.mu_values.split(",")] if args.mu_values else list(DEFAULT_SWEEP)
    results = sweep_mu(config, mus, workers=args.workers)
    _emit(sweep_csv(results), args.out)
    if args.plot:
        from .plotting import plot_sweep

        _plot(args, lambda path: plot_sweep(results, path))
    return 0


def cmd_jitter(args) -> int:
    from .experiments import jitter_csv, jitter_experiment

    config = build_config(args)
    results = jitter_experiment(config, n_events=args.events, include_background=not args.no_background)
    _emit(jitter_csv(results), args.out)
    for r in results:
        log.info("%.3f MHz: FWHM %.1f ps, 99 %% span %.0f ps, 99.9 %% span %.0f ps over %d clicks",
                 r.rate_hz / 1e6, r.fwhm_ps or float("nan"), r.span99_ps or float("nan"),
                 r.span999_ps or float("nan"), r.events)
    if args.plot:
        from .plotting import plot_jitter

        _plot(args, lambda path: plot_jitter(results, path))
    return 0


def _plot(args, draw):
    if args.out is None:
        raise SystemExit("--plot needs --out so the figure has somewhere to go")
    from .plotting import figure_path

    path = draw(figure_path(args.out))
    log.info("wrote %s", path)


def cmd_calibrate(args) -> int:
    from .calibrate import calibrate_capacity, calibrate_jitter

    config = build_config(args)
    if args.target in ("jitter", "all"):
        fit = calibrate_jitter(args.acceptance, args.leakage, args.fwhm_ps, config.clock)
        log.info("jitter fit: acceptance %.5f, leakage %.5f, FWHM %.2f ps", fit.acceptance, fit.leakage, fit.fwhm_ps)
        config = config.replace(jitter=replace(fit.model, dead_time_ps=config.jitter.dead_time_ps))
    if args.target in ("capacity", "all"):
        cap = calibrate_capacity(config, args.plateau_bps)
        log.info("capacity fit: report_rate_hz %.6g", cap.report_rate_hz)
        config = config.replace(capacity=cap)
    _emit(dump_config(config), args.out)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synqkd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one link session")
    _common(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--listen", metavar="HOST:PORT", help="run as Bob, waiting for Alice")
    mode.add_argument("--connect", metavar="HOST:PORT", help="run as Alice, dialing Bob")
    p.add_argument("--keys", metavar="DIR", help="write sifted keys as CSV into DIR")
    p.add_argument("--timeout", type=float, default=60.0, help="seconds to wait for the peer")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sifted rate and QBER against mean photon number")
    _common(p)
    p.add_argument("--mu-values", help="comma-separated, ascending")
    p.add_argument("--no-capacity", action="store_true", help="disable the processing-capacity model")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("jitter", help="detection-time histograms at 312.5 and 78.125 MHz")
    _common(p)
    p.add_argument("--events", type=int, default=1_000_000, help="signal clicks per histogram")
    p.add_argument("--no-background", action="store_true")
    p.set_defaults(func=cmd_jitter)

    p = sub.add_parser("calibrate", help="fit jitter and capacity constants; prints a config")
    _common(p)
    p.add_argument("--target", choices=("jitter", "capacity", "all"), default="jitter")
    p.add_argument("--acceptance", type=float, default=0.93)
    p.add_argument("--leakage", type=float, default=0.005)
    p.add_argument("--fwhm-ps", type=float, default=550.0)
    p.add_argument("--plateau-bps", type=float, default=1.0e6)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ValueError, transport.TransportError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
