"""Figure files for the sweep and jitter experiments (written, never shown)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .engine import SimMetrics  # noqa: E402
from .experiments import JitterResult  # noqa: E402

__all__ = ["plot_jitter", "plot_sweep", "figure_path"]


def figure_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".png")


def plot_jitter(results: list[JitterResult], path: str | Path) -> Path:
    """Folded detection-time histograms, peak-normalised, one line per pulse rate."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    styles = [dict(color="black", lw=1.2), dict(color="0.55", lw=1.2, ls="--")]
    for r, style in zip(results, styles):
        peak = max(int(r.counts.max()), 1)
        label = f"{r.rate_hz / 1e6:.1f} MHz, FWHM {r.fwhm_ps:.0f} ps" if r.fwhm_ps else f"{r.rate_hz / 1e6:.1f} MHz"
        ax.step(r.bin_start_ps / 1000, r.counts / peak, where="post", label=label, **style)
    ax.set_xlabel("time within pulse period (ns)")
    ax.set_ylabel("counts (normalised)")
    ax.set_xlim(0, 5)
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(results: list[SimMetrics], path: str | Path) -> Path:
    """Sifted-key rate and QBER against mean photon number."""
    mu = [m.mu for m in results]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(mu, [m.sifted_rate_bps / 1e3 for m in results], "o-", color="black", label="sifted rate")
    ax.set_xlabel("mean photon number")
    ax.set_ylabel("sifted key rate (kbps)")
    ax.set_ylim(bottom=0)
    ax2 = ax.twinx()
    ax2.plot(mu, [100 * m.qber for m in results], "s--", color="0.5", label="QBER")
    ax2.set_ylabel("QBER (%)")
    ax2.set_ylim(0, max(3.0, 1.2 * max(100 * m.qber for m in results)))
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], frameon=False, loc="upper left")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
