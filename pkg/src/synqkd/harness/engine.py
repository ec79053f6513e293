"""End-to-end link simulation: the optical path, the session drivers and metrics.

The optical path (source, free-space channel, Bob's optics and APDs) lives on
Alice's side of the session and hands Bob only what his board would see: a
time-ordered stream of APD clicks interleaved with the SYNC messages.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import transport as tp
from ..detector import FRAME_BITS, Cause, apply_dead_time, sample_jitter
from ..photonics import (
    ProtocolKind,
    predict_sift_rate,
    sample_background,
    sample_nonempty_slots,
)
from ..protocol import Alice, Bob, compute_qber, wire
from .config import SimConfig

__all__ = [
    "EntropyFile",
    "OpticalLink",
    "SimMetrics",
    "SessionResult",
    "run",
    "run_session",
    "run_alice",
    "run_bob",
    "write_key",
    "read_key",
]

log = logging.getLogger(__name__)

# B92 analyzers per splitter arm: arm 0 -> -45 on detector 0, arm 1 -> H on detector 1
_B92_ANALYZER = np.array([135.0, 0.0])
# BB84 ports per (arm, detector): arm 0 measures H/V, arm 1 measures +45/-45
_BB84_PORT = np.array([[0.0, 90.0], [45.0, 135.0]])


class EntropyFile:
    """Random bytes read from a file, standing in for an external entropy source."""

    def __init__(self, path: str | Path):
        self._fh = open(path, "rb")

    def bytes(self, n: int) -> bytes:
        data = self._fh.read(n)
        if len(data) < n:
            raise EOFError("entropy file exhausted")
        return data

    def close(self):
        self._fh.close()


def _overlap(a, b):
    return np.cos(np.radians(a - b)) ** 2


class OpticalLink:
    """Monte Carlo of everything between Alice's VCSELs and Bob's APD outputs.

    Events are held until the next block has been simulated, so no click can
    be released after a click that precedes it in time.
    """

    def __init__(self, config: SimConfig, photon_rng: np.random.Generator, background_rng: np.random.Generator):
        self.config = config
        self.budget = config.budget
        self.clock = config.clock
        self.jitter = config.jitter
        self.protocol = config.protocol
        self.rng = photon_rng
        self.bg_rng = background_rng
        self.n_detectors = 2 if self.protocol is ProtocolKind.B92 else 4
        self._pending = [np.empty((0, 4), dtype=np.int64)]
        self._log: list[np.ndarray] = []
        self.released_upto_ps = 0
        self.dropped_early = 0
        self.dropped_after_end = 0
        self.photons_emitted = 0
        self.dead_time_losses = 0
        self._last_fire: dict[int, float] = {}

    def transmit(self, first_index: int, frames) -> None:
        """Simulate the pulses of consecutive frames starting at ``first_index``."""
        period = self.clock.pulse_period_ps
        n_slots = FRAME_BITS * len(frames)
        slot0 = first_index * FRAME_BITS
        values = np.concatenate([f.value_bits for f in frames]).astype(np.int64)
        if self.protocol is ProtocolKind.B92:
            angles = np.where(values == 1, 45.0, 90.0)
        else:
            bases = np.concatenate([f.basis_bits for f in frames]).astype(np.int64)
            angles = np.where(bases == 0, np.where(values == 1, 90.0, 0.0), np.where(values == 1, 135.0, 45.0))

        rng, b = self.rng, self.budget
        if self.config.single_photon:
            pos, counts = np.arange(n_slots), np.ones(n_slots, dtype=np.int64)
        else:
            pos, counts = sample_nonempty_slots(b.mu, n_slots, rng)
        self.photons_emitted += int(counts.sum())
        slot = np.repeat(pos, counts)
        slot = slot[rng.random(slot.size) < b.channel_transmission]
        state = angles[slot]
        n = slot.size
        arm = (rng.random(n) >= b.splitter_ratio).astype(np.int64)
        eps = b.leak_probability
        if self.protocol is ProtocolKind.B92:
            c2 = _overlap(state, _B92_ANALYZER[arm])
            p = c2 * (1 - eps) + (1 - c2) * eps
            hit = rng.random(n) < p
            det = arm
            key = det
        else:
            c2 = _overlap(state, _BB84_PORT[arm, 0])
            p0 = c2 * (1 - eps) + (1 - c2) * eps
            det = (rng.random(n) >= p0).astype(np.int64)
            c2 = np.where(det == 0, c2, 1 - c2)
            hit = np.ones(n, dtype=bool)
            key = arm * 2 + det
        leak = c2 < 1e-9
        fired = hit & (rng.random(n) < b.quantum_efficiency)
        slot, key, leak = slot[fired], key[fired], leak[fired]
        delay = sample_jitter(self.jitter, rng, slot.size)
        gslot = slot + slot0
        t = np.rint(gslot * period + self.clock.phase_offset_ps + delay).astype(np.int64)
        cause = np.where(leak, int(Cause.LEAK), int(Cause.SIGNAL))
        ev = [np.column_stack((t, key, cause, gslot))]

        if b.background_rate_hz > 0:
            t0 = slot0 * period
            window = n_slots * period
            for k in range(self.n_detectors):
                bt = np.floor(sample_background(b.background_rate_hz, window, self.bg_rng, t0)).astype(np.int64)
                ev.append(np.column_stack((bt, np.full(bt.size, k), np.full(bt.size, int(Cause.BACKGROUND)),
                                           np.full(bt.size, -1))))
        self._pending.extend(ev)

    def release(self, upto_ps: int) -> np.ndarray:
        """Pop events with time < ``upto_ps``, sorted by (time, detector)."""
        ev = np.concatenate(self._pending)
        early = ev[:, 0] < self.released_upto_ps
        if early.any():
            self.dropped_early += int(early.sum())
            ev = ev[~early]
        ready = ev[:, 0] < upto_ps
        out, rest = ev[ready], ev[~ready]
        self._pending = [rest]
        out = out[np.lexsort((out[:, 1], out[:, 0]))]
        if self.jitter.dead_time_ps > 0:
            alive = apply_dead_time(out[:, 0], out[:, 1], self.jitter.dead_time_ps, self._last_fire)
            self.dead_time_losses += int((~alive).sum())
            out = out[alive]
        self._log.append(out)
        self.released_upto_ps = upto_ps
        return out

    def discard_pending(self):
        self.dropped_after_end += sum(len(p) for p in self._pending)
        self._pending = [np.empty((0, 4), dtype=np.int64)]

    def event_log(self) -> np.ndarray:
        """All released events as rows of (time_ps, detector key, cause, slot)."""
        return np.concatenate(self._log) if self._log else np.empty((0, 4), dtype=np.int64)


class _Transmitter:
    """Alice's side of the link: frames out, SYNC + CLICK stream to Bob."""

    def __init__(self, alice: Alice, link: OpticalLink, endpoint: tp.Endpoint, n_frames: int):
        self.alice = alice
        self.link = link
        self.endpoint = endpoint
        self.n_frames = n_frames
        self.frame_ps = FRAME_BITS * link.clock.pulse_period_ps
        self._synced = 0

    def send_block(self, count: int):
        first = self.alice.n_sent
        frames = [f for _, f in self.alice.next_frames(count)]
        self.link.transmit(first, frames)
        # one block of latency: release only up to the start of this block
        self._emit(first)

    def finish(self):
        self._emit(self.n_frames)
        self.link.discard_pending()
        # trailing SYNC: the board moves on to the next frame, closing the last one
        self.endpoint.send(wire.encode(wire.Sync(self.alice.frame_number(self.n_frames))))
        self.alice.finish_sending()

    def _emit(self, upto_frame: int):
        if upto_frame <= self._synced:
            return
        ev = self.link.release(upto_frame * self.frame_ps)
        t, key = ev[:, 0], ev[:, 1]
        clicks = np.frombuffer(wire.encode_clicks(t, key & 1, key >> 1), dtype=np.uint8).reshape(-1, 12)
        frame_idx = t // self.frame_ps
        cuts = np.searchsorted(frame_idx, np.arange(self._synced, upto_frame + 1))
        parts = []
        for j, i in enumerate(range(self._synced, upto_frame)):
            parts.append(wire.frame(wire.encode(wire.Sync(self.alice.frame_number(i)))))
            parts.append(clicks[cuts[j]: cuts[j + 1]].tobytes())
        self.endpoint.send_framed(b"".join(parts))
        self._synced = upto_frame


@dataclass
class SimMetrics:
    duration_s: float
    frames_offered: int
    frames_processed: int
    frames_dropped: int
    sifted_bits: int
    sifted_rate_bps: float
    qber: float
    qber_by_cause: dict[str, float]
    mask_acceptance: float
    leak_next_fraction: float
    coincidence_discards: int
    predicted_rate_bps: float
    clicks: int
    reports: int
    duplicate_reports: int
    mu: float
    protocol: str

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SessionResult:
    metrics: SimMetrics | None
    alice_key: np.ndarray | None = None
    bob_key: np.ndarray | None = None
    alice_tags: np.ndarray | None = None
    bob_tags: np.ndarray | None = None
    alice_reports: list[int] | None = None
    elapsed_s: float = 0.0


def _n_frames(config: SimConfig) -> int:
    frames = config.duration_s * config.clock.transmission_rate_hz / FRAME_BITS
    blocks = max(1, round(frames / config.cadence))
    return blocks * config.cadence


def _streams(config: SimConfig):
    ss = np.random.SeedSequence(config.seed)
    frames_ss, photons_ss, bg_ss = ss.spawn(3)
    frame_rng = EntropyFile(config.entropy_file) if config.entropy_file else np.random.default_rng(frames_ss)
    return frame_rng, np.random.default_rng(photons_ss), np.random.default_rng(bg_ss)


def _make_alice(config: SimConfig, frame_rng) -> Alice:
    return Alice(config.protocol, frame_rng, config.clock, config.capacity, config.cadence, config.initial_frame_number)


def _pump(endpoint: tp.Endpoint, peer, block: bool = False) -> bool:
    """Feed one receive chunk to ``peer``; False once the session has ended."""
    blob = endpoint.receive_chunk(block=block)
    if blob is None:
        if isinstance(peer, Bob):
            out = peer.handle(None)
            if out:
                endpoint.send_framed(out)
        return False
    if blob:
        out = peer.handle(blob)
        if out:
            endpoint.send_framed(out)
    return True


def run_session(config: SimConfig) -> SessionResult:
    """Run Alice and Bob in one process over the in-memory transport."""
    started = time.perf_counter()
    frame_rng, photon_rng, bg_rng = _streams(config)
    alice_ep, bob_ep = tp.in_process_pair()
    alice = _make_alice(config, frame_rng)
    bob = Bob(config.protocol, config.clock, config.cadence)
    link = OpticalLink(config, photon_rng, bg_rng)
    n_frames = _n_frames(config)
    tx = _Transmitter(alice, link, alice_ep, n_frames)
    for _ in range(n_frames // config.cadence):
        tx.send_block(config.cadence)
        _pump(bob_ep, bob)
        _pump(alice_ep, alice)
    tx.finish()
    while not alice.done:
        _pump(bob_ep, bob)
        _pump(alice_ep, alice)
    alice_ep.close()
    while _pump(bob_ep, bob):
        pass
    bob_ep.close()
    if isinstance(frame_rng, EntropyFile):
        frame_rng.close()
    metrics = _metrics(config, n_frames, alice, bob, link)
    return SessionResult(
        metrics,
        alice.key.bits,
        bob.key.bits,
        alice.key.source_tags,
        bob.key.source_tags,
        alice.report_counts,
        time.perf_counter() - started,
    )


def run(config: SimConfig) -> SimMetrics:
    """Simulate the link end to end and return its metrics."""
    if config.transport != "in_process":
        raise ValueError("run() is single-process; use run_alice/run_bob for two-process mode")
    return run_session(config).metrics


def run_alice(config: SimConfig, endpoint: tp.Endpoint) -> SessionResult:
    """Alice's process in two-process mode (also hosts the optical link)."""
    started = time.perf_counter()
    frame_rng, photon_rng, bg_rng = _streams(config)
    alice = _make_alice(config, frame_rng)
    link = OpticalLink(config, photon_rng, bg_rng)
    n_frames = _n_frames(config)
    tx = _Transmitter(alice, link, endpoint, n_frames)
    for _ in range(n_frames // config.cadence):
        tx.send_block(config.cadence)
        _pump(endpoint, alice)
    tx.finish()
    while not alice.done:
        if not _pump(endpoint, alice, block=True):
            raise tp.SessionClosed("Bob closed the session early")
    endpoint.close()
    while endpoint.receive_chunk(block=True) is not None:
        pass
    return SessionResult(None, alice_key=alice.key.bits, alice_tags=alice.key.source_tags,
                         elapsed_s=time.perf_counter() - started)


def run_bob(config: SimConfig, endpoint: tp.Endpoint) -> SessionResult:
    started = time.perf_counter()
    bob = Bob(config.protocol, config.clock, config.cadence)
    while _pump(endpoint, bob, block=True):
        pass
    endpoint.close()
    return SessionResult(None, bob_key=bob.key.bits, bob_tags=bob.key.source_tags,
                         elapsed_s=time.perf_counter() - started)


def _metrics(config: SimConfig, n_frames: int, alice: Alice, bob: Bob, link: OpticalLink) -> SimMetrics:
    period = config.clock.pulse_period_ps
    gate_w = config.clock.gate_width_ps
    duration = n_frames * FRAME_BITS * period * 1e-12

    events = link.event_log()
    causes = np.empty(0, dtype=np.int64)
    if len(bob.key):
        times = np.concatenate(bob.key_click_times)
        keys = np.concatenate(bob.key_det_keys)
        lookup = events[:, 0] * 4 + events[:, 1]
        order = np.argsort(lookup, kind="stable")
        where = order[np.searchsorted(lookup[order], times * 4 + keys)]
        causes = events[where, 2].copy()
        origin = events[where, 3]
        moved = (origin >= 0) & (times // period != origin)
        causes[moved] = int(Cause.INTERSYMBOL)
    q = compute_qber(alice.key.bits, bob.key.bits, causes)

    sig = events[events[:, 3] >= 0]
    g = sig[:, 0] // period
    in_gate = sig[:, 0] % period < gate_w
    n_sig = max(len(sig), 1)
    acceptance = float(np.sum(in_gate & (g == sig[:, 3])) / n_sig)
    leak_next = float(np.sum(in_gate & (g == sig[:, 3] + 1)) / n_sig)

    qd = alice.queue
    return SimMetrics(
        duration_s=duration,
        frames_offered=qd.offered,
        frames_processed=qd.offered - qd.dropped,
        frames_dropped=qd.dropped,
        sifted_bits=len(alice.key),
        sifted_rate_bps=len(alice.key) / duration,
        qber=q.qber,
        qber_by_cause=q.by_cause,
        mask_acceptance=acceptance,
        leak_next_fraction=leak_next,
        coincidence_discards=bob.stats.coincidence_discards,
        predicted_rate_bps=predict_sift_rate(config.budget, config.clock, config.protocol),
        clicks=bob.stats.clicks,
        reports=bob.stats.reports,
        duplicate_reports=alice.duplicate_reports,
        mu=config.budget.mu,
        protocol=config.protocol.value,
    )


def write_key(path: str | Path, bits: np.ndarray, tags: np.ndarray):
    """Sifted key as CSV: frame_number,bit_position,bit."""
    with open(path, "w") as fh:
        fh.write("frame_number,bit_position,bit\n")
        for (f, p), b in zip(tags.tolist(), bits.tolist()):
            fh.write(f"{f},{p},{b}\n")


def read_key(path: str | Path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        return np.empty(0, dtype=np.uint8), np.empty((0, 2), dtype=np.int64)
    return data[:, 2].astype(np.uint8), data[:, :2]
