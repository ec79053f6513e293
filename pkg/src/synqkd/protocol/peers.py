"""Alice and Bob protocol state machines.

Each peer is driven by feeding it the framed bytes its endpoint received and
sending whatever it returns.  Decisions depend only on message content, never
on arrival timing, so an in-memory session and a two-process session with
the same inputs end with identical keys.

Message flow per block of ``cadence`` frames:

* Alice -> Bob: SYNC for each frame, with the optical-link CLICKs in time order.
* Bob -> Alice: REPORTs as frames close (a frame closes when a later SYNC
  arrives or the session ends), then FRAME_DONE for the block.
* Alice -> Bob: SIFT per reported frame (BB84 only), then FRAME_DONE listing
  the frames her host actually processed.

A frame is committed to the sifted key only if both FRAME_DONE lists contain it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..detector import FRAME_BITS
from ..photonics import ClockBase, ProtocolKind
from . import wire
from .frames import (
    CapacityModel,
    CapacityQueue,
    Frame,
    ProtocolError,
    SiftedBuffer,
    frame_add,
    generate_frame,
    reconcile_frames,
)

__all__ = ["Alice", "Bob", "BobStats"]

_EMPTY = np.empty(0, dtype=np.int64)


def _block_bounds(block: int, cadence: int, n_frames: int) -> range:
    return range(block * cadence, min((block + 1) * cadence, n_frames))


class Alice:
    """Transmitter: owns the random frames, sifts against Bob's reports and
    runs the host processing-capacity queue."""

    def __init__(
        self,
        protocol: ProtocolKind,
        rng,
        clock: ClockBase = ClockBase(),
        capacity: CapacityModel = CapacityModel(enabled=False),
        cadence: int = 64,
        initial_frame_number: int = 0,
    ):
        if not 1 <= cadence <= 16383:
            raise ValueError("cadence must be between 1 and 16383 frames")
        self.protocol = ProtocolKind(protocol)
        self.rng = rng
        self.clock = clock
        self.cadence = cadence
        self.initial_frame_number = initial_frame_number
        self.queue = CapacityQueue(capacity)
        self.frames: dict[int, Frame] = {}
        self.n_sent = 0
        self.key = SiftedBuffer()
        self.frames_processed = 0
        self.duplicate_reports = 0
        # reports offered to the capacity queue, one entry per closed frame
        self.report_counts: list[int] = []
        self._reports: dict[int, list] = {}
        self._bob_done: list[tuple[int, ...]] = []
        self._next_block = 0
        self._finished_sending = False
        self.frame_duration_s = FRAME_BITS * clock.pulse_period_ps * 1e-12

    def frame_number(self, index: int) -> int:
        return frame_add(self.initial_frame_number, index)

    def _index_of(self, frame_number: int) -> int:
        return (frame_number - self.initial_frame_number) % (1 << 32)

    def next_frames(self, count: int) -> list[tuple[int, Frame]]:
        """Generate and store the next ``count`` frames as (index, frame)."""
        out = []
        for _ in range(count):
            i = self.n_sent
            f = generate_frame(self.rng, self.protocol, self.frame_number(i))
            self.frames[i] = f
            out.append((i, f))
            self.n_sent += 1
        return out

    def finish_sending(self):
        self._finished_sending = True

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.n_sent / self.cadence)

    @property
    def done(self) -> bool:
        return self._finished_sending and self._next_block >= self.n_blocks

    def handle(self, blob: bytes) -> bytes:
        out = []
        for msg in wire.iter_messages(blob):
            if isinstance(msg, wire.ReportBatch):
                self._store_reports(msg)
            elif isinstance(msg, wire.Report):
                self._store_reports(wire.ReportBatch(*(np.array([v]) for v in
                                    (msg.frame_number, msg.bit_position, msg.basis_bit, msg.detector_id))))
            elif isinstance(msg, wire.FrameDone):
                self._bob_done.append(msg.frame_numbers)
                while self._next_block < len(self._bob_done):
                    out.append(self._close_block(self._next_block))
                    self._next_block += 1
            else:
                raise ProtocolError(f"Alice cannot handle {type(msg).__name__}")
        return b"".join(out)

    def _store_reports(self, batch: wire.ReportBatch):
        idx = (batch.frame_number - self.initial_frame_number) % (1 << 32)
        if len(idx) and (idx.max() >= self.n_sent or not all(int(i) in self.frames for i in np.unique(idx))):
            raise ProtocolError("report for a frame Alice does not hold")
        cols = np.column_stack((batch.bit_position, batch.basis_bit, batch.detector_id))
        order = np.argsort(idx, kind="stable")
        idx, cols = idx[order], cols[order]
        starts = np.flatnonzero(np.diff(idx, prepend=-1))
        for s, e in zip(starts, np.append(starts[1:], len(idx))):
            self._reports.setdefault(int(idx[s]), []).append(cols[s:e])

    def _close_block(self, block: int) -> bytes:
        bob_done = self._bob_done[block]
        processed = []
        out = []
        pending = {}
        for i in _block_bounds(block, self.cadence, self.n_sent):
            frame = self.frames.pop(i)
            parts = self._reports.pop(i, None)
            rep = np.concatenate(parts) if parts else np.empty((0, 3), dtype=np.int64)
            if len(rep):
                _, first = np.unique(rep[:, 0], return_index=True)
                if len(first) < len(rep):
                    self.duplicate_reports += len(rep) - len(first)
                    rep = rep[np.sort(first)]
            t_done = (i + 1) * self.frame_duration_s
            self.report_counts.append(len(rep))
            if not self.queue.offer(t_done, len(rep)):
                continue
            processed.append(frame.frame_number)
            pos = rep[:, 0]
            if self.protocol is ProtocolKind.BB84:
                keep = frame.basis_bits[pos] == rep[:, 1]
                if len(rep):
                    out.append(wire.frame(wire.encode(wire.Sift(frame.frame_number, tuple(bool(k) for k in keep)))))
                pos = pos[keep]
            pending[frame.frame_number] = (pos, frame.value_bits[pos])
        self.frames_processed += len(processed)
        retained = reconcile_frames(processed, bob_done)
        for fn in processed:
            if fn in retained:
                self.key.extend(fn, *pending[fn])
        out.append(wire.frame(wire.encode(wire.FrameDone(tuple(processed)))))
        return b"".join(out)


@dataclass
class BobStats:
    clicks: int = 0
    gated_out: int = 0
    coincidence_discards: int = 0
    collapsed_clicks: int = 0
    late_clicks: int = 0
    reports: int = 0


@dataclass
class _PendingFrame:
    positions: np.ndarray
    bits: np.ndarray
    times: np.ndarray
    det_keys: np.ndarray
    keep: np.ndarray | None = None


class Bob:
    """Receiver: gates clicks into time bins, discards coincidences, reports
    detections and keeps the matching half of the key."""

    def __init__(self, protocol: ProtocolKind, clock: ClockBase = ClockBase(), cadence: int = 64):
        if not 1 <= cadence <= 16383:
            raise ValueError("cadence must be between 1 and 16383 frames")
        self.protocol = ProtocolKind(protocol)
        self.clock = clock
        self.cadence = cadence
        self.stats = BobStats()
        self.key = SiftedBuffer()
        self.key_click_times: list[np.ndarray] = []
        self.key_det_keys: list[np.ndarray] = []
        self.sync_numbers: list[int] = []
        self._times = [_EMPTY]
        self._keys = [_EMPTY]
        self._closed_frames = 0
        self._pending: dict[int, _PendingFrame] = {}
        self._my_done: list[tuple[int, ...]] = []
        self._alice_blocks = 0
        self._ended = False
        self._group_ps = clock.pulse_period_ps

    @property
    def done(self) -> bool:
        return self._ended and self._alice_blocks >= len(self._my_done)

    def handle(self, blob: bytes | None) -> bytes:
        """Process received bytes; ``None`` signals Alice closed her side."""
        if blob is None:
            # Alice's trailing SYNC has already closed every real frame; any
            # click still buffered lies beyond the last one
            if not self._ended:
                self._ended = True
                self.stats.late_clicks += sum(t.size for t in self._times)
                self._times, self._keys = [_EMPTY], [_EMPTY]
            return b""
        out = []
        synced = False
        for msg in wire.iter_messages(blob):
            if isinstance(msg, wire.ClickBatch):
                self._add_clicks(msg.time_ps, msg.arm.astype(np.int64) * 2 + msg.detector_id)
            elif isinstance(msg, wire.Click):
                self._add_clicks(np.array([msg.time_ps]), np.array([msg.arm * 2 + msg.detector_id]))
            elif isinstance(msg, wire.Sync):
                self.sync_numbers.append(msg.frame_number)
                synced = True
            elif isinstance(msg, wire.Sift):
                self._apply_sift(msg)
            elif isinstance(msg, wire.FrameDone):
                self._commit_block(msg.frame_numbers)
            else:
                raise ProtocolError(f"Bob cannot handle {type(msg).__name__}")
        if synced:
            # the stream is time-ordered, so once SYNC j is in, every frame
            # before j has all of its clicks
            out.append(self._close_frames(len(self.sync_numbers) - 1))
        return b"".join(out)

    def _add_clicks(self, times: np.ndarray, keys: np.ndarray):
        self.stats.clicks += len(times)
        self._times.append(np.asarray(times, dtype=np.int64))
        self._keys.append(np.asarray(keys, dtype=np.int64))

    def _close_frames(self, upto: int) -> bytes:
        """Report every frame index below ``upto`` that is still open."""
        if upto <= self._closed_frames:
            return b""
        times = np.concatenate(self._times)
        keys = np.concatenate(self._keys)
        group_limit = upto * FRAME_BITS
        group = times // self._group_ps
        ready = group < group_limit
        self._times, self._keys = [times[~ready]], [keys[~ready]]
        times, keys = times[ready], keys[ready]
        late = times // self._group_ps < self._closed_frames * FRAME_BITS
        if late.any():
            self.stats.late_clicks += int(late.sum())
            times, keys = times[~late], keys[~late]

        groups, in_group, accepted = _gate(times, self.clock)
        self.stats.gated_out += int((~accepted).sum())
        times, keys, groups = times[accepted], keys[accepted], groups[accepted]
        times, keys, groups = self._coincidences(times, keys, groups)

        frame_idx = groups // FRAME_BITS
        out = []
        for block_start in range(self._closed_frames - self._closed_frames % self.cadence, upto, self.cadence):
            lo = max(block_start, self._closed_frames)
            hi = min(block_start + self.cadence, upto)
            sel = (frame_idx >= lo) & (frame_idx < hi)
            out.append(self._report(frame_idx[sel], groups[sel] % FRAME_BITS, times[sel], keys[sel], lo, hi))
            if hi == block_start + self.cadence:
                numbers = tuple(self.sync_numbers[i] for i in range(block_start, hi))
                self._my_done.append(numbers)
                out.append(wire.frame(wire.encode(wire.FrameDone(numbers))))
        self._closed_frames = upto
        return b"".join(out)

    def _coincidences(self, times, keys, groups):
        if times.size == 0:
            return times, keys, groups
        order = np.lexsort((keys, times, groups))
        times, keys, groups = times[order], keys[order], groups[order]
        starts = np.flatnonzero(np.diff(groups, prepend=-1))
        kmin = np.minimum.reduceat(keys, starts)
        kmax = np.maximum.reduceat(keys, starts)
        sizes = np.diff(np.append(starts, len(groups)))
        clean = kmin == kmax
        self.stats.coincidence_discards += int((~clean).sum())
        self.stats.collapsed_clicks += int((sizes[clean] - 1).sum())
        first = starts[clean]
        return times[first], keys[first], groups[first]

    def _report(self, frame_idx, positions, times, keys, lo, hi) -> bytes:
        if frame_idx.size == 0:
            return b""
        numbers = np.array(self.sync_numbers[lo:hi], dtype=np.int64)[frame_idx - lo]
        detector = keys & 1
        basis = keys >> 1 if self.protocol is ProtocolKind.BB84 else np.zeros_like(keys)
        starts = np.flatnonzero(np.diff(frame_idx, prepend=-1))
        ends = np.append(starts[1:], len(frame_idx))
        for s, e in zip(starts, ends):
            fn = int(numbers[s])
            self._pending[fn] = _PendingFrame(positions[s:e], detector[s:e].astype(np.uint8), times[s:e], keys[s:e])
        self.stats.reports += len(frame_idx)
        return wire.encode_reports(numbers, positions, basis, detector)

    def _apply_sift(self, msg: wire.Sift):
        p = self._pending.get(msg.frame_number)
        if p is None or len(msg.keep) != len(p.positions):
            raise ProtocolError(f"SIFT does not match the reports for frame {msg.frame_number}")
        p.keep = np.array(msg.keep, dtype=bool)

    def _commit_block(self, alice_done: tuple[int, ...]):
        if self._alice_blocks >= len(self._my_done):
            raise ProtocolError("FRAME_DONE from Alice for a block Bob has not closed")
        mine = self._my_done[self._alice_blocks]
        self._alice_blocks += 1
        retained = reconcile_frames(alice_done, mine)
        for fn in mine:
            p = self._pending.pop(fn, None)
            if p is None or fn not in retained:
                continue
            keep = p.keep
            if self.protocol is ProtocolKind.BB84:
                if keep is None:
                    raise ProtocolError(f"no SIFT received for retained frame {fn}")
            else:
                keep = np.ones(len(p.positions), dtype=bool)
            self.key.extend(fn, p.positions[keep], p.bits[keep])
            self.key_click_times.append(p.times[keep])
            self.key_det_keys.append(p.det_keys[keep])


def _gate(times, clock: ClockBase):
    b = times // clock.bit_period_ps
    group, in_group = np.divmod(b, clock.pulse_spacing_bits)
    return group, in_group, in_group < 2
