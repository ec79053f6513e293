"""Frames, detection reports, sifting, frame retention and the capacity queue."""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..detector import FRAME_BITS, Cause
from ..photonics import ProtocolKind

__all__ = [
    "FRAME_BITS",
    "FRAME_MODULUS",
    "ProtocolError",
    "Frame",
    "DetectionReport",
    "SiftedBuffer",
    "CapacityModel",
    "CapacityQueue",
    "FrameCompletion",
    "QberResult",
    "frame_add",
    "frame_before",
    "generate_frame",
    "sift_b92",
    "sift_bb84",
    "reconcile_frames",
    "apply_capacity",
    "compute_qber",
]

FRAME_MODULUS = 1 << 32


class ProtocolError(Exception):
    pass


def frame_add(frame_number: int, k: int) -> int:
    return (frame_number + k) % FRAME_MODULUS


def frame_before(a: int, b: int) -> bool:
    """True if frame ``a`` precedes ``b`` within a 2**31 window."""
    d = (b - a) % FRAME_MODULUS
    return 0 < d < (1 << 31)


@dataclass(frozen=True, eq=False)
class Frame:
    frame_number: int
    value_bits: np.ndarray
    basis_bits: np.ndarray

    def __post_init__(self):
        if not 0 <= self.frame_number < FRAME_MODULUS:
            raise ValueError("frame_number must be a 32-bit unsigned integer")
        if len(self.value_bits) != FRAME_BITS or len(self.basis_bits) != FRAME_BITS:
            raise ValueError(f"frames carry exactly {FRAME_BITS} bit positions")

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_number == other.frame_number
            and np.array_equal(self.value_bits, other.value_bits)
            and np.array_equal(self.basis_bits, other.basis_bits)
        )


@dataclass(frozen=True)
class DetectionReport:
    frame_number: int
    bit_position: int
    basis_bit: int
    detector_id: int

    def __post_init__(self):
        if not 0 <= self.bit_position < FRAME_BITS:
            raise ProtocolError(f"bit_position out of range: {self.bit_position}")


def _random_bits(rng, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(rng.bytes(n // 8), dtype=np.uint8))


def generate_frame(rng, protocol: ProtocolKind, frame_number: int) -> Frame:
    """Draw one frame of random data.  ``rng`` needs only a ``bytes(n)`` method,
    so a numpy Generator and an external entropy source are interchangeable."""
    values = _random_bits(rng, FRAME_BITS)
    if ProtocolKind(protocol) is ProtocolKind.BB84:
        bases = _random_bits(rng, FRAME_BITS)
    else:
        bases = np.zeros(FRAME_BITS, dtype=np.uint8)
    return Frame(frame_number, values, bases)


def _check_reports(frame: Frame, reports: Sequence[DetectionReport]):
    for r in reports:
        if r.frame_number != frame.frame_number:
            raise ProtocolError(f"report for unknown frame {r.frame_number}")
        if not 0 <= r.bit_position < FRAME_BITS:
            raise ProtocolError(f"bit_position out of range: {r.bit_position}")


def sift_b92(frame: Frame, reports: Sequence[DetectionReport]) -> list[tuple[int, int, int]]:
    """Every B92 report is conclusive: detector 0 means bit 0, detector 1 bit 1."""
    _check_reports(frame, reports)
    return [(int(frame.value_bits[r.bit_position]), r.detector_id, r.bit_position) for r in reports]


def sift_bb84(frame: Frame, reports: Sequence[DetectionReport]) -> list[tuple[int, int, int]]:
    """Keep reports whose measurement basis matches Alice's basis bit."""
    _check_reports(frame, reports)
    return [
        (int(frame.value_bits[r.bit_position]), r.detector_id, r.bit_position)
        for r in reports
        if r.basis_bit == frame.basis_bits[r.bit_position]
    ]


def reconcile_frames(alice_done: Iterable[int], bob_done: Iterable[int]) -> set[int]:
    return set(alice_done) & set(bob_done)


@dataclass
class SiftedBuffer:
    """Committed sifted key with per-bit (frame_number, bit_position) provenance."""

    _bits: list = field(default_factory=list)
    _frames: list = field(default_factory=list)
    _positions: list = field(default_factory=list)

    def extend(self, frame_number: int, positions, bits):
        positions = np.asarray(positions, dtype=np.int64)
        self._bits.append(np.asarray(bits, dtype=np.uint8))
        self._positions.append(positions)
        self._frames.append(np.full(len(positions), frame_number, dtype=np.int64))

    def __len__(self) -> int:
        return sum(len(b) for b in self._bits)

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate(self._bits) if self._bits else np.empty(0, dtype=np.uint8)

    @property
    def source_tags(self) -> np.ndarray:
        """(n, 2) array of (frame_number, bit_position)."""
        if not self._bits:
            return np.empty((0, 2), dtype=np.int64)
        return np.column_stack((np.concatenate(self._frames), np.concatenate(self._positions)))


@dataclass(frozen=True)
class CapacityModel:
    """Deterministic single-server model of the host's frame processing.

    A frame costs ``1/service_rate_frames_per_s`` plus, when ``report_rate_hz``
    is set, ``reports/report_rate_hz`` seconds.  At most ``queue_depth`` frames
    wait behind the one in service.
    """

    service_rate_frames_per_s: float = 2.0e6
    queue_depth: int = 256
    report_rate_hz: float | None = 1.0826e6
    enabled: bool = True

    def __post_init__(self):
        if self.service_rate_frames_per_s <= 0:
            raise ValueError("service_rate_frames_per_s must be positive")
        if self.queue_depth < 0:
            raise ValueError("queue_depth must be >= 0")
        if self.report_rate_hz is not None and self.report_rate_hz <= 0:
            raise ValueError("report_rate_hz must be positive")

    def service_time(self, reports: int) -> float:
        t = 1.0 / self.service_rate_frames_per_s
        if self.report_rate_hz is not None:
            t += reports / self.report_rate_hz
        return t


@dataclass(frozen=True)
class FrameCompletion:
    time_s: float
    frame_number: int
    reports: int = 0


class CapacityQueue:
    """Incremental form of :func:`apply_capacity` for a running session."""

    def __init__(self, model: CapacityModel):
        self.model = model
        self._departures: collections.deque[float] = collections.deque()
        self.offered = 0
        self.dropped = 0

    def offer(self, time_s: float, reports: int = 0) -> bool:
        self.offered += 1
        if not self.model.enabled:
            return True
        deps = self._departures
        # a departure due at the arrival instant frees its slot; 1 ps absorbs float rounding
        while deps and deps[0] <= time_s + 1e-12:
            deps.popleft()
        if len(deps) > self.model.queue_depth:
            self.dropped += 1
            return False
        start = deps[-1] if deps else time_s
        deps.append(max(start, time_s) + self.model.service_time(reports))
        return True


def apply_capacity(offered: Sequence[FrameCompletion], model: CapacityModel):
    """Split time-ordered frame completions into (processed, dropped)."""
    queue = CapacityQueue(model)
    processed, dropped = [], []
    last = -math.inf
    for c in offered:
        if c.time_s < last:
            raise ValueError("frame completions must be time-ordered")
        last = c.time_s
        (processed if queue.offer(c.time_s, c.reports) else dropped).append(c)
    return processed, dropped


@dataclass(frozen=True)
class QberResult:
    qber: float
    errors: int
    length: int
    by_cause: dict[str, float]


def compute_qber(alice_bits, bob_bits, causes=None) -> QberResult:
    """Hamming distance over length, optionally split by detection cause."""
    a = np.asarray(alice_bits, dtype=np.uint8)
    b = np.asarray(bob_bits, dtype=np.uint8)
    if a.shape != b.shape:
        raise ProtocolError(f"sifted buffers differ in length: {a.size} vs {b.size}")
    n = a.size
    wrong = a != b
    errors = int(wrong.sum())
    by_cause: dict[str, float] = {}
    if causes is not None:
        causes = np.asarray(causes)
        for c in Cause:
            by_cause[c.label] = float((wrong & (causes == c)).sum() / n) if n else 0.0
    return QberResult(errors / n if n else 0.0, errors, n, by_cause)
