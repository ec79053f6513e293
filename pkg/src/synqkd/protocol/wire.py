"""Little-endian, u16 length-prefixed messages exchanged by Alice and Bob.

Layout of a framed message: ``u16 payload_length`` then the payload, whose
first byte is the message type.

    SYNC        0x01  frame_number u32
    REPORT      0x02  frame_number u32, bit_position u16, flags u8
                      (bit0 basis_bit, bit1 detector_id)
    FRAME_DONE  0x03  count u16, frame_number u32 * count
    SIFT        0x04  frame_number u32, count u16, keep bitmap (BB84 only)
    CLICK       0x10  time_ps u64, flags u8 (bit0 detector_id, bit1 arm)

CLICK carries the simulated optical link (APD pulses reaching Bob's board);
it is not a classical-channel message and exists so the quantum channel can
cross a process boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .frames import FRAME_BITS, ProtocolError

__all__ = [
    "MAX_PAYLOAD",
    "SYNC",
    "REPORT",
    "FRAME_DONE",
    "SIFT",
    "CLICK",
    "Sync",
    "Report",
    "FrameDone",
    "Sift",
    "Click",
    "ReportBatch",
    "ClickBatch",
    "encode",
    "decode",
    "frame",
    "encode_reports",
    "encode_clicks",
    "iter_messages",
]

MAX_PAYLOAD = 0xFFFF

SYNC = 0x01
REPORT = 0x02
FRAME_DONE = 0x03
SIFT = 0x04
CLICK = 0x10


@dataclass(frozen=True)
class Sync:
    frame_number: int


@dataclass(frozen=True)
class Report:
    frame_number: int
    bit_position: int
    basis_bit: int
    detector_id: int


@dataclass(frozen=True)
class FrameDone:
    frame_numbers: tuple[int, ...]


@dataclass(frozen=True)
class Sift:
    frame_number: int
    keep: tuple[bool, ...]


@dataclass(frozen=True)
class Click:
    time_ps: int
    detector_id: int
    arm: int = 0


Message = Union[Sync, Report, FrameDone, Sift, Click]

_REPORT_DT = np.dtype([("len", "<u2"), ("type", "u1"), ("frame", "<u4"), ("pos", "<u2"), ("flags", "u1")])
_CLICK_DT = np.dtype([("len", "<u2"), ("type", "u1"), ("time", "<u8"), ("flags", "u1")])


@dataclass(frozen=True)
class ReportBatch:
    """A run of consecutive REPORT messages, decoded column-wise."""

    frame_number: np.ndarray
    bit_position: np.ndarray
    basis_bit: np.ndarray
    detector_id: np.ndarray

    def __len__(self):
        return len(self.frame_number)

    def messages(self) -> list[Report]:
        return [Report(int(f), int(p), int(b), int(d)) for f, p, b, d in
                zip(self.frame_number, self.bit_position, self.basis_bit, self.detector_id)]


@dataclass(frozen=True)
class ClickBatch:
    time_ps: np.ndarray
    detector_id: np.ndarray
    arm: np.ndarray

    def __len__(self):
        return len(self.time_ps)

    def messages(self) -> list[Click]:
        return [Click(int(t), int(d), int(a)) for t, d, a in zip(self.time_ps, self.detector_id, self.arm)]


def encode(msg: Message) -> bytes:
    """Payload bytes (type byte first, no length prefix)."""
    if isinstance(msg, Sync):
        return struct.pack("<BI", SYNC, msg.frame_number)
    if isinstance(msg, Report):
        if not 0 <= msg.bit_position < FRAME_BITS:
            raise ProtocolError(f"bit_position out of range: {msg.bit_position}")
        return struct.pack("<BIHB", REPORT, msg.frame_number, msg.bit_position,
                           (msg.basis_bit & 1) | ((msg.detector_id & 1) << 1))
    if isinstance(msg, FrameDone):
        n = len(msg.frame_numbers)
        return struct.pack(f"<BH{n}I", FRAME_DONE, n, *msg.frame_numbers)
    if isinstance(msg, Sift):
        bitmap = np.packbits(np.asarray(msg.keep, dtype=np.uint8), bitorder="little").tobytes()
        return struct.pack("<BIH", SIFT, msg.frame_number, len(msg.keep)) + bitmap
    if isinstance(msg, Click):
        return struct.pack("<BQB", CLICK, msg.time_ps, (msg.detector_id & 1) | ((msg.arm & 1) << 1))
    raise TypeError(f"not a protocol message: {msg!r}")


def decode(payload: bytes) -> Message:
    if not payload:
        raise ProtocolError("empty payload")
    kind = payload[0]
    try:
        if kind == SYNC and len(payload) == 5:
            return Sync(*struct.unpack_from("<I", payload, 1))
        if kind == REPORT and len(payload) == 8:
            f, pos, flags = struct.unpack_from("<IHB", payload, 1)
            if pos >= FRAME_BITS:
                raise ProtocolError(f"bit_position out of range: {pos}")
            return Report(f, pos, flags & 1, (flags >> 1) & 1)
        if kind == FRAME_DONE:
            (n,) = struct.unpack_from("<H", payload, 1)
            if len(payload) != 3 + 4 * n:
                raise ProtocolError("FRAME_DONE length does not match its count")
            return FrameDone(struct.unpack_from(f"<{n}I", payload, 3))
        if kind == SIFT:
            f, n = struct.unpack_from("<IH", payload, 1)
            if len(payload) != 7 + (n + 7) // 8:
                raise ProtocolError("SIFT length does not match its count")
            keep = np.unpackbits(np.frombuffer(payload, np.uint8, offset=7), bitorder="little")[:n]
            return Sift(f, tuple(bool(k) for k in keep))
        if kind == CLICK and len(payload) == 10:
            t, flags = struct.unpack_from("<QB", payload, 1)
            return Click(t, flags & 1, (flags >> 1) & 1)
    except struct.error as exc:
        raise ProtocolError(f"malformed message type 0x{kind:02x}: {exc}") from None
    if kind in (SYNC, REPORT, CLICK):
        raise ProtocolError(f"bad length {len(payload)} for message type 0x{kind:02x}")
    raise ProtocolError(f"unknown message type 0x{kind:02x}")


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return struct.pack("<H", len(payload)) + payload


def encode_reports(frame_number, bit_position, basis_bit, detector_id) -> bytes:
    """Framed REPORT messages for whole arrays at once."""
    n = len(bit_position)
    rec = np.empty(n, dtype=_REPORT_DT)
    rec["len"] = 8
    rec["type"] = REPORT
    rec["frame"] = frame_number
    rec["pos"] = bit_position
    rec["flags"] = (np.asarray(basis_bit, dtype=np.uint8) & 1) | ((np.asarray(detector_id, dtype=np.uint8) & 1) << 1)
    return rec.tobytes()


def encode_clicks(time_ps, detector_id, arm) -> bytes:
    n = len(time_ps)
    rec = np.empty(n, dtype=_CLICK_DT)
    rec["len"] = 10
    rec["type"] = CLICK
    rec["time"] = time_ps
    rec["flags"] = (np.asarray(detector_id, dtype=np.uint8) & 1) | ((np.asarray(arm, dtype=np.uint8) & 1) << 1)
    return rec.tobytes()


def _run_length(buf: memoryview, offset: int, dt: np.dtype, length: int, kind: int) -> int:
    n = (len(buf) - offset) // dt.itemsize
    if n == 0:
        return 0
    rec = np.frombuffer(buf, dtype=dt, count=n, offset=offset)
    ok = (rec["len"] == length) & (rec["type"] == kind)
    bad = np.flatnonzero(~ok)
    return int(bad[0]) if bad.size else n


def iter_messages(blob: bytes) -> Iterator[Message | ReportBatch | ClickBatch]:
    """Parse a blob of complete framed messages.

    Consecutive REPORT or CLICK messages come back as one batch object; every
    other message is decoded individually.
    """
    buf = memoryview(blob)
    off = 0
    end = len(buf)
    while off < end:
        if end - off < 3:
            raise ProtocolError("truncated message header")
        (length,) = struct.unpack_from("<H", buf, off)
        kind = buf[off + 2]
        if kind == REPORT and length == 8:
            n = _run_length(buf, off, _REPORT_DT, 8, REPORT)
            rec = np.frombuffer(buf, dtype=_REPORT_DT, count=n, offset=off)
            if (rec["pos"] >= FRAME_BITS).any():
                raise ProtocolError("bit_position out of range")
            yield ReportBatch(rec["frame"].astype(np.int64), rec["pos"].astype(np.int64),
                              (rec["flags"] & 1).astype(np.uint8), ((rec["flags"] >> 1) & 1).astype(np.uint8))
            off += n * _REPORT_DT.itemsize
            continue
        if kind == CLICK and length == 10:
            n = _run_length(buf, off, _CLICK_DT, 10, CLICK)
            rec = np.frombuffer(buf, dtype=_CLICK_DT, count=n, offset=off)
            yield ClickBatch(rec["time"].astype(np.int64), (rec["flags"] & 1).astype(np.uint8),
                             ((rec["flags"] >> 1) & 1).astype(np.uint8))
            off += n * _CLICK_DT.itemsize
            continue
        if off + 2 + length > end:
            raise ProtocolError("truncated message body")
        yield decode(bytes(buf[off + 2: off + 2 + length]))
        off += 2 + length
