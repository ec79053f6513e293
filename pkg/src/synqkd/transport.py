"""Reliable ordered message channels between the Alice and Bob state machines.

Two modes share one interface: an in-memory pair for single-process runs and
a TCP byte stream for two-process runs.  Messages are framed with a u16
little-endian payload length.  Closing an endpoint ends its sending direction
only; the peer sees end-of-session once it has drained everything sent.
"""

from __future__ import annotations

import collections
import socket
import struct
import threading
import time

import numpy as np

__all__ = [
    "MAX_PAYLOAD",
    "TransportError",
    "SessionClosed",
    "MessageTooLarge",
    "TruncatedMessage",
    "Endpoint",
    "in_process_pair",
    "listen",
    "connect",
    "parse_address",
]

MAX_PAYLOAD = 0xFFFF


class TransportError(Exception):
    pass


class SessionClosed(TransportError):
    pass


class MessageTooLarge(TransportError):
    pass


class TruncatedMessage(TransportError):
    pass


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


def _complete_prefix(buf: bytearray) -> int:
    """Length of the longest prefix of ``buf`` made of whole framed messages."""
    off, end = 0, len(buf)
    while off + 2 <= end:
        (length,) = struct.unpack_from("<H", buf, off)
        size = length + 2
        if off + size > end:
            break
        if length in (8, 10):
            # skip runs of fixed-size REPORT/CLICK records in one step
            n = (end - off) // size
            lens = np.ndarray((n,), dtype="<u2", buffer=buf, offset=off, strides=(size,))
            bad = np.flatnonzero(lens != length)
            off += (int(bad[0]) if bad.size else n) * size
            del lens
            continue
        off += size
    return off


class _Inbox:
    def __init__(self):
        self._cond = threading.Condition()
        self._chunks: collections.deque[bytes] = collections.deque()
        self._eof = False
        self._error: BaseException | None = None

    def put(self, data: bytes):
        with self._cond:
            self._chunks.append(data)
            self._cond.notify_all()

    def put_eof(self, error: BaseException | None = None):
        with self._cond:
            self._eof = True
            self._error = error
            self._cond.notify_all()

    def take(self, block: bool, timeout: float | None):
        """Return (data, eof)."""
        with self._cond:
            if block:
                self._cond.wait_for(lambda: self._chunks or self._eof, timeout)
            data = b"".join(self._chunks)
            self._chunks.clear()
            if self._error is not None and not data:
                raise self._error
            return data, self._eof and not data


class Endpoint:
    """One side of a session.  Not safe for concurrent senders."""

    def __init__(self, role: str, inbox: _Inbox, mode: str):
        if role not in ("alice", "bob"):
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.mode = mode
        self._inbox = inbox
        self._rx = bytearray()
        self._closed = False
        self._ended = False
        self.bytes_sent = 0

    # subclasses deliver bytes to the peer
    def _write(self, data: bytes):  # pragma: no cover - abstract
        raise NotImplementedError

    def _shutdown(self):  # pragma: no cover - abstract
        raise NotImplementedError

    def send(self, payload: bytes):
        if len(payload) > MAX_PAYLOAD:
            raise MessageTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        self.send_framed(struct.pack("<H", len(payload)) + payload)

    def send_framed(self, blob: bytes):
        """Send bytes that already hold whole framed messages."""
        if self._closed:
            raise SessionClosed(f"{self.role} endpoint is closed")
        if blob:
            self._write(bytes(blob))
            self.bytes_sent += len(blob)

    def close(self):
        if not self._closed:
            self._closed = True
            self._shutdown()

    def _fill(self, block: bool, timeout: float | None) -> bool:
        data, eof = self._inbox.take(block, timeout)
        self._rx += data
        return eof

    def receive_chunk(self, block: bool = True, timeout: float | None = None) -> bytes | None:
        """All complete framed messages available now.

        Returns ``b""`` when nothing is ready (non-blocking or timeout) and
        ``None`` at end-of-session.  Raises TruncatedMessage if the peer closed
        mid-message.
        """
        if self._ended:
            return None
        while True:
            eof = self._fill(block and not self._rx_has_message(), timeout)
            n = _complete_prefix(self._rx)
            if n:
                out = bytes(self._rx[:n])
                del self._rx[:n]
                return out
            if eof:
                if self._rx:
                    raise TruncatedMessage(f"{len(self._rx)} trailing bytes at end of session")
                self._ended = True
                return None
            if not block or timeout is not None:
                return b""

    def _rx_has_message(self) -> bool:
        if len(self._rx) < 2:
            return False
        (length,) = struct.unpack_from("<H", self._rx, 0)
        return len(self._rx) >= length + 2

    def receive(self) -> bytes | None:
        """Next message payload, blocking; ``None`` at end-of-session."""
        while not self._rx_has_message():
            if self._ended:
                return None
            if self._fill(True, None) and not self._rx_has_message():
                if self._rx:
                    raise TruncatedMessage(f"{len(self._rx)} trailing bytes at end of session")
                self._ended = True
                return None
        (length,) = struct.unpack_from("<H", self._rx, 0)
        out = bytes(self._rx[2: 2 + length])
        del self._rx[: 2 + length]
        return out


class _MemoryEndpoint(Endpoint):
    def __init__(self, role: str, inbox: _Inbox):
        super().__init__(role, inbox, "in_process")
        self.peer_inbox: _Inbox | None = None

    def _write(self, data: bytes):
        self.peer_inbox.put(data)

    def _shutdown(self):
        self.peer_inbox.put_eof()


def in_process_pair() -> tuple[Endpoint, Endpoint]:
    """(alice, bob) endpoints joined by in-memory queues."""
    a_in, b_in = _Inbox(), _Inbox()
    alice, bob = _MemoryEndpoint("alice", a_in), _MemoryEndpoint("bob", b_in)
    alice.peer_inbox, bob.peer_inbox = b_in, a_in
    return alice, bob


class _SocketEndpoint(Endpoint):
    def __init__(self, role: str, sock: socket.socket, mode: str):
        super().__init__(role, _Inbox(), mode)
        self._sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = threading.Thread(target=self._read_loop, name=f"{role}-reader", daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                data = self._sock.recv(1 << 20)
                if not data:
                    break
                self._inbox.put(data)
        except OSError as exc:
            self._inbox.put_eof(SessionClosed(str(exc)))
            return
        self._inbox.put_eof()

    def _write(self, data: bytes):
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise SessionClosed(str(exc)) from exc

    def _shutdown(self):
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def shutdown(self):
        """Close the socket entirely, abandoning anything not yet received."""
        self.close()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._reader.join(timeout=5)
        self._sock.close()


def listen(addr: str, role: str = "bob", timeout: float | None = 60.0) -> Endpoint:
    host, port = parse_address(addr)
    with socket.create_server((host, port), reuse_port=False) as srv:
        srv.settimeout(timeout)
        sock, _ = srv.accept()
    sock.settimeout(None)
    return _SocketEndpoint(role, sock, f"listener {addr}")


def connect(addr: str, role: str = "alice", retry_s: float = 30.0) -> Endpoint:
    host, port = parse_address(addr)
    deadline = time.monotonic() + retry_s
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=5.0)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
    sock.settimeout(None)
    return _SocketEndpoint(role, sock, f"dialer {addr}")
