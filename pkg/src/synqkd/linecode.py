"""8B/10B line code and XOR stream mixing for the classical channel.

Symbols are 10-bit integers written in transmission order ``abcdeifghj``
with ``a`` in bit 9, so serialising a symbol MSB-first yields the bits in
the order they go on the wire.  Source bit ``A`` (LSB of the byte) maps to
``a``.

Control units use the byte value of the K-code (K28.5 is ``0xBC``).  Stream
helpers address units as integers ``0..511``: data bytes are ``0..255`` and
control codes are ``256 + byte``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "CodeError",
    "InvalidSymbolError",
    "DisparityError",
    "RunningDisparity",
    "CodeUnit",
    "TenBitSymbol",
    "CONTROL_CODES",
    "K28_5",
    "COMMA_PATTERNS",
    "encode",
    "with_idle",
    "decode",
    "encode_units",
    "decode_symbols",
    "symbols_to_bits",
    "bits_to_symbols",
    "align",
    "mix_quantum",
    "recover_quantum",
]


class CodeError(ValueError):
    pass


class InvalidSymbolError(CodeError):
    """The 10-bit value is not a code group in either disparity column."""


class DisparityError(CodeError):
    """The code group exists, but only for the opposite running disparity."""


class RunningDisparity(IntEnum):
    NEGATIVE = -1
    POSITIVE = 1

    def flip(self) -> RunningDisparity:
        return RunningDisparity(-self.value)


@dataclass(frozen=True)
class CodeUnit:
    value: int
    control: bool = False

    def __post_init__(self):
        if not 0 <= self.value <= 0xFF:
            raise CodeError(f"unit value out of range: {self.value}")
        if self.control and self.value not in CONTROL_CODES:
            raise CodeError(f"not a valid control code: {self.name}")

    @classmethod
    def D(cls, x: int, y: int) -> CodeUnit:
        return cls((y << 5) | x)

    @classmethod
    def K(cls, x: int, y: int) -> CodeUnit:
        return cls((y << 5) | x, control=True)

    @property
    def name(self) -> str:
        kind = "K" if self.control else "D"
        return f"{kind}{self.value & 0x1F}.{self.value >> 5}"

    @property
    def index(self) -> int:
        return self.value + (256 if self.control else 0)

    @classmethod
    def from_index(cls, index: int) -> CodeUnit:
        return cls(index & 0xFF, control=index >= 256)


@dataclass(frozen=True)
class TenBitSymbol:
    bits: int

    @property
    def disparity_effect(self) -> int:
        ones = bin(self.bits).count("1")
        return 2 * ones - 10

    def __str__(self) -> str:
        return format(self.bits, "010b")


# 5b/6b codes (abcdei) for the RD- column.  Unbalanced codes are
# complemented for RD+; D.07 is balanced but still alternates.
_6B = [
    0b100111, 0b011101, 0b101101, 0b110001, 0b110101, 0b101001, 0b011001, 0b111000,
    0b111001, 0b100101, 0b010101, 0b110100, 0b001101, 0b101100, 0b011100, 0b010111,
    0b011011, 0b100011, 0b010011, 0b110010, 0b001011, 0b101010, 0b011010, 0b111010,
    0b110011, 0b100110, 0b010110, 0b110110, 0b001110, 0b101110, 0b011110, 0b101011,
]
_K28_6B = 0b001111

# 3b/4b codes (fghj) for the RD- column; x.3 alternates although balanced.
_4B_DATA = [0b1011, 0b1001, 0b0101, 0b1100, 0b1101, 0b1010, 0b0110, 0b1110]
_4B_A7 = 0b0111
_4B_CONTROL = [0b1011, 0b0110, 0b1010, 0b1100, 0b1101, 0b0101, 0b1001, 0b0111]

CONTROL_CODES = frozenset(
    [(y << 5) | 28 for y in range(8)] + [(7 << 5) | x for x in (23, 27, 29, 30)]
)
K28_5 = CodeUnit.K(28, 5)

COMMA_PATTERNS = (0b0011111, 0b1100000)


def _ones(word: int) -> int:
    return bin(word).count("1")


def _sub_block(code: int, nbits: int, rd: RunningDisparity, alternates: bool):
    """Pick the column for ``rd`` and return (code, rd after the sub-block)."""
    ones = _ones(code)
    balanced = 2 * ones == nbits
    if rd is RunningDisparity.POSITIVE and (not balanced or alternates):
        code = ~code & ((1 << nbits) - 1)
    if balanced:
        return code, rd
    return code, rd.flip()


def _use_a7(x: int, rd: RunningDisparity) -> bool:
    if rd is RunningDisparity.NEGATIVE:
        return x in (17, 18, 20)
    return x in (11, 13, 14)


def encode(unit: CodeUnit, rd: RunningDisparity) -> tuple[TenBitSymbol, RunningDisparity]:
    """Encode one unit at running disparity ``rd``."""
    x, y = unit.value & 0x1F, unit.value >> 5
    if unit.control:
        six = _K28_6B if x == 28 else _6B[x]
        six, mid = _sub_block(six, 6, rd, alternates=False)
        # every K.x.y fghj pair is complementary, balanced or not
        four, out = _sub_block(_4B_CONTROL[y], 4, mid, alternates=True)
    else:
        six, mid = _sub_block(_6B[x], 6, rd, alternates=x == 7)
        if y == 7 and _use_a7(x, mid):
            four, out = _sub_block(_4B_A7, 4, mid, alternates=False)
        else:
            four, out = _sub_block(_4B_DATA[y], 4, mid, alternates=y == 3)
    return TenBitSymbol((six << 4) | four), out


def _build_tables():
    """Per-disparity lookup tables indexed by unit index (0..511)."""
    enc = np.zeros((2, 512), dtype=np.uint16)
    valid = np.zeros(512, dtype=bool)
    dec: dict[RunningDisparity, dict[int, tuple[int, RunningDisparity]]] = {
        RunningDisparity.NEGATIVE: {},
        RunningDisparity.POSITIVE: {},
    }
    units = [CodeUnit(v) for v in range(256)] + [CodeUnit(v, True) for v in sorted(CONTROL_CODES)]
    for unit in units:
        valid[unit.index] = True
        for col, rd in enumerate((RunningDisparity.NEGATIVE, RunningDisparity.POSITIVE)):
            sym, out = encode(unit, rd)
            enc[col, unit.index] = sym.bits
            dec[rd][sym.bits] = (unit.index, out)
    return enc, valid, dec


_ENC, _VALID, _DEC = _build_tables()
_FLIPS = np.array([_ones(int(s)) != 5 for s in _ENC[0]], dtype=bool)
# reverse lookup per disparity column: symbol -> unit index, or -1
_DEC_UNIT = np.full((2, 1024), -1, dtype=np.int64)
for _col, _rd in enumerate((RunningDisparity.NEGATIVE, RunningDisparity.POSITIVE)):
    for _bits, (_index, _) in _DEC[_rd].items():
        _DEC_UNIT[_col, _bits] = _index
_SYMBOL_FLIPS = np.array([_ones(b) != 5 for b in range(1024)], dtype=bool)


def decode(symbol: TenBitSymbol | int, rd: RunningDisparity) -> tuple[CodeUnit, RunningDisparity]:
    """Decode one symbol, raising on invalid code groups or disparity violations."""
    bits = symbol.bits if isinstance(symbol, TenBitSymbol) else int(symbol)
    if not 0 <= bits < 1024:
        raise InvalidSymbolError(f"not a 10-bit value: {bits}")
    hit = _DEC[rd].get(bits)
    if hit is not None:
        index, out = hit
        return CodeUnit.from_index(index), out
    if bits in _DEC[rd.flip()]:
        raise DisparityError(f"{bits:010b} is not valid at running disparity {rd.name}")
    raise InvalidSymbolError(f"{bits:010b} is not an 8B/10B code group")


def encode_units(units, rd: RunningDisparity = RunningDisparity.NEGATIVE):
    """Vectorised encoder over unit indices.  Returns (symbols, final rd).

    Whether a code group flips the running disparity does not depend on the
    column it came from, so the disparity before each unit is a prefix parity.
    """
    units = np.asarray(units, dtype=np.int64)
    if units.size and not _VALID[units].all():
        bad = units[~_VALID[units]][0]
        raise CodeError(f"invalid unit index {bad}")
    flips = _FLIPS[units].astype(np.int64)
    before = np.concatenate(([0], np.cumsum(flips)[:-1])) & 1 if units.size else flips
    col = before ^ (0 if rd is RunningDisparity.NEGATIVE else 1)
    symbols = _ENC[col, units]
    last = col[-1] ^ flips[-1] if units.size else (0 if rd is RunningDisparity.NEGATIVE else 1)
    return symbols, RunningDisparity.POSITIVE if last else RunningDisparity.NEGATIVE


def decode_symbols(symbols, rd: RunningDisparity = RunningDisparity.NEGATIVE):
    """Decode a symbol sequence to unit indices, tracking running disparity.

    Raises at the first bad symbol exactly as :func:`decode` would.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    start = 0 if rd is RunningDisparity.NEGATIVE else 1
    if symbols.size == 0:
        return np.empty(0, dtype=np.int64), rd
    if symbols.min() < 0 or symbols.max() > 1023:
        bad = int(np.flatnonzero((symbols < 0) | (symbols > 1023))[0])
        raise InvalidSymbolError(f"symbol {bad}: not a 10-bit value")
    flips = _SYMBOL_FLIPS[symbols].astype(np.int64)
    col = (np.concatenate(([0], np.cumsum(flips)[:-1])) + start) & 1
    out = _DEC_UNIT[col, symbols]
    bad = np.flatnonzero(out < 0)
    if bad.size:
        i = int(bad[0])
        decode(int(symbols[i]), RunningDisparity.POSITIVE if col[i] else RunningDisparity.NEGATIVE)
    last = col[-1] ^ flips[-1]
    return out, RunningDisparity.POSITIVE if last else RunningDisparity.NEGATIVE


def with_idle(units, n_idle: int = 4) -> np.ndarray:
    """Unit indices of a frame preceded by ``n_idle`` K28.5 idle units."""
    idle = np.full(n_idle, K28_5.index, dtype=np.int64)
    return np.concatenate((idle, np.asarray(units, dtype=np.int64)))


def symbols_to_bits(symbols) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.uint16)
    shifts = np.arange(9, -1, -1, dtype=np.uint16)
    return ((symbols[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def bits_to_symbols(bits, offset: int = 0) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint16)[offset:]
    n = len(bits) // 10
    weights = (1 << np.arange(9, -1, -1)).astype(np.uint16)
    return (bits[: n * 10].reshape(n, 10) * weights).sum(axis=1).astype(np.uint16)


def align(bitstream) -> int | None:
    """Word boundary offset (0..9) of the first comma in the stream, else None."""
    bits = np.asarray(bitstream, dtype=np.uint8)
    if len(bits) < 7:
        return None
    windows = np.lib.stride_tricks.sliding_window_view(bits, 7)
    words = windows @ (1 << np.arange(6, -1, -1))
    hits = np.flatnonzero(np.isin(words, COMMA_PATTERNS))
    if hits.size == 0:
        return None
    return int(hits[0] % 10)


def mix_quantum(classical_bits, quantum_bits) -> np.ndarray:
    """XOR the sparse quantum-channel bits onto the coded classical stream."""
    c = np.asarray(classical_bits, dtype=np.uint8)
    q = np.asarray(quantum_bits, dtype=np.uint8)
    if c.shape != q.shape:
        raise ValueError(f"stream length mismatch: {c.shape} vs {q.shape}")
    return c ^ q


def recover_quantum(mixed_bits, classical_bits) -> np.ndarray:
    return mix_quantum(mixed_bits, classical_bits)
