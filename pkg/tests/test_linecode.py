import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synqkd.linecode import (
    COMMA_PATTERNS,
    CONTROL_CODES,
    K28_5,
    CodeError,
    CodeUnit,
    DisparityError,
    InvalidSymbolError,
    RunningDisparity,
    TenBitSymbol,
    align,
    bits_to_symbols,
    decode,
    decode_symbols,
    encode,
    encode_units,
    mix_quantum,
    recover_quantum,
    symbols_to_bits,
    with_idle,
)

NEG, POS = RunningDisparity.NEGATIVE, RunningDisparity.POSITIVE
GOLDEN = Path(__file__).parent / "data" / "code8b10b_golden.csv"


def parse_unit(name: str) -> CodeUnit:
    kind, rest = name[0], name[1:]
    x, y = (int(v) for v in rest.split("."))
    return CodeUnit.K(x, y) if kind == "K" else CodeUnit.D(x, y)


def golden_rows():
    with GOLDEN.open() as fh:
        for row in csv.DictReader(fh):
            rd_in = NEG if row["rd_in"] == "-1" else POS
            rd_out = NEG if row["rd_out"] == "-1" else POS
            yield parse_unit(row["unit"]), rd_in, int(row["symbol_bits"], 2), rd_out


ALL_UNITS = [CodeUnit(v) for v in range(256)] + [CodeUnit(v, True) for v in sorted(CONTROL_CODES)]


def all_pairs_bits():
    """Every valid (symbol, next symbol) pair as 20-bit strings."""
    out = []
    for u in ALL_UNITS:
        for rd in (NEG, POS):
            s1, mid = encode(u, rd)
            for v in ALL_UNITS:
                s2, _ = encode(v, mid)
                out.append((u, v, f"{s1.bits:010b}{s2.bits:010b}"))
    return out


def test_golden_table_covers_every_unit_and_disparity():
    rows = list(golden_rows())
    assert len(rows) == (256 + 12) * 2
    assert {(u, rd) for u, rd, _, _ in rows} == {(u, rd) for u in ALL_UNITS for rd in (NEG, POS)}


def test_encoder_matches_golden_table():
    for unit, rd_in, bits, rd_out in golden_rows():
        sym, out = encode(unit, rd_in)
        assert (sym.bits, out) == (bits, rd_out), unit.name


def test_decoder_inverts_golden_table():
    for unit, rd_in, bits, rd_out in golden_rows():
        assert decode(bits, rd_in) == (unit, rd_out)


def test_published_spot_values():
    assert str(encode(CodeUnit.D(0, 0), NEG)[0]) == "1001110100"
    assert str(encode(K28_5, NEG)[0]) == "0011111010"
    assert str(encode(K28_5, POS)[0]) == "1100000101"
    assert str(encode(CodeUnit.D(17, 7), NEG)[0]) == "1000110111"
    assert str(encode(CodeUnit.D(11, 7), POS)[0]) == "1101001000"
    assert K28_5.value == 0xBC and K28_5.name == "K28.5"


@pytest.mark.parametrize("rd", [NEG, POS])
def test_round_trip_all_units(rd):
    for u in ALL_UNITS:
        sym, out = encode(u, rd)
        assert decode(sym, rd) == (u, out)


def test_symbol_invariants():
    for u in ALL_UNITS:
        for rd in (NEG, POS):
            sym, out = encode(u, rd)
            ones = bin(sym.bits).count("1")
            assert ones in (4, 5, 6)
            assert max(len(r) for r in str(sym).replace("01", "0 1").replace("10", "1 0").split()) <= 5
            assert sym.disparity_effect == 2 * ones - 10
            # unbalanced symbols always move disparity towards zero
            if ones != 5:
                assert (ones > 5) == (rd is NEG) and out is rd.flip()
            else:
                assert out is rd


def test_encode_of_decode_is_identity_on_valid_symbols():
    for rd in (NEG, POS):
        for bits in range(1024):
            try:
                unit, out = decode(bits, rd)
            except CodeError:
                continue
            assert encode(unit, rd) == (TenBitSymbol(bits), out)


def test_invalid_control_code_rejected():
    with pytest.raises(ValueError):
        CodeUnit.K(27, 5)
    with pytest.raises(ValueError):
        CodeUnit(256)


def test_all_zeros_is_invalid_symbol():
    with pytest.raises(InvalidSymbolError):
        decode(0, NEG)
    with pytest.raises(InvalidSymbolError):
        decode(0b1111111111, POS)


def test_disparity_error_distinct_from_invalid():
    # brute force: every symbol valid in exactly one column is a disparity error in the other
    seen = 0
    for bits in range(1024):
        valid = {}
        for rd in (NEG, POS):
            try:
                decode(bits, rd)
                valid[rd] = True
            except DisparityError:
                valid[rd] = "disparity"
            except InvalidSymbolError:
                valid[rd] = False
        if valid[NEG] is True and valid[POS] is not True:
            assert valid[POS] == "disparity"
            seen += 1
        if valid[NEG] is False:
            assert valid[POS] is False
    assert seen > 100
    sym, _ = encode(CodeUnit.D(0, 0), POS)
    with pytest.raises(DisparityError):
        decode(sym, NEG)


def test_comma_occurs_only_in_k28_1_5_7():
    """Exhaustive pair scan: aligned commas come only from K28.1, K28.5 and
    K28.7; the only misaligned ones straddle a K28.7 and what follows it."""
    commas = {f"{p:07b}" for p in COMMA_PATTERNS}
    aligned_sources, misaligned_sources = set(), set()
    for u, v, bits in all_pairs_bits():
        for k in range(14):
            if bits[k: k + 7] in commas:
                (aligned_sources if k in (0, 10) else misaligned_sources).add(u if k < 10 else v)
    k28 = {CodeUnit.K(28, y) for y in (1, 5, 7)}
    assert aligned_sources == k28
    assert misaligned_sources == {CodeUnit.K(28, 7)}


def test_k28_5_contains_comma_in_both_disparities():
    for rd in (NEG, POS):
        assert str(encode(K28_5, rd)[0])[:7] in {f"{p:07b}" for p in COMMA_PATTERNS}


def test_stream_run_length_and_disparity_bound():
    rng = np.random.default_rng(11)
    units = rng.choice([u.index for u in ALL_UNITS], size=200_000)
    syms, _ = encode_units(units)
    bits = symbols_to_bits(syms)
    change = np.flatnonzero(np.diff(bits)) + 1
    runs = np.diff(np.concatenate(([0], change, [bits.size])))
    assert runs.max() <= 5
    rds = np.cumsum(np.where(bits == 1, 1, -1))
    at_boundaries = rds[9::10]
    assert np.abs(at_boundaries).max() <= 3


def test_vector_codec_matches_scalar():
    rng = np.random.default_rng(3)
    units = rng.choice([u.index for u in ALL_UNITS], size=2000)
    for rd in (NEG, POS):
        syms, end = encode_units(units, rd)
        cur = rd
        for u, s in zip(units, syms):
            sym, cur = encode(CodeUnit.from_index(int(u)), cur)
            assert sym.bits == s
        assert end is cur
        back, end2 = decode_symbols(syms, rd)
        assert np.array_equal(back, units) and end2 is end


def test_decode_symbols_reports_first_bad_symbol():
    syms, _ = encode_units([1, 2, 3])
    bad = np.array([syms[0], 0, syms[2]])
    with pytest.raises(InvalidSymbolError):
        decode_symbols(bad)


def test_encode_units_rejects_unknown_control():
    with pytest.raises(CodeError):
        encode_units([256 + 0x00])


def test_bits_symbols_round_trip():
    rng = np.random.default_rng(5)
    syms = rng.integers(0, 1024, 100).astype(np.uint16)
    assert np.array_equal(bits_to_symbols(symbols_to_bits(syms)), syms)


@pytest.mark.parametrize("rotation", range(10))
def test_align_recovers_rotation_of_idle_stream(rotation):
    syms, _ = encode_units([K28_5.index] * 8)
    bits = symbols_to_bits(syms)
    shifted = np.roll(bits, rotation)
    # brute force over all offsets: only the true one decodes to K28.5 throughout
    good = []
    for off in range(10):
        syms_at = bits_to_symbols(shifted, off)
        try:
            decoded, _ = decode_symbols(syms_at[:-1], NEG if off == rotation else POS)
        except CodeError:
            try:
                decoded, _ = decode_symbols(syms_at[:-1], POS)
            except CodeError:
                continue
        if set(decoded.tolist()) == {K28_5.index}:
            good.append(off)
    assert good == [rotation]
    assert align(shifted) == rotation


def test_align_none_on_data_without_comma():
    rng = np.random.default_rng(9)
    syms, _ = encode_units(rng.integers(0, 256, 5000))
    assert align(symbols_to_bits(syms)) is None
    assert align(np.zeros(5, dtype=np.uint8)) is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=200), st.integers(0, 9), st.integers(1, 6))
def test_align_same_before_and_after_payload(payload, lead, n_idle):
    syms, _ = encode_units(with_idle(payload, n_idle))
    bits = np.concatenate((np.ones(lead, dtype=np.uint8), symbols_to_bits(syms)))
    idle_only = bits[: lead + 10 * n_idle]
    assert align(idle_only) == align(bits) == lead % 10
    decoded, _ = decode_symbols(bits_to_symbols(bits, align(bits)))
    assert decoded[n_idle:].tolist() == payload


def test_mix_identity_and_involution():
    rng = np.random.default_rng(0)
    c = rng.integers(0, 2, 1000, dtype=np.uint8)
    assert np.array_equal(mix_quantum(c, np.zeros_like(c)), c)
    q = (rng.random(1000) < 0.01).astype(np.uint8)
    mixed = mix_quantum(c, q)
    assert np.array_equal(recover_quantum(mixed, c), q)
    assert int((mixed != c).sum()) == int(q.sum())
    assert not recover_quantum(c, c).any()


def test_mix_single_bit_position():
    rng = np.random.default_rng(1)
    c = rng.integers(0, 2, 500, dtype=np.uint8)
    for k in rng.integers(0, 500, 20):
        q = np.zeros(500, dtype=np.uint8)
        q[k] = 1
        assert np.flatnonzero(recover_quantum(mix_quantum(c, q), c)).tolist() == [k]


def test_mix_length_mismatch():
    with pytest.raises(ValueError):
        mix_quantum(np.zeros(3), np.zeros(4))
