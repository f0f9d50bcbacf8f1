import bisect
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progpoly.formats import (
    BFLOAT16, FLOAT32, TENSORFLOAT32, EnumerationCapError, FpFormat, FpValue, IEEE_MODES,
    RoundingMode, decode, enumerate_values, next_after, prev_before, round_exact,
    round_ratio_array, to_float,
)

RN, RA, RZ, RU, RD, RO = (RoundingMode.RN, RoundingMode.RA, RoundingMode.RZ,
                          RoundingMode.RU, RoundingMode.RD, RoundingMode.RO)
F10 = FpFormat(10, 8)


def test_parse_aliases():
    assert FpFormat.parse("bfloat16") == FpFormat(16, 8)
    assert FpFormat.parse("tensorfloat32") == FpFormat(19, 8)
    assert FpFormat.parse("float32") == FpFormat(32, 8)
    assert FpFormat.parse(" fp(21, 8) ") == FpFormat(21, 8)
    with pytest.raises(ValueError):
        FpFormat.parse("fp16")
    with pytest.raises(ValueError):
        FpFormat(10, 9)
    with pytest.raises(ValueError):
        FpFormat(10, 1)


def test_layout_constants():
    assert BFLOAT16.mantissa_bits == 7 and BFLOAT16.bias == 127
    assert TENSORFLOAT32.mantissa_bits == 10
    assert FLOAT32.max_finite == Fraction((1 << 24) - 1) * 2 ** 104


def test_decode_examples():
    assert decode(FpValue(BFLOAT16, 0x3F80)) == 1
    assert decode(FpValue(BFLOAT16, 0x0001)) == Fraction(1, 2 ** 133)
    assert decode(FpValue(TENSORFLOAT32, 0xFF << 10)) == math.inf
    assert decode(FpValue(TENSORFLOAT32, (0x1FF << 10))) == -math.inf
    assert math.isnan(decode(FpValue(BFLOAT16, 0x7FC0)))
    assert decode(FpValue(BFLOAT16, 0x8000)) == 0


def test_float32_layout_matches_hardware():
    import struct
    rng = random.Random(3)
    for _ in range(2000):
        bits = rng.getrandbits(32)
        (expect,) = struct.unpack("<f", struct.pack("<I", bits))
        got = to_float(FpValue(FLOAT32, bits))
        assert got == expect or (math.isnan(got) and math.isnan(expect))


def test_round_examples():
    assert round_exact(1 + Fraction(1, 2 ** 9), BFLOAT16, RO).bits == 0x3F81
    assert round_exact(Fraction(1), BFLOAT16, RO).bits == 0x3F80
    assert round_exact(1 + Fraction(1, 2 ** 8), BFLOAT16, RN).bits == 0x3F80
    assert round_exact(1 + Fraction(3, 2 ** 8), BFLOAT16, RN).bits == 0x3F82
    assert round_exact(1 + Fraction(1, 2 ** 8), BFLOAT16, RA).bits == 0x3F81


def test_round_specials_and_signed_zero():
    assert round_exact(math.inf, BFLOAT16, RZ).is_inf()
    assert round_exact(-math.inf, BFLOAT16, RO).bits == 0xFF80
    assert round_exact(math.nan, BFLOAT16, RN).is_nan()
    tiny = -Fraction(1, 2 ** 200)
    assert round_exact(tiny, BFLOAT16, RZ).bits == 0x8000
    assert round_exact(tiny, BFLOAT16, RN).bits == 0x8000
    assert round_exact(tiny, BFLOAT16, RD).bits == 0x8001
    assert round_exact(tiny, BFLOAT16, RO).bits == 0x8001
    assert round_exact(-0.0, BFLOAT16, RN).bits == 0x8000


def test_overflow_behaviour():
    huge = Fraction(2) ** 140
    assert round_exact(huge, BFLOAT16, RN).is_inf()
    assert round_exact(huge, BFLOAT16, RZ).bits == BFLOAT16.max_finite_bits
    assert round_exact(huge, BFLOAT16, RD).bits == BFLOAT16.max_finite_bits
    assert round_exact(-huge, BFLOAT16, RD).bits == 0xFF80
    assert round_exact(huge, BFLOAT16, RO).bits == BFLOAT16.max_finite_bits
    assert round_exact(huge, BFLOAT16, RO, ro_saturate=False).is_inf()


def test_enumerate():
    vals = list(enumerate_values(F10))
    assert len(vals) == 1024
    assert [v.bits for v in vals] == list(range(1024))
    assert next(enumerate_values(BFLOAT16)).bits == 0
    assert sum(1 for _ in enumerate_values(BFLOAT16)) == 65536
    with pytest.raises(EnumerationCapError, match="cap"):
        next(enumerate_values(FpFormat(26, 8)))


def test_adjacency():
    assert next_after(FpValue(BFLOAT16, 0x3F80)).bits == 0x3F81
    assert next_after(FpValue(BFLOAT16, 0x8000)).bits == 0x0001
    assert prev_before(FpValue(BFLOAT16, 0x0001)).bits == 0x0000
    assert prev_before(FpValue(BFLOAT16, 0x0000)).bits == 0x8001
    assert next_after(FpValue(BFLOAT16, BFLOAT16.max_finite_bits)).is_inf()
    assert prev_before(FpValue(BFLOAT16, 0x8000 | BFLOAT16.max_finite_bits)).bits == 0xFF80
    with pytest.raises(ValueError):
        next_after(FpValue(BFLOAT16, 0x7F80))


# -- brute-force oracle -----------------------------------------------------------

def _sorted_finite(fmt):
    vals = [v for v in enumerate_values(fmt) if v.is_finite() and not v.negative]
    return sorted(vals, key=decode)


_F10_SORTED = _sorted_finite(F10)
_F10_VALUES = [decode(v) for v in _F10_SORTED]


def brute_round(x, fmt_sorted, values, fmt, mode):
    """Pick the rounded encoding from the bracketing pair in the sorted list of all finite values."""
    # virtual neighbour beyond the largest finite value: the next power of two
    beyond = Fraction(2) ** (fmt.emax + 1)
    neg = x < 0
    ax = abs(x)
    signed = lambda v: FpValue(fmt, v.bits | (fmt.sign_bit if neg else 0))
    i = bisect.bisect_right(values, ax) - 1
    lo_val, lo_enc = values[i], fmt_sorted[i]
    if i + 1 < len(values):
        hi_val, hi_enc, hi_is_inf = values[i + 1], fmt_sorted[i + 1], False
    else:
        hi_val, hi_enc, hi_is_inf = beyond, FpValue(fmt, fmt.inf_bits), True
    if lo_val == ax:
        return signed(lo_enc)
    toward_zero, away = lo_enc, hi_enc
    if mode is RoundingMode.RO:
        if hi_is_inf:
            return signed(lo_enc)
        return signed(lo_enc if lo_enc.bits & 1 else hi_enc)
    if mode is RoundingMode.RZ:
        return signed(toward_zero)
    if mode is RoundingMode.RU:
        return signed(toward_zero if neg else away)
    if mode is RoundingMode.RD:
        return signed(away if neg else toward_zero)
    d_lo, d_hi = ax - lo_val, hi_val - ax
    if d_lo < d_hi:
        return signed(lo_enc)
    if d_hi < d_lo:
        return signed(hi_enc)
    if mode is RoundingMode.RA:
        return signed(hi_enc)
    # ties to even: the virtual power of two beyond the top counts as even
    if hi_is_inf or not hi_enc.bits & 1:
        return signed(hi_enc)
    return signed(lo_enc)


def _f10_probe_points():
    pts = set()
    for a, b in zip(_F10_VALUES, _F10_VALUES[1:]):
        mid = (a + b) / 2
        for p in (a, mid, a + (b - a) / 4, a + 3 * (b - a) / 4, mid + (b - a) / 1000):
            pts.add(p)
    top = _F10_VALUES[-1]
    beyond = Fraction(2) ** (F10.emax + 1)
    pts.update([(top + beyond) / 2, beyond, beyond * 3, (top + beyond) / 2 - Fraction(1, 2 ** 200)])
    pts.update([Fraction(1, 2 ** 300), Fraction(1, 3)])
    return sorted(pts)


_F10_PROBES = _f10_probe_points()


@pytest.mark.parametrize("mode", list(RoundingMode))
def test_round_matches_brute_force_on_f10(mode):
    for x in _F10_PROBES:
        for s in (x, -x):
            got = round_exact(s, F10, mode)
            want = brute_round(s, _F10_SORTED, _F10_VALUES, F10, mode)
            assert got.bits == want.bits, (s, mode, got, want)


def test_round_rn_matches_nearest_scan_bf16_random():
    fmt_sorted = _sorted_finite(FpFormat(12, 8))
    values = [decode(v) for v in fmt_sorted]
    rng = random.Random(11)
    for _ in range(300):
        x = Fraction(rng.randrange(1, 1 << 30), rng.randrange(1, 1 << 20)) * Fraction(2) ** rng.randrange(-140, 110)
        for mode in (RN, RO, RD):
            assert round_exact(x, FpFormat(12, 8), mode) == brute_round(x, fmt_sorted, values, FpFormat(12, 8), mode)


def test_decode_round_identity_on_encodings():
    for v in enumerate_values(FpFormat(12, 8)):
        if v.is_nan():
            continue
        x = decode(v)
        if v.is_zero():
            x = -0.0 if v.negative else 0.0
        for mode in RoundingMode:
            assert round_exact(x, v.fmt, mode) == v


exact_reals = st.builds(
    lambda n, d, e, s: (-1) ** s * Fraction(n, d) * Fraction(2) ** e,
    st.integers(1, 1 << 40), st.integers(1, 1 << 30), st.integers(-170, 140), st.integers(0, 1))


@settings(max_examples=300, deadline=None)
@given(exact_reals, exact_reals, st.sampled_from(list(RoundingMode)))
def test_monotonicity(x, y, mode):
    if x > y:
        x, y = y, x
    fmt = FpFormat(14, 8)
    a, b = decode(round_exact(x, fmt, mode)), decode(round_exact(y, fmt, mode))
    assert a <= b


@settings(max_examples=300, deadline=None)
@given(exact_reals)
def test_round_to_odd_parity(x):
    fmt = FpFormat(15, 8)
    v = round_exact(x, fmt, RO)
    if decode(v) == x:
        assert v == round_exact(x, fmt, RN)
    else:
        assert v.bits & 1


@settings(max_examples=200, deadline=None)
@given(exact_reals, st.integers(10, 19))
def test_double_rounding_through_round_to_odd(x, k):
    wide = FpFormat(21, 8)
    mid = decode(round_exact(x, wide, RO))
    for mode in IEEE_MODES:
        assert round_exact(mid, FpFormat(k, 8), mode) == round_exact(x, FpFormat(k, 8), mode)


def test_round_ratio_array_matches_scalar():
    rng = np.random.default_rng(5)
    n = 4000
    neg = rng.random(n) < 0.5
    num = rng.integers(1, 1 << 31, n)
    den = rng.integers(1, 1 << 31, n)
    exp = rng.integers(-170, 140, n)
    # plant exact midpoints and grid points
    num[:500] = rng.integers(1, 1 << 14, 500) * 2 + 1
    den[:500] = 1
    for fmt in (F10, FpFormat(19, 8), FpFormat(21, 8)):
        for mode in RoundingMode:
            got = round_ratio_array(neg, num, den, exp, fmt, mode)
            for i in range(0, n, 7):
                x = Fraction(int(num[i]), int(den[i])) * Fraction(2) ** int(exp[i])
                want = round_exact(-x if neg[i] else x, fmt, mode).bits
                assert int(got[i]) == want, (fmt, mode, i)
