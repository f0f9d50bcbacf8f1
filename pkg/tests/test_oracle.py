import math
import random
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progpoly.formats import (
    BFLOAT16, FpFormat, FpValue, IEEE_MODES, RoundingMode, decode, encode_float, enumerate_values,
    round_exact, round_float_array, to_float,
)
from progpoly.oracle import (
    DomainError, FunctionId, OracleValue, PRECISIONS, oracle_arrays, oracle_encodings,
    oracle_round, oracle_round_modes, oracle_table, read_cache, real_value, write_cache,
)

F21 = FpFormat(21, 8)
RO, RN, RZ, RU, RD, RA = (RoundingMode.RO, RoundingMode.RN, RoundingMode.RZ, RoundingMode.RU,
                          RoundingMode.RD, RoundingMode.RA)


def mp_exact(f, x, bits=320):
    """f(x) at `bits` of precision with mpmath, as a Fraction."""
    with mpmath.workprec(bits):
        xm = mpmath.mpf(Fraction(x).numerator) / Fraction(x).denominator
        val = {
            FunctionId.LOG2: lambda: mpmath.log(xm) / mpmath.log(2),
            FunctionId.LN: lambda: mpmath.log(xm),
            FunctionId.LOG10: lambda: mpmath.log(xm) / mpmath.log(10),
            FunctionId.EXP2: lambda: mpmath.power(2, xm),
            FunctionId.EXP: lambda: mpmath.exp(xm),
            FunctionId.EXP10: lambda: mpmath.power(10, xm),
        }[f]()
        sign, man, exp, _ = val._mpf_
    return (-1) ** sign * Fraction(int(man)) * Fraction(2) ** int(exp)


def test_examples():
    r = oracle_round(FunctionId.LOG2, encode_float(4.0, F21), F21, RO)
    assert decode(r.value) == 2 and r.exact
    for fmt in (BFLOAT16, F21):
        r = oracle_round(FunctionId.EXP, encode_float(0.0, fmt), fmt, RN)
        assert decode(r.value) == 1 and r.exact


def test_log2_of_three_against_256_bit_reference():
    r = oracle_round(FunctionId.LOG2, encode_float(3.0, F21), F21, RO)
    want = round_exact(mp_exact(FunctionId.LOG2, 3.0, 256), F21, RO)
    assert r.value == want and not r.exact
    assert r.value.bits & 1
    assert abs(float(decode(r.value)) - 1.584962500721156) < 2 ** -11


def test_domain_errors():
    with pytest.raises(DomainError):
        oracle_round(FunctionId.LN, encode_float(-1.0, BFLOAT16), BFLOAT16, RN)
    with pytest.raises(DomainError):
        oracle_round(FunctionId.LOG2, encode_float(0.0, BFLOAT16), BFLOAT16, RN)
    with pytest.raises(DomainError):
        oracle_round(FunctionId.EXP, FpValue(BFLOAT16, BFLOAT16.nan_bits), BFLOAT16, RN)


@pytest.mark.parametrize("f", list(FunctionId))
def test_random_inputs_match_mpmath(f):
    rng = random.Random(hash(f.value) & 0xFFFF)
    fmt = FpFormat(19, 8)
    checked = 0
    while checked < 150:
        bits = rng.getrandbits(19)
        x = FpValue(fmt, bits)
        xf = to_float(x)
        if not x.is_finite() or (f.is_log and xf <= 0):
            continue
        if not f.is_log:
            # keep most samples away from the overflow / underflow proxies
            xf_abs = abs(xf)
            if xf_abs > 40 or xf_abs < 2 ** -20:
                continue
        results = oracle_round_modes(f, x, F21, list(RoundingMode))
        ref = mp_exact(f, xf)
        for mode, res in results.items():
            assert res.value == round_exact(ref, F21, mode), (f, xf, mode)
        checked += 1


def test_known_exact_points():
    fmt = F21
    for k in range(-140, 128):
        x = encode_float(2.0 ** k, fmt) if 2.0 ** k >= float(fmt.min_subnormal) else None
        if x is not None:
            r = oracle_round(FunctionId.LOG2, x, fmt, RN)
            assert decode(r.value) == k and r.exact
    for k in range(-30, 40):
        r = oracle_round(FunctionId.EXP2, encode_float(float(k), fmt), fmt, RZ)
        assert decode(r.value) == Fraction(2) ** k and r.exact
    one = encode_float(1.0, fmt)
    assert decode(oracle_round(FunctionId.LN, one, fmt, RD).value) == 0
    assert decode(oracle_round(FunctionId.LOG10, one, fmt, RU).value) == 0
    r = oracle_round(FunctionId.LOG10, encode_float(1000.0, fmt), fmt, RO)
    assert decode(r.value) == 3 and r.exact
    r = oracle_round(FunctionId.EXP10, encode_float(3.0, fmt), fmt, RO)
    assert decode(r.value) == 1000 and r.exact
    # 10**-1 is rational but not dyadic
    r = oracle_round(FunctionId.EXP10, encode_float(-1.0, fmt), fmt, RN)
    assert r.value == round_exact(Fraction(1, 10), fmt, RN) and not r.exact


def test_overflow_and_underflow():
    fmt = BFLOAT16
    big = encode_float(200.0, fmt)
    assert oracle_round(FunctionId.EXP2, big, fmt, RN).value.is_inf()
    assert oracle_round(FunctionId.EXP2, big, fmt, RZ).value.bits == fmt.max_finite_bits
    assert oracle_round(FunctionId.EXP, encode_float(89.0, fmt), fmt, RU).value.is_inf()
    small = encode_float(-200.0, fmt)
    assert oracle_round(FunctionId.EXP, small, fmt, RN).value.bits == 0
    assert oracle_round(FunctionId.EXP, small, fmt, RU).value.bits == 1
    assert oracle_round(FunctionId.EXP10, small, fmt, RO).value.bits == 1
    # near the thresholds the bracket path is used and must agree with mpmath
    for x in (88.5, 88.75, -103.0, -110.0, 38.5, -45.5):
        v = round_exact(x, fmt, RN)
        xf = to_float(v)
        f = FunctionId.EXP10 if abs(x) < 50 else FunctionId.EXP
        ref = mp_exact(f, xf)
        for mode in IEEE_MODES + (RO,):
            assert oracle_round(f, v, fmt, mode).value == round_exact(ref, fmt, mode), (x, mode)


def test_subnormal_log_inputs():
    fmt = BFLOAT16
    for bits in (1, 2, 3, 0x45, 0x7F):
        x = FpValue(fmt, bits)
        ref = mp_exact(FunctionId.LN, to_float(x))
        for mode in RoundingMode:
            assert oracle_round(FunctionId.LN, x, fmt, mode).value == round_exact(ref, fmt, mode)


def test_tiny_exp_arguments():
    fmt = FpFormat(19, 8)
    for x in (2.0 ** -130, -2.0 ** -130, 2.0 ** -60, -3 * 2.0 ** -35):
        v = encode_float(x, fmt)
        for f in (FunctionId.EXP, FunctionId.EXP2, FunctionId.EXP10):
            res = oracle_round_modes(f, v, F21, list(RoundingMode))
            want_up = x > 0
            assert res[RN].value == encode_float(1.0, F21)
            assert (res[RU].value.bits > encode_float(1.0, F21).bits) == want_up
            assert res[RO].value.bits & 1


def test_oracle_table_conventions():
    table = list(oracle_table(FunctionId.LOG2, FpFormat(10, 8), RO))
    assert len(table) == 1024
    by_bits = {x.bits: r for x, r in table}
    assert to_float(by_bits[0].value) == -math.inf
    assert to_float(by_bits[0x200].value) == -math.inf  # -0
    fmt = FpFormat(10, 8)
    assert by_bits[fmt.nan_bits].value.is_nan()
    assert by_bits[fmt.inf_bits].value.is_inf() and not by_bits[fmt.inf_bits].value.negative
    assert by_bits[fmt.sign_bit | fmt.inf_bits].value.is_nan()
    exp_table = {x.bits: r for x, r in oracle_table(FunctionId.EXP, fmt, RN)}
    assert exp_table[fmt.sign_bit | fmt.inf_bits].value.bits == 0
    assert exp_table[fmt.inf_bits].value.is_inf()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, (1 << 16) - 1), st.sampled_from(list(FunctionId)))
def test_precision_escalation_soundness(bits, f):
    x = FpValue(BFLOAT16, bits)
    xf = to_float(x)
    if not x.is_finite() or (f.is_log and xf <= 0):
        return
    base = real_value(f, xf, 8)
    doubled = real_value(f, xf, 8, (2 * PRECISIONS[-1],))
    for mode in RoundingMode:
        assert base.round(BFLOAT16, mode) == doubled.round(BFLOAT16, mode)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, (1 << 16) - 1), st.sampled_from(list(FunctionId)))
def test_mode_coherence(bits, f):
    x = FpValue(BFLOAT16, bits)
    xf = to_float(x)
    if not x.is_finite() or (f.is_log and xf <= 0):
        return
    r = oracle_round_modes(f, x, BFLOAT16, list(RoundingMode))
    assert r[RZ].value in (r[RD].value, r[RU].value)
    # RN and RA part ways only on exact midpoints, which none of these results are
    assert r[RN].value == r[RA].value


def test_float_rounding_array_agrees_with_scalar():
    rng = np.random.default_rng(9)
    ys = np.concatenate([
        rng.standard_normal(3000) * 2.0 ** rng.integers(-160, 130, 3000),
        np.array([1.0, 2.0 ** -149, 2.0 ** -133, 2.0 ** 128, 3 * 2.0 ** -150, 1.5, -1.0, 0.0, -0.0]),
    ])
    # grid points and midpoints of F(16,8) exercise the sticky logic
    grid = np.array([to_float(FpValue(BFLOAT16, b)) for b in rng.integers(0, 0x7F80, 500)])
    ys = np.concatenate([ys, grid, grid + np.ldexp(np.abs(grid), -9)])
    for fmt in (BFLOAT16, FpFormat(12, 8), F21):
        for sticky in (-1, 0, 1):
            for mode in RoundingMode:
                got = round_float_array(ys, sticky, fmt, mode)
                for k in range(0, len(ys), 5):
                    y = float(ys[k])
                    want = OracleValue(y, sticky if y != 0 else 0).round(fmt, mode).bits
                    assert int(got[k]) == want, (fmt, mode, y, sticky)


def test_arrays_agree_with_table():
    fmt = FpFormat(11, 8)
    ys, st_ = oracle_arrays(FunctionId.EXP2, fmt)
    for mode in RoundingMode:
        table = round_float_array(ys, st_, fmt, mode)
        for x, r in oracle_table(FunctionId.EXP2, fmt, mode):
            assert int(table[x.bits]) == r.value.bits


def test_cache_round_trip(tmp_path):
    fmt = FpFormat(12, 8)
    first = oracle_encodings(FunctionId.LN, fmt, RoundingMode.RD, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].read_bytes()[:4] == b"PPOC"
    assert len(files[0].read_bytes()) > 2 * (1 << 12) * 2
    again = oracle_encodings(FunctionId.LN, fmt, RoundingMode.RD, cache_dir=tmp_path)
    assert np.array_equal(first, again)
    f, fmt2, mode, ins, outs = read_cache(files[0])
    assert (f, fmt2, mode) == (FunctionId.LN, fmt, RoundingMode.RD)
    assert np.array_equal(outs[ins], first)


def test_cache_odd_widths(tmp_path):
    fmt = FpFormat(19, 8)
    ins = np.array([0, 1, (1 << 19) - 1, 0x3F800 >> 0])
    outs = np.array([5, (1 << 19) - 2, 7, 0x12345])
    p = tmp_path / "x.ppoc"
    write_cache(p, FunctionId.EXP, fmt, RoundingMode.RO, ins, outs)
    f, fmt2, mode, i2, o2 = read_cache(p)
    assert fmt2 == fmt and mode is RoundingMode.RO and f is FunctionId.EXP
    assert list(i2) == list(ins) and list(o2) == list(outs)
