import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progpoly.constraints import (
    ConstraintSet, RoundingInterval, Rung, build_progressive_constraints, check_ladder, hex64,
    merge_duplicate_inputs, rounding_interval, rounding_interval_arrays, unhex64,
)
from progpoly.formats import (
    BFLOAT16, FpFormat, FpValue, RoundingMode, decode, decode_array, encode_float, round_exact, to_float,
)
from progpoly.oracle import FunctionId, real_value
from progpoly.reduction import binary64_preimage, output_compensate, range_reduce

F10, F12 = FpFormat(10, 8), FpFormat(12, 8)
RO, RN = RoundingMode.RO, RoundingMode.RN
LADDER = (Rung(F10, 3), Rung(F12, 4), Rung(BFLOAT16, 5))


def test_interval_examples():
    f21 = FpFormat(21, 8)
    two = encode_float(2.0, f21)
    assert rounding_interval(two, f21, RO) == RoundingInterval(Fraction(2), Fraction(2), False, False)
    odd = FpValue(f21, two.bits + 1)
    iv = rounding_interval(odd, f21, RO)
    assert (iv.lower, iv.upper) == (Fraction(2), decode(FpValue(f21, two.bits + 2)))
    assert iv.lower_open and iv.upper_open
    # bf16 has 8 significant bits: spacing 2**-8 below 1 and 2**-7 above
    iv = rounding_interval(encode_float(1.0, BFLOAT16), BFLOAT16, RN)
    assert iv == RoundingInterval(1 - Fraction(1, 2 ** 9), 1 + Fraction(1, 2 ** 8), False, False)
    with pytest.raises(ValueError):
        rounding_interval(FpValue(BFLOAT16, BFLOAT16.inf_bits), BFLOAT16, RN)
    with pytest.raises(ValueError):
        RoundingInterval(Fraction(1), Fraction(1), True, False)


def _probe_values(fmt):
    rng = random.Random(5)
    bits = [0, 1, 2, 3, fmt.max_finite_bits, fmt.max_finite_bits - 1, encode_float(1.0, fmt).bits,
            encode_float(1.0, fmt).bits + 1, 1 << fmt.mantissa_bits, (1 << fmt.mantissa_bits) - 1]
    bits += [rng.randrange(fmt.inf_bits) for _ in range(6)]
    return [FpValue(fmt, b | s) for b in bits for s in (0, fmt.sign_bit)]


@pytest.mark.parametrize("mode", list(RoundingMode))
def test_interval_endpoints_by_brute_force(mode):
    """1001 rationals straddling every endpoint agree with round_exact."""
    fmt = F12
    delta = fmt.min_subnormal / 2 ** 12
    for y in _probe_values(fmt):
        try:
            iv = rounding_interval(y, fmt, mode)
        except ValueError:
            # -0 is unreachable under RD and RO
            assert y.is_zero() and y.negative and mode in (RoundingMode.RD, RO)
            continue
        for end in (iv.lower, iv.upper):
            if isinstance(end, float):
                assert math.isinf(end)
                continue
            scale = max(abs(end) * Fraction(1, 2 ** 40), delta)
            for k in range(-500, 501):
                q = end + k * scale
                assert iv.contains(q) == (round_exact(q, fmt, mode) == y), (y, mode, q)


@pytest.mark.parametrize("mode", [RO, RN])
def test_vectorised_intervals_agree(mode):
    fmt = F12
    bits = np.arange(1 << fmt.total_bits)
    mag = bits & (fmt.sign_bit - 1)
    ok = mag < fmt.inf_bits
    if mode is RO:
        ok &= bits != fmt.sign_bit
    else:
        ok |= mag == fmt.inf_bits
    bits = bits[ok]
    lo, hi, lo_open, hi_open = rounding_interval_arrays(bits, fmt, mode)
    for j, b in enumerate(bits.tolist()):
        y = FpValue(fmt, b)
        if y.is_inf():
            # RN infinities: everything from the overflow midpoint outwards
            mid = (fmt.max_finite + Fraction(2) ** (fmt.emax + 1)) / 2
            assert abs(lo[j] if b == fmt.inf_bits else hi[j]) == mid
            continue
        iv = rounding_interval(y, fmt, mode)
        assert (Fraction(lo[j]) if np.isfinite(lo[j]) else lo[j]) == iv.lower
        assert (Fraction(hi[j]) if np.isfinite(hi[j]) else hi[j]) == iv.upper
        assert (lo_open[j], hi_open[j]) == (iv.lower_open, iv.upper_open)


@pytest.fixture(scope="module")
def builds():
    return {f: build_progressive_constraints(f, LADDER) for f in FunctionId}


def _count_finite_in_domain(f, fmt):
    xs = decode_array(np.arange(1 << fmt.total_bits), fmt)
    ok = np.isfinite(xs)
    return int((ok & (xs > 0)).sum()) if f.is_log else int(ok.sum())


@pytest.mark.parametrize("f", list(FunctionId))
def test_counting_contract(builds, f):
    b = builds[f]
    for ri, rung in enumerate(LADDER):
        assert b.counts[ri] + b.shortcut[ri] == _count_finite_in_domain(f, rung.fmt)
        emitted = int((b.constraints.origin_rung == ri).sum())
        assert emitted + sum(1 for s in b.forced if s.rung == ri) == b.counts[ri]
    assert len(b.constraints) == sum(b.counts.values()) - len(b.forced)
    # before any generator round every weight is 1
    assert b.constraints.total_weight() == len(b.constraints)


@pytest.mark.parametrize("f", list(FunctionId))
def test_soundness_subsample(builds, f):
    cs = builds[f].constraints
    rng = np.random.default_rng(11)
    for j in rng.choice(len(cs), 300, replace=False):
        (o,) = cs.origins(int(j))
        rung = LADDER[o.rung]
        x = to_float(FpValue(rung.fmt, o.bits))
        red = range_reduce(f, x)
        assert red.x_reduced == cs.x[j]
        ov = real_value(f, x, 8)
        tfmt, tmode = rung.target
        for p in (cs.lo[j], cs.hi[j], (cs.lo[j] + cs.hi[j]) / 2):
            y = output_compensate(f, float(p), red.recon)
            assert round_exact(y, tfmt, tmode) == ov.round(tfmt, tmode)
            for mode in rung.guaranteed_modes:
                assert round_exact(y, rung.fmt, mode) == ov.round(rung.fmt, mode), (f, x, mode)


def test_open_ro_interval_around_log2_three():
    f21 = FpFormat(21, 8)
    y = real_value(FunctionId.LOG2, 3.0).round(f21, RO)
    iv = rounding_interval(y, f21, RO)
    assert iv.lower_open and iv.upper_open
    red = range_reduce(FunctionId.LOG2, 3.0)
    a, b = binary64_preimage(FunctionId.LOG2, np.array([float(iv.lower)]), np.array([float(iv.upper)]),
                             np.array([True]), np.array([True]), np.array([red.recon]))
    assert a[0] < b[0]
    for p in (a[0], b[0]):
        assert iv.contains(Fraction(output_compensate(FunctionId.LOG2, float(p), red.recon)))
    for p in (math.nextafter(a[0], -math.inf), math.nextafter(b[0], math.inf)):
        assert not iv.contains(Fraction(output_compensate(FunctionId.LOG2, p, red.recon)))


@pytest.mark.parametrize("f", list(FunctionId))
def test_monotone_nesting(builds, f):
    cs = builds[f].constraints
    seen = {}
    for j in range(len(cs)):
        (o,) = cs.origins(j)
        x = to_float(FpValue(LADDER[o.rung].fmt, o.bits))
        seen.setdefault(x, []).append((o.rung, cs.lo[j], cs.hi[j]))
    nested = 0
    for x, rows in seen.items():
        rows.sort()
        for (_, lo1, hi1), (_, lo2, hi2) in zip(rows, rows[1:]):
            assert lo1 <= lo2 and hi2 <= hi1, (f, x)
            nested += 1
    assert nested > 100


def test_log2_merges_across_exponents(builds):
    # log2 kernels depend on the significand only, so all binades collapse
    merged, conflicts = merge_duplicate_inputs(builds[FunctionId.LOG2].constraints)
    assert not conflicts
    assert len(merged) < 300
    assert merged.origin_ptr[-1] == len(builds[FunctionId.LOG2].constraints)


def test_merge_examples():
    cs = ConstraintSet.from_arrays([1.5, 1.5, 0.25], [0.58, 0.584, 0.1], [0.59, 0.595, 0.2], 2)
    merged, conflicts = merge_duplicate_inputs(cs)
    assert not conflicts and len(merged) == 2
    j = int(np.flatnonzero(merged.x == 1.5)[0])
    assert (merged.lo[j], merged.hi[j]) == (0.584, 0.59)
    assert len(merged.origins(j)) == 2
    # identical duplicates keep the larger weight
    cs = ConstraintSet.from_arrays([0.5, 0.5], [1.0, 1.0], [2.0, 2.0], 3)
    cs.weight_exp[:] = [2, 5]
    merged, _ = merge_duplicate_inputs(cs)
    assert len(merged) == 1 and merged.weight_exp[0] == 5 and merged.total_weight() == 32
    # different term counts never merge
    cs = ConstraintSet.from_arrays([0.5, 0.5], [1.0, 1.0], [2.0, 2.0], [2, 3])
    assert len(merge_duplicate_inputs(cs)[0]) == 2


def test_merge_reports_conflicts():
    cs = ConstraintSet.from_arrays([0.5, 0.5, 0.5], [1.0, 1.0, 3.0], [2.0, 2.5, 4.0], 2)
    merged, conflicts = merge_duplicate_inputs(cs)
    assert len(conflicts) == 1
    x, k, evicted = conflicts[0]
    assert (x, k) == (0.5, 2)
    # the median midpoint is 1.75, so the [3, 4] row is the odd one out
    assert [e.bits for e in evicted] == [2]
    assert len(merged) == 1 and (merged.lo[0], merged.hi[0]) == (1.0, 2.0)
    # conflicting singletons are reported straight away
    cs = ConstraintSet.from_arrays([0.75, 0.75], [0.1, 0.2], [0.1, 0.2], 1)
    assert len(merge_duplicate_inputs(cs)[1]) == 1


def test_jsonl_round_trip(tmp_path, builds):
    cs, _ = merge_duplicate_inputs(builds[FunctionId.EXP].constraints)
    cs = cs.subset(np.arange(0, len(cs), 37))
    cs.weight_exp[::3] = 4
    path = tmp_path / "c.jsonl"
    cs.dump_jsonl(path)
    back = ConstraintSet.load_jsonl(path, cs.k_max)
    for name in ("x", "lo", "hi", "terms", "weight_exp", "origin_ptr", "origin_rung", "origin_bits"):
        assert np.array_equal(getattr(back, name), getattr(cs, name)), name
    assert np.array_equal(back.origin_value.view(np.int64), cs.origin_value.view(np.int64))


@settings(max_examples=200)
@given(st.floats(allow_nan=False))
def test_hex64_is_bit_exact(x):
    assert math.copysign(1, unhex64(hex64(x))) == math.copysign(1, x)
    assert unhex64(hex64(x)) == x


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=40))
def test_weight_sum_matches_multiset(exps):
    cs = ConstraintSet.from_arrays(np.arange(len(exps), dtype=float), 0.0, 1.0, 1)
    cs.weight_exp[:] = exps
    assert cs.total_weight() == sum(2 ** e for e in exps)


def test_ladder_checks():
    check_ladder(LADDER)
    with pytest.raises(ValueError):
        check_ladder([Rung(BFLOAT16, 3), Rung(F12, 4)])
    with pytest.raises(ValueError):
        check_ladder([Rung(F12, 5), Rung(BFLOAT16, 4)])
    with pytest.raises(ValueError):
        check_ladder([Rung(F12, 3), Rung(FpFormat(16, 5), 4)])
    with pytest.raises(ValueError):
        Rung(BFLOAT16, 3, "rz")
