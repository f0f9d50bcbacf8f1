"""Range reduction, output compensation and their inverses.

Logarithms: x = m * 2**e with m in [sqrt(1/2), sqrt(2)); the reduced input is
t = (m - 1) / (m + 1), rounded once in binary64, and the kernel approximates
log2(m) as a function of t (an odd function, since log2(m) = 2 atanh(t) / ln 2).

Exponentials: x * log2(b) = i + r with integer i and r in [-1/2, 1/2); the
kernel approximates 2**r and the output is the exact scaling 2**i * P(r).

Everything runs in binary64 exactly as written here; the constraint builder
and the runtime both call these functions so they can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .oracle import FunctionId, _ln2, _ln10

SQRT2 = math.sqrt(2.0)
SQRT_HALF = math.sqrt(0.5)


def _split(value: Fraction, bits: int) -> tuple[float, float, float]:
    """(value rounded to `bits` significant bits, RN(value - hi), RN(value))."""
    e = math.frexp(float(value))[1]
    scale = Fraction(2) ** (bits - e)
    hi = Fraction(round(value * scale)) / scale
    return float(hi), float(value - hi), float(value)


def _rational(bracket: tuple[int, int], w: int, bits: int = 128) -> Fraction:
    mid = Fraction(bracket[0] + bracket[1], 2 << w)
    e = math.frexp(float(mid))[1]
    return Fraction(round(mid * Fraction(2) ** (bits - e))) / Fraction(2) ** (bits - e)


# 128-bit rational constants from the oracle's enclosures (width ~2**-190)
_W = 200
_LN2_Q = _rational(_ln2(_W), _W)
_LN10_Q = _rational(_ln10(_W), _W)
_LOG2E_Q = 1 / _LN2_Q
_LOG2_10_Q = _LN10_Q / _LN2_Q
_LOG10_2_Q = _LN2_Q / _LN10_Q

# e * K_hi is exact for |e| < 2**9; x * L_hi is exact for inputs with <= 26 significant bits
LN2_HI, LN2_LO, LN2 = _split(_LN2_Q, 44)
LOG10_2_HI, LOG10_2_LO, LOG10_2 = _split(_LOG10_2_Q, 44)
LOG2E_HI, LOG2E_LO, LOG2E = _split(_LOG2E_Q, 27)
LOG2_10_HI, LOG2_10_LO, LOG2_10 = _split(_LOG2_10_Q, 27)

_LOG_CONST = {FunctionId.LN: (LN2_HI, LN2_LO, LN2, _LN2_Q),
              FunctionId.LOG10: (LOG10_2_HI, LOG10_2_LO, LOG10_2, _LOG10_2_Q)}
_EXP_CONST = {FunctionId.EXP: (LOG2E_HI, LOG2E_LO), FunctionId.EXP10: (LOG2_10_HI, LOG2_10_LO)}

# decimal bounds on ln 2 and log10 2 from above, for safe thresholds
_LN2_UP = Fraction(6932, 10000)
_LOG10_2_UP = Fraction(30104, 100000)

TINY_EXP_ARG = 2.0 ** -30
REDUCED_DOMAIN = {
    "log": ((SQRT_HALF - 1) / (SQRT_HALF + 1), (SQRT2 - 1) / (SQRT2 + 1)),
    "exp": (-0.5, 0.5),
}


@dataclass(frozen=True)
class ReducedInput:
    x_reduced: float
    recon: int  # exponent e for logs, integer part i for exponentials


class ReductionError(ValueError):
    pass


def range_reduce(f: FunctionId, x: float) -> ReducedInput:
    if not math.isfinite(x) or (f.is_log and x <= 0):
        raise ReductionError(f"{f.value}: input {x!r} outside the reduced path")
    r, k = range_reduce_array(f, np.array([x]))
    return ReducedInput(float(r[0]), int(k[0]))


def range_reduce_array(f: FunctionId, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if f.is_log:
        m, e = np.frexp(x)
        m = m * 2.0
        e = e.astype(np.int64) - 1
        big = m >= SQRT2
        m = np.where(big, m * 0.5, m)
        e = e + big
        return (m - 1.0) / (m + 1.0), e
    if f is FunctionId.EXP2:
        i = np.floor(x + 0.5)
        return x - i, i.astype(np.int64)
    hi, lo = _EXP_CONST[f]
    prod = x * hi
    i = np.floor(prod + 0.5)
    return (prod - i) + x * lo, i.astype(np.int64)


def output_compensate(f: FunctionId, y_reduced: float, recon: int) -> float:
    return float(output_compensate_array(f, np.array([y_reduced]), np.array([recon]))[0])


def output_compensate_array(f: FunctionId, p: np.ndarray, recon: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        if f is FunctionId.LOG2:
            return p + recon
        if f.is_log:
            k_hi, k_lo, k, _ = _LOG_CONST[f]
            e = recon.astype(np.float64)
            return e * k_hi + (p * k + e * k_lo)
        return np.ldexp(p, recon)


# -- exact inverse of the compensation ----------------------------------------------

def compensation_error_bound(f: FunctionId, recon: int) -> Fraction:
    """Bound on |binary64 compensation - real compensation|, in reduced units."""
    if f in (FunctionId.LN, FunctionId.LOG10):
        # three roundings of results below (|e| + 1) * 0.7 plus the constant's error
        return Fraction(abs(recon) + 1, 1 << 50)
    return Fraction(0)


def invert_intervals(f: FunctionId, lo: Fraction, hi: Fraction, recon: int) -> tuple[Fraction, Fraction]:
    """Reduced-output interval whose real compensation lands in [lo, hi].

    For log2 and the exponentials the compensation is exact in binary64, so
    the inverse is exact; ln and log10 shrink inward by the stored error bound.
    """
    if lo > hi:
        raise ReductionError(f"{f.value}: empty interval [{lo}, {hi}] (recon {recon})")
    if f is FunctionId.LOG2:
        return lo - recon, hi - recon
    if not f.is_log:
        s = Fraction(2) ** -recon
        return lo * s, hi * s
    k = _LOG_CONST[f][3]
    delta = compensation_error_bound(f, recon)
    a, b = lo / k - recon + delta, hi / k - recon - delta
    if a > b:
        raise ReductionError(f"{f.value}: interval [{lo}, {hi}] empty after tightening (recon {recon})")
    return a, b


# -- binary64 preimage ---------------------------------------------------------------
#
# The set of doubles P with compensate(P) inside [l, h] is an interval because
# every binary64 step of the compensation is monotone in P.  Bisection over the
# ordered integer image of the doubles finds its ends for many constraints at once.

_MAG = np.int64(0x7FFF_FFFF_FFFF_FFFF)
_MAX_KEY = np.int64(0x7FEF_FFFF_FFFF_FFFF)


def _to_key(x: np.ndarray) -> np.ndarray:
    b = np.asarray(x, dtype=np.float64).view(np.int64)
    return np.where(b < 0, -(b & _MAG), b)


def _from_key(k: np.ndarray) -> np.ndarray:
    b = np.where(k < 0, (-k) | np.int64(-0x8000_0000_0000_0000), k)
    return b.astype(np.int64).view(np.float64)


def binary64_preimage(f: FunctionId, lo: np.ndarray, hi: np.ndarray, lo_open: np.ndarray,
                      hi_open: np.ndarray, recon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed double bounds [a, b] of {P : compensate(P) in the interval}; a > b means empty."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    lo_open = np.asarray(lo_open, dtype=bool)
    hi_open = np.asarray(hi_open, dtype=bool)
    recon = np.asarray(recon, dtype=np.int64)

    def at_least_lo(keys):
        v = output_compensate_array(f, _from_key(keys), recon)
        return np.where(lo_open, v > lo, v >= lo)

    def above_hi(keys):
        v = output_compensate_array(f, _from_key(keys), recon)
        return np.where(hi_open, v >= hi, v > hi)

    n = len(lo)
    full_lo = np.full(n, -_MAX_KEY)
    full_hi = np.full(n, _MAX_KEY)
    a = _first_true(at_least_lo, full_lo, full_hi)
    b = _first_true(above_hi, full_lo, full_hi) - 1
    a_f, b_f = _from_key(a), _from_key(b)
    empty = a > b
    return np.where(empty, np.inf, a_f), np.where(empty, -np.inf, b_f)


def _first_true(pred, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Smallest key in [lo, hi] where the monotone predicate holds (hi + 1 if none)."""
    at_hi = pred(hi)
    lo = lo.copy()
    hi = np.where(at_hi, hi, hi + 1)
    at_lo = pred(lo)
    done = at_lo | ~at_hi
    result = np.where(at_lo, lo, hi)
    # invariant: pred(lo) false, pred(hi) true
    while True:
        active = ~done & (hi - 1 > lo)
        if not active.any():
            break
        mid = (lo >> 1) + (hi >> 1) + (lo & hi & 1)  # floor average without overflow
        p = pred(mid)
        hi = np.where(active & p, mid, hi)
        lo = np.where(active & ~p, mid, lo)
    return np.where(done, result, hi)


# -- special-value path --------------------------------------------------------------


def _ceil_double(q: Fraction) -> float:
    y = float(q)
    return math.nextafter(y, math.inf) if Fraction(y) < q else y


def exp_thresholds(f: FunctionId, exponent_bits: int = 8) -> tuple[float, float]:
    """(over, under): x >= over overflows and x < under underflows every such format.

    Both are the smallest doubles at or above rational bounds, so comparing a
    double against them is the same as comparing against the rationals.
    """
    bias = (1 << (exponent_bits - 1)) - 1
    top, bottom = bias + 1, 1 - bias - 26
    scale = {FunctionId.EXP2: Fraction(1), FunctionId.EXP: _LN2_UP, FunctionId.EXP10: _LOG10_2_UP}[f]
    return _ceil_double(top * scale), _ceil_double(bottom * scale)


def special_value(f: FunctionId, x: float, exponent_bits: int = 8) -> float | None:
    """Binary64 result for inputs that bypass the polynomial, or None.

    The value returned rounds correctly into every format with the given
    exponent width and at most 26 bits of precision, under every mode.
    """
    sp, val = special_value_array(f, np.array([x]), exponent_bits)
    return float(val[0]) if sp[0] else None


def special_value_array(f: FunctionId, x: np.ndarray, exponent_bits: int = 8):
    """(mask, values) for the special-value path, vectorised."""
    x = np.asarray(x, dtype=np.float64)
    bias = (1 << (exponent_bits - 1)) - 1
    mask = np.isnan(x)
    val = np.full(x.shape, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        if f.is_log:
            neg = (x < 0) | (x == -np.inf)
            zero = x == 0
            pinf = x == np.inf
            val = np.where(zero, -np.inf, np.where(pinf, np.inf, val))
            mask = mask | neg | zero | pinf
            ok = ~mask
            m, e = np.frexp(np.where(ok, x, 1.0))
            if f is FunctionId.LOG2:
                exact = ok & (m == 0.5)
                val = np.where(exact, (e - 1).astype(np.float64), val)
            elif f is FunctionId.LN:
                exact = ok & (x == 1.0)
                val = np.where(exact, 0.0, val)
            else:
                k = np.where(ok & (x >= 1) & (x < 1e300), np.round(np.log10(np.where(ok, x, 1.0))), 0)
                exact = ok & (x >= 1) & (10.0 ** k == x) & (k <= 22)
                val = np.where(exact, k, val)
            return mask | exact, val
        val = np.where(x == np.inf, np.inf, np.where(x == -np.inf, 0.0, val))
        mask = mask | np.isinf(x)
        ok = ~mask
        top, bottom = exp_thresholds(f, exponent_bits)
        xs = np.where(ok, x, 0.0)
        over = ok & (xs >= top)
        under = ok & (xs < bottom)
        val = np.where(over, 2.0 ** (bias + 2), val)
        val = np.where(under, 2.0 ** (1 - bias - 80), val)
        tiny = ok & ~over & ~under & (np.abs(xs) < TINY_EXP_ARG) & (xs != 0)
        val = np.where(tiny, np.where(xs > 0, 1.0 + 2.0 ** -40, 1.0 - 2.0 ** -40), val)
        integral = ok & ~over & ~under & (xs == np.floor(xs))
        if f is FunctionId.EXP2:
            exact = integral
            val = np.where(exact, np.ldexp(1.0, np.where(exact, xs, 0).astype(np.int64)), val)
        elif f is FunctionId.EXP:
            exact = ok & (xs == 0)
            val = np.where(exact, 1.0, val)
        else:
            exact = integral & (xs >= 0) & (xs <= 22)
            val = np.where(exact, 10.0 ** np.where(exact, xs, 0), val)
        return mask | over | under | tiny | exact, val
