"""Software emulation of small binary floating-point formats.

A format ``FpFormat(n, e)`` has one sign bit, ``e`` exponent bits and
``n - 1 - e`` stored mantissa bits, with IEEE-754 style subnormals,
infinities and NaNs.  Values are carried around as raw encodings
(``FpValue``) and converted to exact rationals (``fractions.Fraction``)
when arithmetic is needed.

Exact reals are plain ``Fraction`` objects.  The three non-finite markers
are the floats ``math.inf``, ``-math.inf`` and ``math.nan``; they compare
correctly against fractions, which keeps interval code simple.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

import numpy as np

ExactReal = Union[Fraction, float]

ENUMERATION_CAP = 25


class RoundingMode(enum.Enum):
    RN = "rn"  # nearest, ties to even
    RA = "ra"  # nearest, ties away from zero
    RZ = "rz"
    RU = "ru"
    RD = "rd"
    RO = "ro"  # round to odd

    @classmethod
    def parse(cls, text: str) -> "RoundingMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown rounding mode {text!r}") from None


IEEE_MODES = (RoundingMode.RN, RoundingMode.RA, RoundingMode.RZ,
              RoundingMode.RU, RoundingMode.RD)


def parse_modes(text: str) -> tuple[RoundingMode, ...]:
    return tuple(RoundingMode.parse(t) for t in text.split(",") if t.strip())


class EnumerationCapError(ValueError):
    pass


_FORMAT_RE = re.compile(r"^\s*fp\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*$", re.IGNORECASE)


@dataclass(frozen=True, order=True)
class FpFormat:
    total_bits: int
    exponent_bits: int

    def __post_init__(self):
        if self.exponent_bits < 2:
            raise ValueError("need at least 2 exponent bits")
        if not 1 + self.exponent_bits < self.total_bits:
            raise ValueError("need at least one mantissa bit")

    @classmethod
    def parse(cls, text: str) -> "FpFormat":
        key = text.strip().lower()
        if key in FORMAT_ALIASES:
            return FORMAT_ALIASES[key]
        m = _FORMAT_RE.match(key)
        if not m:
            raise ValueError(f"cannot parse format {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        for name, fmt in _CANONICAL_NAMES.items():
            if fmt == self:
                return name
        return f"fp({self.total_bits},{self.exponent_bits})"

    @property
    def spelling(self) -> str:
        return f"fp({self.total_bits},{self.exponent_bits})"

    @property
    def mantissa_bits(self) -> int:
        return self.total_bits - 1 - self.exponent_bits

    @property
    def precision(self) -> int:
        return self.mantissa_bits + 1

    @property
    def bias(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def exp_all_ones(self) -> int:
        return (1 << self.exponent_bits) - 1

    @property
    def sign_bit(self) -> int:
        return 1 << (self.total_bits - 1)

    @property
    def max_finite_bits(self) -> int:
        return ((self.exp_all_ones - 1) << self.mantissa_bits) | ((1 << self.mantissa_bits) - 1)

    @property
    def inf_bits(self) -> int:
        return self.exp_all_ones << self.mantissa_bits

    @property
    def nan_bits(self) -> int:
        return self.inf_bits | (1 << (self.mantissa_bits - 1))

    @property
    def max_finite(self) -> Fraction:
        return decode(FpValue(self, self.max_finite_bits))

    @property
    def min_subnormal(self) -> Fraction:
        return Fraction(1, 1 << (self.mantissa_bits - self.emin))

    def value(self, bits: int) -> "FpValue":
        return FpValue(self, bits)

    def with_extra_bits(self, extra: int) -> "FpFormat":
        return FpFormat(self.total_bits + extra, self.exponent_bits)


BFLOAT16 = FpFormat(16, 8)
TENSORFLOAT32 = FpFormat(19, 8)
FLOAT32 = FpFormat(32, 8)

_CANONICAL_NAMES = {"bfloat16": BFLOAT16, "tensorfloat32": TENSORFLOAT32, "float32": FLOAT32}
FORMAT_ALIASES = dict(_CANONICAL_NAMES, bf16=BFLOAT16, tf32=TENSORFLOAT32)


@dataclass(frozen=True)
class FpValue:
    fmt: FpFormat
    bits: int

    def __post_init__(self):
        if type(self.bits) is not int:
            object.__setattr__(self, "bits", int(self.bits))
        if not 0 <= self.bits < (1 << self.fmt.total_bits):
            raise ValueError(f"encoding {self.bits:#x} out of range for {self.fmt}")

    @property
    def negative(self) -> bool:
        return bool(self.bits & self.fmt.sign_bit)

    @property
    def magnitude_bits(self) -> int:
        return self.bits & (self.fmt.sign_bit - 1)

    @property
    def exponent_field(self) -> int:
        return self.magnitude_bits >> self.fmt.mantissa_bits

    @property
    def fraction_field(self) -> int:
        return self.bits & ((1 << self.fmt.mantissa_bits) - 1)

    def is_nan(self) -> bool:
        return self.exponent_field == self.fmt.exp_all_ones and self.fraction_field != 0

    def is_inf(self) -> bool:
        return self.exponent_field == self.fmt.exp_all_ones and self.fraction_field == 0

    def is_finite(self) -> bool:
        return self.exponent_field != self.fmt.exp_all_ones

    def is_zero(self) -> bool:
        return self.magnitude_bits == 0

    def is_subnormal(self) -> bool:
        return self.exponent_field == 0 and self.fraction_field != 0

    def is_odd(self) -> bool:
        return bool(self.bits & 1)

    def __float__(self) -> float:
        return to_float(self)

    def __repr__(self):
        width = (self.fmt.total_bits + 3) // 4
        return f"FpValue({self.fmt}, 0x{self.bits:0{width}x})"


def decode(v: FpValue) -> ExactReal:
    """Exact value of an encoding; -0 decodes to 0 (the sign lives in the encoding)."""
    fmt = v.fmt
    e, f = v.exponent_field, v.fraction_field
    if e == fmt.exp_all_ones:
        if f:
            return math.nan
        return -math.inf if v.negative else math.inf
    if e == 0:
        val = Fraction(f, 1 << (fmt.mantissa_bits - fmt.emin))
    else:
        val = _scaled(f + (1 << fmt.mantissa_bits), e - fmt.bias - fmt.mantissa_bits)
    return -val if v.negative else val


def _scaled(m: int, e: int) -> Fraction:
    return Fraction(m << e) if e >= 0 else Fraction(m, 1 << -e)


def to_float(v: FpValue) -> float:
    """Binary64 value of an encoding (exact for every format that fits in binary64)."""
    fmt = v.fmt
    e, f = v.exponent_field, v.fraction_field
    sign = -1.0 if v.negative else 1.0
    if e == fmt.exp_all_ones:
        return math.nan if f else sign * math.inf
    if e == 0:
        return sign * math.ldexp(float(f), fmt.emin - fmt.mantissa_bits)
    return sign * math.ldexp(float(f + (1 << fmt.mantissa_bits)), e - fmt.bias - fmt.mantissa_bits)


def _as_ratio(x) -> tuple[bool, int, int]:
    if isinstance(x, Fraction):
        return x < 0, abs(x.numerator), x.denominator
    if isinstance(x, int):
        return x < 0, abs(x), 1
    num, den = float(x).as_integer_ratio()
    return (math.copysign(1.0, x) < 0), abs(num), den


def round_exact(x: ExactReal, fmt: FpFormat, mode: RoundingMode,
                ro_saturate: bool = True) -> FpValue:
    """Round an exact real into ``fmt`` under ``mode``.

    ``ro_saturate`` chooses what round-to-odd does past the largest finite
    value: stay at the largest finite (odd) value, or go to infinity.
    """
    if isinstance(x, float) and not math.isfinite(x):
        if math.isnan(x):
            return FpValue(fmt, fmt.nan_bits)
        return FpValue(fmt, fmt.inf_bits | (fmt.sign_bit if x < 0 else 0))
    neg, num, den = _as_ratio(x)
    return FpValue(fmt, round_ratio(neg, num, den, fmt, mode, ro_saturate))


def round_ratio(neg: bool, num: int, den: int, fmt: FpFormat, mode: RoundingMode,
                ro_saturate: bool = True) -> int:
    """Encoding of ``(-1)**neg * num / den`` rounded into ``fmt`` (num >= 0, den > 0)."""
    sign = fmt.sign_bit if neg else 0
    if num == 0:
        return sign
    p = fmt.precision
    # floor(log2(num/den))
    e = num.bit_length() - den.bit_length()
    if (num << -e if e < 0 else num) < (den << e if e > 0 else den):
        e -= 1
    q = max(e, fmt.emin) - (p - 1)
    if q >= 0:
        i, r = divmod(num, den << q)
        d = den << q
    else:
        i, r = divmod(num << -q, den)
        d = den
    if r:
        twice = 2 * r
        if mode is RoundingMode.RN:
            if twice > d or (twice == d and i & 1):
                i += 1
        elif mode is RoundingMode.RA:
            if twice >= d:
                i += 1
        elif mode is RoundingMode.RU:
            if not neg:
                i += 1
        elif mode is RoundingMode.RD:
            if neg:
                i += 1
        elif mode is RoundingMode.RO:
            i |= 1
    return sign | _encode_magnitude(i, q, fmt, mode, neg, ro_saturate)


def _encode_magnitude(i: int, q: int, fmt: FpFormat, mode: RoundingMode, neg: bool,
                      ro_saturate: bool) -> int:
    p = fmt.precision
    if i >> p:  # carried into the next binade
        i >>= 1
        q += 1
    if i < (1 << (p - 1)):
        return i  # subnormal or zero
    biased = q + (p - 1) + fmt.bias
    if biased >= fmt.exp_all_ones:
        if mode is RoundingMode.RO:
            return fmt.max_finite_bits if ro_saturate else fmt.inf_bits
        to_inf = mode in (RoundingMode.RN, RoundingMode.RA) \
            or (mode is RoundingMode.RU and not neg) or (mode is RoundingMode.RD and neg)
        return fmt.inf_bits if to_inf else fmt.max_finite_bits
    return (biased << fmt.mantissa_bits) | (i - (1 << (p - 1)))


def enumerate_values(fmt: FpFormat, cap: int = ENUMERATION_CAP) -> Iterator[FpValue]:
    if fmt.total_bits > cap:
        raise EnumerationCapError(
            f"refusing to enumerate {fmt} ({fmt.total_bits} bits > cap of {cap})")
    for bits in range(1 << fmt.total_bits):
        yield FpValue(fmt, bits)


def next_after(v: FpValue) -> FpValue:
    """Next representable value towards +inf."""
    if not v.is_finite():
        raise ValueError("next_after needs a finite value")
    fmt = v.fmt
    if v.is_zero():
        return FpValue(fmt, 1)
    if v.negative:
        return FpValue(fmt, v.bits - 1)
    return FpValue(fmt, v.bits + 1)


def prev_before(v: FpValue) -> FpValue:
    """Next representable value towards -inf."""
    if not v.is_finite():
        raise ValueError("prev_before needs a finite value")
    fmt = v.fmt
    if v.is_zero():
        return FpValue(fmt, fmt.sign_bit | 1)
    if v.negative:
        return FpValue(fmt, v.bits + 1)
    return FpValue(fmt, v.bits - 1)


def encode_float(x: float, fmt: FpFormat) -> FpValue:
    """Encoding of a binary64 value that must be exactly representable in ``fmt``."""
    v = round_exact(x, fmt, RoundingMode.RZ)
    if not math.isnan(x) and to_float(v) != x:
        raise ValueError(f"{x!r} is not representable in {fmt}")
    return v


# -- vectorised rounding --------------------------------------------------------
#
# Batch version of ``round_ratio`` for values ``(-1)**neg * (num/den) * 2**exp``
# with 0 < num, den < 2**31 and target precision <= 24 bits.  Shifted operands
# stay below den * 2**precision or 8 * num, so int64 arithmetic is exact.

_MODE_IDS = {m: i for i, m in enumerate(RoundingMode)}


def _bit_length(a: np.ndarray) -> np.ndarray:
    return np.frexp(a.astype(np.float64))[1].astype(np.int64)


def round_ratio_array(neg: np.ndarray, num: np.ndarray, den: np.ndarray, exp: np.ndarray,
                      fmt: FpFormat, mode: RoundingMode, ro_saturate: bool = True) -> np.ndarray:
    if fmt.precision > 24:
        raise ValueError("round_ratio_array supports at most 24 bits of precision")
    neg = np.asarray(neg, dtype=bool)
    num = np.asarray(num, dtype=np.int64)
    den = np.asarray(den, dtype=np.int64)
    exp = np.asarray(exp, dtype=np.int64)
    if np.any(num <= 0) or np.any(den <= 0) or np.any(num >= 1 << 31) or np.any(den >= 1 << 31):
        raise ValueError("num and den must lie in [1, 2**31)")
    p = fmt.precision
    l = _bit_length(num) - _bit_length(den)
    num_s = np.where(l < 0, num << np.maximum(-l, 0), num)
    den_s = np.where(l > 0, den << np.maximum(l, 0), den)
    l = l - (num_s < den_s)
    # num/den = r * 2**l with r in [1, 2); value = r * 2**(l + exp)
    e = l + exp
    q = np.maximum(e, fmt.emin) - (p - 1)
    s = exp - q  # value / 2**q = (num/den) * 2**s
    tiny = l + 1 + s < -2  # value / 2**q < 1/4: rounds like any tiny positive number
    s = np.where(tiny, 0, s)
    big_n = num << np.clip(s, 0, None)
    big_d = den << np.clip(-s, 0, None)
    i = big_n // big_d
    r = big_n - i * big_d
    i = np.where(tiny, 0, i)
    inexact = np.where(tiny, True, r != 0)
    above = np.where(tiny, False, 2 * r > big_d)
    tie = np.where(tiny, False, 2 * r == big_d)
    return _finish(i, q, inexact, above, tie, neg, fmt, mode, ro_saturate)


def round_float_array(y: np.ndarray, sticky: np.ndarray | int, fmt: FpFormat,
                      mode: RoundingMode, ro_saturate: bool = True) -> np.ndarray:
    """Round ``y + sticky * eps`` into ``fmt`` for binary64 ``y`` and an infinitesimal eps.

    ``sticky`` (-1, 0 or +1 per element) tells on which side of ``y`` the true
    value lies.  Every rounding boundary of a format with at most 31 bits of
    precision is a binary64 value, so the pair pins down the rounding exactly.
    NaN maps to the canonical NaN and infinities stay infinite.
    """
    if fmt.precision > 31:
        raise ValueError("round_float_array supports at most 31 bits of precision")
    y = np.asarray(y, dtype=np.float64)
    sticky = np.broadcast_to(np.asarray(sticky, dtype=np.int64), y.shape)
    neg = np.signbit(y)
    zero = y == 0
    special = ~np.isfinite(y) | zero
    a = np.where(special, 1.0, np.abs(y))
    st = np.where(special, 0, np.where(neg, -sticky, sticky))
    m, e = np.frexp(a)
    e = e.astype(np.int64)
    # magnitude lies in (m2, m2 + 1) * 2**(e - 54) when st != 0, else equals m2 * 2**(e - 54)
    m2 = (m * 2.0 ** 54).astype(np.int64) - (st < 0)
    sticky_up = st != 0
    ebin = e - 1 - (m2 < (1 << 53))
    p = fmt.precision
    q = np.maximum(ebin, fmt.emin) - (p - 1)
    sh = q - (e - 54)
    tiny = sh >= 56
    sh = np.where(tiny, 1, sh)
    i = m2 >> sh
    rem = m2 & ((np.int64(1) << sh) - 1)
    half = np.int64(1) << (sh - 1)
    i = np.where(tiny, 0, i)
    inexact = np.where(tiny, True, (rem != 0) | sticky_up)
    above = np.where(tiny, False, (rem > half) | ((rem == half) & sticky_up))
    tie = np.where(tiny, False, (rem == half) & ~sticky_up)
    out = _finish(i, q, inexact, above, tie, neg, fmt, mode, ro_saturate)
    sign = np.where(neg, fmt.sign_bit, 0)
    out = np.where(zero, sign, out)
    out = np.where(np.isinf(y), fmt.inf_bits | sign, out)
    out = np.where(np.isnan(y), fmt.nan_bits, out)
    return out


def _finish(i, q, inexact, above, tie, neg, fmt, mode, ro_saturate):
    p = fmt.precision
    if mode is RoundingMode.RN:
        inc = above | (tie & ((i & 1) == 1))
    elif mode is RoundingMode.RA:
        inc = above | tie
    elif mode is RoundingMode.RZ:
        inc = np.zeros_like(inexact)
    elif mode is RoundingMode.RU:
        inc = inexact & ~neg
    elif mode is RoundingMode.RD:
        inc = inexact & neg
    else:
        inc = np.zeros_like(inexact)
        i = np.where(inexact, i | 1, i)
    i = i + inc
    carry = (i >> p) != 0
    i = np.where(carry, i >> 1, i)
    q = q + carry
    biased = q + (p - 1) + fmt.bias
    normal = i >= (1 << (p - 1))
    mag = np.where(normal, (biased << fmt.mantissa_bits) | (i - (1 << (p - 1))), i)
    over = normal & (biased >= fmt.exp_all_ones)
    if mode is RoundingMode.RO:
        sat = np.full_like(mag, fmt.max_finite_bits if ro_saturate else fmt.inf_bits)
    else:
        if mode in (RoundingMode.RN, RoundingMode.RA):
            to_inf = np.ones_like(neg)
        elif mode is RoundingMode.RU:
            to_inf = ~neg
        elif mode is RoundingMode.RD:
            to_inf = neg
        else:
            to_inf = np.zeros_like(neg)
        sat = np.where(to_inf, fmt.inf_bits, fmt.max_finite_bits)
    mag = np.where(over, sat, mag)
    return np.where(neg, mag | fmt.sign_bit, mag)


def decode_array(bits: np.ndarray, fmt: FpFormat) -> np.ndarray:
    """Binary64 values of many encodings at once (signed zeros kept)."""
    bits = np.asarray(bits, dtype=np.int64)
    mb = fmt.mantissa_bits
    neg = (bits & fmt.sign_bit) != 0
    e = (bits >> mb) & fmt.exp_all_ones
    f = bits & ((1 << mb) - 1)
    sub = np.ldexp(f.astype(np.float64), fmt.emin - mb)
    nrm = np.ldexp((f + (1 << mb)).astype(np.float64), (e - fmt.bias - mb).astype(np.int64))
    val = np.where(e == 0, sub, nrm)
    val = np.where(e == fmt.exp_all_ones, np.where(f == 0, np.inf, np.nan), val)
    return np.where(neg, -val, val)
