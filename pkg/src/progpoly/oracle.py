"""Correctly rounded reference values for the supported elementary functions.

Each finite in-domain result is computed as a rigorous fixed-point bracket
with big integers and refined Ziv-style (64, 128, 256, 512 bits) until it
pins down an ``OracleValue``: the binary64 nearest value ``y`` together with
the side of ``y`` the true result lies on.  Every rounding boundary of the
small formats handled here is itself a binary64 number, so that pair decides
the rounding into any such format under any mode.

Brackets use the atanh series for logarithms and the Taylor series for
exponentials; every truncating division is counted into an explicit error
bound, so the brackets are enclosures, not estimates.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .formats import (
    FpFormat, FpValue, RoundingMode, decode, enumerate_values, round_exact, round_float_array,
    to_float,
)

ORACLE_VERSION = 1
PRECISIONS = (64, 128, 256, 512)
GUARD_BITS = 16

# rational bounds used only for deciding overflow / underflow thresholds
_LN2_UPPER = Fraction(6932, 10000)
_LOG10_2_UPPER = Fraction(30104, 100000)


class FunctionId(enum.Enum):
    LOG2 = "log2"
    LN = "ln"
    LOG10 = "log10"
    EXP2 = "exp2"
    EXP = "exp"
    EXP10 = "exp10"

    @property
    def is_log(self) -> bool:
        return self in (FunctionId.LOG2, FunctionId.LN, FunctionId.LOG10)

    @classmethod
    def parse(cls, text: str) -> "FunctionId":
        key = text.strip().lower()
        if key == "log":
            key = "ln"
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown function {text!r}") from None


class DomainError(ValueError):
    """Input outside the finite domain handled by the bracket evaluator."""


class OracleError(RuntimeError):
    """The bracket could not be narrowed enough at the largest working precision."""


@dataclass(frozen=True)
class OracleValue:
    """The true result is ``y`` when ``sticky == 0``, else strictly between
    ``y`` and its binary64 neighbour in the direction of ``sticky``."""

    y: float
    sticky: int

    def round(self, fmt: FpFormat, mode: RoundingMode) -> FpValue:
        y = self.y
        if not math.isfinite(y) or y == 0 or self.sticky == 0:
            return round_exact(y, fmt, mode)
        # a perturbation far below the spacing of doubles near y
        nudge = Fraction(1, 1 << 60) * Fraction(2) ** math.frexp(y)[1]
        return round_exact(Fraction(y) + self.sticky * nudge, fmt, mode)

    @classmethod
    def from_fraction(cls, q: Fraction) -> "OracleValue":
        y = float(q)
        d = q - Fraction(y)
        return cls(y, (d > 0) - (d < 0))


@dataclass(frozen=True)
class OracleResult:
    value: FpValue
    exact: bool


# -- fixed-point series ----------------------------------------------------------
#
# An interval (lo, hi) of integers at scale W stands for [lo / 2**W, hi / 2**W].

def _atanh_fixed(a: int, b: int, w: int) -> tuple[int, int]:
    """atanh(a/b) * 2**w within +-err, for |a/b| <= 1/3."""
    neg = a < 0
    a = abs(a)
    a2, b2 = a * a, b * b
    u = (a << w) // b
    total = 0
    j = 0
    while u:
        total += u // (2 * j + 1)
        u = (u * a2) // b2
        j += 1
    # each term is off by < 2.2 units and the dropped tail is < 1.3 units
    err = 3 * j + 2
    return (-total if neg else total), err


@lru_cache(maxsize=None)
def _ln_ratio(a: int, b: int, w: int) -> tuple[int, int]:
    """ln(a/b) enclosure for a/b in [1/2, 2]."""
    n, err = _atanh_fixed(a - b, a + b, w)
    return 2 * n - 2 * err, 2 * n + 2 * err


@lru_cache(maxsize=None)
def _ln2(w: int) -> tuple[int, int]:
    return _ln_ratio(2, 1, w)


@lru_cache(maxsize=None)
def _ln10(w: int) -> tuple[int, int]:
    lo2, hi2 = _ln2(w)
    lo, hi = _ln_ratio(5, 4, w)
    return 3 * lo2 + lo, 3 * hi2 + hi


def _exp_fixed(z: int, w: int) -> tuple[int, int]:
    """exp(z / 2**w) * 2**w within +-err, for |z| <= 2**(w-1)."""
    neg = z < 0
    az = abs(z)
    term = 1 << w
    total = term
    j = 1
    while term:
        term = (term * az) // (j << w)
        total += -term if neg and j % 2 else term
        j += 1
    # the absolute value of each term is off by < 2 units; tail < 4 units
    err = 2 * j + 4
    return total, err


def _div_floor(a: int, b: int) -> int:
    return a // b


def _div_ceil(a: int, b: int) -> int:
    return -((-a) // b)


def _idiv(a: tuple[int, int], d: tuple[int, int], w: int) -> tuple[int, int]:
    """[a] / [d] at scale w, for d > 0."""
    alo, ahi = a
    dlo, dhi = d
    lo = _div_floor(alo << w, dhi if alo >= 0 else dlo)
    hi = _div_ceil(ahi << w, dlo if ahi >= 0 else dhi)
    return lo, hi


def _iscale(q: Fraction, a: tuple[int, int]) -> tuple[int, int]:
    """q * [a] for exact rational q."""
    lo, hi = a
    if q < 0:
        lo, hi = hi, lo
    n, d = q.numerator, q.denominator
    return _div_floor(lo * n, d), _div_ceil(hi * n, d)


def _iconst(q: Fraction, w: int) -> tuple[int, int]:
    n = q.numerator << w
    return _div_floor(n, q.denominator), _div_ceil(n, q.denominator)


# -- brackets per function ------------------------------------------------------------


def split_log_input(x: float) -> tuple[Fraction, int]:
    """x = m * 2**e with m in [sqrt(1/2), sqrt(2)); exact for every positive double."""
    m, e = math.frexp(x)
    if m < math.sqrt(0.5):
        m *= 2.0
        e -= 1
    return Fraction(m), e


def _log_bracket(f: FunctionId, x: float, prec: int) -> tuple[int, int, int]:
    m, e = split_log_input(x)
    t_exp = math.frexp(float((m - 1) / (m + 1)))[1] if m != 1 else 0
    w = prec + GUARD_BITS + max(0, -t_exp)
    ln_m = _ln_ratio(m.numerator, m.denominator, w)
    if f is FunctionId.LOG2:
        lo, hi = _idiv(ln_m, _ln2(w), w)
        return lo + (e << w), hi + (e << w), -w
    l2lo, l2hi = _ln2(w)
    elo, ehi = (e * l2lo, e * l2hi) if e >= 0 else (e * l2hi, e * l2lo)
    ln_x = (ln_m[0] + elo, ln_m[1] + ehi)
    if f is FunctionId.LN:
        return ln_x[0], ln_x[1], -w
    lo, hi = _idiv(ln_x, _ln10(w), w)
    return lo, hi, -w


def _exp_bracket(f: FunctionId, x: float, prec: int) -> tuple[int, int, int]:
    w = prec + GUARD_BITS + max(0, -math.frexp(x)[1])
    xq = Fraction(x)
    ln2 = _ln2(w)
    if f is FunctionId.EXP2:
        i = math.floor(xq + Fraction(1, 2))
        z = _iscale(xq - i, ln2)
    else:
        if f is FunctionId.EXP:
            i = math.floor(x / math.log(2) + 0.5)
            base = _iconst(xq, w)
        else:
            i = math.floor(x * math.log2(10) + 0.5)
            base = _iscale(xq, _ln10(w))
        shift = _iscale(Fraction(-i), ln2)
        z = (base[0] + shift[0], base[1] + shift[1])
    lo, elo = _exp_fixed(z[0], w)
    hi, ehi = _exp_fixed(z[1], w)
    return lo - elo, hi + ehi, i - w


def _to_float(n: int, sc: int) -> float:
    if sc >= 0:
        return float(n << sc)
    return n / (1 << -sc)


def _side(n: int, sc: int, y: float) -> int:
    num, den = y.as_integer_ratio()
    lhs, rhs = n * den, num
    if sc >= 0:
        lhs <<= sc
    else:
        rhs <<= -sc
    return (lhs > rhs) - (lhs < rhs)


def _decide(lo: int, hi: int, sc: int) -> OracleValue | None:
    y = _to_float(lo, sc)
    if _to_float(hi, sc) != y:
        return None
    s_lo, s_hi = _side(lo, sc, y), _side(hi, sc, y)
    if s_lo != s_hi or s_lo == 0:
        return None
    return OracleValue(y, s_lo)


# -- public API -----------------------------------------------------------------------------


def ieee_special(f: FunctionId, x: float) -> float | None:
    """IEEE result for inputs outside the finite domain, else None."""
    if math.isnan(x):
        return math.nan
    if f.is_log:
        if x == 0:
            return -math.inf
        if x < 0:
            return math.nan
        if math.isinf(x):
            return math.inf
        return None
    if math.isinf(x):
        return math.inf if x > 0 else 0.0
    return None


def exact_result(f: FunctionId, x: float) -> Fraction | None:
    """The result as an exact rational when it is rational, else None."""
    if f is FunctionId.LOG2:
        m, e = math.frexp(x)
        return Fraction(e - 1) if m == 0.5 else None
    if f is FunctionId.LN:
        return Fraction(0) if x == 1 else None
    if f is FunctionId.LOG10:
        if x >= 1 and x == int(x):
            n = int(x)
            k = len(str(n)) - 1
            return Fraction(k) if n == 10 ** k else None
        return None
    if x == 0:
        return Fraction(1)
    if x != int(x):
        return None
    if f is FunctionId.EXP2:
        return Fraction(2) ** int(x)
    if f is FunctionId.EXP10:
        return Fraction(10) ** int(x)
    return None


def _range_proxy(f: FunctionId, x: float, exponent_bits: int) -> OracleValue | None:
    """Stand-ins for results that overflow or underflow every format with this exponent width."""
    if f.is_log:
        return None
    bias = (1 << (exponent_bits - 1)) - 1
    top, bottom = bias + 1, 1 - bias - 32
    scale = {FunctionId.EXP2: Fraction(1), FunctionId.EXP: _LN2_UPPER,
             FunctionId.EXP10: _LOG10_2_UPPER}[f]
    xq = Fraction(x)
    if xq >= top * scale:
        return OracleValue(2.0 ** top, 1)
    if xq < bottom * scale:
        return OracleValue(2.0 ** bottom, -1)
    return None


@lru_cache(maxsize=None)
def real_value(f: FunctionId, x: float, exponent_bits: int = 8,
               precisions: tuple[int, ...] = PRECISIONS) -> OracleValue:
    """Correctly rounded binary64 value of f(x), with the side of the residual.

    Results beyond ``2**(emax+1)`` or below ``2**(emin-32)`` for the given
    exponent width are replaced by those thresholds; every format with that
    exponent width and at most 31 bits of precision rounds them identically.
    """
    if not 2 <= exponent_bits <= 10:
        raise ValueError("oracle supports exponent widths 2..10")
    if ieee_special(f, x) is not None:
        raise DomainError(f"{f.value}({x!r}) is outside the finite domain")
    proxy = _range_proxy(f, x, exponent_bits)
    if proxy is not None:
        return proxy
    q = exact_result(f, x)
    if q is not None:
        bias = (1 << (exponent_bits - 1)) - 1
        if q > Fraction(2) ** (bias + 1):
            return OracleValue(2.0 ** (bias + 1), 1)
        return OracleValue.from_fraction(q)
    bracket = _log_bracket if f.is_log else _exp_bracket
    for prec in precisions:
        got = _decide(*bracket(f, x, prec))
        if got is not None:
            return got
    raise OracleError(f"cannot decide rounding of {f.value}({x!r}) at {precisions[-1]} bits")


def _result(v: FpValue, ov: OracleValue) -> OracleResult:
    exact = ov.sticky == 0 and math.isfinite(ov.y) and to_float(v) == ov.y
    return OracleResult(v, exact)


def oracle_round(f: FunctionId, x: FpValue, fmt: FpFormat, mode: RoundingMode) -> OracleResult:
    return oracle_round_modes(f, x, fmt, (mode,))[mode]


def oracle_round_modes(f: FunctionId, x: FpValue, fmt: FpFormat,
                       modes: Iterable[RoundingMode]) -> dict[RoundingMode, OracleResult]:
    """Round one oracle value under several modes (the bracket is computed once)."""
    if x.fmt.exponent_bits != fmt.exponent_bits:
        raise ValueError("input and output formats must share the exponent width")
    ov = real_value(f, to_float(x), fmt.exponent_bits)
    return {m: _result(ov.round(fmt, m), ov) for m in modes}


def table_value(f: FunctionId, x: FpValue) -> OracleValue:
    """Oracle value for any encoding, mapping special inputs to their IEEE results."""
    xf = to_float(x)
    sp = ieee_special(f, xf)
    if sp is not None:
        return OracleValue(sp, 0)
    return real_value(f, xf, x.fmt.exponent_bits)


def oracle_table(f: FunctionId, fmt: FpFormat,
                 mode: RoundingMode) -> Iterator[tuple[FpValue, OracleResult]]:
    for x in enumerate_values(fmt):
        ov = table_value(f, x)
        yield x, _result(ov.round(fmt, mode), ov)


def oracle_arrays(f: FunctionId, fmt: FpFormat) -> tuple[np.ndarray, np.ndarray]:
    """(y, sticky) for every encoding of fmt, in encoding order."""
    n = 1 << fmt.total_bits
    ys = np.empty(n, dtype=np.float64)
    st = np.empty(n, dtype=np.int64)
    for x in enumerate_values(fmt):
        ov = table_value(f, x)
        ys[x.bits] = ov.y
        st[x.bits] = ov.sticky
    return ys, st


def oracle_encodings(f: FunctionId, fmt: FpFormat, mode: RoundingMode,
                     cache_dir: Path | None = None) -> np.ndarray:
    """Correctly rounded output encoding for every input encoding of fmt."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / cache_filename(f, fmt, mode)
        if path.exists():
            _, _, _, ins, outs = read_cache(path)
            table = np.empty(1 << fmt.total_bits, dtype=np.int64)
            table[ins] = outs
            return table
    ys, st = oracle_arrays(f, fmt)
    table = round_float_array(ys, st, fmt, mode)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_cache(path, f, fmt, mode, np.arange(len(table)), table)
    return table


# -- on-disk cache ----------------------------------------------------------------------------
#
# header: b"PPOC", version, n, |E|, len(mode), mode, len(fn), fn, u32 count
# then count records of (input encoding, output encoding), little-endian,
# each padded to ceil(n / 8) bytes.

_MAGIC = b"PPOC"


def cache_filename(f: FunctionId, fmt: FpFormat, mode: RoundingMode) -> str:
    return f"{f.value}_fp{fmt.total_bits}_{fmt.exponent_bits}_{mode.value}_v{ORACLE_VERSION}.ppoc"


def write_cache(path: Path, f: FunctionId, fmt: FpFormat, mode: RoundingMode,
                inputs: np.ndarray, outputs: np.ndarray) -> None:
    width = (fmt.total_bits + 7) // 8
    mode_b, fn_b = mode.value.encode(), f.value.encode()
    head = _MAGIC + bytes([ORACLE_VERSION, fmt.total_bits, fmt.exponent_bits, len(mode_b)]) \
        + mode_b + bytes([len(fn_b)]) + fn_b + struct.pack("<I", len(inputs))
    recs = np.empty((len(inputs), 2 * width), dtype=np.uint8)
    for col, arr in ((0, inputs), (width, outputs)):
        a = np.asarray(arr, dtype="<u8")
        recs[:, col:col + width] = a.view(np.uint8).reshape(-1, 8)[:, :width]
    Path(path).write_bytes(head + recs.tobytes())


def read_cache(path: Path):
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an oracle cache file")
    version, n, e, ml = data[4], data[5], data[6], data[7]
    if version != ORACLE_VERSION:
        raise ValueError(f"{path}: cache version {version} != {ORACLE_VERSION}")
    pos = 8
    mode = RoundingMode(data[pos:pos + ml].decode())
    pos += ml
    fl = data[pos]
    f = FunctionId(data[pos + 1:pos + 1 + fl].decode())
    pos += 1 + fl
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    fmt = FpFormat(n, e)
    width = (n + 7) // 8
    raw = np.frombuffer(data, dtype=np.uint8, offset=pos, count=count * 2 * width)
    raw = raw.reshape(count, 2 * width)
    pad = np.zeros((count, 8), dtype=np.uint8)

    def column(c):
        pad[:, :width] = raw[:, c:c + width]
        return pad.copy().view("<u8").reshape(-1).astype(np.int64)

    return f, fmt, mode, column(0), column(width)


def decode_result(r: OracleResult):
    return decode(r.value)
