"""Rounding intervals and the progressive constraint system.

For every finite input of every ladder rung the builder asks the oracle for
the rung's target result (by default round-to-odd at two extra bits), takes
the set of reals rounding to it, and pulls that set back through the output
compensation to a closed interval of binary64 kernel outputs.  Rung j's
constraints only involve the first ``terms_j`` coefficients.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .formats import (
    ExactReal, FpFormat, FpValue, RoundingMode, decode, decode_array, next_after, prev_before,
    round_float_array,
)
from .oracle import FunctionId, real_value
from .reduction import binary64_preimage, range_reduce_array, special_value_array


# -- rounding intervals -----------------------------------------------------------------


@dataclass(frozen=True)
class RoundingInterval:
    lower: ExactReal
    upper: ExactReal
    lower_open: bool
    upper_open: bool

    def __post_init__(self):
        if not (self.lower < self.upper or
                (self.lower == self.upper and not self.lower_open and not self.upper_open)):
            raise ValueError(f"malformed interval {self}")

    def contains(self, x: Fraction) -> bool:
        above = x > self.lower if self.lower_open else x >= self.lower
        below = x < self.upper if self.upper_open else x <= self.upper
        return above and below


_MIRROR = {RoundingMode.RU: RoundingMode.RD, RoundingMode.RD: RoundingMode.RU}


def rounding_interval(y: FpValue, fmt: FpFormat, mode: RoundingMode) -> RoundingInterval:
    """The exact set of reals that round to ``y`` (round-to-odd saturates at overflow)."""
    if y.fmt != fmt:
        raise ValueError("value and format disagree")
    if not y.is_finite():
        raise ValueError("rounding intervals are defined for finite values only")
    if y.is_zero():
        return _zero_interval(fmt, mode, y.negative)
    if y.negative:
        pos = rounding_interval(FpValue(fmt, y.magnitude_bits), fmt, _MIRROR.get(mode, mode))
        return RoundingInterval(-pos.upper, -pos.lower, pos.upper_open, pos.lower_open)
    v = decode(y)
    below = decode(prev_before(y))
    top = y.bits == fmt.max_finite_bits
    above = Fraction(2) ** (fmt.emax + 1) if top else decode(next_after(y))
    even = not y.bits & 1
    if mode is RoundingMode.RO:
        if even:
            return RoundingInterval(v, v, False, False)
        return RoundingInterval(below, math.inf if top else above, True, True)
    if mode is RoundingMode.RN:
        return RoundingInterval((below + v) / 2, (v + above) / 2, not even, not even or top)
    if mode is RoundingMode.RA:
        return RoundingInterval((below + v) / 2, (v + above) / 2, False, True)
    if mode is RoundingMode.RU:
        return RoundingInterval(below, v, True, False)
    # RZ and RD agree on positive values
    return RoundingInterval(v, math.inf if top else above, False, True)


def _zero_interval(fmt: FpFormat, mode: RoundingMode, negative: bool) -> RoundingInterval:
    tiny = fmt.min_subnormal
    if not negative:
        return {
            RoundingMode.RN: RoundingInterval(Fraction(0), tiny / 2, False, False),
            RoundingMode.RA: RoundingInterval(Fraction(0), tiny / 2, False, True),
            RoundingMode.RZ: RoundingInterval(Fraction(0), tiny, False, True),
            RoundingMode.RD: RoundingInterval(Fraction(0), tiny, False, True),
            RoundingMode.RU: RoundingInterval(Fraction(0), Fraction(0), False, False),
            RoundingMode.RO: RoundingInterval(Fraction(0), Fraction(0), False, False),
        }[mode]
    if mode in (RoundingMode.RD, RoundingMode.RO):
        raise ValueError(f"no real rounds to -0 under {mode.value}")
    lower = {RoundingMode.RN: (-tiny / 2, False), RoundingMode.RA: (-tiny / 2, True),
             RoundingMode.RZ: (-tiny, True), RoundingMode.RU: (-tiny, True)}[mode]
    return RoundingInterval(lower[0], Fraction(0), lower[1], True)


def rounding_interval_arrays(bits: np.ndarray, fmt: FpFormat, mode: RoundingMode):
    """Vectorised ``rounding_interval`` for RO and RN.

    Returns (lo, hi, lo_open, hi_open) with binary64 endpoints, which are exact
    for formats of at most 52 bits of precision.  An RN infinity maps to the
    reals from the overflow midpoint up.
    """
    if mode not in (RoundingMode.RO, RoundingMode.RN):
        raise ValueError("vectorised intervals cover RO and RN only")
    bits = np.asarray(bits, dtype=np.int64)
    neg = (bits & fmt.sign_bit) != 0
    mag = bits & (fmt.sign_bit - 1)
    zero = mag == 0
    inf = mag == fmt.inf_bits
    if np.any(mag > fmt.inf_bits) or (mode is RoundingMode.RO and np.any(inf)):
        raise ValueError(f"no interval for these encodings under {mode.value}")
    if mode is RoundingMode.RO and np.any(zero & neg):
        raise ValueError("no real rounds to -0 under ro")
    safe = np.clip(mag, 1, fmt.max_finite_bits)
    v = decode_array(safe, fmt)
    below = decode_array(safe - 1, fmt)
    top = safe == fmt.max_finite_bits
    above = np.where(top, 2.0 ** (fmt.emax + 1), decode_array(np.minimum(safe + 1, fmt.max_finite_bits), fmt))
    odd = (safe & 1) == 1
    tiny = float(fmt.min_subnormal)
    if mode is RoundingMode.RO:
        lo = np.where(odd, below, v)
        hi = np.where(odd, np.where(top, np.inf, above), v)
        lo_open = odd.copy()
        hi_open = odd.copy()
        lo[zero], hi[zero] = 0.0, 0.0
        lo_open[zero], hi_open[zero] = False, False
    else:
        lo = (below + v) / 2
        hi = (v + above) / 2
        lo_open = odd.copy()
        hi_open = odd | top
        lo[zero], hi[zero] = 0.0, tiny / 2
        lo_open[zero], hi_open[zero] = False, False
        vmax = float(fmt.max_finite)
        lo[inf], hi[inf] = (vmax + 2.0 ** (fmt.emax + 1)) / 2, np.inf
        lo_open[inf], hi_open[inf] = False, False
    # mirror negative values; -0 keeps the zero itself outside
    lo2 = np.where(neg, -hi, lo)
    hi2 = np.where(neg, -lo, hi)
    lo_open2 = np.where(neg, hi_open, lo_open)
    hi_open2 = np.where(neg, lo_open | zero, hi_open)
    return lo2, hi2, lo_open2, hi_open2


# -- ladder ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Rung:
    fmt: FpFormat
    terms: int
    interval_mode: str = "ro"  # "ro": round-to-odd at n+2 bits; "rn": plain RN at n bits

    def __post_init__(self):
        if self.interval_mode not in ("ro", "rn"):
            raise ValueError(f"unknown interval mode {self.interval_mode!r}")
        if self.terms < 1:
            raise ValueError("a rung needs at least one term")

    @property
    def target(self) -> tuple[FpFormat, RoundingMode]:
        if self.interval_mode == "ro":
            return self.fmt.with_extra_bits(2), RoundingMode.RO
        return self.fmt, RoundingMode.RN

    @property
    def guaranteed_modes(self) -> tuple[RoundingMode, ...]:
        if self.interval_mode == "ro":
            return (RoundingMode.RN, RoundingMode.RA, RoundingMode.RZ, RoundingMode.RU, RoundingMode.RD)
        return (RoundingMode.RN,)


def check_ladder(ladder: Sequence[Rung]) -> None:
    if not ladder:
        raise ValueError("empty ladder")
    for a, b in zip(ladder, ladder[1:]):
        if a.fmt.total_bits >= b.fmt.total_bits:
            raise ValueError("ladder formats must have strictly increasing width")
        if a.terms > b.terms:
            raise ValueError("term counts must be nondecreasing along the ladder")
    if len({r.fmt.exponent_bits for r in ladder}) != 1:
        raise ValueError("all ladder formats must share the exponent width")


# -- constraint set -------------------------------------------------------------------------


@dataclass(frozen=True)
class SpecialCase:
    rung: int
    bits: int        # input encoding in the rung's format
    value: float     # the rung's target result (e.g. round-to-odd at n+2 bits) as a double


@dataclass
class ConstraintSet:
    """Parallel arrays, one entry per constraint, plus CSR-style provenance."""

    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    terms: np.ndarray
    weight_exp: np.ndarray  # weight = 2 ** weight_exp
    origin_ptr: np.ndarray
    origin_rung: np.ndarray
    origin_bits: np.ndarray
    origin_value: np.ndarray
    k_max: int

    @classmethod
    def from_arrays(cls, x, lo, hi, terms, k_max: int | None = None) -> "ConstraintSet":
        """Synthetic set without real inputs behind it (origins are row numbers on rung -1)."""
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        terms = np.broadcast_to(np.asarray(terms, dtype=np.int64), (n,)).copy()
        return cls(x, np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64), terms,
                   np.zeros(n, dtype=np.int64), np.arange(n + 1, dtype=np.int64),
                   np.full(n, -1, dtype=np.int64), np.arange(n, dtype=np.int64), np.full(n, np.nan),
                   k_max or int(terms.max(initial=1)))

    def __len__(self) -> int:
        return len(self.x)

    def origins(self, j: int) -> list[SpecialCase]:
        s, e = self.origin_ptr[j], self.origin_ptr[j + 1]
        return [SpecialCase(int(r), int(b), float(v)) for r, b, v in
                zip(self.origin_rung[s:e], self.origin_bits[s:e], self.origin_value[s:e])]

    def total_weight(self, mask: np.ndarray | None = None) -> int:
        w = self.weight_exp if mask is None else self.weight_exp[mask]
        if w.size == 0:
            return 0
        counts = np.bincount(w)
        return sum(int(c) << i for i, c in enumerate(counts.tolist()) if c)

    def reset_weights(self) -> None:
        self.weight_exp = np.zeros(len(self), dtype=np.int64)

    def subset(self, idx: np.ndarray) -> "ConstraintSet":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        starts, ends = self.origin_ptr[idx], self.origin_ptr[idx + 1]
        counts = ends - starts
        gather = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if len(idx) else \
            np.zeros(0, dtype=np.int64)
        return ConstraintSet(
            self.x[idx], self.lo[idx], self.hi[idx], self.terms[idx], self.weight_exp[idx].copy(),
            np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            self.origin_rung[gather], self.origin_bits[gather], self.origin_value[gather], self.k_max)

    def with_terms(self, mapping: dict[int, int]) -> "ConstraintSet":
        """Copy with term counts remapped per rung (used when escalating)."""
        first_rung = self.origin_rung[self.origin_ptr[:-1]]
        terms = np.array([mapping[int(r)] for r in first_rung], dtype=np.int64) if len(self) else self.terms
        out = self.subset(np.arange(len(self)))
        out.terms = terms
        out.k_max = max(mapping.values())
        return out

    # JSON-lines dump with bit-exact hex doubles
    def dump_jsonl(self, path: Path) -> None:
        with open(path, "w") as fh:
            for j in range(len(self)):
                rec = {"x": hex64(self.x[j]), "lo": hex64(self.lo[j]), "hi": hex64(self.hi[j]),
                       "terms": int(self.terms[j]), "weight_exp": int(self.weight_exp[j]),
                       "origins": [[o.rung, o.bits, hex64(o.value)] for o in self.origins(j)]}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: Path, k_max: int) -> "ConstraintSet":
        cols = {k: [] for k in ("x", "lo", "hi", "terms", "weight_exp")}
        ptr, rung, bits, value = [0], [], [], []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                for k in ("x", "lo", "hi"):
                    cols[k].append(unhex64(rec[k]))
                cols["terms"].append(rec["terms"])
                cols["weight_exp"].append(rec["weight_exp"])
                for r, b, v in rec["origins"]:
                    rung.append(r)
                    bits.append(b)
                    value.append(unhex64(v))
                ptr.append(len(rung))
        f64 = lambda a: np.array(a, dtype=np.float64)
        i64 = lambda a: np.array(a, dtype=np.int64)
        return cls(f64(cols["x"]), f64(cols["lo"]), f64(cols["hi"]), i64(cols["terms"]),
                   i64(cols["weight_exp"]), i64(ptr), i64(rung), i64(bits), f64(value), k_max)


def hex64(x: float) -> str:
    return "0x%016X" % struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def unhex64(s: str) -> float:
    return struct.unpack("<d", struct.pack("<Q", int(s, 16)))[0]


# -- builder ---------------------------------------------------------------------------------


@dataclass
class BuildResult:
    constraints: ConstraintSet
    forced: list[SpecialCase] = field(default_factory=list)  # empty binary64 preimage
    conflicts: list[tuple[float, int, list[SpecialCase]]] = field(default_factory=list)
    counts: dict[int, int] = field(default_factory=dict)  # polynomial-path inputs per rung
    shortcut: dict[int, int] = field(default_factory=dict)  # in-domain inputs on the special path


def _finite_in_domain(f: FunctionId, fmt: FpFormat):
    bits = np.arange(1 << fmt.total_bits, dtype=np.int64)
    xs = decode_array(bits, fmt)
    ok = np.isfinite(xs)
    if f.is_log:
        ok &= xs > 0
    return bits[ok], xs[ok]


def _polynomial_inputs(f: FunctionId, fmt: FpFormat):
    bits, xs = _finite_in_domain(f, fmt)
    special, _ = special_value_array(f, xs, fmt.exponent_bits)
    return bits[~special], xs[~special]


def rung_targets(f: FunctionId, rung: Rung):
    """Inputs of one rung that take the polynomial path, with their target results.

    Returns (input encodings, inputs as doubles, target encodings in the rung's
    interval format).
    """
    bits, xs = _polynomial_inputs(f, rung.fmt)
    fmt = rung.fmt
    ys = np.empty(len(xs))
    st = np.empty(len(xs), dtype=np.int64)
    for j, x in enumerate(xs.tolist()):
        ov = real_value(f, x, fmt.exponent_bits)
        ys[j] = ov.y
        st[j] = ov.sticky
    tfmt, tmode = rung.target
    return bits, xs, round_float_array(ys, st, tfmt, tmode)


def build_progressive_constraints(f: FunctionId, ladder: Sequence[Rung],
                                  k_max: int | None = None) -> BuildResult:
    """Raw (unmerged) constraints for every polynomial-path input of every rung."""
    check_ladder(ladder)
    k_max = k_max or max(r.terms for r in ladder)
    parts = []
    forced: list[SpecialCase] = []
    counts, shortcut = {}, {}
    for ri, rung in enumerate(ladder):
        bits, xs, target = rung_targets(f, rung)
        tfmt, tmode = rung.target
        lo, hi, lo_open, hi_open = rounding_interval_arrays(target, tfmt, tmode)
        r, recon = range_reduce_array(f, xs)
        a, b = binary64_preimage(f, lo, hi, lo_open, hi_open, recon)
        values = decode_array(target, tfmt)
        empty = a > b
        forced.extend(SpecialCase(ri, int(bb), float(v)) for bb, v in zip(bits[empty], values[empty]))
        ok = ~empty
        n = int(ok.sum())
        counts[ri] = len(bits)
        shortcut[ri] = len(_finite_in_domain(f, rung.fmt)[0]) - len(bits)
        parts.append((r[ok], a[ok], b[ok], np.full(n, rung.terms), np.full(n, ri), bits[ok], values[ok]))
    cat = lambda i, dt: np.concatenate([p[i] for p in parts]).astype(dt)
    n = sum(len(p[0]) for p in parts)
    cs = ConstraintSet(cat(0, np.float64), cat(1, np.float64), cat(2, np.float64), cat(3, np.int64),
                       np.zeros(n, dtype=np.int64), np.arange(n + 1, dtype=np.int64),
                       cat(4, np.int64), cat(5, np.int64), cat(6, np.float64), k_max)
    return BuildResult(cs, forced, [], counts, shortcut)


def merge_duplicate_inputs(cs: ConstraintSet) -> tuple[ConstraintSet, list]:
    """Intersect constraints sharing (x, terms).

    Groups whose intervals do not intersect are reported as conflicts; their
    members that miss the median of the interval midpoints are evicted (and
    must become special cases) so the rest still intersect.
    """
    n = len(cs)
    if n == 0:
        return cs, []
    xkey = cs.x.view(np.int64)
    order = np.lexsort((xkey, cs.terms))
    xs, ts = xkey[order], cs.terms[order]
    start = np.ones(n, dtype=bool)
    start[1:] = (xs[1:] != xs[:-1]) | (ts[1:] != ts[:-1])
    starts = np.flatnonzero(start)
    lo = np.maximum.reduceat(cs.lo[order], starts)
    hi = np.minimum.reduceat(cs.hi[order], starts)
    wexp = np.maximum.reduceat(cs.weight_exp[order], starts)
    ends = np.append(starts[1:], n)
    conflicts = []
    keep_member = np.ones(n, dtype=bool)
    for g in np.flatnonzero(lo > hi):
        members = order[starts[g]:ends[g]]
        mids = (cs.lo[members] + cs.hi[members]) / 2
        c = float(np.median(mids))
        inside = (cs.lo[members] <= c) & (cs.hi[members] >= c)
        if not inside.any():
            inside[np.argmin(np.abs(mids - c))] = True
        evicted = [o for m in members[~inside] for o in cs.origins(int(m))]
        keep_member[starts[g]:ends[g]] = inside
        lo[g] = cs.lo[members[inside]].max()
        hi[g] = cs.hi[members[inside]].min()
        conflicts.append((float(cs.x[members[0]]), int(cs.terms[members[0]]), evicted))
    # provenance of the surviving members, grouped
    kept = order[keep_member]
    group_of = np.cumsum(start) - 1
    kept_group = group_of[keep_member]
    starts_o, ends_o = cs.origin_ptr[kept], cs.origin_ptr[kept + 1]
    gather = np.concatenate([np.arange(s, e) for s, e in zip(starts_o, ends_o)])
    per_group = np.bincount(kept_group, weights=ends_o - starts_o, minlength=len(starts)).astype(np.int64)
    merged = ConstraintSet(
        cs.x[order[starts]], lo, hi, ts[starts].copy(), wexp,
        np.concatenate([[0], np.cumsum(per_group)]).astype(np.int64),
        cs.origin_rung[gather], cs.origin_bits[gather], cs.origin_value[gather], cs.k_max)
    return merged, conflicts
