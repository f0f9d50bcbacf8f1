"""The generated evaluator: special paths, reduction, truncated Horner, compensation, rounding.

A format is served by the smallest ladder rung at least as wide, using that
rung's term count.  Everything between reduction and the final rounding is
plain binary64 arithmetic with one rounding per operation (no fused
multiply-add).
"""

from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constraints import Rung, hex64, unhex64
from .formats import FpFormat, FpValue, RoundingMode, decode_array, encode_float, round_exact, round_float_array, to_float
from .oracle import FunctionId
from .reduction import (
    output_compensate, output_compensate_array, range_reduce, range_reduce_array, special_value,
    special_value_array,
)

ARTIFACT_VERSION = 1
SCHEDULES = ("dense", "odd")


def exponents_for(schedule: str, k: int) -> tuple[int, ...]:
    if schedule == "dense":
        return tuple(range(k))
    if schedule == "odd":
        return tuple(range(1, 2 * k, 2))
    raise ValueError(f"unknown schedule {schedule!r}")


def horner_eval(coeffs: Sequence[float], terms: int, x: float, schedule: str = "dense") -> float:
    """Horner over the first ``terms`` coefficients; the odd schedule runs it in x*x and multiplies by x."""
    if not 1 <= terms <= len(coeffs):
        raise ValueError("term count out of range")
    s = x * x if schedule == "odd" else x
    acc = coeffs[terms - 1]
    for j in range(terms - 2, -1, -1):
        acc = acc * s + coeffs[j]
    return acc * x if schedule == "odd" else acc


def horner_eval_array(coeffs: np.ndarray, terms: np.ndarray, x: np.ndarray, schedule: str = "dense") -> np.ndarray:
    """Row-wise ``horner_eval`` where every row may use its own coefficient vector and term count.

    ``coeffs`` is (k,) or (rows, k).
    """
    x = np.asarray(x, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        coeffs = np.broadcast_to(coeffs, (len(x), len(coeffs)))
    terms = np.broadcast_to(np.asarray(terms), x.shape)
    s = x * x if schedule == "odd" else x
    acc = np.zeros_like(x)
    started = np.zeros(x.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(coeffs.shape[1] - 1, -1, -1):
            active = terms > j
            acc = np.where(active, np.where(started, acc * s + coeffs[:, j], coeffs[:, j]), acc)
            started |= active
        return acc * x if schedule == "odd" else acc


def multiply_adds(terms: int, schedule: str) -> int:
    """Floating-point operations on the kernel path (the odd schedule adds x*x and the final *x)."""
    return terms - 1 + (2 if schedule == "odd" else 0)


@dataclass
class ProgressivePolynomial:
    function: FunctionId
    schedule: str
    rungs: tuple[Rung, ...]
    coefficients: tuple[tuple[float, ...], ...]  # one vector of k_max doubles per sub-domain
    split_points: tuple[float, ...] = ()
    special_cases: dict[tuple[int, int], float] = field(default_factory=dict)  # (rung, input bits) -> value

    def __post_init__(self):
        if len(self.coefficients) != len(self.split_points) + 1:
            raise ValueError("need one coefficient vector per sub-domain")
        if len({len(c) for c in self.coefficients}) != 1:
            raise ValueError("coefficient vectors differ in length")
        if max(r.terms for r in self.rungs) > self.k_max:
            raise ValueError("a rung asks for more terms than stored")

    @property
    def k_max(self) -> int:
        return len(self.coefficients[0])

    @property
    def exponent_bits(self) -> int:
        return self.rungs[0].fmt.exponent_bits

    @property
    def exponents(self) -> tuple[int, ...]:
        return exponents_for(self.schedule, self.k_max)

    def table_bytes(self) -> int:
        """Storage for coefficients, split points and the special-case table (4-byte keys, 8-byte values)."""
        return 8 * self.k_max * len(self.coefficients) + 8 * len(self.split_points) + 12 * len(self.special_cases)

    # -- canonical JSON ---------------------------------------------------------------------

    def to_dict(self) -> dict:
        body = {
            "artifact_version": ARTIFACT_VERSION,
            "function": self.function.value,
            "exponent_bits": self.exponent_bits,
            "schedule": self.schedule,
            "exponents": list(self.exponents),
            "rungs": [{"format": r.fmt.spelling, "terms": r.terms, "interval": r.interval_mode} for r in self.rungs],
            "split_points": [hex64(s) for s in self.split_points],
            "coefficients": [[hex64(c) for c in vec] for vec in self.coefficients],
            "special_cases": [{"rung": r, "input": "0x%X" % b, "value": hex64(v)}
                              for (r, b), v in sorted(self.special_cases.items())],
        }
        body["sha256"] = _digest(body)
        return body

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ProgressivePolynomial":
        d = dict(d)
        digest = d.pop("sha256", None)
        if digest is not None and digest != _digest(d):
            raise ValueError("artifact checksum mismatch")
        if d.get("artifact_version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported artifact version {d.get('artifact_version')}")
        rungs = tuple(Rung(FpFormat.parse(r["format"]), int(r["terms"]), r["interval"]) for r in d["rungs"])
        poly = cls(
            FunctionId.parse(d["function"]), d["schedule"], rungs,
            tuple(tuple(unhex64(c) for c in vec) for vec in d["coefficients"]),
            tuple(unhex64(s) for s in d["split_points"]),
            {(int(s["rung"]), int(s["input"], 16)): unhex64(s["value"]) for s in d["special_cases"]},
        )
        if list(poly.exponents) != list(d["exponents"]):
            raise ValueError("exponent schedule does not match the stored exponents")
        return poly

    @classmethod
    def from_json(cls, text: str) -> "ProgressivePolynomial":
        return cls.from_dict(json.loads(text))


def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class UnsupportedFormat(ValueError):
    pass


class CompiledFunction:
    """A loaded polynomial with format dispatch; read-only after construction."""

    def __init__(self, poly: ProgressivePolynomial):
        self.poly = poly
        self.function = poly.function
        self._coeffs = np.array(poly.coefficients, dtype=np.float64)
        self._splits = np.array(poly.split_points, dtype=np.float64)
        self._special = {}
        for (r, b), v in poly.special_cases.items():
            self._special.setdefault(r, {})[b] = v

    @classmethod
    def load(cls, path: Path) -> "CompiledFunction":
        return cls(ProgressivePolynomial.from_json(Path(path).read_text()))

    def rung_for(self, fmt: FpFormat) -> int:
        if fmt.exponent_bits != self.poly.exponent_bits:
            raise UnsupportedFormat(f"{fmt} does not share the exponent width of the ladder")
        for j, r in enumerate(self.poly.rungs):
            if r.fmt.total_bits >= fmt.total_bits:
                return j
        raise UnsupportedFormat(f"{fmt} is wider than every ladder format")

    def term_counts(self) -> dict[str, int]:
        return {r.fmt.spelling: r.terms for r in self.poly.rungs}

    def _rung(self, fmt: FpFormat, rung: int | None) -> int:
        j = self.rung_for(fmt) if rung is None else rung
        if self.poly.rungs[j].fmt.total_bits < fmt.total_bits or self.poly.rungs[j].fmt.exponent_bits != fmt.exponent_bits:
            raise UnsupportedFormat(f"rung {j} cannot serve {fmt}")
        return j

    def kernel_value(self, x: float, rung: int) -> float:
        """Binary64 result before the final rounding."""
        f = self.function
        sv = special_value(f, x, self.poly.exponent_bits)
        if sv is not None:
            return sv
        rfmt = self.poly.rungs[rung].fmt
        hit = self._special.get(rung, {}).get(encode_float(x, rfmt).bits)
        if hit is not None:
            return hit
        red = range_reduce(f, x)
        sub = bisect.bisect_right(self.poly.split_points, red.x_reduced)
        p = horner_eval(self.poly.coefficients[sub], self.poly.rungs[rung].terms, red.x_reduced, self.poly.schedule)
        return output_compensate(f, p, red.recon)

    def evaluate(self, x: FpValue, out_fmt: FpFormat | None = None, mode: RoundingMode = RoundingMode.RN,
                 rung: int | None = None) -> FpValue:
        out_fmt = out_fmt or x.fmt
        j = self._rung(max(x.fmt, out_fmt, key=lambda f: f.total_bits), rung)
        return round_exact(self.kernel_value(to_float(x), j), out_fmt, mode)

    def kernel_values(self, bits: np.ndarray, in_fmt: FpFormat, rung: int) -> np.ndarray:
        f = self.function
        bits = np.asarray(bits, dtype=np.int64)
        xs = decode_array(bits, in_fmt)
        out = np.empty(len(xs))
        sp, sval = special_value_array(f, xs, self.poly.exponent_bits)
        out[sp] = sval[sp]
        rest = np.flatnonzero(~sp)
        r = self.poly.rungs[rung]
        table = self._special.get(rung, {})
        if table:
            shift = r.fmt.total_bits - in_fmt.total_bits
            keys = np.array(sorted(table), dtype=np.int64)
            vals = np.array([table[k] for k in sorted(table)])
            rb = bits[rest] << shift
            pos = np.clip(np.searchsorted(keys, rb), 0, len(keys) - 1)
            hit = keys[pos] == rb
            out[rest[hit]] = vals[pos[hit]]
            rest = rest[~hit]
        t, recon = range_reduce_array(f, xs[rest])
        sub = np.searchsorted(self._splits, t, side="right")
        p = horner_eval_array(self._coeffs[sub], r.terms, t, self.poly.schedule)
        out[rest] = output_compensate_array(f, p, recon)
        return out

    def evaluate_array(self, bits: np.ndarray, in_fmt: FpFormat, out_fmt: FpFormat | None = None,
                       mode: RoundingMode = RoundingMode.RN, rung: int | None = None) -> np.ndarray:
        """Vectorised ``evaluate`` on encodings of ``in_fmt``; returns encodings of ``out_fmt``."""
        out_fmt = out_fmt or in_fmt
        j = self._rung(max(in_fmt, out_fmt, key=lambda f: f.total_bits), rung)
        return round_float_array(self.kernel_values(bits, in_fmt, j), 0, out_fmt, mode)


def export_compiled(cf: CompiledFunction | ProgressivePolynomial, path: Path, emit_source: bool = False) -> dict:
    """Write the canonical JSON artifact (and optionally a C source file next to it)."""
    poly = cf.poly if isinstance(cf, CompiledFunction) else cf
    path = Path(path)
    text = poly.to_json()
    path.write_text(text)
    info = {"artifact": str(path), "json_bytes": len(text.encode()), "table_bytes": poly.table_bytes(),
            "multiply_adds": {r.fmt.spelling: multiply_adds(r.terms, poly.schedule) for r in poly.rungs}}
    if emit_source:
        src = path.with_suffix(".c")
        src.write_text(emit_c_source(poly))
        info["source"] = str(src)
    return info


def emit_c_source(poly: ProgressivePolynomial) -> str:
    """Portable C99 coefficient table and truncated Horner kernel."""
    name = poly.function.value
    k = poly.k_max
    lines = [
        f"/* {name} kernel generated by progpoly; schedule {poly.schedule}, {len(poly.coefficients)} sub-domain(s) */",
        "#include <stddef.h>",
        "",
        f"static const double {name}_coeffs[{len(poly.coefficients)}][{k}] = {{",
    ]
    for vec in poly.coefficients:
        lines.append("    {" + ", ".join(float(c).hex() for c in vec) + "},")
    lines.append("};")
    if poly.split_points:
        lines.append(f"static const double {name}_splits[{len(poly.split_points)}] = {{"
                     + ", ".join(float(s).hex() for s in poly.split_points) + "};")
    lines.append("")
    lines.append("/* term counts per format: " + ", ".join(f"{r.fmt.spelling}={r.terms}" for r in poly.rungs) + " */")
    lines.append("/* compile without contraction (-ffp-contract=off) so no multiply-add is fused */")
    lines.append(f"static double {name}_kernel(double x, int terms) {{")
    lines.append("    size_t sub = 0;")
    if poly.split_points:
        lines.append(f"    while (sub < {len(poly.split_points)} && x >= {name}_splits[sub]) sub++;")
    lines.append(f"    const double *c = {name}_coeffs[sub];")
    lines.append("    double s = x * x;" if poly.schedule == "odd" else "    double s = x;")
    lines.append("    double acc = c[terms - 1];")
    lines.append("    for (int j = terms - 2; j >= 0; j--) acc = acc * s + c[j];")
    lines.append("    return acc * x;" if poly.schedule == "odd" else "    return acc;")
    lines.append("}")
    return "\n".join(lines) + "\n"
