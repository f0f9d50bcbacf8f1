"""Exhaustive conformance checks and statistical checks of the randomised machinery."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .formats import (
    FpFormat, RoundingMode, decode_array, round_float_array, round_ratio_array, IEEE_MODES,
)
from .generator import run_synthetic, synthetic_constraints, weighted_random_sample
from .oracle import FunctionId, cache_filename, oracle_arrays, read_cache, write_cache
from .runtime import CompiledFunction

MISMATCH_CAP = 100


@dataclass
class CheckResult:
    function: str
    fmt: str
    mode: str
    terms: int
    total: int
    mismatches: int
    samples: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


@dataclass
class ConformanceReport:
    results: list[CheckResult] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def extend(self, other: "ConformanceReport") -> None:
        self.results.extend(other.results)
        self.wall_time += other.wall_time

    def to_dict(self) -> dict:
        return {"passed": self.passed, "wall_time": self.wall_time, "results": [r.to_dict() for r in self.results]}


def expected_encodings(f: FunctionId, fmt: FpFormat, modes: Sequence[RoundingMode],
                       cache_dir: Path | None = None) -> dict[RoundingMode, np.ndarray]:
    """Oracle output encoding for every input encoding, per mode (disk cache when given)."""
    out, missing = {}, []
    for mode in modes:
        path = Path(cache_dir) / cache_filename(f, fmt, mode) if cache_dir else None
        if path is not None and path.exists():
            _, _, _, ins, outs = read_cache(path)
            table = np.empty(1 << fmt.total_bits, dtype=np.int64)
            table[ins] = outs
            out[mode] = table
        else:
            missing.append((mode, path))
    if missing:
        ys, st = oracle_arrays(f, fmt)
        for mode, path in missing:
            out[mode] = round_float_array(ys, st, fmt, mode)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                write_cache(path, f, fmt, mode, np.arange(len(ys)), out[mode])
    return out


def check_exhaustive(cf: CompiledFunction, fmt: FpFormat, modes: Iterable[RoundingMode],
                     rung: int | None = None, cache_dir: Path | None = None) -> ConformanceReport:
    """Compare every encoding of ``fmt`` (specials included) against the oracle."""
    t0 = time.perf_counter()
    modes = tuple(modes)
    j = cf.rung_for(fmt) if rung is None else rung
    bits = np.arange(1 << fmt.total_bits, dtype=np.int64)
    want = expected_encodings(cf.function, fmt, modes, cache_dir)
    kernel = cf.kernel_values(bits, fmt, j)
    report = ConformanceReport()
    width = (fmt.total_bits + 3) // 4
    for mode in modes:
        got = round_float_array(kernel, 0, fmt, mode)
        bad = np.flatnonzero(got != want[mode])
        samples = [{"input": f"0x{int(b):0{width}X}", "got": f"0x{int(got[b]):0{width}X}",
                    "expected": f"0x{int(want[mode][b]):0{width}X}"} for b in bad[:MISMATCH_CAP]]
        report.results.append(CheckResult(cf.function.value, fmt.spelling, mode.value,
                                          cf.poly.rungs[j].terms, len(bits), len(bad), samples))
    report.wall_time = time.perf_counter() - t0
    return report


def check_progressive(cf: CompiledFunction, cache_dir: Path | None = None) -> ConformanceReport:
    """Each rung at its own truncated term count, under the modes its interval mode guarantees."""
    rungs = cf.poly.rungs
    for a, b in zip(rungs, rungs[1:]):
        if a.terms > b.terms:
            raise AssertionError("term counts decrease along the ladder")
    report = ConformanceReport()
    for j, r in enumerate(rungs):
        report.extend(check_exhaustive(cf, r.fmt, r.guaranteed_modes, rung=j, cache_dir=cache_dir))
    return report


def sweep(cf: CompiledFunction, lo_bits: int | None = None, modes: Sequence[RoundingMode] = IEEE_MODES,
          cache_dir: Path | None = None) -> ConformanceReport:
    """Every F(k, E) up to the widest rung, all with the widest rung's full term count."""
    top = len(cf.poly.rungs) - 1
    e = cf.poly.exponent_bits
    n = cf.poly.rungs[top].fmt.total_bits
    lo_bits = lo_bits or e + 2
    report = ConformanceReport()
    for k in range(lo_bits, n + 1):
        report.extend(check_exhaustive(cf, FpFormat(k, e), modes, rung=top, cache_dir=cache_dir))
    return report


# -- randomised machinery ---------------------------------------------------------------------


def _one_synthetic(args):
    k, n, seed, max_iterations = args
    rng = np.random.default_rng([k, n, seed])
    cs, _ = synthetic_constraints(k, n, rng)
    ok, rep = run_synthetic(cs, seed, max_iterations)
    return {"k": k, "n": n, "seed": seed, "success": ok, "iterations": rep.iterations,
            "lucky": rep.lucky, "wall_time": rep.wall_time}


def convergence_bench(ks: Sequence[int], ns: Sequence[int], seeds: int, max_iterations: int = 5000,
                      workers: int | None = None) -> dict:
    """Iteration counts and lucky frequency of the sampling loop on full-rank synthetic systems."""
    jobs = [(k, n, s, max_iterations) for k in ks for n in ns for s in range(seeds)]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_one_synthetic, jobs))
    else:
        runs = [_one_synthetic(j) for j in jobs]
    groups = []
    for k in ks:
        for n in ns:
            rs = [r for r in runs if r["k"] == k and r["n"] == n]
            its = [r["iterations"] for r in rs]
            total = sum(its)
            lucky = sum(r["lucky"] for r in rs)
            frac = lucky / total
            sigma = math.sqrt(0.25 / total)
            bound = 6 * k * math.log(n)
            groups.append({
                "k": k, "n": n, "seeds": len(rs),
                "success_rate": sum(r["success"] for r in rs) / len(rs),
                "median_iterations": float(np.median(its)),
                "quantiles": {q: float(np.quantile(its, q)) for q in (0.1, 0.5, 0.9)},
                "bound": bound,
                "lucky_fraction": frac, "lucky_floor": 0.5 - 3 * sigma,
                "passed": (all(r["success"] for r in rs) and float(np.median(its)) <= bound
                           and frac >= 0.5 - 3 * sigma),
            })
    return {"groups": groups, "runs": runs, "passed": all(g["passed"] for g in groups)}


def sampling_law(trials: int = 10_000, seed: int = 0) -> dict:
    """How often a weight-2 item beats a weight-1 item in size-1 samples (expected 2/3)."""
    rng = np.random.default_rng(seed)
    w = np.array([1, 0])  # weight exponents: weights 2 and 1
    wins = sum(int(weighted_random_sample(w, 1, rng)[0] == 0) for _ in range(trials))
    p = 2 / 3
    sigma = math.sqrt(p * (1 - p) / trials)
    freq = wins / trials
    return {"trials": trials, "frequency": freq, "expected": p, "sigma": sigma,
            "passed": abs(freq - p) <= 3 * sigma}


# -- round-to-odd double rounding ----------------------------------------------------------------


def _boundary_rationals(fmt: FpFormat):
    """Every positive finite value of fmt, plus just below and just above each, as num/den * 2**exp."""
    bits = np.arange(1, fmt.inf_bits, dtype=np.int64)
    mb = fmt.mantissa_bits
    e = bits >> mb
    sig = np.where(e == 0, bits, (bits & ((1 << mb) - 1)) | (1 << mb))
    exp = np.where(e == 0, fmt.emin - mb, e - fmt.bias - mb)
    nums = np.concatenate([sig, (sig << 18) - 1, (sig << 18) + 1])
    exps = np.concatenate([exp, exp - 18, exp - 18])
    return nums, np.ones_like(nums), exps


def ro_theorem_check(n: int = 19, exponent_bits: int = 8, samples: int = 1_000_000, seed: int = 0,
                     chunk: int = 250_000) -> dict:
    """Rounding via round-to-odd at n+2 bits equals direct rounding into every F(k, E), E+1 < k <= n.

    Inputs: random rationals across the whole range, and every value of
    F(n+1, E) (which holds all boundaries and midpoints of the narrower
    formats) with neighbours on both sides, in both signs.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ro_fmt = FpFormat(n + 2, exponent_bits)
    bias = (1 << (exponent_bits - 1)) - 1
    b_num, b_den, b_exp = _boundary_rationals(FpFormat(n + 1, exponent_bits))
    r_num = rng.integers(1, 1 << 31, samples)
    r_den = rng.integers(1, 1 << 31, samples)
    r_exp = rng.integers(-bias - 40, bias + 3, samples)
    num = np.concatenate([r_num, b_num, b_num])
    den = np.concatenate([r_den, b_den, b_den])
    exp = np.concatenate([r_exp, b_exp, b_exp])
    neg = np.concatenate([rng.random(samples) < 0.5, np.zeros(len(b_num), bool), np.ones(len(b_num), bool)])
    failures, count, checked = [], 0, 0
    ks = range(exponent_bits + 2, n + 1)
    for s in range(0, len(num), chunk):
        sl = slice(s, s + chunk)
        ro = round_ratio_array(neg[sl], num[sl], den[sl], exp[sl], ro_fmt, RoundingMode.RO)
        y = decode_array(ro, ro_fmt)
        for k in ks:
            fmt = FpFormat(k, exponent_bits)
            for mode in IEEE_MODES:
                direct = round_ratio_array(neg[sl], num[sl], den[sl], exp[sl], fmt, mode)
                twice = round_float_array(y, 0, fmt, mode)
                bad = np.flatnonzero(direct != twice)
                checked += len(direct)
                count += len(bad)
                for b in bad[:max(0, 10 - len(failures))]:
                    i = s + int(b)
                    failures.append({"k": k, "mode": mode.value, "neg": bool(neg[i]), "num": int(num[i]),
                                     "den": int(den[i]), "exp": int(exp[i])})
    return {"n": n, "exponent_bits": exponent_bits, "inputs": int(len(num)), "roundings": checked,
            "failures": count, "examples": failures, "passed": count == 0, "wall_time": time.perf_counter() - t0}
