"""Randomised sampling driver that turns a constraint set into a progressive polynomial.

Each round draws a weighted sample of 6 k^2 constraints, solves it exactly,
rounds the coefficients to binary64 and scans the whole set with the same
binary64 Horner kernel the runtime uses.  Rounds whose violators carry at
most 1/(3k) of the total weight double those violators' weights.  When the
budget runs out the driver escalates: more terms for the small rungs, more
terms overall, then two and four sub-domains.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .constraints import (
    BuildResult, ConstraintSet, Rung, SpecialCase, build_progressive_constraints, check_ladder,
    merge_duplicate_inputs,
)
from .lp import LpProblem, coefficients_to_binary64, solve
from .oracle import FunctionId
from .runtime import ProgressivePolynomial, exponents_for, horner_eval_array

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    function: FunctionId
    ladder: tuple[Rung, ...]
    schedule: str | None = None          # "dense" or "odd"; default odd for logs, dense for exponentials
    max_terms: int = 8                   # escalation ceiling for k_max
    sample_size_factor: int = 6
    max_iterations: int = 200
    special_case_limit: int = 4
    max_subdomains: int = 4
    rng_seed: int = 0
    interval_restriction_retries: int = 8
    restriction_step: str = "ulp"        # or "overshoot"
    infeasible_streak: int = 10          # consecutive infeasible samples that end an attempt early
    violation_fraction: Fraction | None = None  # lucky threshold; default 1/(3 k_max)

    def __post_init__(self):
        check_ladder(self.ladder)
        if self.special_case_limit < 0:
            raise ValueError("special_case_limit must be nonnegative")
        if self.max_subdomains not in (1, 2, 4):
            raise ValueError("max_subdomains must be 1, 2 or 4")
        if self.restriction_step not in ("ulp", "overshoot"):
            raise ValueError("restriction_step must be 'ulp' or 'overshoot'")
        if self.k_max > self.max_terms:
            raise ValueError("ladder asks for more terms than max_terms")
        if self.violation_fraction is not None:
            q = Fraction(self.violation_fraction)
            if not 0 < q < 1:
                raise ValueError("violation_fraction must lie strictly between 0 and 1")
            object.__setattr__(self, "violation_fraction", q)
        object.__setattr__(self, "ladder", tuple(self.ladder))

    @property
    def k_max(self) -> int:
        return max(r.terms for r in self.ladder)

    @property
    def resolved_schedule(self) -> str:
        return self.schedule or ("odd" if self.function.is_log else "dense")


@dataclass
class IterationRecord:
    attempt: int
    subdomain: int
    iteration: int
    n_v: int
    w_s: int
    w_v: int
    lucky: bool
    infeasible: bool
    restrictions: int
    inputs_violated: int = -1  # original inputs behind the violated rows (-1: no candidate)

    def to_dict(self) -> dict:
        # weights can exceed 64 bits; keep them exact as strings of digits when large
        d = self.__dict__.copy()
        for k in ("w_s", "w_v"):
            if d[k] >= 2 ** 53:
                d[k] = str(d[k])
        return d


@dataclass
class GenerationReport:
    success: bool = False
    iterations: int = 0
    lucky: int = 0
    n_v: int = 0
    wall_time: float = 0.0
    trace: list[IterationRecord] = field(default_factory=list)
    attempts: list[dict] = field(default_factory=list)
    forced_special_cases: int = 0
    merge_conflicts: int = 0
    constraints: int = 0
    final_terms: dict[str, int] = field(default_factory=dict)
    subdomains: int = 1

    def to_dict(self, with_trace: bool = True) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "trace"}
        if with_trace:
            d["trace"] = [r.to_dict() for r in self.trace]
        return d


class GenerationFailed(RuntimeError):
    def __init__(self, message: str, report: GenerationReport):
        super().__init__(message)
        self.report = report


# -- sampling ---------------------------------------------------------------------------------


def weighted_random_sample(weight_exp: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of the ``size`` largest keys u**(1/w), with w = 2**weight_exp and fresh u per call.

    Keys are compared through log(u) / w, which is monotone in the key and
    does not underflow for large weights.
    """
    n = len(weight_exp)
    if size > n:
        raise ValueError("sample larger than the population")
    if size == n:
        return np.arange(n)
    u = rng.random(n)
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    logkey = np.ldexp(np.log(u), -np.asarray(weight_exp, dtype=np.int64))
    idx = np.argpartition(-logkey, size - 1)[:size]
    return np.sort(idx)


def is_lucky(w_v: int, w_s: int, k: int, fraction: Fraction | None = None) -> bool:
    """w_v <= w_s / (3k - 1), i.e. the violators hold at most 1/(3k) of the total weight.

    Another ``fraction`` p replaces 1/(3k): w_v <= p (w_v + w_s).
    """
    if fraction is None:
        return w_v * (3 * k - 1) <= w_s
    return w_v * (fraction.denominator - fraction.numerator) <= w_s * fraction.numerator


# -- one round --------------------------------------------------------------------------------


@dataclass
class SampleOutcome:
    coefficients: list[float] | None
    violated: np.ndarray
    n_v: int
    w_s: int
    w_v: int
    lucky: bool
    restrictions: int

    @property
    def infeasible(self) -> bool:
        return self.coefficients is None


def evaluate_rows(coeffs: Sequence[float], cs: ConstraintSet, schedule: str, idx: np.ndarray | None = None) -> np.ndarray:
    x = cs.x if idx is None else cs.x[idx]
    t = cs.terms if idx is None else cs.terms[idx]
    return horner_eval_array(np.asarray(coeffs, dtype=np.float64), t, x, schedule)


def violations(coeffs: Sequence[float], cs: ConstraintSet, schedule: str) -> np.ndarray:
    v = evaluate_rows(coeffs, cs, schedule)
    return ~((v >= cs.lo) & (v <= cs.hi))


def solve_sample(sample: np.ndarray, cs: ConstraintSet, schedule: str, lo: np.ndarray, hi: np.ndarray,
                 retries: int, step: str = "ulp", fraction: Fraction | None = None) -> SampleOutcome:
    """Solve, round, re-check the sample in binary64, then scan the whole set.

    ``lo`` and ``hi`` are the working bounds; inward restrictions made here
    persist in them.  The scan and the lucky test use the original bounds of
    ``cs``.  Weights are doubled in place on a lucky round.  ``step`` is
    "ulp" (one ulp inward per retry) or "overshoot" (one ulp beyond the
    amount by which the candidate missed).
    """
    exps = exponents_for(schedule, cs.k_max)
    restrictions = 0
    coeffs = None
    while True:
        if np.any(lo[sample] > hi[sample]):
            break
        sol = solve(LpProblem.from_arrays(exps, cs.x[sample], cs.terms[sample], lo[sample], hi[sample]))
        if not sol.feasible:
            break
        cand = coefficients_to_binary64(sol)
        v = evaluate_rows(cand, cs, schedule, sample)
        # judged against the true intervals; only the LP sees the restricted ones
        below = v < cs.lo[sample]
        above = v > cs.hi[sample]
        if not (below.any() or above.any()):
            coeffs = cand
            break
        if restrictions >= retries:
            break
        restrictions += 1
        rows_b, rows_a = sample[below], sample[above]
        step_lo = np.nextafter(lo[rows_b], np.inf)
        step_hi = np.nextafter(hi[rows_a], -np.inf)
        if step == "overshoot":
            # also move by the observed miss, so the rounded coefficients actually change
            step_lo = np.maximum(step_lo, np.nextafter(lo[rows_b] + (cs.lo[rows_b] - v[below]), np.inf))
            step_hi = np.minimum(step_hi, np.nextafter(hi[rows_a] - (v[above] - cs.hi[rows_a]), -np.inf))
        lo[rows_b] = step_lo
        hi[rows_a] = step_hi
    if coeffs is None:
        return SampleOutcome(None, np.zeros(0, dtype=np.int64), -1, 0, 0, False, restrictions)
    bad = violations(coeffs, cs, schedule)
    w_v = cs.total_weight(bad)
    w_s = cs.total_weight(~bad)
    lucky = is_lucky(w_v, w_s, cs.k_max, fraction)
    violated = np.flatnonzero(bad)
    if lucky and len(violated):
        cs.weight_exp[violated] += 1
    return SampleOutcome(coeffs, violated, len(violated), w_s, w_v, lucky, restrictions)


# -- driver -----------------------------------------------------------------------------------


@dataclass
class SolveResult:
    coefficients: list[float] | None
    violated: np.ndarray
    iterations: int


def sample_loop(cs: ConstraintSet, schedule: str, cfg: GeneratorConfig, rng: np.random.Generator,
                report: GenerationReport, attempt: int = 0, subdomain: int = 0,
                stop_below: int | None = None, raw: ConstraintSet | None = None) -> SolveResult:
    """Run rounds until a candidate leaves fewer than ``stop_below`` inputs violated, or the budget is spent.

    With ``raw`` (the unmerged rows behind ``cs``) violations are counted per
    original input, which is what ends up in the special-case table;
    ``violated`` then indexes ``raw``.
    """
    limit = cfg.special_case_limit if stop_below is None else stop_below
    cs.reset_weights()
    lo, hi = cs.lo.copy(), cs.hi.copy()
    k = cs.k_max
    size = min(cfg.sample_size_factor * k * k, len(cs))
    streak = 0
    for it in range(1, cfg.max_iterations + 1):
        sample = weighted_random_sample(cs.weight_exp, size, rng)
        out = solve_sample(sample, cs, schedule, lo, hi, cfg.interval_restriction_retries, cfg.restriction_step,
                           cfg.violation_fraction)
        report.iterations += 1
        report.lucky += out.lucky
        report.trace.append(IterationRecord(attempt, subdomain, it, out.n_v, out.w_s, out.w_v, out.lucky,
                                            out.infeasible, out.restrictions))
        if out.infeasible:
            streak += 1
            if streak >= cfg.infeasible_streak:
                break
            continue
        streak = 0
        violated = out.violated if raw is None else np.flatnonzero(violations(out.coefficients, raw, schedule))
        report.trace[-1].inputs_violated = len(violated)
        if len(violated) < limit:
            return SolveResult(out.coefficients, violated, it)
    return SolveResult(None, np.zeros(0, dtype=np.int64), cfg.max_iterations)


def escalation_plan(cfg: GeneratorConfig) -> list[tuple[tuple[int, ...], int]]:
    """(term counts per rung, number of sub-domains) in the order they are tried."""
    terms = [r.terms for r in cfg.ladder]
    seq = [tuple(terms)]
    cur = list(terms)
    while True:
        small = [j for j in range(len(cur) - 1) if cur[j] < cur[-1]]
        if small:
            j = small[0]
            cur[j] += 1
            for i in range(j + 1, len(cur)):
                cur[i] = max(cur[i], cur[j])
        elif cur[-1] < cfg.max_terms:
            cur[-1] += 1
        else:
            break
        seq.append(tuple(cur))
    plan = [(t, 1) for t in seq]
    for nsub in (2, 4):
        if nsub <= cfg.max_subdomains:
            plan += [(t, nsub) for t in seq]
    return plan


def split_points(x: np.ndarray, nsub: int) -> tuple[float, ...]:
    """Median split (and medians of the halves for four) of the reduced inputs."""
    if nsub == 1:
        return ()
    xs = np.sort(x)
    mid = float(xs[len(xs) // 2])
    if nsub == 2:
        return (mid,)
    left, right = xs[xs < mid], xs[xs >= mid]
    return (float(left[len(left) // 2]), mid, float(right[len(right) // 2]))


def prepare_constraints(cfg: GeneratorConfig) -> BuildResult:
    return build_progressive_constraints(cfg.function, cfg.ladder, cfg.k_max)


def generate(cfg: GeneratorConfig, build: BuildResult | None = None,
             progress: Callable[[str], None] | None = None) -> tuple[ProgressivePolynomial, GenerationReport]:
    t0 = time.perf_counter()
    report = GenerationReport()
    schedule = cfg.resolved_schedule
    build = build or prepare_constraints(cfg)
    report.forced_special_cases = len(build.forced)
    rng = np.random.default_rng(cfg.rng_seed)
    say = progress or (lambda msg: log.info(msg))
    for attempt, (terms, nsub) in enumerate(escalation_plan(cfg)):
        mapping = dict(enumerate(terms))
        relabelled = build.constraints.with_terms(mapping)
        cs, conflicts = merge_duplicate_inputs(relabelled)
        ladder = tuple(replace(r, terms=t) for r, t in zip(cfg.ladder, terms))
        say(f"attempt {attempt}: terms {list(terms)}, {nsub} sub-domain(s), {len(cs)} constraints, "
            f"{len(conflicts)} conflicts")
        splits = split_points(cs.x, nsub)
        part = np.searchsorted(np.array(splits), cs.x, side="right")
        evicted = {(c.rung, c.bits) for _, _, cases in conflicts for c in cases}
        keep_raw = np.ones(len(relabelled), dtype=bool)
        if evicted:
            keep_raw = np.array([(int(r), int(b)) not in evicted for r, b in
                                 zip(relabelled.origin_rung, relabelled.origin_bits)])
        raw_part = np.searchsorted(np.array(splits), relabelled.x, side="right")
        vectors, special = [], {}
        ok = True
        it_before = report.iterations
        for sub in range(nsub):
            sub_cs = cs.subset(np.flatnonzero(part == sub))
            if len(sub_cs) == 0:
                vectors.append([0.0] * sub_cs.k_max)
                continue
            raw = relabelled.subset(np.flatnonzero((raw_part == sub) & keep_raw))
            res = sample_loop(sub_cs, schedule, cfg, rng, report, attempt, sub, raw=raw)
            if res.coefficients is None:
                ok = False
                break
            vectors.append(res.coefficients)
            # full scan on return: everything outside the table is satisfied
            bad = violations(res.coefficients, raw, schedule)
            assert np.array_equal(np.flatnonzero(bad), res.violated)
            for j in res.violated:
                for o in raw.origins(int(j)):
                    special[(o.rung, o.bits)] = o.value
        report.attempts.append({"terms": list(terms), "subdomains": nsub, "success": ok,
                                "iterations": report.iterations - it_before, "conflicts": len(conflicts)})
        if not ok:
            continue
        n_v = len(special)
        for case in build.forced:
            special[(case.rung, case.bits)] = case.value
        for _, _, evicted in conflicts:
            for case in evicted:
                special[(case.rung, case.bits)] = case.value
        poly = ProgressivePolynomial(cfg.function, schedule, ladder, tuple(tuple(v) for v in vectors),
                                     splits, special)
        report.success = True
        report.n_v = n_v
        report.merge_conflicts = len(conflicts)
        report.constraints = len(cs)
        report.final_terms = {r.fmt.spelling: r.terms for r in ladder}
        report.subdomains = nsub
        report.wall_time = time.perf_counter() - t0
        return poly, report
    report.wall_time = time.perf_counter() - t0
    raise GenerationFailed(f"{cfg.function.value}: every escalation failed", report)


def accept_special_cases(poly: ProgressivePolynomial, violated: Sequence[SpecialCase]) -> ProgressivePolynomial:
    """Copy of ``poly`` whose special-case table also holds the given originals."""
    table = dict(poly.special_cases)
    for case in violated:
        table[(case.rung, case.bits)] = case.value
    return replace(poly, special_cases=table)


# -- synthetic full-rank systems --------------------------------------------------------------


def synthetic_constraints(k: int, n: int, rng: np.random.Generator, width: float = 2.0 ** -30) -> tuple[ConstraintSet, np.ndarray]:
    """Intervals of half-width ``width`` around a random degree k-1 polynomial at n points of [-1, 1]."""
    coeffs = rng.uniform(-1, 1, k)
    x = np.unique(rng.uniform(-1, 1, n))
    while len(x) < n:
        x = np.unique(np.concatenate([x, rng.uniform(-1, 1, n - len(x))]))
    v = horner_eval_array(coeffs, k, x)
    cs = ConstraintSet.from_arrays(x, v - width, v + width, k, k)
    return cs, coeffs


def run_synthetic(cs: ConstraintSet, seed: int, max_iterations: int = 10_000) -> tuple[bool, GenerationReport]:
    """Sampling loop alone (dense schedule, stop at zero violations)."""
    cfg = _SyntheticConfig(max_iterations)
    report = GenerationReport()
    t0 = time.perf_counter()
    res = sample_loop(cs, "dense", cfg, np.random.default_rng(seed), report, stop_below=1)
    report.wall_time = time.perf_counter() - t0
    report.success = res.coefficients is not None
    report.n_v = 0 if report.success else -1
    return report.success, report


@dataclass(frozen=True)
class _SyntheticConfig:
    max_iterations: int
    sample_size_factor: int = 6
    special_case_limit: int = 1
    interval_restriction_retries: int = 8
    restriction_step: str = "ulp"
    infeasible_streak: int = 10**9
    violation_fraction: Fraction | None = None
