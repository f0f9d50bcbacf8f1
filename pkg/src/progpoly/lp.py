"""Exact rational LP for sampled constraint systems.

The unknowns are the polynomial coefficients C_1..C_k (free variables); every
row ``lo <= sum_j C_j x^e_j <= hi`` over its first ``terms`` columns becomes two
inequalities ``a.C >= b`` with integer data.  We run a dual simplex in the
k-dimensional vertex form: the basis is k tight inequalities, the start is the
box corner ``C >= -BOX``, and the objective is lexicographic minimisation of
(C_1, ..., C_k), handled by carrying the dual multipliers as lexicographic
vectors.  Ties cannot happen in the lexicographic ratio test and every pivot
raises the lexicographic objective, so the method terminates whatever
violated row enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

BOX = 2 ** 64


@dataclass(frozen=True)
class LpRow:
    x: Fraction
    terms: int
    lower: Fraction
    upper: Fraction


@dataclass(frozen=True)
class LpProblem:
    exponents: tuple[int, ...]  # monomial exponent of each coefficient, e.g. (0, 1, 2) or (1, 3, 5)
    rows: tuple[LpRow, ...]

    @classmethod
    def from_arrays(cls, exponents: Sequence[int], x, terms, lower, upper) -> "LpProblem":
        rows = tuple(LpRow(Fraction(a), int(t), Fraction(lo), Fraction(hi))
                     for a, t, lo, hi in zip(x, terms, lower, upper))
        return cls(tuple(int(e) for e in exponents), rows)

    @property
    def unknowns(self) -> int:
        return len(self.exponents)


@dataclass(frozen=True)
class LpSolution:
    feasible: bool
    coefficients: tuple[Fraction, ...] = ()
    pivots: int = 0


def _dyadic(q: Fraction) -> tuple[int, int]:
    """q = n / 2**s (every binary64 value is dyadic)."""
    d = q.denominator
    s = d.bit_length() - 1
    if d != 1 << s:
        raise ValueError(f"{q} is not dyadic")
    return q.numerator, s


def _integer_rows(p: LpProblem) -> list[tuple[tuple[int, ...], int]]:
    """The inequalities a.C >= b, scaled to integers, in a fixed order."""
    k = p.unknowns
    out = []
    for row in p.rows:
        if not 1 <= row.terms <= k:
            raise ValueError("row term count out of range")
        n, s = _dyadic(row.x)
        exps = p.exponents[:row.terms]
        lo_n, lo_s = _dyadic(row.lower)
        hi_n, hi_s = _dyadic(row.upper)
        shift = max([s * e for e in exps] + [lo_s, hi_s])
        mono = tuple(n ** e << (shift - s * e) for e in exps) + (0,) * (k - row.terms)
        out.append((mono, lo_n << (shift - lo_s)))
        out.append((tuple(-m for m in mono), -(hi_n << (shift - hi_s))))
    for i in range(k):
        e = tuple(int(i == j) for j in range(k))
        out.append((e, -BOX))
        out.append((tuple(-v for v in e), -BOX))
    return out


def _lex_less(u: Sequence[Fraction], v: Sequence[Fraction]) -> bool:
    for a, b in zip(u, v):
        if a != b:
            return a < b
    return False


def solve(p: LpProblem, rule: str = "largest", max_pivots: int = 100_000) -> LpSolution:
    """Lexicographically smallest coefficient vector satisfying every row, or infeasible.

    ``rule`` picks the entering row among the violated ones: "largest" takes
    the largest scaled violation, "bland" the lowest index.  Either way the
    optimum is the same; only the pivot count differs.
    """
    if not p.rows:
        raise ValueError("empty problem")
    if rule not in ("largest", "bland"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    k = p.unknowns
    rows = _integer_rows(p)
    m = len(rows)
    norms = [max(abs(v) for v in a) for a, _ in rows]
    # box corner C_i >= -BOX: the last 2k rows alternate (lower, upper) per unknown
    basis = [m - 2 * k + 2 * i for i in range(k)]
    inv = [[Fraction(int(i == j)) for j in range(k)] for i in range(k)]  # inverse of the basis matrix
    pivots = 0
    while True:
        # vertex C = inv @ b_B kept as integers over a common positive denominator
        b_b = [rows[r][1] for r in basis]
        c = [sum(inv[i][j] * b_b[j] for j in range(k)) for i in range(k)]
        den = math.lcm(*(v.denominator for v in c))
        cn = [v.numerator * (den // v.denominator) for v in c]
        entering = None
        if rule == "bland":
            for r in range(m):
                a, b = rows[r]
                if sum(ai * ci for ai, ci in zip(a, cn) if ai) < b * den:
                    entering = r
                    break
        else:
            worst = 0.0
            for r in range(m):
                a, b = rows[r]
                gap = b * den - sum(ai * ci for ai, ci in zip(a, cn) if ai)
                if gap > 0:
                    # violation relative to the row's scale; ties keep the lower index
                    score = gap / (norms[r] * den)
                    if entering is None or score > worst:
                        entering, worst = r, score
        if entering is None:
            return LpSolution(True, tuple(c), pivots)
        if pivots >= max_pivots:
            raise RuntimeError("pivot limit reached")
        a_r = rows[entering][0]
        # a_r = sum_j mu_j a_{B_j}: mu = a_r @ inv
        mu = [sum(a_r[i] * inv[i][j] for i in range(k) if a_r[i]) for j in range(k)]
        leave, best = None, None
        for j in range(k):
            if mu[j] > 0:
                ratio = [inv[t][j] / mu[j] for t in range(k)]
                if best is None or _lex_less(ratio, best):
                    leave, best = j, ratio
        if leave is None:
            return LpSolution(False, (), pivots)
        # replace column `leave` of the inverse: new basis row a_r
        piv = mu[leave]
        col = [inv[i][leave] / piv for i in range(k)]
        for j in range(k):
            if j != leave and mu[j]:
                f = mu[j]
                for i in range(k):
                    inv[i][j] -= f * col[i]
        for i in range(k):
            inv[i][leave] = col[i]
        basis[leave] = entering
        pivots += 1


def coefficients_to_binary64(sol: LpSolution) -> list[float]:
    if not sol.feasible:
        raise ValueError("infeasible problem has no coefficients")
    return [float(c) for c in sol.coefficients]  # Fraction -> float rounds to nearest


def check_solution(p: LpProblem, coefficients: Sequence[Fraction]) -> bool:
    """Exact substitution of rational coefficients into every row."""
    for row in p.rows:
        v = sum(c * row.x ** e for c, e in zip(coefficients[:row.terms], p.exponents))
        if not row.lower <= v <= row.upper:
            return False
    return True
