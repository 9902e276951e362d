"""Stage parameter selection and the admissibility inequality panel.

Each stage n fixes a prime p_n, a modulus d_n, and a rung count a_n (the
largest multiple of p_n that fits in the stage-n window).  The derived
quantities

    w_n = a_1 * ... * a_n        (rungs swept by a full stage-n roll-over)
    v_n = w_1 + ... + w_n
    beta_n = (1 + 2(v_{n-1} + p_n w_{n-1})) / d_n

control every measure bound downstream.  Strict mode additionally enforces
a panel of per-stage inequalities whose sum certifies that both cocycle
entropy ledgers stay finite as the construction deepens; the panel replaces
each infinite-sum condition by a summable per-term majorant (2^{-n}-type
right-hand sides), which implies the original condition.  Relaxed mode
checks only structural feasibility and records the analytic panel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from . import ladders
from .errors import DepthCapExceeded, InfeasibleSchedule
from .odometer import FactorStream, primes
from .reporting import CheckResult, Report, check_le, value_str


def prime_sequence(policy="diagonal"):
    """Yield the stage primes p_1, p_2, ...

    The default diagonal policy emits 2; 2,3; 2,3,5; 2,3,5,7; ... so every
    prime appears infinitely often (this is what makes the target odometer
    universal).  ``constant:p`` repeats one prime; ``list:a,b,c`` cycles an
    explicit list.
    """
    if policy == "diagonal":
        def gen():
            known = []
            g = primes()
            while True:
                known.append(next(g))
                yield from known
        return gen()
    if policy.startswith("constant:"):
        p = int(policy.split(":", 1)[1])
        def const():
            while True:
                yield p
        return const()
    if policy.startswith("list:"):
        vals = [int(x) for x in policy.split(":", 1)[1].split("+")]
        def cyc():
            while True:
                yield from vals
        return cyc()
    raise ValueError(f"unknown prime policy: {policy}")


@dataclass(frozen=True)
class ScheduleRow:
    """All stage-n parameters and derived quantities, masses exact."""

    n: int
    p: int
    d: int
    a: int
    w: int
    v: int
    beta: Fraction

    def as_json(self):
        return {"n": self.n, "p": self.p, "d": self.d, "a": self.a,
                "w": self.w, "v": self.v, "beta": value_str(self.beta)}


@dataclass(frozen=True)
class ScheduleMode:
    kind: str = "relaxed"          # "strict" | "relaxed"
    slack: float = 1.0             # multiplies analytic right-hand sides

    def __post_init__(self):
        if self.kind not in ("strict", "relaxed"):
            raise ValueError("mode must be strict or relaxed")
        if self.slack <= 0:
            raise ValueError("slack must be positive")

    @classmethod
    def parse(cls, text: str) -> "ScheduleMode":
        kind, _, slack = text.partition(":")
        return cls(kind, float(slack) if slack else 1.0)


def derive_a(r: int, p: int) -> int:
    """Largest multiple of p no greater than r; requires r >= p."""
    if r < p:
        raise ValueError(f"window too small: r={r} < p={p}")
    return p * (r // p)


def make_row(prev: "ScheduleRow | None", n, p, d, a) -> ScheduleRow:
    w_prev = prev.w if prev else 1
    v_prev = prev.v if prev else 0
    w = a * w_prev
    beta = Fraction(1 + 2 * (v_prev + p * w_prev), d)
    return ScheduleRow(n=n, p=p, d=d, a=a, w=w, v=v_prev + w, beta=beta)


def _theta(rows, n, d_m_minus_1) -> int:
    """(1 + w_{n-1}) * d_{m-1}; rows is the list through stage n-1 or more."""
    w_prev = rows[n - 2].w if n >= 2 else 1
    return (1 + w_prev) * d_m_minus_1


def lambda_prev(rows, n) -> int:
    """2 * 4 w_{n-1}^2 d_{n-1} + 1, the displacement-value budget on shell n."""
    if n == 1:
        return 2 * 4 + 1
    w_prev = rows[n - 2].w
    d_prev = rows[n - 2].d
    return 8 * w_prev * w_prev * d_prev + 1


def crude_bound(rows, n) -> int:
    """4 w_{n-1}^2 d_{n-1}, the hard displacement bound on shell n."""
    if n == 1:
        return 4
    return 4 * rows[n - 2].w ** 2 * rows[n - 2].d


def _phi(x: float, theta: float) -> float:
    """-x * ln(x / theta); the uniform-distribution entropy majorant."""
    if x <= 0:
        return 0.0
    return -x * math.log(x / theta)


def _stage_checks(rows, n, *, lookahead=True, slack=1.0):
    """Analytic panel rows attributable to stage n (given rows[0..n-1]).

    Emitted per stage so that the modulus search can decide feasibility:
    every returned inequality either involves d_n or is the stage-(n+1)
    head term that only stage n can still fix.
    """
    checks = []
    row = rows[n - 1]
    w_prev = rows[n - 2].w if n >= 2 else 1
    d_prev = rows[n - 2].d if n >= 2 else 1

    # summable majorant: beta_n * ln(9 w_n^2 d_n / beta_n) <= 2^-n
    lhs = float(row.beta) * math.log(9 * row.w ** 2 * row.d / float(row.beta))
    checks.append(check_le("entropy-sum-majorant", f"n={n}", lhs, slack * 2.0 ** -n, tol=0.0))

    # head term of the stage-(n+1) ledger: -(1/w_n) ln(1/(w_n theta)) < 2^-(n+3)
    if lookahead:
        theta = (1 + row.w) * row.d
        lhs = -(1.0 / row.w) * math.log(1.0 / (row.w * theta))
        checks.append(check_le("ledger-head-term", f"n={n + 1}", lhs,
                               slack * 2.0 ** -(n + 3), tol=0.0))

    if n >= 2:
        x = (rows[n - 2].v + row.p * w_prev) / row.d
        theta_next = _theta(rows, n, row.d)
        lhs = -x * math.log(x / theta_next)
        checks.append(check_le("ledger-next-term", f"n={n}", lhs,
                               slack * 2.0 ** -(n + 2), tol=0.0))

        # stage-1 ledger tail term at m = n: -(a_1/d_m) ln(a_1/d_m^2) <= 2^-m
        a1 = rows[0].a
        lhs = -(a1 / row.d) * math.log(a1 / (row.d * float(row.d)))
        checks.append(check_le("stage1-tail-term", f"m={n}", lhs,
                               slack * 2.0 ** -n, tol=0.0))

    # ledger tail terms that use d_n as their d_{m-1}: m = n+1, p <= m-2
    m = n + 1
    if m >= 4:
        for p_idx in range(1, m - 1):
            if p_idx > len(rows):
                break
            vp = rows[p_idx - 1].v
            theta = _theta(rows, p_idx, row.d)
            x = vp / row.d
            lhs = -x * math.log(x / theta)
            checks.append(check_le("ledger-tail-term", f"m={m},p={p_idx}", lhs,
                                   slack * 2.0 ** -(m + 1), tol=0.0))

    # density ratio w_n / d_n in [1/2, 1]
    ratio = Fraction(row.w, row.d)
    checks.append(check_le("density-ratio-low", f"n={n}", Fraction(1, 2), ratio))
    checks.append(check_le("density-ratio-high", f"n={n}", ratio, Fraction(1)))
    return checks


def check_inequalities(rows, mode: ScheduleMode) -> Report:
    """Evaluate the full analytic panel over a completed schedule prefix.

    Strict mode raises when any row fails; relaxed mode records outcomes
    only.  The prefix sum of the summable majorants is reported as well,
    since its boundedness by 1 is what the per-term bounds certify.
    """
    report = Report()
    for n in range(1, len(rows) + 1):
        report.extend(_stage_checks(rows, n, lookahead=(n < len(rows) or mode.kind == "strict"),
                                    slack=mode.slack))
    prefix = math.fsum(float(r.beta) * math.log(9 * r.w ** 2 * r.d / float(r.beta))
                       for r in rows)
    report.add(check_le("entropy-majorant-prefix-sum", f"n<={len(rows)}", prefix,
                        mode.slack * 1.0, tol=0.0))
    if mode.kind == "strict":
        report.raise_on_failure(InfeasibleSchedule, "strict schedule panel failed")
    return report


def propose_d(state: "ladders.ConstructionState", stream: FactorStream, p_n: int,
              mode: ScheduleMode, *, min_quotient=12, depth_cap=10 ** 6,
              max_factors=64) -> int:
    """Choose d_n by greedy factor accumulation and commit stage column n.

    Factors are taken from the stream until the candidate modulus passes
    the structural gate: quotient > 2, a floor on the first quotient so
    worked examples stay readable, window size r_{n,n} >= p_n (verified by
    a dry run of the stage column), and a nonempty ladder at stage
    (n-1, n).  Strict mode additionally requires the stage-n analytic
    panel.  The first admissible candidate is committed; a trial column is
    built per candidate and discarded on failure.
    """
    n = state.depth + 1
    d_prev = state.modulus(n - 1)
    quotient = 1
    last_failures = []
    for _ in range(max_factors):
        quotient *= stream.next_factor()
        cand = d_prev * quotient
        if cand > depth_cap:
            raise DepthCapExceeded(
                f"stage {n}: candidate modulus {cand} exceeds depth cap {depth_cap}")
        if quotient <= 2:
            continue
        if n == 1 and quotient < min_quotient:
            continue
        try:
            trial_stages, a_n = ladders.trial_column(state, cand, p_n, derive_a)
        except ladders.StageInfeasible as exc:
            last_failures = [CheckResult("structural", f"n={n}", str(exc), "ok", False)]
            continue
        row = make_row(state.rows[-1] if state.rows else None, n, p_n, cand, a_n)
        if mode.kind == "strict":
            checks = _stage_checks(state.rows + [row], n, slack=mode.slack)
            if any(not c.passed for c in checks):
                last_failures = [c for c in checks if not c.passed]
                continue
        state.commit_stage(cand, row, trial_stages)
        return cand
    raise InfeasibleSchedule(
        f"stage {n}: no admissible modulus within {max_factors} factors",
        failures=last_failures)
