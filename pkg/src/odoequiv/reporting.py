"""Check bookkeeping shared by all verification layers.

Every verified inequality or identity becomes a ``CheckResult`` carrying the
computed quantity and the bound it was compared against, both rendered
exactly (rationals as ``p/q``) so that reports are auditable and replayable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


def rat_str(x: Fraction) -> str:
    """Serialize a rational as ``p/q`` in lowest terms (Fraction normalizes)."""
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_rat(text: str) -> Fraction:
    num, _, den = text.partition("/")
    return Fraction(int(num), int(den or "1"))


def value_str(x) -> str:
    if isinstance(x, Fraction):
        return rat_str(x)
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass(frozen=True)
class CheckResult:
    name: str
    stage: str
    lhs: str
    rhs: str
    passed: bool

    def as_json(self):
        return {
            "name": self.name,
            "stage": self.stage,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "pass": self.passed,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["name"], obj["stage"], obj["lhs"], obj["rhs"], obj["pass"])


def check_le(name, stage, lhs, rhs, tol=0.0) -> CheckResult:
    """lhs <= rhs, exactly for rationals/ints, with tolerance for floats."""
    if isinstance(lhs, (Fraction, int)) and isinstance(rhs, (Fraction, int)):
        passed = lhs <= rhs
    else:
        passed = float(lhs) <= float(rhs) + tol
    return CheckResult(name, stage, value_str(lhs), value_str(rhs), passed)


def check_eq(name, stage, lhs, rhs) -> CheckResult:
    return CheckResult(name, stage, value_str(lhs), value_str(rhs), lhs == rhs)


def check_true(name, stage, condition, detail="") -> CheckResult:
    return CheckResult(name, stage, detail or "ok", "required", bool(condition))


class Report:
    """An ordered collection of check results."""

    def __init__(self, checks=()):
        self.checks = list(checks)

    def add(self, check: CheckResult):
        self.checks.append(check)
        return check

    def extend(self, checks):
        for c in checks:
            self.add(c)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_on_failure(self, error_cls, context=""):
        if not self.ok:
            names = ", ".join(f"{c.name}[{c.stage}]" for c in self.failures)
            raise error_cls(f"{context or 'checks failed'}: {names}")

    def lines(self):
        out = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            out.append(f"[{mark}] {c.name:<28} {c.stage:<12} {c.lhs} vs {c.rhs}")
        return out

    def as_json(self):
        return [c.as_json() for c in self.checks]
