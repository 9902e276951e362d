"""Supernatural numbers, factor streams, and finite cyclic odometer models.

An odometer is determined by a supernatural number q = prod_p p^{k_p}.  At
finite truncation we work in the cyclic quotient Z/d_M with the canonical
tower decomposition: level i of the depth-m tower is the set of points that
need i forward steps to reach the tower base, so the transformation T sends
level i to level i-1 (mod d_m).  Deeper towers refine shallower ones and
every refinement preserves measure exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import StreamExhausted
from .measure import LevelSet

INF = math.inf


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def primes():
    """Yield 2, 3, 5, 7, ... indefinitely."""
    n = 2
    while True:
        if _is_prime(n):
            yield n
        n += 1


class SupernaturalNumber:
    """A formal product prod_p p^{k_p} with k_p in {0, 1, ..., inf}.

    Finite descriptions list explicit exponents plus a default applied to
    every unlisted prime (the default is 0 unless given as ``*:inf``).
    """

    def __init__(self, exponents, default=0):
        self.exponents = {}
        for p, k in dict(exponents).items():
            p = int(p)
            if not _is_prime(p):
                raise ValueError(f"{p} is not prime")
            if k != INF and (int(k) != k or k < 0):
                raise ValueError(f"bad exponent for {p}: {k}")
            if k != 0:
                self.exponents[p] = k if k == INF else int(k)
        if default not in (0, INF):
            raise ValueError("default exponent must be 0 or inf")
        self.default = default

    @classmethod
    def parse(cls, text: str) -> "SupernaturalNumber":
        """Parse ``"2:inf,3:4"``; a ``*:inf`` entry sets the default."""
        exponents, default = {}, 0
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            key, _, val = part.partition(":")
            k = INF if val.strip().lower() == "inf" else int(val)
            if key.strip() == "*":
                default = k
            else:
                exponents[int(key)] = k
        return cls(exponents, default)

    def __str__(self):
        parts = [f"{p}:{'inf' if k == INF else k}" for p, k in sorted(self.exponents.items())]
        if self.default == INF:
            parts.append("*:inf")
        return ",".join(parts)

    def exponent(self, p: int):
        return self.exponents.get(p, self.default)

    @property
    def has_infinite_factor_count(self) -> bool:
        """Infinitely many prime factors counted with multiplicity."""
        return self.default == INF or any(k == INF for k in self.exponents.values())

    def admits_multiset(self, factors) -> bool:
        """Whether a finite multiset of primes divides q."""
        need = {}
        for f in factors:
            need[f] = need.get(f, 0) + 1
        return all(self.exponent(p) == INF or need[p] <= self.exponent(p) for p in need)


class FactorStream:
    """Deterministic enumeration of the prime-factor multiset of q.

    The default policy emits every finite exponent first (ascending primes,
    with multiplicity) and then round-robins over the primes with infinite
    exponent.  An explicit ``prefix`` is emitted before the policy kicks in
    and is validated against q's multiset.  When the default exponent is
    infinite the round-robin runs over an expanding window of primes so
    that every prime keeps recurring.
    """

    def __init__(self, sn: SupernaturalNumber, policy="finite-first", prefix=()):
        if policy != "finite-first":
            raise ValueError(f"unknown enumeration policy: {policy}")
        self.sn = sn
        self.policy = policy
        self.prefix = tuple(int(p) for p in prefix)
        if not sn.admits_multiset([p for p in self.prefix if sn.exponent(p) != INF]):
            raise ValueError("prefix is not a sub-multiset of q")
        for p in self.prefix:
            if sn.exponent(p) == 0:
                raise ValueError(f"prefix prime {p} does not divide q")
        self.consumed = []
        self._finite = []
        for p in sorted(sn.exponents):
            k = sn.exponents[p]
            if k != INF:
                self._finite.extend([p] * k)
        self._round_robin = sorted(p for p, k in sn.exponents.items() if k == INF)
        self._rr_index = 0
        self._diag = []            # expanding diagonal window when default is inf
        self._diag_pos = 0
        self._prime_gen = primes()

    def _consumed_count(self, p):
        return sum(1 for f in self.consumed if f == p)

    def remaining(self, p: int):
        k = self.sn.exponent(p)
        return INF if k == INF else k - self._consumed_count(p)

    def _next_policy_factor(self) -> int:
        # finite exponents first, then the recurring infinite ones
        queue = list(self._finite)
        for f in self.consumed:
            if f in queue:
                queue.remove(f)
        if queue:
            return queue[0]
        if self.sn.default == INF:
            # diagonal sweep 2; 2,3; 2,3,5; ... so every prime recurs forever
            if self._diag_pos >= len(self._diag):
                self._diag.append(next(self._prime_gen))
                self._diag_pos = 0
            p = self._diag[self._diag_pos]
            self._diag_pos += 1
            return p
        if not self._round_robin:
            raise StreamExhausted("supernatural number has no factors left")
        p = self._round_robin[self._rr_index % len(self._round_robin)]
        self._rr_index += 1
        return p

    def next_factor(self) -> int:
        if len(self.consumed) < len(self.prefix):
            p = self.prefix[len(self.consumed)]
            if self.remaining(p) <= 0:
                raise StreamExhausted(f"prefix over-consumes prime {p}")
        else:
            p = self._next_policy_factor()
            if self.remaining(p) <= 0:
                raise StreamExhausted(f"prime {p} exhausted")
        self.consumed.append(p)
        return p

    def __iter__(self):
        return self

    def __next__(self):
        return self.next_factor()


def from_spec(q: SupernaturalNumber, policy="finite-first", prefix=()) -> FactorStream:
    """Build the factor enumeration for q; rejects finite q for full runs.

    A q with only finitely many factors is still usable for demos, so the
    check is left to callers that need the infinite-factor guarantee.
    """
    return FactorStream(q, policy=policy, prefix=prefix)


@dataclass(frozen=True)
class OdometerSystem:
    """A finite truncation: moduli 1 = d_0 < d_1 < ... < d_M."""

    moduli: tuple

    def __post_init__(self):
        ms = tuple(int(d) for d in self.moduli)
        object.__setattr__(self, "moduli", ms)
        if not ms or ms[0] != 1:
            raise ValueError("moduli must start at d_0 = 1")
        for a, b in zip(ms, ms[1:]):
            if b % a != 0 or b // a <= 2:
                raise ValueError("successive quotients must be integers greater than 2")

    @property
    def depth(self) -> int:
        return len(self.moduli) - 1

    def modulus(self, m: int) -> int:
        return self.moduli[m]

    @property
    def quotients(self):
        return tuple(b // a for a, b in zip(self.moduli, self.moduli[1:]))

    def tower_levels(self, m: int) -> LevelSet:
        """The full level set {0, ..., d_m - 1}; the base is level 0."""
        if not 0 <= m <= self.depth:
            raise ValueError(f"depth {m} out of range")
        return LevelSet.full(m, self.moduli[m])

    def lift(self, s: LevelSet, m: int) -> LevelSet:
        """Refine a level set to depth m >= its own depth."""
        if not s.depth <= m <= self.depth:
            raise ValueError("lift target out of range")
        return s.lift(m, self.moduli[m])

    def digits(self, index: int):
        """Mixed-radix expansion, least significant first; exact inverse of
        :meth:`index`."""
        if not 0 <= index < self.moduli[-1]:
            raise ValueError("index out of range")
        out = []
        for q in self.quotients:
            out.append(index % q)
            index //= q
        return tuple(out)

    def index(self, digits) -> int:
        digits = tuple(digits)
        qs = self.quotients
        if len(digits) != len(qs):
            raise ValueError("digit vector length mismatch")
        value, scale = 0, 1
        for d, q in zip(digits, qs):
            if not 0 <= d < q:
                raise ValueError("digit out of range")
            value += d * scale
            scale *= q
        return value


def apply_T(s: LevelSet, power: int = 1) -> LevelSet:
    """Image of a level set under T^power: level i goes to (i - power) mod d.

    T sends level i to level i-1 because level i means "i forward steps
    above the base"; applying T uses one of them up.
    """
    return LevelSet(s.depth, s.modulus, tuple((i - power) % s.modulus for i in s.members))


@dataclass(frozen=True)
class CyclicModel:
    """The finite factor Z/d_M on which all exact computation happens."""

    depth: int
    modulus: int

    @classmethod
    def from_system(cls, system: OdometerSystem, m=None):
        m = system.depth if m is None else m
        return cls(m, system.modulus(m))

    def t_image(self, level: int, power: int = 1) -> int:
        return (level - power) % self.modulus

    def mass(self, count: int) -> Fraction:
        return Fraction(count, self.modulus)
