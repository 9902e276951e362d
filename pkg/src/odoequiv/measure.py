"""Exact level-set measure algebra and Shannon entropy primitives.

Everything in the construction lives on finite cyclic quotients, so every
set that ever appears is a union of tower levels and every mass is an exact
rational whose denominator divides the modulus.  Floating point enters in
exactly one place, when an entropy is evaluated; mass bookkeeping never
rounds.  Entropies are in nats (natural log) and are accumulated with
``math.fsum`` for compensated summation.

All containers here are immutable after construction and safe to share
across threads; entropy evaluation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence


class CoverageError(ValueError):
    """A conditioning or covering family fails to cover the required support."""


def eta(x) -> float:
    """-x*ln(x), continuously extended by eta(0) = 0."""
    x = float(x)
    if x == 0.0:
        return 0.0
    return -x * math.log(x)


def entropy_of_masses(masses: Iterable[Fraction]) -> float:
    """Shannon entropy (nats) of a disjoint collection given by exact masses.

    Zero masses contribute nothing; the masses need not sum to 1 (partial
    collections are measured with the same formula).
    """
    return math.fsum(eta(m) for m in masses)


@dataclass(frozen=True)
class LevelSet:
    """A union of tower levels at one depth: a subset of {0, ..., modulus-1}.

    Level ``i`` stands for the i-th level of the depth-``depth`` tower, and
    the set's measure is exactly ``len(members) / modulus``.
    """

    depth: int
    modulus: int
    members: tuple

    def __post_init__(self):
        if self.modulus <= 0:
            raise ValueError("modulus must be positive")
        ms = tuple(sorted(set(self.members)))
        if ms and not (0 <= ms[0] and ms[-1] < self.modulus):
            raise ValueError("members out of range for modulus")
        object.__setattr__(self, "members", ms)

    @classmethod
    def of(cls, depth, modulus, members=()):
        return cls(depth, modulus, tuple(members))

    @classmethod
    def full(cls, depth, modulus):
        return cls(depth, modulus, tuple(range(modulus)))

    def measure(self) -> Fraction:
        return Fraction(len(self.members), self.modulus)

    def __len__(self):
        return len(self.members)

    def __contains__(self, level):
        # members is sorted; binary search is overkill at these sizes
        return level in set(self.members) if len(self.members) > 64 else level in self.members

    def member_set(self):
        return set(self.members)

    def _check_compatible(self, other: "LevelSet"):
        if (self.depth, self.modulus) != (other.depth, other.modulus):
            raise ValueError("level sets live at different depths")

    def union(self, other: "LevelSet") -> "LevelSet":
        self._check_compatible(other)
        return LevelSet(self.depth, self.modulus, tuple(set(self.members) | set(other.members)))

    def intersection(self, other: "LevelSet") -> "LevelSet":
        self._check_compatible(other)
        return LevelSet(self.depth, self.modulus, tuple(set(self.members) & set(other.members)))

    def difference(self, other: "LevelSet") -> "LevelSet":
        self._check_compatible(other)
        return LevelSet(self.depth, self.modulus, tuple(set(self.members) - set(other.members)))

    def complement(self) -> "LevelSet":
        return LevelSet(self.depth, self.modulus, tuple(set(range(self.modulus)) - set(self.members)))

    def issubset(self, other: "LevelSet") -> bool:
        self._check_compatible(other)
        return set(self.members) <= set(other.members)

    def isdisjoint(self, other: "LevelSet") -> bool:
        self._check_compatible(other)
        return set(self.members).isdisjoint(other.members)

    def lift(self, depth: int, modulus: int) -> "LevelSet":
        """Refine to a deeper tower whose modulus is a multiple of this one.

        Level k splits into the arithmetic progression k, k+d, k+2d, ...
        below the new modulus; measure is preserved exactly.
        """
        if depth < self.depth or modulus % self.modulus != 0:
            raise ValueError("lift target must be a deeper, divisible tower")
        ratio = modulus // self.modulus
        new = [k + j * self.modulus for k in self.members for j in range(ratio)]
        return LevelSet(depth, modulus, tuple(new))

    def translate(self, shift: int) -> "LevelSet":
        """Shift every level by ``shift`` modulo the modulus."""
        return LevelSet(self.depth, self.modulus,
                        tuple((i + shift) % self.modulus for i in self.members))

    def to_json(self):
        return {"depth": self.depth, "modulus": self.modulus, "members": list(self.members)}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["depth"], obj["modulus"], tuple(obj["members"]))


def measure(s: LevelSet) -> Fraction:
    """Exact mass |members| / modulus in lowest terms."""
    return s.measure()


class LabeledPartition:
    """A finite disjoint collection of labeled level sets at a common depth.

    The union need not be the whole space (partial partitions are allowed);
    zero-mass cells are dropped at construction.
    """

    def __init__(self, cells: Sequence, validate=True):
        kept = [(label, s) for label, s in cells if len(s) > 0]
        self.cells = tuple(kept)
        if validate and self.cells:
            d0, m0 = self.cells[0][1].depth, self.cells[0][1].modulus
            seen = set()
            for _, s in self.cells:
                if (s.depth, s.modulus) != (d0, m0):
                    raise ValueError("partition cells at mixed depths")
                ms = set(s.members)
                if seen & ms:
                    raise ValueError("partition cells are not disjoint")
                seen |= ms

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)

    @property
    def depth(self):
        return self.cells[0][1].depth if self.cells else None

    @property
    def modulus(self):
        return self.cells[0][1].modulus if self.cells else None

    def masses(self):
        return [s.measure() for _, s in self.cells]

    def total_mass(self) -> Fraction:
        return sum(self.masses(), Fraction(0))

    def support(self) -> LevelSet:
        if not self.cells:
            raise ValueError("empty partition has no support")
        members = set()
        for _, s in self.cells:
            members |= set(s.members)
        return LevelSet(self.depth, self.modulus, tuple(members))

    def restrict(self, block: LevelSet) -> "LabeledPartition":
        """The trace partition {A ∩ B} on a block, empty cells dropped."""
        return LabeledPartition(
            [(label, s.intersection(block)) for label, s in self.cells], validate=False)


def shannon_entropy(p: LabeledPartition) -> float:
    """H(p) = sum of -mu(A) ln mu(A) over the (nonnull) cells, in nats."""
    return entropy_of_masses(p.masses())


def conditional_entropy(p: LabeledPartition, q: LabeledPartition) -> float:
    """H(p|q) = sum over B in q, A in p of -mu(A∩B) ln(mu(A∩B)/mu(B)).

    Requires q's cells to cover p's support; satisfies the chain rule
    H(p ∨ q) = H(q) + H(p|q).
    """
    if len(p) and not p.support().issubset(q.support()):
        raise CoverageError("conditioning partition does not cover the support")
    terms = []
    for _, b in q.cells:
        mb = b.measure()
        if mb == 0:
            continue
        for _, a in p.cells:
            mab = a.intersection(b).measure()
            if mab:
                terms.append(-float(mab) * math.log(float(mab / mb)))
    return math.fsum(terms)


def join(p: LabeledPartition, q: LabeledPartition) -> LabeledPartition:
    """Common refinement; labels are paired, empty intersections dropped."""
    cells = []
    for lp, a in p.cells:
        for lq, b in q.cells:
            c = a.intersection(b)
            if len(c):
                cells.append(((lp, lq), c))
    return LabeledPartition(cells, validate=False)


def cover_entropy_bound(p: LabeledPartition, cover: Sequence[LevelSet]):
    """Return (H(p), sum_i H(p restricted to B_i)) for a covering family.

    The first value never exceeds the second: splitting cells across a
    cover can only spread mass into more pieces.
    """
    if len(p):
        support = p.support().member_set()
        covered = set()
        for b in cover:
            covered |= set(b.members)
        if not support <= covered:
            raise CoverageError("cover does not contain the partition's support")
    lhs = shannon_entropy(p)
    rhs = math.fsum(shannon_entropy(p.restrict(b)) for b in cover)
    return lhs, rhs
