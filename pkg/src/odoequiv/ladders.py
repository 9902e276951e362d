"""Cutting-and-stacking ladder stages over the nested tower hierarchy.

The construction fills a double recursion: an outer index n (which ladder
family) and an inner index m >= n (at which tower depth the family picks up
new rungs).  Stage (n, m) enumerates a window of free depth-m levels as
s(0) < s(1) < ... < s(r) and turns consecutive blocks of a_n indices into
sub-ladders; the ladder map steps from each rung to the next inside a
block.  Three cases produce the window:

  * (1, 1): the whole depth-1 tower.
  * (n, n), n > 1: the bases of the two newest stage-(n-1) ladders.
  * (n, m), m > n: what stage n-1 handed down minus what stage n already
    used at shallower depths (for n = 1: the whole space minus the used
    rungs).

Every window always leaves at least one unused level at the top, which is
what keeps the spreads of the next inner stage bounded by the previous
modulus.  Rungs are stored at their native depth and lifted on demand.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .measure import LevelSet
from .odometer import OdometerSystem
from .reporting import Report, check_eq, check_le, check_true


class StageInfeasible(Exception):
    """A trial modulus does not admit the required stage geometry."""


@dataclass(frozen=True)
class LadderStage:
    """One stage (n, m): window levels, block structure, and rung access.

    ``s`` lists the window's depth-m levels in increasing order; the ladder
    uses the first a*t of them, grouped into t blocks (sub-ladders) of a
    consecutive indices.  ``t == 0`` marks a recorded-but-empty stage.
    """

    n: int
    m: int
    modulus: int
    a: int
    s: tuple
    t: int

    def __post_init__(self):
        s = tuple(self.s)
        object.__setattr__(self, "s", s)
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("window levels must be strictly increasing")
        if s and not (0 <= s[0] and s[-1] < self.modulus):
            raise ValueError("window levels out of range")
        if self.a < 2:
            raise ValueError("rung count must be at least 2")
        if self.a * self.t > len(s):
            raise ValueError("blocks exceed the window")

    @property
    def r(self) -> int:
        return len(self.s) - 1

    @property
    def is_empty(self) -> bool:
        return self.t == 0

    def block(self, j):
        return self.s[self.a * j:self.a * (j + 1)]

    def rung_levels(self, i):
        return tuple(self.s[self.a * j + i] for j in range(self.t))

    def rung(self, i) -> LevelSet:
        return LevelSet(self.m, self.modulus, self.rung_levels(i))

    def displacement(self, j, i) -> int:
        """The exact power k with S = T^k on rung i of block j (negative)."""
        return self.s[self.a * j + i] - self.s[self.a * j + i + 1]

    def spread(self, j) -> int:
        blk = self.block(j)
        return max(blk[i + 1] - blk[i] for i in range(len(blk) - 1))

    @property
    def spreads(self):
        return tuple(self.spread(j) for j in range(self.t))

    @property
    def leftover_levels(self):
        return self.s[self.a * self.t:]

    def used_measure(self) -> Fraction:
        return Fraction(self.a * self.t, self.modulus)

    def as_json(self):
        return {"n": self.n, "m": self.m, "modulus": self.modulus, "a": self.a,
                "s": list(self.s), "r": self.r, "t": self.t,
                "spreads": list(self.spreads)}

    @classmethod
    def from_json(cls, obj):
        return cls(n=obj["n"], m=obj["m"], modulus=obj["modulus"], a=obj["a"],
                   s=tuple(obj["s"]), t=obj["t"])


class ConstructionState:
    """Moduli, schedule rows, and the stage array built so far."""

    def __init__(self, moduli=(1,), rows=(), stages=None):
        self.moduli = list(moduli)
        self.rows = list(rows)
        self.stages = dict(stages or {})

    @property
    def depth(self) -> int:
        return len(self.moduli) - 1

    def modulus(self, m: int) -> int:
        return self.moduli[m]

    def system(self) -> OdometerSystem:
        return OdometerSystem(tuple(self.moduli))

    def row(self, n: int):
        return self.rows[n - 1]

    def stage(self, n: int, m: int) -> LadderStage:
        return self.stages[(n, m)]

    def copy_extended(self, d_next: int) -> "ConstructionState":
        return ConstructionState(self.moduli + [d_next], self.rows, self.stages)

    def commit_stage(self, d: int, row, new_stages: dict):
        self.moduli.append(d)
        self.rows.append(row)
        self.stages.update(new_stages)

    # -- level-set helpers -------------------------------------------------
    def lift_levels(self, levels, from_depth: int, to_depth: int):
        """Raw integer version of LevelSet.lift for set arithmetic."""
        d_from, d_to = self.moduli[from_depth], self.moduli[to_depth]
        ratio = d_to // d_from
        return {k + j * d_from for k in levels for j in range(ratio)}

    def rung_at_depth(self, n, m, i, depth) -> set:
        st = self.stages[(n, m)]
        return self.lift_levels(st.rung_levels(i), m, depth)


def window_levels(state: ConstructionState, n: int, m: int) -> tuple:
    """The sorted depth-m levels available to stage (n, m)."""
    d_m = state.modulus(m)
    if n == 1 and m == 1:
        return tuple(range(d_m))
    if n == m:
        base_prev = state.rung_at_depth(n - 1, n - 1, 0, m)
        base_here = state.rung_at_depth(n - 1, m, 0, m)
        return tuple(sorted(base_prev | base_here))
    if n == 1:
        used = set()
        for l in range(1, m):
            st = state.stages[(1, l)]
            for i in range(st.a):
                used |= state.rung_at_depth(1, l, i, m)
        return tuple(sorted(set(range(d_m)) - used))
    handed_down = set()
    for l in range(n - 1, m + 1):
        handed_down |= state.rung_at_depth(n - 1, l, 0, m)
    used = set()
    for l in range(n, m):
        st = state.stages[(n, l)]
        for i in range(st.a):
            used |= state.rung_at_depth(n, l, i, m)
    return tuple(sorted(handed_down - used))


def build_case_I(d_1: int, a_1: int) -> LadderStage:
    """Stage (1, 1): rungs are the first a_1 levels, map steps down one level."""
    if not 2 <= a_1 <= d_1 - 1:
        raise StageInfeasible(f"a_1={a_1} out of range for d_1={d_1}")
    return LadderStage(n=1, m=1, modulus=d_1, a=a_1, s=tuple(range(d_1)), t=1)


def build_case_II(state: ConstructionState, n: int, a_n: int) -> LadderStage:
    """Stage (n, n), n > 1: one block of a_n rungs on the inherited bases."""
    s = window_levels(state, n, n)
    r = len(s) - 1
    if a_n > r:
        raise StageInfeasible(f"stage ({n},{n}): a={a_n} leaves no level over (r={r})")
    return LadderStage(n=n, m=n, modulus=state.modulus(n), a=a_n, s=s, t=1)


def build_case_III(state: ConstructionState, n: int, m: int, a_n: int) -> LadderStage:
    """Stage (n, m), m > n: as many blocks of a_n as fit, possibly none."""
    s = window_levels(state, n, m)
    r = len(s) - 1
    t = r // a_n if r >= a_n else 0
    return LadderStage(n=n, m=m, modulus=state.modulus(m), a=a_n, s=s, t=t)


def trial_column(state: ConstructionState, d_cand: int, p_n: int, derive_a_fn):
    """Build column n for a candidate modulus; raise StageInfeasible if the
    window is too small for p_n or stage (n-1, n) came out empty.

    Returns (new stage dict, a_n) without touching the input state.
    """
    tmp = state.copy_extended(d_cand)
    n = tmp.depth
    for j in range(1, n):
        tmp.stages[(j, n)] = build_case_III(tmp, j, n, tmp.row(j).a)
    if n == 1:
        r = d_cand - 1
    else:
        r = len(window_levels(tmp, n, n)) - 1
    if r < p_n:
        raise StageInfeasible(f"stage ({n},{n}): window r={r} below p={p_n}")
    a_n = derive_a_fn(r, p_n)
    if n == 1:
        tmp.stages[(1, 1)] = build_case_I(d_cand, a_n)
    else:
        tmp.stages[(n, n)] = build_case_II(tmp, n, a_n)
        if tmp.stages[(n - 1, n)].is_empty:
            raise StageInfeasible(f"stage ({n - 1},{n}) admits no ladder")
    new = {key: st for key, st in tmp.stages.items() if key not in state.stages}
    return new, a_n


def verify_recursion_invariants(state: ConstructionState) -> Report:
    """Exhaustively re-derive the structural guarantees of the recursion.

    Checks, with exact arithmetic and (n, m, i) localization on failure:
    rungs are unions of tower levels whose lifts preserve measure; for
    fixed n the whole family of rungs is pairwise disjoint; every stage-n
    ladder sits inside the stage-(n-1) bases; sub-ladder spreads at depth
    m > n stay below d_{m-1}; block counts are maximal; and at least one
    window level is always left over.
    """
    report = Report()
    N = state.depth
    d_N = state.modulus(N)

    for n in range(1, N + 1):
        seen = {}
        collision = None
        for m in range(n, N + 1):
            st = state.stage(n, m)
            for i in range(st.a):
                for lvl in st.rung_levels(i):
                    for deep in state.lift_levels([lvl], m, N):
                        if deep in seen and collision is None:
                            collision = (seen[deep], (n, m, i))
                        seen[deep] = (n, m, i)
        report.add(check_true(
            "stage-family-disjoint", f"n={n}",
            collision is None,
            "ok" if collision is None else f"levels shared by {collision[0]} and {collision[1]}"))

    for (n, m), st in sorted(state.stages.items()):
        stage_id = f"({n},{m})"
        # representation: native depth, members in range, lift preserves mass
        in_range = all(0 <= lvl < st.modulus for lvl in st.s)
        report.add(check_true("levels-exact", stage_id,
                              in_range and st.modulus == state.modulus(m)))
        if not st.is_empty:
            r0 = st.rung(0)
            lifted = r0.lift(N, d_N)
            report.add(check_eq("lift-mass", stage_id, r0.measure(), lifted.measure()))
        # leftover level above the used blocks
        report.add(check_le("leftover-exists", stage_id, st.a * st.t, max(st.r, 0)))
        if m > n and not st.is_empty:
            report.add(check_true(
                "block-count-max", stage_id, st.a * (st.t + 1) > st.r,
                f"t={st.t}, r={st.r}, a={st.a}"))
            d_prev = state.modulus(m - 1)
            worst_j = max(range(st.t), key=st.spread)
            report.add(check_le("spread-bound", f"({n},{m},j={worst_j})",
                                st.spread(worst_j), d_prev))
        if n >= 2:
            rungs = set()
            for i in range(st.a):
                rungs |= state.lift_levels(st.rung_levels(i), m, m)
            bases = set()
            for l in range(n - 1, m + 1):
                bases |= state.rung_at_depth(n - 1, l, 0, m)
            report.add(check_true("nested-in-bases", stage_id, rungs <= bases,
                                  f"{len(rungs)} rung levels vs {len(bases)} base levels"))

    # stage-1 family tiles the space exactly: rung mass plus final window mass is 1
    if N >= 1:
        rung_mass = Fraction(0)
        union = set()
        for m in range(1, N + 1):
            st = state.stage(1, m)
            for i in range(st.a):
                lifted = state.rung_at_depth(1, m, i, N)
                union |= lifted
                rung_mass += Fraction(len(lifted), d_N)
        leftover_mass = Fraction(d_N - len(union), d_N)
        report.add(check_eq("stage1-tiling", f"N={N}", rung_mass + leftover_mass, Fraction(1)))
    return report
