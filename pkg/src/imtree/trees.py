"""Reduced sets of full binary trees and the dyadic feasible set.

A full binary tree matters here only through its leaf-level profile
``(n_1, ..., n_d)``: a pattern attached to a leaf at depth ``q`` is sent with
probability ``2**-q`` when the source bits are i.i.d. uniform, and leaves on
the same level are interchangeable.  Each profile has exactly one canonical
ordered tree (internal nodes packed to the left on every level), which is the
form produced by the recursive protograph construction below.
"""

from __future__ import annotations

import itertools
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

MAX_FEASIBLE_C = 28
# Materializing the feasible set stores one depth tuple per vector; about
# 100 bytes + 8 bytes per entry in CPython.  Refuse beyond this many vectors.
MAX_FEASIBLE_VECTORS = 2_000_000


class CapacityError(ValueError):
    """Raised when an enumeration would exceed the desk-scale guard."""


@dataclass(frozen=True, order=True)
class TreeProfile:
    """Leaf counts per depth of a full binary tree; ``leaf_counts[q-1] = n_q``."""

    leaf_counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.leaf_counts)
        object.__setattr__(self, "leaf_counts", counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative leaf count in {counts}")
        if counts and counts[-1] == 0:
            raise ValueError(f"profile {counts} has trailing empty level")
        # () is the single-leaf tree: one pattern sent with probability 1
        if counts and kraft_sum(counts) != 1:
            raise ValueError(f"profile {counts} violates the Kraft equality")

    @property
    def depth(self) -> int:
        return len(self.leaf_counts)

    @property
    def leaves(self) -> int:
        return sum(self.leaf_counts)

    @property
    def internal_nodes(self) -> int:
        return self.leaves - 1

    def leaf_depths(self) -> list[int]:
        """Depths of all leaves in canonical left-to-right order (deepest first)."""
        out = []
        for q in range(self.depth, 0, -1):
            out.extend([q] * self.leaf_counts[q - 1])
        return out

    def canonical_tree(self) -> "OrderedTree":
        return OrderedTree.from_profile(self)

    def __str__(self) -> str:
        return format_profile(self)


def kraft_sum(leaf_counts: Sequence[int]) -> Fraction:
    return sum((Fraction(n, 2**q) for q, n in enumerate(leaf_counts, start=1)), Fraction(0))


def format_profile(profile: TreeProfile) -> str:
    return ",".join(str(n) for n in profile.leaf_counts)


def parse_profile(text: str) -> TreeProfile:
    return TreeProfile(tuple(int(tok) for tok in text.split(",")))


def profile_from_depths(depths: Iterable[int]) -> TreeProfile:
    depths = list(depths)
    d = max(depths)
    counts = [0] * d
    for q in depths:
        counts[q - 1] += 1
    return TreeProfile(tuple(counts))


# ---------------------------------------------------------------------------
# Ordered trees
# ---------------------------------------------------------------------------

LEAF = None


@dataclass(frozen=True)
class OrderedTree:
    """An ordered full binary tree; ``root`` is ``None`` (a leaf) or a pair."""

    root: object = LEAF

    @classmethod
    def protograph(cls) -> "OrderedTree":
        return cls((LEAF, LEAF))

    @classmethod
    def from_profile(cls, profile: TreeProfile) -> "OrderedTree":
        # Level by level: the left-most (m_q - n_q) nodes at depth q are internal.
        counts = profile.leaf_counts
        if not counts:
            return cls(LEAF)
        # Build bottom-up; nodes at the deepest level are all leaves.
        level = [LEAF] * counts[-1]
        for q in range(len(counts) - 1, 0, -1):
            internal = [(level[2 * k], level[2 * k + 1]) for k in range(len(level) // 2)]
            level = internal + [LEAF] * counts[q - 1]
        if len(level) != 2:
            raise ValueError(f"profile {counts} is not a full binary tree")
        return cls((level[0], level[1]))

    @classmethod
    def parse(cls, text: str) -> "OrderedTree":
        """Inverse of :meth:`to_parens`."""
        pos = 0

        def node():
            nonlocal pos
            ch = text[pos]
            pos += 1
            if ch == ".":
                return LEAF
            if ch != "(":
                raise ValueError(f"unexpected {ch!r} at {pos - 1} in {text!r}")
            left = node()
            right = node()
            if text[pos] != ")":
                raise ValueError(f"expected ')' at {pos} in {text!r}")
            pos += 1
            return (left, right)

        root = node()
        if pos != len(text):
            raise ValueError(f"trailing characters in {text!r}")
        return cls(root)

    def to_parens(self) -> str:
        def rec(n):
            return "." if n is LEAF else "(" + rec(n[0]) + rec(n[1]) + ")"

        return rec(self.root)

    def leaf_depths(self) -> list[int]:
        """Leaf depths in left-to-right order."""
        out: list[int] = []

        def rec(n, d):
            if n is LEAF:
                out.append(d)
            else:
                rec(n[0], d + 1)
                rec(n[1], d + 1)

        rec(self.root, 0)
        return out

    def leaf_paths(self) -> list[str]:
        """Root-to-leaf edge labels in left-to-right order (left edge 0, right 1)."""
        out: list[str] = []

        def rec(n, path):
            if n is LEAF:
                out.append(path)
            else:
                rec(n[0], path + "0")
                rec(n[1], path + "1")

        rec(self.root, "")
        return out

    def profile(self) -> TreeProfile:
        if self.root is LEAF:
            return TreeProfile(())
        return profile_from_depths(self.leaf_depths())

    @property
    def internal_nodes(self) -> int:
        return len(self.leaf_depths()) - 1

    def append_protograph(self, depth: int) -> "OrderedTree | None":
        """Replace the left-most leaf at ``depth`` by a protograph.

        Returns ``None`` when the tree has no leaf at that depth.
        """
        done = False

        def rec(n, d):
            nonlocal done
            if done:
                return n
            if n is LEAF:
                if d == depth:
                    done = True
                    return (LEAF, LEAF)
                return n
            return (rec(n[0], d + 1), rec(n[1], d + 1))

        # Left-most is in breadth order on a level, which matches depth-first
        # left-to-right order restricted to that level.
        new_root = rec(self.root, 0)
        return OrderedTree(new_root) if done else None


def all_ordered_trees(v: int) -> Iterator[OrderedTree]:
    """Every ordered full binary tree with ``v`` internal nodes (``catalan(v)`` of them)."""

    def rec(k):
        if k == 0:
            yield LEAF
            return
        for left_size in range(k):
            for left in rec(left_size):
                for right in rec(k - 1 - left_size):
                    yield (left, right)

    for root in rec(v):
        yield OrderedTree(root)


# ---------------------------------------------------------------------------
# Reduced sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedTreeSet:
    v: int
    trees: tuple[TreeProfile, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    def profiles(self) -> set[tuple[int, ...]]:
        return {t.leaf_counts for t in self.trees}

    def to_json(self) -> str:
        return json.dumps(
            {
                "v": self.v,
                "trees": [
                    {"profile": format_profile(t), "tree": t.canonical_tree().to_parens()}
                    for t in self.trees
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ReducedTreeSet":
        data = json.loads(text)
        trees = tuple(parse_profile(t["profile"]) for t in data["trees"])
        for t, raw in zip(trees, data["trees"]):
            if OrderedTree.parse(raw["tree"]).profile() != t:
                raise ValueError(f"tree {raw['tree']} does not match profile {raw['profile']}")
        return cls(int(data["v"]), trees)


def _grow_deepest(counts: tuple[int, ...]) -> tuple[int, ...]:
    # protograph on a leaf of the lowest level
    d = len(counts)
    return counts[: d - 1] + (counts[d - 1] - 1, 2)


def _grow_next_to_deepest(counts: tuple[int, ...]) -> tuple[int, ...] | None:
    d = len(counts)
    if d < 2 or counts[d - 2] == 0:
        return None
    return counts[: d - 2] + (counts[d - 2] - 1, counts[d - 1] + 2)


@lru_cache(maxsize=None)
def _reduced_level(v: int) -> tuple[tuple[int, ...], ...]:
    if v == 1:
        return ((2,),)
    nxt = []
    for counts in _reduced_level(v - 1):
        nxt.append(_grow_deepest(counts))
        grown = _grow_next_to_deepest(counts)
        if grown is not None:
            nxt.append(grown)
    return tuple(nxt)


def construct_reduced_set(v: int) -> ReducedTreeSet:
    """Recursive protograph construction of the reduced set of ``v``-node trees.

    Starting from the protograph, each tree of the previous set spawns the
    tree obtained by expanding the left-most leaf on its lowest level and,
    when the next-to-lowest level has a leaf, the tree obtained by expanding
    the left-most such leaf.  Operating on canonical trees, both moves only
    touch the last two entries of the profile, so the construction runs on
    profiles directly; :func:`construct_reduced_set_trees` runs the same
    moves on explicit ordered trees.
    """
    if v < 1:
        raise ValueError("v must be >= 1; the single-leaf tree is handled by the feasible set")
    level = _reduced_level(v)
    return ReducedTreeSet(v, tuple(sorted(TreeProfile(c) for c in level)))


def construct_reduced_set_trees(v: int) -> list[OrderedTree]:
    """Same construction as :func:`construct_reduced_set`, on explicit ordered trees."""
    if v < 1:
        raise ValueError("v must be >= 1")
    current = [OrderedTree.protograph()]
    for _ in range(2, v + 1):
        nxt = []
        for t in current:
            d = max(t.leaf_depths())
            nxt.append(t.append_protograph(d))
            grown = t.append_protograph(d - 1) if d >= 2 else None
            if grown is not None:
                nxt.append(grown)
        current = nxt
    return current


def reduced_set_sizes(v_max: int) -> list[int]:
    """``T_v`` for ``v = 1..v_max`` by construction (index 0 is ``v = 1``)."""
    return [len(_reduced_level(v)) for v in range(1, v_max + 1)]


def brute_force_profiles(v: int) -> set[tuple[int, ...]]:
    """Distinct leaf-level profiles over all ``catalan(v)`` ordered trees."""
    return {t.profile().leaf_counts for t in all_ordered_trees(v)}


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


def catalan(v: int) -> int:
    if v < 0:
        raise ValueError("v must be nonnegative")
    return math.comb(2 * v, v) // (v + 1)


def loose_bound(v: int) -> int:
    if v < 1:
        raise ValueError("v must be >= 1")
    return 2 ** (v - 1)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def tight_bound_recurrence(v_max: int) -> list[int]:
    """Recurrence bound ``B_v`` for ``v = 1..v_max`` (index 0 is ``v = 1``).

    ``B_1 = 1`` and ``B_v = 2 B_{v-1} - [v is a power of 2]
    - sum_{q=2}^{floor(log2(v-1))} B_{v - 2^q}``, run over the bound values.
    """
    if v_max < 1:
        raise ValueError("v_max must be >= 1")
    b = {1: 1}
    for v in range(2, v_max + 1):
        total = 2 * b[v - 1] - (1 if _is_power_of_two(v) else 0)
        q_max = (v - 1).bit_length() - 1  # floor(log2(v - 1))
        for q in range(2, q_max + 1):
            total -= b[v - 2**q]
        b[v] = total
    return [b[v] for v in range(1, v_max + 1)]


def assignment_count(profile: TreeProfile, C: int) -> int:
    """Probability-distinct assignments of ``v + 1`` patterns to the leaves.

    Multinomial ``(v+1)! / (n_1! ... n_d!)``; the choice of which ``v + 1``
    of the ``C`` patterns are active is a separate ``comb(C, v + 1)`` factor.
    """
    n = profile.leaves
    if C < n:
        raise ValueError(f"C={C} is smaller than the {n} leaves of {profile}")
    out = math.factorial(n)
    for c in profile.leaf_counts:
        out //= math.factorial(c)
    return out


# ---------------------------------------------------------------------------
# Dyadic feasible set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DyadicProbabilityVector:
    """Pattern probabilities ``2**-q``; ``depths[i] is None`` marks a dropped pattern."""

    depths: tuple[int | None, ...]

    def __post_init__(self):
        total = sum((Fraction(1, 2**q) for q in self.depths if q is not None), Fraction(0))
        if total != 1:
            raise ValueError(f"dyadic entries {self.depths} sum to {total}, not 1")

    @classmethod
    def from_probabilities(cls, probs: Sequence[float]) -> "DyadicProbabilityVector":
        depths = []
        for p in probs:
            if p == 0:
                depths.append(None)
                continue
            q = -math.log2(p)
            if q < 0 or abs(q - round(q)) > 1e-9:
                raise ValueError(f"{p} is not a dyadic probability")
            depths.append(int(round(q)))
        return cls(tuple(depths))

    def __len__(self) -> int:
        return len(self.depths)

    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(0) if q is None else Fraction(1, 2**q) for q in self.depths)

    def to_list(self) -> list[float]:
        return [0.0 if q is None else 2.0**-q for q in self.depths]

    def active(self) -> list[int]:
        return [i for i, q in enumerate(self.depths) if q is not None]

    def profile(self) -> TreeProfile:
        qs = [q for q in self.depths if q is not None]
        return TreeProfile(()) if qs == [0] else profile_from_depths(qs)


def _distinct_permutations(counts: dict[int, int], n: int) -> Iterator[tuple[int, ...]]:
    if n == 0:
        yield ()
        return
    for key in sorted(counts):
        if counts[key]:
            counts[key] -= 1
            for rest in _distinct_permutations(counts, n - 1):
                yield (key,) + rest
            counts[key] += 1


def profiles_with_leaves(n: int) -> list[TreeProfile]:
    """Reduced-set profiles with exactly ``n`` leaves, including the 1-leaf tree."""
    if n == 1:
        return [TreeProfile(())]
    return list(construct_reduced_set(n - 1).trees)


def _multinomial(counts: Sequence[int]) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


def feasible_set_size(C: int, v: int | None = None, stop_above: int | None = None) -> int:
    """Cardinality of the feasible set (or of its slice with ``v`` internal nodes).

    With ``stop_above`` the count returns early once it exceeds that value.
    """
    vs = range(C) if v is None else [v]
    total = 0
    for vv in vs:
        level = _reduced_level(vv) if vv >= 1 else ((1,),)
        total += math.comb(C, vv + 1) * sum(_multinomial(c) for c in level)
        if stop_above is not None and total > stop_above:
            break
    return total


def iter_feasible_set(C: int, v: int | None = None) -> Iterator[DyadicProbabilityVector]:
    """Lazily yield the feasible dyadic vectors of length ``C``.

    Order: by ``v``, then profile, then active subset (lexicographic), then
    distinct assignment (lexicographic in depth).
    """
    if not 1 <= C <= MAX_FEASIBLE_C:
        raise CapacityError(f"C={C} outside the supported range 1..{MAX_FEASIBLE_C}")
    vs = range(C) if v is None else [v]
    for vv in vs:
        n = vv + 1
        for prof in profiles_with_leaves(n):
            counts: dict[int, int] = {}
            for q in prof.leaf_depths() or [0]:
                counts[q] = counts.get(q, 0) + 1
            perms = list(_distinct_permutations(counts, n))
            for subset in itertools.combinations(range(C), n):
                for perm in perms:
                    depths: list[int | None] = [None] * C
                    for idx, q in zip(subset, perm):
                        depths[idx] = q
                    yield DyadicProbabilityVector(tuple(depths))


def build_feasible_set(C: int, v: int | None = None) -> set[DyadicProbabilityVector]:
    """Materialize the feasible set; raises :class:`CapacityError` when too large."""
    if not 1 <= C <= MAX_FEASIBLE_C:
        raise CapacityError(f"C={C} outside the supported range 1..{MAX_FEASIBLE_C}")
    size = feasible_set_size(C, v, stop_above=MAX_FEASIBLE_VECTORS)
    if size > MAX_FEASIBLE_VECTORS:
        mem_gb = size * (100 + 8 * C) / 1e9
        raise CapacityError(
            f"feasible set for C={C} has more than {size} vectors (~{mem_gb:.3g} GB or more); "
            f"limit is {MAX_FEASIBLE_VECTORS}"
        )
    return set(iter_feasible_set(C, v))


def rank_matched_candidates(order: Sequence[int], C: int) -> Iterator[DyadicProbabilityVector]:
    """One vector per (leaf count, profile): shallowest leaves on the first patterns of ``order``.

    ``order`` lists pattern indices from most to least preferred.  For any
    objective that rewards giving larger probabilities to preferred patterns,
    these ``sum_v T_v`` vectors dominate the rest of the feasible set.
    """
    if len(order) != C:
        raise ValueError("order must list every pattern once")
    for n in range(1, C + 1):
        for prof in profiles_with_leaves(n):
            ds = sorted(prof.leaf_depths() or [0])
            depths: list[int | None] = [None] * C
            for idx, q in zip(order, ds):
                depths[idx] = q
            yield DyadicProbabilityVector(tuple(depths))
