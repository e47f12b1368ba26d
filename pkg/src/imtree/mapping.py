"""Bit-to-pattern codebooks, Huffman depths and projection onto dyadic vectors."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .trees import DyadicProbabilityVector, OrderedTree, TreeProfile

METRICS = ("euclidean", "kl", "tv")


@dataclass(frozen=True)
class Codebook:
    """Prefix-free map from pattern index (0-based) to codeword.

    ``entries`` are ``(sap, code)`` pairs in leaf order; ``n_saps`` is the
    catalog size ``C`` so dropped patterns can be recovered.
    """

    entries: tuple[tuple[int, str], ...]
    n_saps: int

    def __post_init__(self):
        saps = [s for s, _ in self.entries]
        if len(set(saps)) != len(saps):
            raise ValueError("a pattern appears twice in the codebook")
        if any(not 0 <= s < self.n_saps for s in saps):
            raise ValueError("pattern index outside catalog")
        codes = sorted(c for _, c in self.entries)
        for a, b in zip(codes, codes[1:]):
            if b.startswith(a):
                raise ValueError(f"codeword {a!r} is a prefix of {b!r}")
        if sum(2.0 ** -len(c) for c in codes) != 1.0:
            raise ValueError("codebook is not complete (Kraft sum != 1)")

    @property
    def dropped_saps(self) -> frozenset[int]:
        return frozenset(range(self.n_saps)) - {s for s, _ in self.entries}

    def code_of(self) -> dict[int, str]:
        return dict(self.entries)

    def probabilities(self) -> DyadicProbabilityVector:
        depths: list[int | None] = [None] * self.n_saps
        for s, c in self.entries:
            depths[s] = len(c)
        return DyadicProbabilityVector(tuple(depths))

    def to_json(self) -> str:
        # external indices are 1-based
        return json.dumps(
            {
                "entries": [{"sap": s + 1, "code": c} for s, c in self.entries],
                "dropped": sorted(s + 1 for s in self.dropped_saps),
                "n_saps": self.n_saps,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        data = json.loads(text)
        entries = tuple((int(e["sap"]) - 1, str(e["code"])) for e in data["entries"])
        n = int(data.get("n_saps", len(entries) + len(data.get("dropped", []))))
        book = cls(entries, n)
        if sorted(s + 1 for s in book.dropped_saps) != sorted(data.get("dropped", [])):
            raise ValueError("dropped list inconsistent with entries")
        return book


def codebook_from_tree(tree: OrderedTree, assignment: Sequence[int], n_saps: int) -> Codebook:
    """Label the leaves of ``tree`` (left to right) with patterns ``assignment``."""
    paths = tree.leaf_paths()
    if len(assignment) != len(paths):
        raise ValueError(f"{len(assignment)} patterns for {len(paths)} leaves")
    if len(set(assignment)) != len(assignment):
        raise ValueError("assignment is not injective")
    return Codebook(tuple(zip((int(a) for a in assignment), paths)), n_saps)


def codebook_from_probabilities(p: DyadicProbabilityVector) -> Codebook:
    """Canonical codebook realizing ``p``; equal-depth patterns run left to right by index."""
    active = p.active()
    if len(active) == 1:
        return Codebook(((active[0], ""),), len(p))
    tree = TreeProfile(p.profile().leaf_counts).canonical_tree()
    # canonical leaves run deepest first, so pair them with least probable first
    order = sorted(active, key=lambda i: (-p.depths[i], i))
    return codebook_from_tree(tree, order, len(p))


def encode(bits: Iterable[int], codebook: Codebook) -> tuple[list[int], list[int]]:
    """Parse a bit stream into patterns; returns ``(saps, residue_bits)``."""
    lookup = {c: s for s, c in codebook.entries}
    if "" in lookup:
        # single-pattern code: sent regardless of the source, consumes no bits
        return [], list(bits)
    saps: list[int] = []
    word = ""
    for b in bits:
        word += "1" if b else "0"
        s = lookup.get(word)
        if s is not None:
            saps.append(s)
            word = ""
    return saps, [int(ch) for ch in word]


def decode(saps: Iterable[int], codebook: Codebook) -> list[int]:
    code = codebook.code_of()
    out: list[int] = []
    for s in saps:
        if s not in code:
            raise ValueError(f"pattern {s} is not active in the codebook")
        out.extend(int(ch) for ch in code[s])
    return out


def huffman(probs: Sequence[float]) -> list[int]:
    """Huffman code depths aligned with ``probs``.

    Repeatedly merges the two lightest nodes; equal weights go to the node
    created first, and leaves are created in input order.
    """
    probs = [float(x) for x in probs]
    if not probs:
        raise ValueError("need at least one probability")
    if any(not x > 0 for x in probs):
        raise ValueError("probabilities must be positive")
    if abs(math.fsum(probs) - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {math.fsum(probs)}, not 1")
    n = len(probs)
    if n == 1:
        return [0]
    depths = [0] * n
    heap = [(w, i, [i]) for i, w in enumerate(probs)]
    heapq.heapify(heap)
    counter = n
    while len(heap) > 1:
        w1, _, leaves1 = heapq.heappop(heap)
        w2, _, leaves2 = heapq.heappop(heap)
        for leaf in leaves1:
            depths[leaf] += 1
        for leaf in leaves2:
            depths[leaf] += 1
        heapq.heappush(heap, (w1 + w2, counter, leaves1 + leaves2))
        counter += 1
    return depths


def distance(t: Sequence[float], p: Sequence[float], metric: str) -> float:
    """Distance from candidate ``t`` to target ``p``; KL is ``KL(t || p)``."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if metric == "euclidean":
        return float(np.sum((t - p) ** 2))
    if metric == "tv":
        return float(np.max(np.abs(t - p)))
    if metric == "kl":
        mask = t > 0
        if np.any(p[mask] == 0):
            return math.inf
        return float(np.sum(t[mask] * np.log(t[mask] / p[mask])))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass(frozen=True)
class ProjectionCandidate:
    k: int
    vector: DyadicProbabilityVector
    distance: float


@dataclass(frozen=True)
class Projection:
    metric: str
    best: DyadicProbabilityVector
    best_k: int
    candidates: tuple[ProjectionCandidate, ...]


def projection_candidates(p_relaxed: Sequence[float]) -> list[tuple[int, DyadicProbabilityVector]]:
    """Huffman projections of the top ``C - k + 1`` entries for ``k = 1..C``.

    Values of ``k`` whose retained entries include a zero are skipped, since
    Huffman needs positive weights; ``k = C`` always survives.
    """
    p = np.asarray(p_relaxed, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p_relaxed must be a nonempty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p_relaxed must be a probability vector")
    C = p.size
    order = np.argsort(-p, kind="stable")
    p_sorted = p[order]
    out = []
    for k in range(1, C + 1):
        m = C - k + 1
        head = p_sorted[:m]
        if head[-1] <= 0:
            continue
        s = math.fsum(head)
        qs = huffman(list(head / s)) if m > 1 else [0]
        depths: list[int | None] = [None] * C
        for pos, q in enumerate(qs):
            depths[order[pos]] = q
        out.append((k, DyadicProbabilityVector(tuple(depths))))
    return out


def project_to_feasible(p_relaxed: Sequence[float], metric: str = "euclidean") -> Projection:
    """Project a relaxed probability vector onto the dyadic feasible set.

    Picks the candidate from :func:`projection_candidates` closest to
    ``p_relaxed``.  Near-ties (relative 1e-12) prefer more retained patterns,
    then the smaller ``k``.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    cands = [
        ProjectionCandidate(k, vec, distance(vec.to_list(), p_relaxed, metric))
        for k, vec in projection_candidates(p_relaxed)
    ]
    best = cands[0]
    for c in cands[1:]:
        if c.distance < best.distance and not math.isclose(
            c.distance, best.distance, rel_tol=1e-12, abs_tol=1e-15
        ):
            best = c
        elif math.isclose(c.distance, best.distance, rel_tol=1e-12, abs_tol=1e-15):
            if len(c.vector.active()) > len(best.vector.active()):
                best = c
    return Projection(metric, best.vector, best.k, tuple(cands))
