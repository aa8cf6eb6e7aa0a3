"""Perfect matchings of {1..2m} and the two-matching graphs built from them.

A Wick expansion of a 2m-point function over a quasi-free state is a sum
over perfect matchings ("pairings").  Two pairings drawn on the same point
set form a graph in which every point has one line of each kind; its
connected components are the clusters of the linked-cluster expansion.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, prod
from typing import Iterator, Sequence

import numpy as np

MAX_ENUMERATION_M = 12


class CombinatorialBlowup(ValueError):
    """Raised when an enumeration would produce an impractical number of items."""


@dataclass(frozen=True)
class Pairing:
    """A perfect matching of {1, ..., 2m} in canonical form."""

    m: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 1 or len(self.pairs) != self.m:
            raise ValueError(f"pairing of m={self.m} needs {self.m} pairs, got {len(self.pairs)}")
        seen = set()
        for i, j in self.pairs:
            if not 1 <= i < j <= 2 * self.m:
                raise ValueError(f"invalid pair {(i, j)} for m={self.m}")
            seen.update((i, j))
        if len(seen) != 2 * self.m:
            raise ValueError("pairs overlap")
        if list(self.pairs) != sorted(self.pairs):
            raise ValueError("pairs not in canonical order")

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[int]]) -> "Pairing":
        """Build a pairing from pairs in any order or orientation."""
        canon = tuple(sorted((min(p), max(p)) for p in pairs))
        return cls(len(canon), canon)

    def partner(self) -> dict[int, int]:
        out = {}
        for i, j in self.pairs:
            out[i] = j
            out[j] = i
        return out


@dataclass(frozen=True)
class PairGraph:
    """Two pairings on the same points: oscillator lines and field lines."""

    osc_lines: Pairing
    f_lines: Pairing

    def __post_init__(self):
        if self.osc_lines.m != self.f_lines.m:
            raise ValueError("both pairings must cover the same point set")

    @property
    def m(self) -> int:
        return self.osc_lines.m


@dataclass(frozen=True)
class ComponentDecomposition:
    components: tuple[tuple[int, ...], ...]
    sizes: tuple[int, ...]


def _pairings_of(points: tuple[int, ...]) -> Iterator[tuple[tuple[int, int], ...]]:
    if not points:
        yield ()
        return
    first, rest = points[0], points[1:]
    for k, other in enumerate(rest):
        remaining = rest[:k] + rest[k + 1:]
        for tail in _pairings_of(remaining):
            yield ((first, other),) + tail


def enumerate_pairings(m: int, allow_large: bool = False) -> Iterator[Pairing]:
    """Yield every perfect matching of {1..2m} once, in lexicographic order.

    Refuses m > 12 unless ``allow_large`` is set, since the count grows as
    (2m-1)!!.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > MAX_ENUMERATION_M and not allow_large:
        raise CombinatorialBlowup(
            f"combinatorial blowup: m={m} has {pairing_count(m)} pairings; "
            "pass allow_large=True to enumerate anyway"
        )
    for pairs in _pairings_of(tuple(range(1, 2 * m + 1))):
        yield Pairing(m, pairs)


def pairing_count(m: int) -> int:
    """(2m)! / (2^m m!) as an exact integer."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return factorial(2 * m) // (2**m * factorial(m))


@lru_cache(maxsize=None)
def pairing_index_array(m: int) -> np.ndarray:
    """All pairings of 2m points as a 0-based int array of shape (count, m, 2)."""
    return np.array([p.pairs for p in enumerate_pairings(m)], dtype=np.intp) - 1


def connected_components(g: PairGraph) -> ComponentDecomposition:
    """Split the points of ``g`` into connected components.

    Each component of a two-matching graph is a cycle alternating the two
    line kinds; this is checked rather than assumed.
    """
    osc = g.osc_lines.partner()
    fl = g.f_lines.partner()
    unseen = set(range(1, 2 * g.m + 1))
    comps = []
    while unseen:
        start = min(unseen)
        comp = []
        point, use_osc = start, True
        # walk the alternating cycle until it closes
        while True:
            comp.append(point)
            unseen.discard(point)
            point = osc[point] if use_osc else fl[point]
            use_osc = not use_osc
            if point == start and use_osc:
                break
        members = tuple(sorted(set(comp)))
        if len(comp) != len(members) or len(members) % 2:
            raise AssertionError(f"component {members} is not a simple alternating cycle")
        n_osc = sum(1 for i, j in g.osc_lines.pairs if i in members)
        n_f = sum(1 for i, j in g.f_lines.pairs if i in members)
        if not n_osc == n_f == len(members) // 2:
            raise AssertionError(f"component {members} does not alternate line kinds")
        comps.append(members)
    comps.sort()
    return ComponentDecomposition(tuple(comps), tuple(len(c) for c in comps))


def connected_graph_count(m: int) -> int:
    """Number of connected two-matching graphs on 2m labelled points, (2m)!/(2m)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return factorial(2 * m) // (2 * m)


def decomposition_count(n: int, sizes: Sequence[int]) -> int:
    """Ordered splits of 2n points into blocks of sizes 2*m_a: (2n)!/prod (2m_a)!."""
    if any(m < 1 for m in sizes):
        raise ValueError("all block half-sizes must be >= 1")
    if sum(sizes) != n:
        raise ValueError(f"block half-sizes {list(sizes)} do not sum to n={n}")
    return factorial(2 * n) // prod(factorial(2 * m) for m in sizes)


def compositions(n: int) -> Iterator[tuple[int, ...]]:
    """Ordered tuples of positive integers summing to n."""
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in compositions(n - first):
            yield (first,) + rest


def linked_cluster_count(n: int) -> Fraction:
    """Total number of (P, P') pairs recovered from the cluster decomposition.

    sum_k 1/k! sum_{m_1+..+m_k=n} decomposition_count * prod connected_graph_count,
    which must equal pairing_count(n)**2.
    """
    total = Fraction(0)
    for comp in compositions(n):
        k = len(comp)
        term = decomposition_count(n, comp) * prod(connected_graph_count(m) for m in comp)
        total += Fraction(term, factorial(k))
    return total
