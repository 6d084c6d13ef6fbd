"""Abstract cube trees for measure and corona algorithms.

The measure/corona machinery only needs the combinatorial tree (parents,
children, generations).  DyadicTree provides the same methods over a real
boundary sample; SyntheticTree supports randomized unit tests at exact
rational arithmetic.
"""

from __future__ import annotations

import numpy as np


class SyntheticTree:
    """Explicit rooted tree; generation = depth from the root."""

    def __init__(self, parents: list[int | None]):
        self.parents = list(parents)
        self._children: list[list[int]] = [[] for _ in parents]
        self.roots = [i for i, p in enumerate(parents) if p is None]
        for i, p in enumerate(parents):
            if p is not None:
                self._children[p].append(i)
        self._k = [0] * len(parents)
        for i, p in enumerate(parents):
            if p is not None:
                self._k[i] = self._k[p] + 1
        self._desc: dict[int, list[int]] = {}

    # same duck-typed surface as DyadicTree
    def children_of(self, q: int) -> list[int]:
        return self._children[q]

    def parent_of(self, q: int) -> int | None:
        return self.parents[q]

    def k_of(self, q: int) -> int:
        return self._k[q]

    def length(self, q: int) -> float:
        return 2.0 ** (-self._k[q])

    def is_leaf(self, q: int) -> bool:
        return not self._children[q]

    def leaves(self) -> list[int]:
        return [i for i in range(len(self.parents)) if not self._children[i]]

    def descendants(self, q: int) -> list[int]:
        if q not in self._desc:
            out = [q]
            for ch in self._children[q]:
                out.extend(self.descendants(ch))
            self._desc[q] = out
        return self._desc[q]

    def descendants_short(self, q: int) -> list[int]:
        return [c for c in self.descendants(q) if c != q]

    def contains_cube(self, q: int, qq: int) -> bool:
        cur: int | None = qq
        while cur is not None:
            if cur == q:
                return True
            cur = self.parents[cur]
        return False

    @property
    def n_cubes(self) -> int:
        return len(self.parents)


def random_tree(rng: np.random.Generator, depth: int, max_children: int = 4,
                p_leaf: float = 0.15) -> SyntheticTree:
    """Random tree of the given maximal depth; every internal node has >= 2
    children so dyadic pigeonholing is non-trivial."""
    parents: list[int | None] = [None]
    frontier = [(0, 0)]
    while frontier:
        node, d = frontier.pop()
        if d >= depth or (d > 0 and rng.random() < p_leaf):
            continue
        for _ in range(int(rng.integers(2, max_children + 1))):
            parents.append(node)
            frontier.append((len(parents) - 1, d + 1))
    return SyntheticTree(parents)
