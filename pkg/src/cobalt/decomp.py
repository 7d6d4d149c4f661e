"""Uniform random spanning trees over the categorical variables."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreeDecomposition:
    """Undirected spanning tree on ``e`` vertices; edges are sorted (u < v) pairs."""

    e: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple(sorted((min(u, v), max(u, v)) for u, v in self.edges))
        object.__setattr__(self, "edges", edges)

    @property
    def components(self) -> tuple[tuple[int, ...], ...]:
        """Variable groups that carry one kernel term each.

        A single-variable problem has no edges and is modelled with one
        univariate component.
        """
        if self.e == 1:
            return ((0,),)
        return tuple((u, v) for u, v in self.edges)

    def is_spanning_tree(self) -> bool:
        if len(self.edges) != self.e - 1:
            return False
        parent = list(range(self.e))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v in self.edges:
            if not (0 <= u < self.e and 0 <= v < self.e):
                return False
            ru, rv = find(u), find(v)
            if ru == rv:
                return False
            parent[ru] = rv
        return len({find(x) for x in range(self.e)}) == 1

    def to_list(self) -> list[list[int]]:
        return [list(p) for p in self.edges]


def prufer_to_edges(seq, e: int) -> list[tuple[int, int]]:
    """Decode a Prufer sequence of length ``e - 2`` into tree edges."""
    degree = [1] * e
    for s in seq:
        degree[s] += 1
    leaves = [i for i in range(e) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, int(s)))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, int(s))
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return edges


def sample_spanning_tree(e: int, rng: np.random.Generator) -> TreeDecomposition:
    """Draw a labelled tree uniformly from all ``e ** (e - 2)`` candidates."""
    if e < 1:
        raise ValueError(f"need at least one variable, got {e}")
    if e == 1:
        return TreeDecomposition(1, ())
    if e == 2:
        return TreeDecomposition(2, ((0, 1),))
    seq = rng.integers(0, e, size=e - 2)
    return TreeDecomposition(e, tuple(prufer_to_edges(seq.tolist(), e)))
