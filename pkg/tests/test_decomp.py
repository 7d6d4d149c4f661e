import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from cobalt.decomp import TreeDecomposition, prufer_to_edges, sample_spanning_tree


def all_labeled_trees(e):
    """Enumerate spanning trees by brute force over (e-1)-edge subsets."""
    pairs = list(itertools.combinations(range(e), 2))
    out = []
    for sub in itertools.combinations(pairs, e - 1):
        t = TreeDecomposition(e, sub)
        if t.is_spanning_tree():
            out.append(t.edges)
    return out


@pytest.mark.parametrize("e,count", [(2, 1), (3, 3), (4, 16), (5, 125)])
def test_cayley_counts(e, count):
    assert len(all_labeled_trees(e)) == count == e ** (e - 2)


def test_trivial_cases():
    rng = np.random.default_rng(0)
    assert sample_spanning_tree(2, rng).edges == ((0, 1),)
    t = sample_spanning_tree(1, rng)
    assert t.edges == () and t.components == ((0,),)
    with pytest.raises(ValueError):
        sample_spanning_tree(0, rng)


def test_prufer_decode_known():
    # the sequence (3, 3, 3) gives the star centred on 3
    assert sorted(prufer_to_edges([3, 3, 3], 5)) == [(0, 3), (1, 3), (2, 3), (3, 4)]


@pytest.mark.parametrize("e,draws,seed", [(3, 30000, 11), (4, 160000, 12), (5, 250000, 13)])
def test_uniformity(e, draws, seed):
    rng = np.random.default_rng(seed)
    counts = Counter(sample_spanning_tree(e, rng).edges for _ in range(draws))
    trees = all_labeled_trees(e)
    assert set(counts) == set(trees)
    p = chisquare([counts[t] for t in trees]).pvalue
    assert p > 0.001


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_always_spanning_tree(e, seed):
    t = sample_spanning_tree(e, np.random.default_rng(seed))
    assert t.is_spanning_tree()
    assert len(t.components) == max(e - 1, 1)


def test_is_spanning_tree_rejects_cycles():
    assert not TreeDecomposition(4, ((0, 1), (1, 2), (0, 2))).is_spanning_tree()
    assert not TreeDecomposition(4, ((0, 1), (2, 3))).is_spanning_tree()
