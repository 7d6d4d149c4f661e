"""Additive LCB acquisition over the anchored tensor grid.

The acquisition is minimized only over anchor-index designs inside an
L-infinity trust region around the incumbent. Because the surrogate is
additive over tree components, each component's LCB contribution is
tabulated once over its admissible anchor pairs and a design's value is a
sum of table lookups.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .gp import Prediction, SurrogatePosterior
from .manifold import DEFAULT_K, AnchorSet, NeighborGraph, TensorGrid, anchor_neighbors, shortest_path_tree

log = logging.getLogger(__name__)

TAU_SUCC = 3
TAU_FAIL = 5
_EXHAUSTIVE_FALLBACK = 100_000


def lcb(pred: Prediction, kappa: float) -> np.ndarray:
    """Per-edge lower confidence bound; the constant mean is added once."""
    if kappa < 0:
        raise ValidationError("kappa must be non-negative")
    return pred.offset + np.sum(pred.edge_means - kappa * pred.edge_stds, axis=-1)


@dataclass(frozen=True)
class TrustRegion:
    center: tuple[int, ...]
    center_z: np.ndarray
    length: float
    L_min: float
    L_max: float
    L_init: float
    n_succ: int = 0
    n_fail: int = 0
    restarts: int = 0

    def __post_init__(self):
        if not (self.L_min <= self.L_max):
            raise ValidationError("trust region needs L_min <= L_max")

    def recentered(self, design, grid: TensorGrid) -> "TrustRegion":
        return replace(self, center=tuple(int(v) for v in design), center_z=grid.latent(design))

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "length": self.length,
            "n_succ": self.n_succ,
            "n_fail": self.n_fail,
            "restarts": self.restarts,
        }


def trust_region_bounds(anchors: AnchorSet) -> tuple[float, float, float]:
    """(L_init, L_min, L_max) derived from the anchor geometry."""
    span = anchors.span()
    L_min = 2.0 * float(np.median(anchors.nearest_spacing()))
    L_max = 2.0 * span
    L_init = float(np.clip(0.8 * span, L_min, L_max))
    return L_init, min(L_min, L_max), L_max


def initial_trust_region(grid: TensorGrid, center, L_init=None, L_min=None, L_max=None) -> TrustRegion:
    d_init, d_min, d_max = trust_region_bounds(grid.anchors[0])
    L_init = d_init if L_init is None else float(L_init)
    L_min = d_min if L_min is None else float(L_min)
    L_max = d_max if L_max is None else float(L_max)
    center = tuple(int(v) for v in grid.check(center))
    return TrustRegion(center, grid.latent(center), float(np.clip(L_init, L_min, L_max)), L_min, L_max, L_init)


def update_trust_region(tr: TrustRegion, improved: bool, new_center=None, grid: TensorGrid | None = None) -> TrustRegion:
    """TuRBO-style expand/shrink; shrinking below ``L_min`` restarts at ``L_init``."""
    if improved:
        n_succ, n_fail = tr.n_succ + 1, 0
    else:
        n_succ, n_fail = 0, tr.n_fail + 1
    length, restarts = tr.length, tr.restarts
    if n_succ >= TAU_SUCC:
        length, n_succ = min(2.0 * length, tr.L_max), 0
    elif n_fail >= TAU_FAIL:
        length, n_fail = length / 2.0, 0
        if length < tr.L_min:
            length, restarts = min(max(tr.L_init, tr.L_min), tr.L_max), restarts + 1
    out = replace(tr, length=length, n_succ=n_succ, n_fail=n_fail, restarts=restarts)
    if improved and new_center is not None and grid is not None:
        out = out.recentered(new_center, grid)
    return out


def admissible_anchors(grid: TensorGrid, tr: TrustRegion) -> list[np.ndarray]:
    """Per-variable anchor indices inside the trust-region box."""
    half = tr.length / 2.0
    out = []
    m = grid.m
    for i, a in enumerate(grid.anchors):
        c = tr.center_z[i * m : (i + 1) * m]
        if np.isinf(half):
            idx = np.arange(a.n)
        else:
            idx = np.flatnonzero(np.max(np.abs(a.coords - c), axis=1) <= half)
        if tr.center[i] not in idx:
            idx = np.union1d(idx, [tr.center[i]])
        out.append(idx.astype(int))
    return out


def n_admissible(sets) -> int:
    out = 1
    for s in sets:
        out *= len(s)
    return out


def count_unseen(sets, seen) -> int:
    members = [set(s.tolist()) for s in sets]
    inside = sum(1 for d in seen if all(v in members[i] for i, v in enumerate(d)))
    return n_admissible(sets) - inside


@dataclass(frozen=True)
class EvoConfig:
    population: int = 50
    generations: int = 100
    p_mut: float = 0.3
    p_cross: float = 0.5
    tournament: int = 3
    elitism: int = 1


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Anchor grid plus the latent-space neighbour graph and Dijkstra predecessors."""

    grid: TensorGrid
    graph: NeighborGraph
    predecessors: np.ndarray

    @classmethod
    def build(cls, grid: TensorGrid, k: int = DEFAULT_K) -> "SearchSpace":
        if len({id(a) for a in grid.anchors}) != 1:
            raise ValidationError("search space expects one shared anchor set")
        graph = anchor_neighbors(grid.anchors[0], min(k, grid.anchors[0].n - 1))
        _, pred = shortest_path_tree(graph)
        return cls(grid, graph, pred)

    def next_hop(self, a: int, b: int) -> int:
        """First step on the shortest anchor-graph path from ``a`` to ``b``."""
        if a == b:
            return a
        p = self.predecessors[b, a]
        return a if p < 0 else int(p)


@dataclass(frozen=True)
class AcquisitionResult:
    design: tuple[int, ...]
    value: float
    stalled: bool = False
    seen: bool = False
    n_candidates: int = 0
    trace: list = field(default_factory=list)


def component_tables(post: SurrogatePosterior, grid: TensorGrid, sets, kappa: float):
    """LCB contribution of every component over its admissible anchor pairs.

    Returns (tables, offset) where ``tables[c]`` is indexed by the component's
    anchor indices and holds +inf outside the admissible sets.
    """
    if kappa < 0:
        raise ValidationError("kappa must be non-negative")
    tables = []
    for c, comp in enumerate(post.tree.components):
        shape = tuple(grid.anchors[v].n for v in comp)
        tab = np.full(shape, np.inf)
        mesh = np.array(list(itertools.product(*[sets[v] for v in comp])))
        Zc = np.concatenate([grid.anchors[v].coords[mesh[:, j]] for j, v in enumerate(comp)], axis=1)
        mu, var = post.component_moments(c, Zc)
        tab[tuple(mesh.T)] = mu - kappa * np.sqrt(np.clip(var, 0.0, None))
        tables.append(tab)
    offset = post.scaler.y_mean + post.scaler.y_scale * float(np.mean([h.mu0 for h in post.draws]))
    return tables, offset


class TableObjective:
    """Vectorized LCB over designs from per-component lookup tables."""

    def __init__(self, tree, tables, offset):
        self.components = tree.components
        self.tables = tables
        self.offset = offset

    def __call__(self, designs) -> np.ndarray:
        d = np.atleast_2d(np.asarray(designs, dtype=int))
        out = np.full(d.shape[0], self.offset)
        for comp, tab in zip(self.components, self.tables):
            out += tab[tuple(d[:, v] for v in comp)]
        return out


def enumerate_argmin(objective, sets) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimizer over the product of admissible sets (first in lexicographic order on ties)."""
    designs = np.array(list(itertools.product(*sets)))
    vals = objective(designs)
    i = int(np.argmin(vals))
    return tuple(int(v) for v in designs[i]), float(vals[i])


def _tournament(vals, n, k, rng):
    idx = rng.integers(0, len(vals), size=(n, k))
    return idx[np.arange(n), np.argmin(vals[idx], axis=1)]


def evolve(objective, space: SearchSpace, sets, incumbent, cfg: EvoConfig, rng, seen=frozenset()) -> AcquisitionResult:
    """Discrete evolutionary minimization of ``objective`` over the admissible product."""
    e = len(sets)
    incumbent = tuple(int(v) for v in incumbent)
    total = n_admissible(sets)
    if total <= 1:
        return AcquisitionResult(incumbent, float(objective([incumbent])[0]), True, incumbent in seen, 1)

    n = space.graph.n
    member = np.zeros((e, n), dtype=bool)
    for i, s in enumerate(sets):
        member[i, s] = True
    # per-variable admissible neighbour lists, padded for vectorized draws
    width = max(len(nb) for nb in space.graph.neighbors)
    pad = np.zeros((e, n, width), dtype=int)
    count = np.zeros((e, n), dtype=int)
    for i in range(e):
        for a, nb in enumerate(space.graph.neighbors):
            ok = nb[member[i, nb]]
            pad[i, a, : ok.size] = ok
            count[i, a] = ok.size
    cols = np.arange(e)

    cache: dict[tuple[int, ...], float] = {}
    order: dict[tuple[int, ...], int] = {}

    def score(pop):
        vals = objective(pop)
        for row, v in zip(pop.tolist(), vals.tolist()):
            key = tuple(row)
            if key not in cache:
                cache[key] = v
                order[key] = len(order)
        return vals

    P = max(cfg.population, 2)
    pop = np.empty((P, e), dtype=int)
    pop[0] = incumbent
    for i, s in enumerate(sets):
        pop[1:, i] = rng.choice(s, size=P - 1)
    vals = score(pop)
    trace = [float(vals.min())]

    n_elite = min(cfg.elitism, P)
    n_child = P - n_elite
    for _ in range(cfg.generations):
        if len(cache) == total:
            break  # every admissible design has been scored
        best = pop[np.argmin(vals)].copy()
        elite = pop[np.argsort(vals, kind="stable")[:n_elite]]
        a = pop[_tournament(vals, n_child, cfg.tournament, rng)]
        b = pop[_tournament(vals, n_child, cfg.tournament, rng)]
        child = np.where(rng.uniform(size=(n_child, e)) < cfg.p_cross, b, a)

        # neighbour mutation within the admissible sets
        cnt = count[cols, child]
        mutate = (rng.uniform(size=(n_child, e)) < cfg.p_mut) & (cnt > 0)
        pick = (rng.uniform(size=(n_child, e)) * np.maximum(cnt, 1)).astype(int)
        child = np.where(mutate, pad[cols, child, pick], child)

        # geodesic drift of one differing variable toward the population best
        drift = rng.uniform(size=n_child) < cfg.p_mut
        differ = child != best
        keys = np.where(differ, rng.uniform(size=(n_child, e)), -1.0)
        var = np.argmax(keys, axis=1)
        rows = np.flatnonzero(drift & differ.any(axis=1))
        if rows.size:
            v = var[rows]
            cur = child[rows, v]
            hop = space.predecessors[best[v], cur]
            hop = np.where(hop < 0, cur, hop)
            ok = member[v, hop]
            child[rows[ok], v[ok]] = hop[ok]

        pop = np.vstack([elite, child])
        vals = score(pop)
        trace.append(float(vals.min()))

    # prefer designs not yet evaluated, then lowest LCB, then discovery order
    unseen = [k for k in cache if k not in seen]
    if not unseen and count_unseen(sets, seen) > 0:
        if total <= _EXHAUSTIVE_FALLBACK:
            score(np.array(list(itertools.product(*sets))))
        else:
            extra = np.empty((20 * P, e), dtype=int)
            for i, s in enumerate(sets):
                extra[:, i] = rng.choice(s, size=20 * P)
            score(extra)
        unseen = [k for k in cache if k not in seen]
    pool = unseen if unseen else list(cache)
    pick = min(pool, key=lambda k: (cache[k], order[k]))
    return AcquisitionResult(pick, cache[pick], False, pick in seen, total, trace)


def maximize_acquisition(
    post: SurrogatePosterior,
    tr: TrustRegion,
    space: SearchSpace,
    kappa: float,
    cfg: EvoConfig,
    rng: np.random.Generator,
    seen=frozenset(),
) -> AcquisitionResult:
    """Best LCB design in the trust region, found by the evolutionary search."""
    sets = admissible_anchors(space.grid, tr)
    if n_admissible(sets) <= 1:
        return AcquisitionResult(tr.center, float("nan"), True, tr.center in seen, 1)
    tables, offset = component_tables(post, space.grid, sets, kappa)
    objective = TableObjective(post.tree, tables, offset)
    return evolve(objective, space, sets, tr.center, cfg, rng, seen)
