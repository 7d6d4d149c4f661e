"""Isomap embedding of a catalog and the locked anchor set built from it."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .catalog import Catalog, normalize
from .errors import ValidationError

log = logging.getLogger(__name__)

DEFAULT_K = 6
DEFAULT_M = 2
_MIN_WEIGHT = 1e-12


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric weighted k-NN graph.

    ``neighbors[i]`` is a sorted index array and ``weights[i]`` the matching
    Euclidean edge lengths. ``bridges`` lists edges added to reconnect
    components.
    """

    neighbors: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    k: int
    bridges: tuple[tuple[int, int], ...] = ()

    @property
    def n(self) -> int:
        return len(self.neighbors)

    def edges(self) -> set[tuple[int, int]]:
        return {(i, int(j)) for i, nb in enumerate(self.neighbors) for j in nb if i < j}

    def to_sparse(self) -> csr_matrix:
        rows = np.concatenate([np.full(len(nb), i) for i, nb in enumerate(self.neighbors)])
        cols = np.concatenate(self.neighbors) if self.n else np.zeros(0, int)
        vals = np.concatenate(self.weights) if self.n else np.zeros(0)
        return csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def is_connected(self) -> bool:
        return connected_components(self.to_sparse(), directed=False)[0] == 1


def _points(data) -> np.ndarray:
    x = data.values if isinstance(data, Catalog) else np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValidationError("points must be finite")
    return x


def _euclidean(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_knn_graph(data, k: int) -> NeighborGraph:
    """Symmetrized k-nearest-neighbour graph, bridged until connected.

    ``data`` is a (normalized) catalog or an (n, M) array. Ties in distance
    go to the lower index.
    """
    x = _points(data)
    n = x.shape[0]
    if not (isinstance(k, (int, np.integer)) and 1 <= k < n):
        raise ValidationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    dist = _euclidean(x)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        order = order[order != i][:k]
        adj[i, order] = True
    adj |= adj.T

    bridges = []
    while True:
        ncomp, labels = connected_components(csr_matrix(adj), directed=False)
        if ncomp == 1:
            break
        cross = labels[:, None] != labels[None, :]
        masked = np.where(cross, dist, np.inf)
        i, j = divmod(int(np.argmin(masked)), n)
        i, j = min(i, j), max(i, j)
        adj[i, j] = adj[j, i] = True
        bridges.append((i, j))
    if bridges:
        log.info("k-NN graph (k=%d) was disconnected; added bridge edges %s", k, bridges)

    neighbors = tuple(np.flatnonzero(adj[i]) for i in range(n))
    weights = tuple(np.maximum(dist[i, nb], _MIN_WEIGHT) for i, nb in enumerate(neighbors))
    return NeighborGraph(neighbors, weights, int(k), tuple(bridges))


def geodesic_distances(graph: NeighborGraph) -> np.ndarray:
    """All-pairs shortest-path lengths (Dijkstra from every source)."""
    d = shortest_path(graph.to_sparse(), method="D", directed=False)
    if not np.all(np.isfinite(d)):
        raise RuntimeError("neighbour graph is disconnected; geodesics undefined")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def shortest_path_tree(graph: NeighborGraph) -> tuple[np.ndarray, np.ndarray]:
    """Distances and Dijkstra predecessor matrix over ``graph``."""
    return shortest_path(graph.to_sparse(), method="D", directed=False, return_predecessors=True)


def _orient(coords: np.ndarray) -> np.ndarray:
    # flip each axis so its largest-magnitude entry is positive
    for j in range(coords.shape[1]):
        col = coords[:, j]
        if col.size and col[np.argmax(np.abs(col))] < 0:
            coords[:, j] = -col
    return coords


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Locked latent coordinates of every catalog instance."""

    coords: np.ndarray
    residual_stress: float
    source: str
    ids: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)
    content_hash: str = field(init=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or not np.all(np.isfinite(coords)):
            raise ValidationError("anchor coordinates must be a finite (n, m) array")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(i) for i in range(coords.shape[0])))
        object.__setattr__(self, "content_hash", _hash_coords(coords))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def m(self) -> int:
        return self.coords.shape[1]

    @property
    def retained_fraction(self) -> float:
        return 1.0 - self.residual_stress

    def verify(self) -> None:
        if _hash_coords(self.coords) != self.content_hash:
            raise RuntimeError("anchor coordinates changed after locking")

    def span(self) -> float:
        """Largest per-axis extent of the anchors."""
        return float(np.max(self.coords.max(axis=0) - self.coords.min(axis=0)))

    def nearest_spacing(self) -> np.ndarray:
        d = _euclidean(self.coords)
        np.fill_diagonal(d, np.inf)
        return d.min(axis=1)

    def metadata(self) -> dict:
        return {
            "method": self.source,
            "m": self.m,
            "n": self.n,
            "residual_stress": self.residual_stress,
            "content_hash": self.content_hash,
            **self.meta,
        }


def _hash_coords(coords: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(coords.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(coords, dtype="<f8").tobytes())
    return h.hexdigest()


def classical_mds(d, m: int, ids=(), source: str = "mds") -> AnchorSet:
    """Torgerson scaling of a distance matrix into ``m`` dimensions."""
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValidationError("distance matrix must be square")
    if not np.all(np.isfinite(d)):
        raise ValidationError("distance matrix must be finite")
    scale = max(np.abs(d).max(), 1.0)
    if np.abs(d - d.T).max() > 1e-9 * scale:
        raise ValidationError("distance matrix is not symmetric")
    if not (isinstance(m, (int, np.integer)) and 1 <= m <= n - 1):
        raise ValidationError(f"target dimension must satisfy 1 <= m <= n-1={n - 1}, got {m}")

    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (d**2) @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]

    positive = np.clip(evals, 0.0, None)
    negative = -evals[evals < 0].sum()
    total = positive.sum()
    if total > 0:
        stress = 1.0 - positive[:m].sum() / total
        neg_frac = negative / total
    else:
        stress, neg_frac = 0.0, 0.0
    if neg_frac > 1e-9:
        log.info("MDS clamped negative eigenvalues (mass %.3e of positive spectrum)", neg_frac)
    coords = _orient(evecs[:, :m] * np.sqrt(positive[:m]))
    return AnchorSet(
        coords,
        float(max(stress, 0.0)),
        source,
        tuple(ids),
        {"negative_eigen_fraction": float(neg_frac)},
    )


def embed_isomap(catalog: Catalog, k: int = DEFAULT_K, m: int = DEFAULT_M) -> AnchorSet:
    """Normalize, build the k-NN graph, take geodesics, then classical MDS."""
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise ValidationError(f"latent dimension must be >= 1, got {m}")
    norm = normalize(catalog) if catalog.raw is None else catalog
    graph = build_knn_graph(norm, k)
    d = geodesic_distances(graph)
    a = classical_mds(d, m, ids=catalog.ids, source="isomap")
    meta = {**a.meta, "k": int(k), "bridges": [list(b) for b in graph.bridges]}
    return AnchorSet(a.coords, a.residual_stress, "isomap", a.ids, meta)


def embed_pca(catalog: Catalog, m: int = DEFAULT_M) -> AnchorSet:
    """Principal-component projection of the normalized attributes."""
    norm = normalize(catalog) if isinstance(catalog, Catalog) and catalog.raw is None else catalog
    x = _points(norm)
    M = x.shape[1]
    if not (isinstance(m, (int, np.integer)) and 1 <= m <= M):
        raise ValidationError(f"PCA dimension must satisfy 1 <= m <= M={M}, got {m}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(x.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    total = evals.sum()
    stress = 1.0 - evals[:m].sum() / total if total > 0 else 0.0
    coords = _orient(xc @ evecs[:, :m])
    ids = norm.ids if isinstance(norm, Catalog) else ()
    return AnchorSet(coords, float(max(stress, 0.0)), "pca", ids)


def anchor_neighbors(anchors: AnchorSet, k: int = DEFAULT_K) -> NeighborGraph:
    """k-NN graph rebuilt in latent space, used by the discrete search."""
    return build_knn_graph(anchors.coords, k)


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Cartesian product of anchor sets, one per categorical variable."""

    anchors: tuple[AnchorSet, ...]

    @classmethod
    def shared(cls, anchors: AnchorSet, e: int) -> "TensorGrid":
        if e < 1:
            raise ValidationError("need at least one categorical variable")
        return cls(tuple([anchors] * e))

    @property
    def e(self) -> int:
        return len(self.anchors)

    @property
    def m(self) -> int:
        return self.anchors[0].m

    @property
    def D(self) -> int:
        return self.m * self.e

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.anchors)

    @property
    def n_combinations(self) -> int:
        out = 1
        for s in self.sizes:
            out *= s
        return out

    def check(self, design) -> np.ndarray:
        d = np.asarray(design)
        if d.shape[-1] != self.e:
            raise ValidationError(f"design needs {self.e} indices")
        for i, a in enumerate(self.anchors):
            if np.any(d[..., i] < 0) or np.any(d[..., i] >= a.n):
                raise ValidationError(f"variable {i} index outside anchor set of size {a.n}")
        return d.astype(int)

    def latent(self, designs) -> np.ndarray:
        """Map designs (..., e) of anchor indices to latent points (..., D)."""
        d = self.check(designs)
        parts = [a.coords[d[..., i]] for i, a in enumerate(self.anchors)]
        return np.concatenate(parts, axis=-1)

    def verify(self) -> None:
        for a in {id(a): a for a in self.anchors}.values():
            a.verify()


def save_anchors(anchors: AnchorSet, path) -> Path:
    """Write ``id,b1..bm`` CSV plus a JSON sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"b{j + 1}" for j in range(anchors.m)])
        for i, row in zip(anchors.ids, anchors.coords):
            w.writerow([i] + [repr(float(v)) for v in row])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(anchors.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_anchors(path) -> AnchorSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ids = tuple(r[0] for r in rows[1:])
    coords = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    extra = {k: v for k, v in meta.items() if k not in ("method", "m", "n", "residual_stress", "content_hash")}
    a = AnchorSet(coords, float(meta["residual_stress"]), meta["method"], ids, extra)
    if a.content_hash != meta["content_hash"]:
        raise ValidationError(f"{path}: anchor content hash mismatch")
    return a
