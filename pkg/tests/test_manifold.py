import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cobalt.catalog import Catalog
from cobalt.errors import ValidationError
from cobalt.manifold import (
    AnchorSet,
    NeighborGraph,
    TensorGrid,
    anchor_neighbors,
    build_knn_graph,
    classical_mds,
    embed_isomap,
    embed_pca,
    geodesic_distances,
    load_anchors,
    save_anchors,
)


def _dist(x):
    x = np.asarray(x, float).reshape(len(x), -1)
    return np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))


def _graph(n, edges):
    nb = [[] for _ in range(n)]
    w = [[] for _ in range(n)]
    for i, j, d in edges:
        nb[i].append(j), w[i].append(d)
        nb[j].append(i), w[j].append(d)
    order = [np.argsort(x) for x in nb]
    return NeighborGraph(
        tuple(np.array(x)[o] for x, o in zip(nb, order)), tuple(np.array(x, float)[o] for x, o in zip(w, order)), 1
    )


def test_knn_line():
    g = build_knn_graph(np.array([0.0, 1.0, 2.0]), 1)
    assert g.edges() == {(0, 1), (1, 2)}
    assert g.bridges == ()


def test_knn_bridges_two_clusters():
    pts = np.array([[0, 0], [0.1, 0], [10, 0], [10.1, 0]], float)
    g = build_knn_graph(pts, 1)
    assert len(g.bridges) == 1 and g.is_connected()
    assert g.bridges[0] == (1, 2)


def test_knn_complete_and_bad_k():
    pts = np.random.default_rng(0).normal(size=(7, 3))
    g = build_knn_graph(pts, 6)
    assert len(g.edges()) == 21
    for k in (0, 7):
        with pytest.raises(ValidationError):
            build_knn_graph(pts, k)


def test_geodesic_examples():
    d = geodesic_distances(_graph(3, [(0, 1, 1.0), (1, 2, 1.0)]))
    assert d[0, 2] == 2.0
    d = geodesic_distances(_graph(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 10.0)]))
    assert d[0, 3] == 3.0
    pts = np.random.default_rng(1).normal(size=(6, 2))
    d = geodesic_distances(build_knn_graph(pts, 5))
    np.testing.assert_allclose(d, _dist(pts), atol=1e-12)


def test_mds_line_example():
    a = classical_mds(_dist([0.0, 1.0, 2.0]), 1)
    np.testing.assert_allclose(np.abs(a.coords[:, 0]), [1, 0, 1], atol=1e-12)
    assert a.coords[:, 0].max() == pytest.approx(1.0)
    a = classical_mds(_dist([0.0, 1.0, 2.0]), 2)
    assert a.residual_stress <= 1e-9


def test_mds_degenerate_and_bad_input():
    a = classical_mds(np.zeros((4, 4)), 2)
    assert np.all(a.coords == 0) and a.residual_stress == 0
    d = _dist([0.0, 1.0, 3.0])
    d[0, 1] += 0.5
    with pytest.raises(ValidationError, match="symmetric"):
        classical_mds(d, 1)
    with pytest.raises(ValidationError):
        classical_mds(_dist([0.0, 1.0, 3.0]), 3)


@st.composite
def point_clouds(draw):
    m = draw(st.integers(1, 3))
    n = draw(st.integers(m + 2, 12))
    return draw(arrays(np.float64, (n, m), elements=st.floats(-10, 10)))


@settings(max_examples=40, deadline=None)
@given(point_clouds())
def test_mds_reconstructs_euclidean(x):
    m = x.shape[1]
    d = _dist(x)
    if d.max() < 1e-3:
        return
    a = classical_mds(d, m)
    rec = _dist(a.coords)
    # relative to the largest distance; points may coincide
    assert np.abs(rec - d).max() <= 1e-6 * d.max()


def test_sign_convention():
    a = classical_mds(_dist(np.random.default_rng(3).normal(size=(9, 2))), 2)
    for j in range(2):
        col = a.coords[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_isomap_bundled(catalog54):
    a = embed_isomap(catalog54, 6, 2)
    assert (a.n, a.m) == (54, 2)
    # frozen after first computation (0.1288)
    assert a.residual_stress < 0.2
    b = embed_isomap(catalog54, 6, 2)
    assert a.coords.tobytes() == b.coords.tobytes()
    assert a.content_hash == b.content_hash
    a.verify()


def test_isomap_triangle_inequality(catalog54):
    from cobalt.catalog import normalize

    d = geodesic_distances(build_knn_graph(normalize(catalog54), 6))
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12)


def test_isomap_planar_and_m0():
    rng = np.random.default_rng(4)
    uv = rng.uniform(size=(30, 2))
    basis = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]])
    x = uv @ basis + 5.0
    cat = Catalog(tuple(f"p{i}" for i in range(30)), ("A", "Iy", "Iz"), x)
    # full graph so geodesics are Euclidean on the plane
    a = embed_isomap(cat, 29, 2)
    assert a.residual_stress < 1e-6
    with pytest.raises(ValidationError):
        embed_isomap(cat, 6, 0)


def test_pca_examples():
    t = np.linspace(0, 1, 8)
    x = np.stack([1 + t, 2 + 2 * t, 3 - t], axis=1)
    cat = Catalog(tuple(str(i) for i in range(8)), ("A", "Iy", "Iz"), x)
    a = embed_pca(cat, 1)
    order = np.argsort(a.coords[:, 0])
    assert list(order) in (list(range(8)), list(range(7, -1, -1)))

    rng = np.random.default_rng(5)
    x = rng.uniform(1, 2, size=(20, 3))
    cat = Catalog(tuple(str(i) for i in range(20)), ("A", "Iy", "Iz"), x)
    from cobalt.catalog import normalize

    xn = normalize(cat).values
    a = embed_pca(cat, 3)
    np.testing.assert_allclose(_dist(a.coords), _dist(xn), atol=1e-9)
    with pytest.raises(ValidationError):
        embed_pca(cat, 4)

    x = rng.normal(size=(20000, 4))
    x[:, 0] += 10
    cat = Catalog(tuple(str(i) for i in range(len(x))), ("A", "Iy", "Iz", "Jx"), x)
    # min-max scaling keeps isotropy up to sampling noise
    frac = embed_pca(cat, 1).retained_fraction
    assert frac == pytest.approx(0.25, abs=0.02)


def test_anchor_neighbors():
    a = AnchorSet(np.array([[0.0], [1.0], [2.0]]), 0.0, "t")
    assert anchor_neighbors(a, 1).edges() == {(0, 1), (1, 2)}
    assert len(anchor_neighbors(a, 2).edges()) == 3
    b = AnchorSet(np.array([[0.0, 0], [0.1, 0], [9, 0], [9.1, 0]]), 0.0, "t")
    assert anchor_neighbors(b, 1).is_connected()


def test_anchor_lock_and_roundtrip(tmp_path, catalog54):
    a = embed_isomap(catalog54)
    with pytest.raises(ValueError):
        a.coords[0, 0] = 1.0
    side = save_anchors(a, tmp_path / "anchors.csv")
    assert side.exists()
    b = load_anchors(tmp_path / "anchors.csv")
    assert b.content_hash == a.content_hash and b.meta["k"] == 6
    # tampering is detected on load
    text = (tmp_path / "anchors.csv").read_text().splitlines()
    parts = text[1].split(",")
    parts[1] = "123.0"
    text[1] = ",".join(parts)
    (tmp_path / "anchors.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(ValidationError, match="hash"):
        load_anchors(tmp_path / "anchors.csv")


def test_tensor_grid():
    a = AnchorSet(np.array([[0.0, 1], [2, 3], [4, 5]]), 0.0, "t")
    g = TensorGrid.shared(a, 2)
    assert (g.e, g.m, g.D, g.sizes, g.n_combinations) == (2, 2, 4, (3, 3), 9)
    np.testing.assert_array_equal(g.latent([2, 0]), [4, 5, 0, 1])
    with pytest.raises(ValidationError):
        g.latent([3, 0])
