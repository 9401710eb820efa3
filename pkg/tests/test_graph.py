import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtgnn import ndtensor as nd
from rtgnn.graph import (
    Graph,
    GraphFormatError,
    Split,
    generate_sbm,
    load_graph,
    make_split,
    normalize_adjacency,
    save_graph,
)

from .conftest import finite_difference, relative_error


class TestNormalize:
    def test_isolated_node(self):
        assert np.array_equal(normalize_adjacency(np.zeros((1, 1))).data, [[1.0]])

    def test_two_nodes_one_edge(self):
        out = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])).data
        assert np.allclose(out, 0.5, atol=1e-15, rtol=0)

    def test_zero_weight_edge_is_no_edge(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        assert np.array_equal(normalize_adjacency(a).data, normalize_adjacency(a * np.array([1, 1, 0])).data)

    def test_weighted_degrees(self):
        a = np.array([[0.0, 0.5], [0.5, 0.0]])
        out = normalize_adjacency(a).data
        assert out[0, 1] == pytest.approx(0.5 / 1.5)
        assert out[0, 0] == pytest.approx(1 / 1.5)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            normalize_adjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="non-negative"):
            normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_differentiable_matches_constant_path(self):
        rng = np.random.default_rng(0)
        w = rng.random((5, 5))
        a = np.triu(w, 1) + np.triu(w, 1).T
        const = normalize_adjacency(a).data
        taped = normalize_adjacency(nd.parameter(a)).data
        assert np.allclose(const, taped, atol=1e-15)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        w = rng.random((4, 4))
        a = np.triu(w, 1) + np.triu(w, 1).T
        probe = rng.normal(size=(4, 4))

        def f(x):
            return float((normalize_adjacency(nd.constant(x), validate=False).data * probe).sum())

        leaf = nd.parameter(a)
        grads = nd.backward(nd.sum_all(nd.mul(normalize_adjacency(leaf), nd.constant(probe))))
        assert relative_error(grads[leaf], finite_difference(f, a)) < 1e-6

    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_symmetric_with_spectral_radius_at_most_one(self, n, seed):
        rng = np.random.default_rng(seed)
        w = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
        a = np.triu(w, 1) + np.triu(w, 1).T
        out = normalize_adjacency(a).data
        assert np.allclose(out, out.T, atol=1e-12, rtol=0)
        v = np.ones(n) / np.sqrt(n)
        for _ in range(200):
            v = out @ v
            norm = np.linalg.norm(v)
            if norm == 0:
                break
            v /= norm
        assert np.linalg.norm(out @ v) <= 1 + 1e-9
        assert np.max(np.abs(np.linalg.eigvalsh(out))) <= 1 + 1e-9


class TestSplit:
    def test_paper_ratios(self):
        s = make_split(100, 0.05, 0.15, 0)
        assert (len(s.train), len(s.val), len(s.test)) == (5, 15, 80)

    def test_deterministic(self):
        a, b = make_split(500, 0.05, 0.15, 7), make_split(500, 0.05, 0.15, 7)
        for x, y in zip((a.train, a.val, a.test), (b.train, b.val, b.test)):
            assert np.array_equal(x, y)

    def test_fractions_out_of_range(self):
        with pytest.raises(ValueError):
            make_split(100, 0.5, 0.6, 0)
        with pytest.raises(ValueError):
            make_split(100, 0.0, 0.1, 0)

    def test_rounding_nearest(self):
        s = make_split(30, 0.05, 0.15, 0)  # 1.5 -> 2, 4.5 -> 5
        assert (len(s.train), len(s.val), len(s.test)) == (2, 5, 23)

    @given(st.integers(10, 300), st.floats(0.01, 0.4), st.floats(0.0, 0.4), st.integers(0, 1000))
    def test_partition_property(self, n, tf, vf, seed):
        s = make_split(n, tf, vf, seed)
        ids = np.concatenate([s.train, s.val, s.test])
        assert len(ids) == n and len(np.unique(ids)) == n

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Split(np.array([0, 1]), np.array([1]), np.array([2]))


class TestSbm:
    def test_two_triangles(self):
        g = generate_sbm(6, 2, 1.0, 0.0, 2, 0.0, 0)
        assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5]]

    def test_noise_free_features_identical_within_class(self):
        g = generate_sbm(12, 3, 0.5, 0.1, 5, 0.0, 1)
        for c in range(3):
            rows = g.features[g.labels == c]
            assert np.all(rows == rows[0])

    def test_balanced_classes(self):
        g = generate_sbm(1000, 4, 0.02, 0.002, 64, 0.5, 0)
        assert np.bincount(g.labels).tolist() == [250] * 4

    def test_intra_class_edge_fraction(self):
        n, C, p_in, p_out = 1000, 4, 0.02, 0.002
        expected = p_in * (n / C - 1) / (p_in * (n / C - 1) + p_out * n * (C - 1) / C)
        assert expected == pytest.approx(0.77, abs=0.005)
        fracs = []
        for seed in range(5):
            g = generate_sbm(n, C, p_in, p_out, 8, 0.5, seed)
            fracs.append(np.mean(g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]))
        assert np.mean(fracs) == pytest.approx(expected, abs=0.02)

    def test_requires_homophily(self):
        with pytest.raises(ValueError):
            generate_sbm(10, 2, 0.1, 0.1, 4, 0.1, 0)

    def test_deterministic(self):
        a, b = generate_sbm(200, 4, 0.05, 0.01, 8, 0.3, 5), generate_sbm(200, 4, 0.05, 0.01, 8, 0.3, 5)
        assert a.same_as(b)


class TestGraphIO:
    def test_toy_fixture(self, toy_dir):
        g = load_graph(toy_dir)
        assert g.num_nodes == 3 and g.num_edges == 2 and g.num_classes == 2 and g.feature_dim == 2

    def test_duplicate_and_reversed_edges(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n1 0\n0 1\n")
        (tmp_path / "features.csv").write_text("1,0\n0,1\n")
        (tmp_path / "labels.csv").write_text("0\n1\n")
        assert load_graph(tmp_path).edges.tolist() == [[0, 1]]

    def test_self_loop_rejected(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 0\n")
        (tmp_path / "features.csv").write_text("1,0\n0,1\n")
        (tmp_path / "labels.csv").write_text("0\n1\n")
        with pytest.raises(GraphFormatError, match="self-loop"):
            load_graph(tmp_path)

    def test_row_mismatch(self, tmp_path):
        (tmp_path / "edges.txt").write_text("")
        (tmp_path / "features.csv").write_text("1,0\n0,1\n1,1\n")
        (tmp_path / "labels.csv").write_text("0\n1\n")
        with pytest.raises(GraphFormatError, match="rows"):
            load_graph(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(GraphFormatError, match="missing"):
            load_graph(tmp_path)

    def test_label_out_of_range(self, tmp_path):
        (tmp_path / "edges.txt").write_text("")
        (tmp_path / "features.csv").write_text("1,0\n0,1\n")
        (tmp_path / "labels.csv").write_text("0\n-1\n")
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path)

    def test_edge_out_of_range(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 5\n")
        (tmp_path / "features.csv").write_text("1,0\n0,1\n")
        (tmp_path / "labels.csv").write_text("0\n1\n")
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path)

    @given(st.integers(2, 12), st.integers(2, 4), st.integers(0, 10_000))
    def test_round_trip(self, n, C, seed):
        import tempfile

        rng = np.random.default_rng(seed)
        labels = rng.integers(0, C, size=n)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
        # class count is inferred on load as max label + 1 (at least 2)
        g = Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), rng.normal(size=(n, 3)), labels,
                  max(int(labels.max()) + 1, 2))
        with tempfile.TemporaryDirectory() as d:
            back = load_graph(save_graph(g, d))
        assert back.same_as(g)

    def test_adjacency_symmetric_binary(self):
        g = generate_sbm(50, 2, 0.3, 0.05, 4, 0.1, 3)
        a = g.adjacency
        assert np.array_equal(a, a.T) and set(np.unique(a)) <= {0.0, 1.0} and np.all(np.diag(a) == 0)
