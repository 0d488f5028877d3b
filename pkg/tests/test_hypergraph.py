import json

import numpy as np
import pytest

from nirfex import autodiff as ad
from nirfex.autodiff import Tensor
from nirfex.gradcheck import grad_check
from nirfex.hypergraph import (
    Hypergraph,
    default_hypergraph,
    degrees,
    hgnn_conv,
    load_incidence,
    parse_incidence,
    propagation_matrix,
)

RNG = np.random.default_rng(11)


def graph_from_matrix(h) -> Hypergraph:
    h = np.asarray(h, dtype=float)
    doc = {
        "vertices": [f"v{i}" for i in range(h.shape[0])],
        "edges": [f"e{j}" for j in range(h.shape[1])],
        "incidence": h.tolist(),
    }
    return parse_incidence(json.dumps(doc))


def random_graph(rng, max_v=6, max_e=4) -> Hypergraph:
    while True:
        nv = int(rng.integers(2, max_v + 1))
        ne = int(rng.integers(1, max_e + 1))
        h = (rng.random((nv, ne)) < 0.5).astype(float)
        if h.sum(axis=1).min() >= 1 and h.sum(axis=0).min() >= 1:
            return graph_from_matrix(h)


class TestLoading:
    def test_two_vertices_one_edge(self):
        g = parse_incidence("classes: e\na: e\nb: e\n")
        np.testing.assert_array_equal(g.incidence, [[1.0], [1.0]])

    def test_singleton_edges_identity(self):
        g = parse_incidence("classes: x y z\na: x\nb: y\nc: z\n")
        np.testing.assert_array_equal(g.incidence, np.eye(3))

    def test_empty_edge_rejected(self):
        with pytest.raises(ValueError, match="y"):
            parse_incidence("classes: x y\na: x\nb: x\n")

    def test_isolated_vertex_rejected(self):
        with pytest.raises(ValueError, match="b"):
            parse_incidence("classes: x\na: x\nb:\n")

    def test_non_binary_entry_rejected(self):
        doc = {"vertices": ["a"], "edges": ["x"], "incidence": [[0.5]]}
        with pytest.raises(ValueError, match="0 or 1"):
            parse_incidence(json.dumps(doc))

    def test_unknown_class_named(self):
        with pytest.raises(ValueError, match="nope"):
            parse_incidence("classes: x\na: nope\n")

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            parse_incidence("classes: x\na: x\na: x\n")

    def test_json_and_file_round_trip(self, tmp_path):
        g = default_hypergraph()
        path = tmp_path / "graph.json"
        path.write_text(
            json.dumps(
                {
                    "vertices": list(g.vertex_names),
                    "edges": list(g.edge_names),
                    "incidence": g.incidence.tolist(),
                }
            )
        )
        g2 = load_incidence(path)
        np.testing.assert_array_equal(g.incidence, g2.incidence)
        assert g.vertex_names == g2.vertex_names

    def test_default_table_shape(self):
        g = default_hypergraph()
        assert g.n_edges == 6
        assert g.n_vertices == 13
        assert "happiness" in g.edge_names
        d_v, d_e = degrees(g)
        assert d_v.min() >= 1 and d_e.min() >= 1


class TestDegrees:
    def test_shared_edge(self):
        g = graph_from_matrix([[1.0], [1.0]])
        d_v, d_e = degrees(g)
        np.testing.assert_array_equal(d_v, [1.0, 1.0])
        np.testing.assert_array_equal(d_e, [2.0])

    def test_identity(self):
        d_v, d_e = degrees(graph_from_matrix(np.eye(3)))
        np.testing.assert_array_equal(d_v, np.ones(3))
        np.testing.assert_array_equal(d_e, np.ones(3))

    def test_row_col_sums(self):
        d_v, d_e = degrees(graph_from_matrix([[1.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(d_v, [2.0, 1.0])
        np.testing.assert_array_equal(d_e, [2.0, 1.0])


class TestPropagation:
    def test_hand_case(self):
        # D_v = I, D_e = (2): [[1],[1]] * 1/2 * [[1,1]] evaluated by hand.
        p = propagation_matrix(graph_from_matrix([[1.0], [1.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_identity_graph(self):
        p = propagation_matrix(graph_from_matrix(np.eye(4)))
        np.testing.assert_allclose(p, np.eye(4), atol=1e-15)

    def test_symmetric_psd_contractive(self):
        # Eigenvalue oracle: numpy's symmetric eigensolver.
        for _ in range(30):
            p = propagation_matrix(random_graph(RNG))
            np.testing.assert_array_equal(p, p.T)
            eig = np.linalg.eigvalsh(p)
            assert eig.min() >= -1e-10
            assert eig.max() <= 1.0 + 1e-10

    def test_constant_vector_preserved_on_regular_graph(self):
        p = propagation_matrix(graph_from_matrix([[1.0], [1.0]]))
        np.testing.assert_allclose(p @ np.ones(2), np.ones(2), atol=1e-10)


class TestConv:
    def test_hand_case_2x1(self):
        g = graph_from_matrix([[1.0], [1.0]])
        out = hgnn_conv(np.array([[1.0], [0.0]]), g, np.array([[1.0]]))
        np.testing.assert_allclose(out.data, [[0.5], [0.5]], atol=1e-15)

    def test_identity_propagation_nonnegative(self):
        g = graph_from_matrix(np.eye(3))
        e = RNG.random((3, 2))
        out = hgnn_conv(e, g, np.eye(2))
        np.testing.assert_allclose(out.data, e, atol=1e-15)

    def test_relu_range_non_final(self):
        g = random_graph(RNG)
        e = RNG.normal(size=(g.n_vertices, 3))
        out = hgnn_conv(e, g, RNG.normal(size=(3, 2)))
        assert out.data.min() >= 0.0

    def test_final_layer_keeps_sign(self):
        g = graph_from_matrix([[1.0], [1.0]])
        out = hgnn_conv(np.array([[-2.0], [-2.0]]), g, np.array([[1.0]]), final_layer=True)
        assert out.data.min() < 0.0

    def test_matches_direct_dense_oracle(self):
        # Oracle: explicit diag-matrix chain, built independently here.
        for _ in range(20):
            g = random_graph(RNG)
            d_in, d_out = int(RNG.integers(1, 4)), int(RNG.integers(1, 4))
            e = RNG.normal(size=(g.n_vertices, d_in))
            theta = RNG.normal(size=(d_in, d_out))
            h = g.incidence
            dv = np.diag(1.0 / np.sqrt(h.sum(axis=1)))
            de = np.diag(1.0 / h.sum(axis=0))
            want = np.maximum(dv @ h @ de @ h.T @ dv @ e @ theta, 0.0)
            got = hgnn_conv(e, g, theta).data
            assert np.abs(got - want).max() <= 1e-12

    def test_permutation_equivariance(self):
        g = random_graph(RNG)
        perm = RNG.permutation(g.n_vertices)
        gp = graph_from_matrix(g.incidence[perm])
        e = RNG.normal(size=(g.n_vertices, 3))
        theta = RNG.normal(size=(3, 2))
        out = hgnn_conv(e, g, theta).data
        out_p = hgnn_conv(e[perm], gp, theta).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)

    def test_shape_errors(self):
        g = graph_from_matrix([[1.0], [1.0]])
        with pytest.raises(ValueError):
            hgnn_conv(np.ones((3, 1)), g, np.ones((1, 1)))
        with pytest.raises(ValueError):
            hgnn_conv(np.ones((2, 2)), g, np.ones((1, 1)))

    def test_gradients(self):
        g = random_graph(RNG)
        e = Tensor(RNG.normal(size=(g.n_vertices, 3)), requires_grad=True)
        theta = Tensor(RNG.normal(size=(3, 2)), requires_grad=True)

        def loss():
            out = hgnn_conv(e, g, theta)
            return ad.sum_(ad.mul(out, out))

        report = grad_check(loss, {"e": e, "theta": theta}, eps=1e-5, tol=1e-4)
        assert report.passed, report.failures()
