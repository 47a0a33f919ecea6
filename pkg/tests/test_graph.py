import numpy as np
import pytest
from scipy import sparse

from objdisco.graph import (
    ConvergenceError,
    centrality,
    mutual_knn_adjacency,
    normalize_adjacency,
    regularized_laplacian_apply,
    solve_cg,
)


def unit_rows(rng, n, d):
    V = rng.standard_normal((n, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def knn_oracle(vectors, k, beta):
    """Per-vertex loop with explicit tie-breaking, kept deliberately naive."""
    n = len(vectors)
    k = min(k, n - 1)
    sims = vectors @ vectors.T
    chosen = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        others.sort(key=lambda j: (-sims[i, j], j))
        chosen.append(set(others[:k]))
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and j in chosen[i] and i in chosen[j]:
                w[i, j] = np.clip(sims[i, j], 0.0, 1.0) ** beta
    return w


class TestMutualKnn:
    def test_matches_oracle(self):
        rng = np.random.default_rng(51)
        for n, d, k in [(10, 4, 3), (60, 8, 5), (120, 16, 50), (30, 3, 29)]:
            V = unit_rows(rng, n, d)
            got = mutual_knn_adjacency(V, k=k, beta=3.0).toarray()
            want = knn_oracle(V, k, 3.0)
            np.testing.assert_array_equal(got != 0.0, want != 0.0)
            np.testing.assert_allclose(got, want, rtol=1e-13)

    def test_one_sided_edge_dropped(self):
        # angles 0, 10, 20, 90 degrees; with k=1 only the first pair is mutual
        angles = np.deg2rad([0.0, 10.0, 20.0, 90.0])
        V = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        w = mutual_knn_adjacency(V, k=1, beta=1.0).toarray()
        expected = np.zeros((4, 4))
        expected[0, 1] = expected[1, 0] = np.cos(np.deg2rad(10.0))
        np.testing.assert_allclose(w, expected, atol=1e-12)

    def test_negative_similarity_clamped(self):
        V = np.array([[1.0, 0.0], [-1.0, 0.0]])
        w = mutual_knn_adjacency(V, k=1, beta=3.0).toarray()
        np.testing.assert_array_equal(w, np.zeros((2, 2)))

    def test_k_clamped_to_n_minus_one(self):
        rng = np.random.default_rng(52)
        V = unit_rows(rng, 5, 3)
        a = mutual_knn_adjacency(V, k=4, beta=2.0).toarray()
        b = mutual_knn_adjacency(V, k=100, beta=2.0).toarray()
        np.testing.assert_array_equal(a, b)

    def test_symmetry_and_zero_diagonal(self):
        rng = np.random.default_rng(53)
        V = unit_rows(rng, 40, 6)
        w = mutual_knn_adjacency(V, k=7, beta=3.0).toarray()
        np.testing.assert_array_equal(w, w.T)
        assert np.all(np.diag(w) == 0.0)

    def test_errors(self):
        with pytest.raises(ValueError, match="graph too small"):
            mutual_knn_adjacency(np.ones((1, 3)), k=1, beta=1.0)
        with pytest.raises(ValueError, match="k must be"):
            mutual_knn_adjacency(np.eye(3), k=0, beta=1.0)


class TestNormalize:
    def test_two_vertex_unit_edge(self):
        w = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        out = normalize_adjacency(w).toarray()
        np.testing.assert_allclose(out, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)

    def test_star(self):
        w = np.zeros((4, 4))
        w[0, 1:] = w[1:, 0] = 1.0
        out = normalize_adjacency(sparse.csr_matrix(w)).toarray()
        expected = np.zeros((4, 4))
        expected[0, 1:] = expected[1:, 0] = 1.0 / np.sqrt(3.0)
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_isolated_vertex_row_stays_zero(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 2.0
        out = normalize_adjacency(sparse.csr_matrix(w)).toarray()
        assert np.all(out[2] == 0.0) and np.all(out[:, 2] == 0.0)
        np.testing.assert_allclose(out[0, 1], 1.0, atol=1e-15)

    def test_spectral_radius_at_most_one(self):
        rng = np.random.default_rng(54)
        V = unit_rows(rng, 50, 8)
        w = mutual_knn_adjacency(V, k=6, beta=3.0)
        out = normalize_adjacency(w).toarray()
        eigvals = np.linalg.eigvalsh(out)
        assert np.abs(eigvals).max() <= 1.0 + 1e-12


class TestLaplacianOperator:
    def test_alpha_zero_is_identity(self):
        w = normalize_adjacency(sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
        x = np.array([2.0, -3.0])
        np.testing.assert_allclose(regularized_laplacian_apply(w, 0.0, x), x, atol=1e-15)

    def test_isolated_vertex_scaling(self):
        w = sparse.csr_matrix(np.zeros((2, 2)))
        x = np.array([1.0, 4.0])
        out = regularized_laplacian_apply(normalize_adjacency(w), 0.75, x)
        np.testing.assert_allclose(out, x / 0.25, atol=1e-15)

    def test_positive_definite_certificate(self):
        rng = np.random.default_rng(55)
        V = unit_rows(rng, 40, 6)
        w_norm = normalize_adjacency(mutual_knn_adjacency(V, k=5, beta=3.0))
        for _ in range(100):
            x = rng.standard_normal(40)
            quad = float(x @ regularized_laplacian_apply(w_norm, 0.99, x))
            assert quad > 0.0

    def test_alpha_bounds(self):
        w = normalize_adjacency(sparse.csr_matrix(np.zeros((2, 2))))
        with pytest.raises(ValueError, match="alpha"):
            regularized_laplacian_apply(w, 1.0, np.ones(2))
        with pytest.raises(ValueError, match="alpha"):
            regularized_laplacian_apply(w, -0.1, np.ones(2))


class TestConjugateGradients:
    def random_spd(self, rng, n):
        B = rng.standard_normal((n, n))
        return B @ B.T + n * np.eye(n)

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(56)
        for n in (3, 10, 40):
            A = self.random_spd(rng, n)
            b = rng.standard_normal(n)
            x = solve_cg(lambda v: A @ v, b, tol=1e-12, max_iter=10 * n)
            np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)

    def test_zero_rhs(self):
        out = solve_cg(lambda v: v, np.zeros(5))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_iteration_budget_exhausted(self):
        rng = np.random.default_rng(57)
        A = self.random_spd(rng, 20)
        with pytest.raises(ConvergenceError) as info:
            solve_cg(lambda v: A @ v, rng.standard_normal(20), tol=1e-14, max_iter=0)
        assert info.value.residual > 0.0

    def test_indefinite_operator_detected(self):
        A = np.diag([1.0, -1.0])
        with pytest.raises(ConvergenceError, match="positive definite"):
            solve_cg(lambda v: A @ v, np.array([1.0, 1.0]), tol=1e-10, max_iter=50)


class TestCentrality:
    def dense_reference(self, w, alpha):
        w_norm = normalize_adjacency(sparse.csr_matrix(w)).toarray()
        n = w.shape[0]
        L = (np.eye(n) - alpha * w_norm) / (1.0 - alpha)
        return np.linalg.solve(L, np.ones(n))

    def test_star_center_exceeds_leaves(self):
        w = np.zeros((4, 4))
        w[0, 1:] = w[1:, 0] = 1.0
        g = centrality(sparse.csr_matrix(w), alpha=0.9, tol=1e-12)
        assert g[0] > g[1]
        np.testing.assert_allclose(g[1:], g[1], atol=1e-9)
        np.testing.assert_allclose(g, self.dense_reference(w, 0.9), atol=1e-8)

    def test_isolated_vertex_value(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 1.0
        for alpha in (0.5, 0.9, 0.99):
            g = centrality(sparse.csr_matrix(w), alpha=alpha, tol=1e-13)
            assert g[2] == pytest.approx(1.0 - alpha, abs=1e-12)

    def test_cycle_is_uniform(self):
        w = np.zeros((4, 4))
        for i in range(4):
            w[i, (i + 1) % 4] = w[(i + 1) % 4, i] = 1.0
        g = centrality(sparse.csr_matrix(w), alpha=0.99, tol=1e-12)
        np.testing.assert_allclose(g, np.full(4, g[0]), atol=1e-9)
        assert g[0] == pytest.approx(1.0, abs=1e-6)

    def test_matches_dense_on_random_graph(self):
        rng = np.random.default_rng(58)
        V = unit_rows(rng, 60, 8)
        w = mutual_knn_adjacency(V, k=6, beta=3.0)
        g = centrality(w, alpha=0.99, tol=1e-12, max_iter=5000)
        np.testing.assert_allclose(g, self.dense_reference(w.toarray(), 0.99), atol=1e-8)
        assert np.all(g > 0.0)
