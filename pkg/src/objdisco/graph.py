"""Mutual k-NN graph over unit descriptors and Katz-style centrality through
a regularized Laplacian solved with conjugate gradients.

The Laplacian is applied matrix-free as (x - alpha * W_norm x) / (1 - alpha),
which stays symmetric positive definite even for isolated vertices (their
diagonal is 1 / (1 - alpha)), unlike the degree-sandwiched form.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import sparse


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def mutual_knn_adjacency(vectors: np.ndarray, k: int, beta: float) -> sparse.csr_matrix:
    """Adjacency with an edge only where both endpoints rank each other among
    their k nearest by inner product; weights are the clamped inner product
    raised to beta. Neighbor ties break toward the lower index.
    """
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValueError("graph too small: need at least 2 descriptors")
    if k < 1:
        raise ValueError("k must be at least 1")
    n = V.shape[0]
    k = min(k, n - 1)
    sims = V @ V.T
    np.fill_diagonal(sims, -np.inf)
    neighbor = np.zeros((n, n), dtype=bool)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    np.put_along_axis(neighbor, order, True, axis=1)
    mutual = neighbor & neighbor.T
    weights = np.where(mutual, np.clip(sims, 0.0, 1.0) ** beta, 0.0)
    np.fill_diagonal(weights, 0.0)
    return sparse.csr_matrix(weights)


def normalize_adjacency(adjacency: sparse.csr_matrix) -> sparse.csr_matrix:
    """Symmetric degree normalization D^-1/2 W D^-1/2 with 0/0 = 0."""
    adjacency = adjacency.tocsr()
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degrees)
    nz = degrees > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degrees[nz])
    D = sparse.diags(inv_sqrt)
    return (D @ adjacency @ D).tocsr()


def regularized_laplacian_apply(adjacency_norm: sparse.csr_matrix, alpha: float, x: np.ndarray) -> np.ndarray:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return (x - alpha * (adjacency_norm @ x)) / (1.0 - alpha)


def solve_cg(
    operator: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> np.ndarray:
    """Conjugate gradients for a symmetric positive definite operator.

    Stops when the residual norm falls to tol relative to the rhs norm;
    raises ConvergenceError (carrying the final relative residual) otherwise.
    """
    b = np.asarray(rhs, dtype=np.float64)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * b_norm:
            return x
        q = operator(d)
        dq = float(d @ q)
        if dq <= 0:
            raise ConvergenceError("operator is not positive definite on the search direction", np.sqrt(rs) / b_norm)
        step = rs / dq
        x += step * d
        r -= step * q
        rs_next = float(r @ r)
        d = r + (rs_next / rs) * d
        rs = rs_next
    if np.sqrt(rs) <= tol * b_norm:
        return x
    raise ConvergenceError(
        f"conjugate gradients did not converge in {max_iter} iterations", np.sqrt(rs) / b_norm
    )


def centrality(
    adjacency: sparse.csr_matrix, alpha: float = 0.99, tol: float = 1e-6, max_iter: int = 1000
) -> np.ndarray:
    """Solve the regularized Laplacian against the all-ones vector.

    Entries are strictly positive; an isolated vertex gets exactly 1 - alpha.
    """
    adjacency_norm = normalize_adjacency(adjacency)
    ones = np.ones(adjacency.shape[0])
    return solve_cg(lambda x: regularized_laplacian_apply(adjacency_norm, alpha, x), ones, tol, max_iter)
