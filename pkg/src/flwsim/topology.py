"""Communication graphs, consensus weights, and the gossip averaging step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import pairwise_sum


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph over n nodes."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ContractViolation("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ContractViolation("self-loops are not allowed")
        if not np.all((a == 0) | (a == 1)):
            raise ContractViolation("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", a.astype(np.float64))

    @property
    def n(self):
        return self.adjacency.shape[0]

    def degrees(self):
        return self.adjacency.sum(axis=1)

    def is_connected(self):
        n = self.n
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(self.adjacency[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return bool(seen.all())


def complete_graph(n):
    a = np.ones((n, n)) - np.eye(n)
    return Graph(a)


def ring_graph(n):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return Graph(a)


def path_graph(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return Graph(a)


def edgeless_graph(n):
    return Graph(np.zeros((n, n)))


def graph_from_edge_list(text: str, n: int | None = None) -> Graph:
    """Parse an edge-list: one ``i j`` pair per line, 1-based node indices."""
    edges = []
    top = 0
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ContractViolation(f"edge list line {ln}: expected 'i j', got {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if i < 1 or j < 1 or i == j:
            raise ContractViolation(f"edge list line {ln}: bad edge ({i}, {j})")
        edges.append((i - 1, j - 1))
        top = max(top, i, j)
    size = n if n is not None else top
    a = np.zeros((size, size))
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    return Graph(a)


def laplacian_weights(graph: Graph) -> np.ndarray:
    """Mixing matrix W = I - (D - A) / (d_max + 1); symmetric, doubly stochastic."""
    if graph.n == 0:
        raise ContractViolation("graph must be non-empty")
    deg = graph.degrees()
    d_max = float(deg.max()) if graph.n else 0.0
    lap = np.diag(deg) - graph.adjacency
    return np.eye(graph.n) - lap / (d_max + 1.0)


def is_doubly_stochastic(W, tol: float = 1e-12) -> bool:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractViolation("weight matrix must be square")
    ok_rows = np.all(np.abs(W.sum(axis=1) - 1.0) <= tol)
    ok_cols = np.all(np.abs(W.sum(axis=0) - 1.0) <= tol)
    return bool(ok_rows and ok_cols and np.all(W >= -tol))


def spectral_gap(W, iterations: int = 1000, tol: float = 1e-12) -> float:
    """1 - |second eigenvalue|, by power iteration deflated against the uniform vector.

    Assumes a symmetric mixing matrix (true for Laplacian-based weights).
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractViolation("weight matrix must be square")
    n = W.shape[0]
    if n == 1:
        return 1.0
    ones = np.full(n, 1.0 / np.sqrt(n))
    # fixed deterministic start vector, orthogonal to the all-ones direction
    v = np.cos(np.arange(n) * 2.719) + 0.1
    v -= (v @ ones) * ones
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = W @ v
        w -= (w @ ones) * ones
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 1.0
        new_lam = norm if v @ w >= 0 else -norm
        v = w / norm
        if abs(new_lam - lam) <= tol * max(abs(new_lam), 1.0):
            lam = new_lam
            break
        lam = new_lam
    return 1.0 - abs(lam)


def consensus_step(models, W):
    """Mix models across the graph: output_i = sum_j W_ij model_j.

    The weighted sum for each node uses a fixed-order pairwise reduction, so
    uniform mixing of identical models collapses exactly.
    """
    W = np.asarray(W, dtype=np.float64)
    models = [np.asarray(m, dtype=np.float64) for m in models]
    n = W.shape[0]
    if len(models) != n:
        raise ContractViolation(f"{len(models)} models for an n={n} weight matrix")
    dims = {m.shape for m in models}
    if len(dims) != 1:
        raise ContractViolation("models must share one dimension")
    return [pairwise_sum([W[i, j] * models[j] for j in range(n)]) for i in range(n)]
