"""Batched graphs, their sparse propagation operators, and Feature Propagation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, EmptyGraph, NoKnownNodes, ShapeMismatch


def adjacency(n: int, edges: np.ndarray) -> sparse.csr_matrix:
    """Symmetric 0/1 adjacency without self loops."""
    edges = np.asarray(edges, int).reshape(-1, 2)
    r = np.concatenate([edges[:, 0], edges[:, 1]])
    c = np.concatenate([edges[:, 1], edges[:, 0]])
    A = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    A.data[:] = 1.0  # collapse duplicates
    return A


def sym_normalize(A: sparse.csr_matrix) -> sparse.csr_matrix:
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    D = sparse.diags(inv)
    return (D @ A @ D).tocsr()


@dataclass(eq=False)
class GraphBatch:
    """Disjoint union of graphs.

    ``features`` stacks node rows of every graph; ``edges`` index into that
    stacked node set, so graphs never share an edge.
    """

    features: np.ndarray
    edges: np.ndarray
    graph_ids: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_graphs(cls, graphs) -> "GraphBatch":
        """Build from ``(features, edges)`` pairs with per-graph node indices."""
        feats, edges, ids, counts = [], [], [], []
        offset = 0
        width = None
        for g, (x, e) in enumerate(graphs):
            x = np.asarray(x, float)
            if x.ndim != 2 or x.shape[0] == 0:
                raise EmptyGraph(f"graph {g} has no nodes")
            if width is None:
                width = x.shape[1]
            elif x.shape[1] != width:
                raise ShapeMismatch("feature width differs within a batch")
            feats.append(x)
            edges.append(np.asarray(e, int).reshape(-1, 2) + offset)
            ids.append(np.full(len(x), g))
            counts.append(len(x))
            offset += len(x)
        if not feats:
            raise EmptyGraph("empty batch")
        return cls(np.vstack(feats), np.vstack(edges), np.concatenate(ids),
                   np.array(counts))

    @property
    def n_graphs(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return len(self.graph_ids)

    @cached_property
    def adj(self) -> sparse.csr_matrix:
        return adjacency(self.n_nodes, self.edges)

    @cached_property
    def mean_neighbors(self) -> sparse.csr_matrix:
        """Row-normalized adjacency; isolated nodes get an all-zero row."""
        deg = np.asarray(self.adj.sum(axis=1)).ravel()
        inv = np.zeros_like(deg)
        inv[deg > 0] = 1.0 / deg[deg > 0]
        return (sparse.diags(inv) @ self.adj).tocsr()

    @cached_property
    def gcn_norm(self) -> sparse.csr_matrix:
        return sym_normalize((self.adj + sparse.eye(self.n_nodes)).tocsr())

    @cached_property
    def attention_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) of every directed edge plus one self loop per node."""
        A = self.adj.tocoo()
        loops = np.arange(self.n_nodes)
        return np.concatenate([A.col, loops]), np.concatenate([A.row, loops])

    @cached_property
    def gather_src(self) -> sparse.csr_matrix:
        src, _ = self.attention_edges
        return _selector(src, self.n_nodes)

    @cached_property
    def gather_dst(self) -> sparse.csr_matrix:
        _, dst = self.attention_edges
        return _selector(dst, self.n_nodes)

    @cached_property
    def scatter_dst(self) -> sparse.csr_matrix:
        return self.gather_dst.T.tocsr()

    @cached_property
    def pool(self) -> sparse.csr_matrix:
        """(B, N) mean-readout operator."""
        w = 1.0 / self.counts[self.graph_ids]
        return sparse.csr_matrix((w, (self.graph_ids, np.arange(self.n_nodes))),
                                 shape=(self.n_graphs, self.n_nodes))

    def split_nodes(self, values: np.ndarray) -> list[np.ndarray]:
        return np.split(values, np.cumsum(self.counts)[:-1])


def _selector(idx: np.ndarray, n: int) -> sparse.csr_matrix:
    return sparse.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)),
                             shape=(len(idx), n))


def feature_propagation(edges: np.ndarray, features: np.ndarray, known_mask,
                        max_iters: int = 40, tol: float = 1e-6) -> np.ndarray:
    """Fill unknown node rows by diffusion with known rows clamped.

    Iterates ``X <- D^-1/2 A D^-1/2 X`` and resets known rows after every step.
    Unknown rows start at zero. Components without any known node cannot be
    reached; their rows stay zero and a warning is emitted.
    """
    X0 = np.asarray(features, float)
    known = np.asarray(known_mask, bool)
    n = X0.shape[0]
    if known.shape != (n,):
        raise ShapeMismatch("known_mask must have one flag per node")
    if not known.any():
        raise NoKnownNodes("feature propagation needs at least one known node")
    if max_iters < 0:
        raise ConfigError("max_iters must be >= 0")
    if known.all():
        return X0.copy()
    A = adjacency(n, edges)
    _, labels = connected_components(A, directed=False)
    reached = np.isin(labels, np.unique(labels[known]))
    if not reached.all():
        warnings.warn(f"{int((~reached).sum())} nodes lie in components with no known "
                      "node; their features are left at zero", RuntimeWarning)
    P = sym_normalize(A)
    X = np.where(known[:, None], X0, 0.0)
    for _ in range(max_iters):
        nxt = P @ X
        nxt[known] = X0[known]
        change = np.max(np.abs(nxt - X))
        X = nxt
        if change < tol:
            break
    X[~reached] = 0.0
    return X


def random_known_mask(n: int, missing_ratio: float, rng: np.random.Generator,
                      edges: np.ndarray | None = None) -> np.ndarray:
    """Seeded mask with ``round(missing_ratio * n)`` unknown nodes.

    At least one node per connected component stays known.
    """
    if not 0.0 <= missing_ratio < 1.0:
        raise ConfigError("missing ratio must lie in [0, 1)")
    n_missing = min(int(round(missing_ratio * n)), n - 1)
    known = np.ones(n, dtype=bool)
    known[rng.permutation(n)[:n_missing]] = False
    if edges is not None:
        _, labels = connected_components(adjacency(n, edges), directed=False)
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            if not known[members].any():
                known[members[0]] = True
    return known
