"""Unrolled temporal graphs.

A temporal graph over ``d`` contemporaneous variables with maximum lag ``p`` is
stored as one binary adjacency matrix over ``(p + 1) * d`` nodes.  Node
``k * d + l`` is variable ``l`` lagged by ``k`` steps, so the layout is
``[lag 0 | lag 1 | ... | lag p]``.  Entry ``adj[i, j] == 1`` means ``i -> j``.

Only contemporaneous nodes (columns ``< d``) can receive edges.  The block
``adj[:d, :d]`` is the intra-slice matrix ``W``; ``adj[k*d:(k+1)*d, :d]`` is the
inter-slice matrix ``A_k``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TemporalGraph",
    "SliceViews",
    "unrolled_index",
    "structural_mask",
    "matrix_exp_series",
    "acyclicity_value",
    "acyclicity_with_grad",
    "is_acyclic",
    "extract_slices",
    "assemble_slices",
    "threshold_extract",
]

_SERIES_TOL = 1e-12


def unrolled_index(k: int, l: int, d: int, p: int | None = None) -> int:
    """Position of variable ``l`` at lag ``k`` in the unrolled node order."""
    if d <= 0:
        raise ValueError(f"d must be positive, got {d}")
    if p is not None and not 0 <= k <= p:
        raise ValueError(f"lag {k} outside 0..{p}")
    if k < 0:
        raise ValueError(f"lag must be non-negative, got {k}")
    if not 0 <= l < d:
        raise ValueError(f"variable index {l} outside 0..{d - 1}")
    return k * d + l


def structural_mask(d: int, p: int) -> np.ndarray:
    """Boolean matrix of the positions that may carry an edge.

    Columns ``>= d`` (lagged targets) and the intra-slice diagonal are excluded.
    """
    n = (p + 1) * d
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :d] = True
    mask[np.arange(d), np.arange(d)] = False
    return mask


def matrix_exp_series(S: np.ndarray) -> np.ndarray:
    """exp(S) by the truncated power series sum_m S^m / m!.

    Terms are added until the newest one has max entry below 1e-12 and the
    remaining tail is guaranteed to shrink (``||S||_inf < m + 1``).  Intended for
    non-negative matrices, where the sum involves no cancellation.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    norm_inf = float(np.abs(S).sum(axis=1).max()) if n else 0.0
    result = np.eye(n)
    term = np.eye(n)
    m = 0
    while True:
        m += 1
        term = term @ S / m
        result += term
        if not np.any(term):
            break
        if np.abs(term).max() < _SERIES_TOL and norm_inf < m + 1:
            break
    return result


def acyclicity_value(S: np.ndarray) -> float:
    """h(S) = trace(exp(S)) - n, zero exactly when ``S`` is nilpotent."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if np.any(S < 0):
        raise ValueError("acyclicity_value expects non-negative entries")
    E = matrix_exp_series(S)
    return max(float(np.trace(E)) - S.shape[0], 0.0)


def acyclicity_with_grad(S: np.ndarray) -> tuple[float, np.ndarray]:
    """Return h(S) and dh/dS = exp(S)^T."""
    S = np.asarray(S, dtype=float)
    E = matrix_exp_series(S)
    return max(float(np.trace(E)) - S.shape[0], 0.0), E.T


def is_acyclic(adj: np.ndarray) -> bool:
    """Kahn topological elimination on the support of ``adj``."""
    A = np.asarray(adj) != 0
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    indeg = A.sum(axis=0).astype(int)
    queue = deque(np.flatnonzero(indeg == 0).tolist())
    seen = 0
    while queue:
        i = queue.popleft()
        seen += 1
        for j in np.flatnonzero(A[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(int(j))
    return seen == A.shape[0]


@dataclass(frozen=True, eq=False)
class SliceViews:
    """Intra-slice ``W`` (d x d) and inter-slice ``A`` (p x d x d) views."""

    W: np.ndarray
    A: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SliceViews):
            return NotImplemented
        return np.array_equal(self.W, other.W) and np.array_equal(self.A, other.A)

    def to_dict(self) -> dict:
        return {"W": self.W.astype(int).tolist(), "A": self.A.astype(int).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> SliceViews:
        W = np.asarray(data["W"], dtype=np.int8)
        A = np.asarray(data["A"], dtype=np.int8)
        if A.size == 0:
            A = np.zeros((0,) + W.shape, dtype=np.int8)
        return cls(W=W, A=A)


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Binary unrolled adjacency over ``(p + 1) * d`` nodes.

    Construction validates the structural invariants: no edges into lagged
    nodes, no intra-slice self loops, acyclic.
    """

    d: int
    p: int
    adj: np.ndarray

    def __post_init__(self):
        if self.d <= 0 or self.p < 0:
            raise ValueError(f"invalid sizes d={self.d}, p={self.p}")
        adj = (np.asarray(self.adj) != 0).astype(np.int8)
        n = (self.p + 1) * self.d
        if adj.shape != (n, n):
            raise ValueError(f"adjacency must be {n}x{n} for d={self.d}, p={self.p}; got {adj.shape}")
        if adj[:, self.d:].any():
            raise ValueError("edges into lagged nodes (columns >= d) are not allowed")
        if np.diag(adj[: self.d, : self.d]).any():
            raise ValueError("intra-slice self loops are not allowed")
        if not is_acyclic(adj):
            raise ValueError("temporal graph must be acyclic")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @property
    def n_nodes(self) -> int:
        return (self.p + 1) * self.d

    @classmethod
    def empty(cls, d: int, p: int) -> TemporalGraph:
        n = (p + 1) * d
        return cls(d, p, np.zeros((n, n), dtype=np.int8))

    @classmethod
    def from_edges(cls, d: int, p: int, edges) -> TemporalGraph:
        n = (p + 1) * d
        adj = np.zeros((n, n), dtype=np.int8)
        for i, j in edges:
            adj[i, j] = 1
        return cls(d, p, adj)

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    def n_edges(self) -> int:
        return int(self.adj.sum())

    def slices(self) -> SliceViews:
        return extract_slices(self)

    def __eq__(self, other):
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return self.d == other.d and self.p == other.p and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash((self.d, self.p, self.adj.tobytes()))

    def __repr__(self):
        return f"TemporalGraph(d={self.d}, p={self.p}, edges={self.edges()})"

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_dict(cls, data: dict) -> TemporalGraph:
        return cls.from_edges(int(data["d"]), int(data["p"]), data["edges"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> TemporalGraph:
        return cls.from_dict(json.loads(text))


def extract_slices(g: TemporalGraph) -> SliceViews:
    d, p = g.d, g.p
    W = g.adj[:d, :d].copy()
    A = np.stack([g.adj[k * d:(k + 1) * d, :d] for k in range(1, p + 1)]) if p else np.zeros((0, d, d), np.int8)
    return SliceViews(W=W, A=A.astype(np.int8))


def assemble_slices(views: SliceViews) -> TemporalGraph:
    """Inverse of :func:`extract_slices`."""
    d, p = views.d, views.p
    n = (p + 1) * d
    adj = np.zeros((n, n), dtype=np.int8)
    adj[:d, :d] = views.W
    for k in range(1, p + 1):
        adj[k * d:(k + 1) * d, :d] = views.A[k - 1]
    return TemporalGraph(d, p, adj)


def _reaches(adj: np.ndarray, src: int, dst: int) -> bool:
    if src == dst:
        return True
    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v == dst:
                return True
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def threshold_extract(F: np.ndarray, d: int, p: int, threshold: float = 0.5) -> TemporalGraph:
    """Binary graph from soft edge confidences.

    Entries above ``threshold`` are added greedily in descending order of
    confidence (ties by row, then column); an edge that would close a cycle is
    skipped.
    """
    F = np.asarray(F, dtype=float)
    n = (p + 1) * d
    if F.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {F.shape}")
    if not np.all(np.isfinite(F)) or F.min(initial=0.0) < 0 or F.max(initial=0.0) > 1:
        raise ValueError("edge confidences must lie in [0, 1]")
    allowed = structural_mask(d, p)
    rows, cols = np.nonzero((F > threshold) & allowed)
    order = sorted(zip(rows.tolist(), cols.tolist()), key=lambda ij: (-F[ij], ij[0], ij[1]))
    adj = np.zeros((n, n), dtype=np.int8)
    for i, j in order:
        # only intra-slice edges can close a cycle
        if i < d and _reaches(adj, j, i):
            continue
        adj[i, j] = 1
    return TemporalGraph(d, p, adj)
