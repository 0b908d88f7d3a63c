"""Graph-recovery and application metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .graph import SliceViews, TemporalGraph, is_acyclic

__all__ = [
    "shd",
    "sid",
    "d_separated",
    "w_full",
    "LayoutRules",
    "layout_eval",
    "intervention_f1",
]


def _adjacency(g) -> np.ndarray:
    if isinstance(g, TemporalGraph):
        return g.adj.astype(bool)
    A = np.asarray(g) != 0
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square adjacency matrix, got shape {A.shape}")
    return A


def _check_pair(g1, g2):
    if isinstance(g1, TemporalGraph) and isinstance(g2, TemporalGraph):
        if (g1.d, g1.p) != (g2.d, g2.p):
            raise ValueError(f"graphs differ in size: (d={g1.d}, p={g1.p}) vs (d={g2.d}, p={g2.p})")
    A1, A2 = _adjacency(g1), _adjacency(g2)
    if A1.shape != A2.shape:
        raise ValueError(f"adjacency shapes differ: {A1.shape} vs {A2.shape}")
    return A1, A2


def shd(g1, g2) -> int:
    """Structural Hamming distance; a reversed edge counts once.

    Accepts :class:`TemporalGraph` objects or square 0/1 matrices.
    """
    A1, A2 = _check_pair(g1, g2)
    # unordered pair {i, j} differs when its (i->j, j->i) state differs
    diff = (A1 != A2) | (A1.T != A2.T)
    return int(np.triu(diff, 1).sum())


def _descendants(A: np.ndarray, i: int) -> np.ndarray:
    out = np.zeros(A.shape[0], dtype=bool)
    stack = [i]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(A[u]):
            if not out[v]:
                out[v] = True
                stack.append(int(v))
    return out


def _ancestors(A: np.ndarray, nodes) -> np.ndarray:
    out = np.zeros(A.shape[0], dtype=bool)
    stack = list(nodes)
    out[stack] = True
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(A[:, u]):
            if not out[v]:
                out[v] = True
                stack.append(int(v))
    return out


def d_separated(adj, x: int, y: int, Z) -> bool:
    """Whether ``Z`` d-separates ``x`` and ``y`` in the DAG ``adj``.

    Uses the moralised ancestral graph of ``{x, y} | Z``.
    """
    A = _adjacency(adj)
    Z = {int(z) for z in Z}
    if x in Z or y in Z:
        raise ValueError("x and y must not be in the conditioning set")
    keep = _ancestors(A, [x, y, *Z])
    sub = A & keep[:, None] & keep[None, :]
    und = sub | sub.T
    # marry parents of every kept node
    for v in np.flatnonzero(keep):
        pa = np.flatnonzero(sub[:, v])
        und[np.ix_(pa, pa)] = True
    np.fill_diagonal(und, False)
    blocked = np.zeros(A.shape[0], dtype=bool)
    blocked[list(Z)] = True
    seen = blocked.copy()
    seen[x] = True
    stack = [x]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(und[u]):
            if v == y:
                return False
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return True


def _sid_matrix(A_true: np.ndarray, A_est: np.ndarray) -> int:
    n = A_true.shape[0]
    desc = np.stack([_descendants(A_true, i) for i in range(n)])
    errors = 0
    for i in range(n):
        pa = np.flatnonzero(A_est[:, i])
        pa_set = set(pa.tolist())
        for j in range(n):
            if j == i:
                continue
            if j in pa_set:
                # adjusting for j itself implies no effect of i on j
                errors += bool(desc[i, j])
                continue
            # nodes other than i on directed i -> j paths
            on_path = desc[i] & (_ancestors(A_true, [j]))
            on_path[i] = False
            forbidden = np.zeros(n, dtype=bool)
            for w in np.flatnonzero(on_path):
                forbidden |= desc[w]
                forbidden[w] = True
            if pa.size and forbidden[pa].any():
                errors += 1
                continue
            # proper back-door graph: drop the first edges of causal paths
            G = A_true.copy()
            G[i, on_path] = False
            errors += not d_separated(G, i, j, pa_set)
    return errors


def sid(g_true, g_est, scope: str = "full") -> int:
    """Structural interventional distance.

    Counts ordered pairs ``(i, j)`` for which adjusting for the estimated
    parents of ``i`` does not identify the effect of ``i`` on ``j`` in the
    true DAG.  ``scope="intra"`` restricts both graphs to the contemporaneous
    slice first.
    """
    A_true, A_est = _check_pair(g_true, g_est)
    if scope == "intra":
        if not isinstance(g_true, TemporalGraph):
            raise ValueError("scope='intra' needs TemporalGraph inputs")
        d = g_true.d
        A_true, A_est = A_true[:d, :d], A_est[:d, :d]
    elif scope != "full":
        raise ValueError(f"scope must be 'full' or 'intra', got {scope!r}")
    if not (is_acyclic(A_true) and is_acyclic(A_est)):
        raise ValueError("sid is defined for acyclic graphs only")
    return _sid_matrix(A_true, A_est)


def w_full(views: SliceViews) -> np.ndarray:
    """Binary d x d existence matrix of any contemporaneous or lagged edge."""
    total = np.asarray(views.W, dtype=int) + np.asarray(views.A, dtype=int).sum(axis=0)
    return (total > 0).astype(np.int8)


@dataclass
class LayoutRules:
    """Role map plus physical-layout relations used to judge edges.

    ``role_map`` assigns each variable ``"A"`` (source type) or ``"C"``
    (sink type).  ``adjacency_pairs`` are unordered adjacent pairs and
    ``same_group`` partitions the sink variables.
    """

    role_map: dict[str, str]
    adjacency_pairs: set[frozenset] = field(default_factory=set)
    same_group: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        self.adjacency_pairs = {frozenset(pr) for pr in self.adjacency_pairs}
        self.validate()

    def validate(self):
        for v, role in self.role_map.items():
            if role not in ("A", "C"):
                raise ConfigError(f"role of {v!r} must be 'A' or 'C', got {role!r}")
        for pr in self.adjacency_pairs:
            if len(pr) != 2:
                raise ConfigError(f"adjacent pair must name two distinct variables, got {sorted(pr)}")
            for v in pr:
                if v not in self.role_map:
                    raise ConfigError(f"adjacent pair references unknown variable {v!r}")
        seen = set()
        for grp in self.same_group:
            for v in grp:
                if v not in self.role_map:
                    raise ConfigError(f"group references unknown variable {v!r}")
                if v in seen:
                    raise ConfigError(f"variable {v!r} appears in more than one group")
                seen.add(v)

    def group_of(self, v: str):
        for k, grp in enumerate(self.same_group):
            if v in grp:
                return k
        return None

    @classmethod
    def from_dict(cls, data: dict) -> LayoutRules:
        try:
            roles = dict(data["roles"])
        except (KeyError, TypeError) as exc:
            raise ConfigError("layout rules need a 'roles' mapping") from exc
        return cls(roles, {frozenset(pr) for pr in data.get("adjacent", [])},
                   [list(g) for g in data.get("groups", [])])

    @classmethod
    def load(cls, path) -> LayoutRules:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"rules file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"rules file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"roles": dict(self.role_map), "adjacent": sorted(sorted(pr) for pr in self.adjacency_pairs),
                "groups": [list(g) for g in self.same_group]}


def layout_eval(views: SliceViews, rules: LayoutRules, var_names=None) -> dict:
    """Classify the edges of ``w_full(views)`` by the layout rules.

    ``var_names`` gives the variable of each index; it defaults to the key
    order of ``rules.role_map``.
    """
    Wf = w_full(views)
    d = Wf.shape[0]
    names = list(rules.role_map) if var_names is None else list(var_names)
    if len(names) != d:
        raise ConfigError(f"{len(names)} variable names for a {d}-variable graph")
    for v in names:
        if v not in rules.role_map:
            raise ConfigError(f"variable {v!r} has no role in the layout rules")
    out = {"all_edges": int(Wf.sum()), "A2C_true": 0, "A2A_true": 0, "C2C_true": 0, "C2A_false": 0}
    for i, j in zip(*np.nonzero(Wf)):
        u, v = names[i], names[j]
        ru, rv = rules.role_map[u], rules.role_map[v]
        adjacent = frozenset((u, v)) in rules.adjacency_pairs
        if ru == "C" and rv == "A":
            out["C2A_false"] += 1
        elif ru == "A" and rv == "C" and adjacent:
            out["A2C_true"] += 1
        elif ru == "A" and rv == "A" and adjacent:
            out["A2A_true"] += 1
        elif ru == "C" and rv == "C":
            gu = rules.group_of(u)
            if gu is not None and gu == rules.group_of(v):
                out["C2C_true"] += 1
    return out


def intervention_f1(true_family, est_family, d: int | None = None) -> tuple[float, float, float]:
    """Micro precision, recall and F1 of target sets over interventional regimes.

    Regime 0 (observational) is excluded.  Returns ``(precision, recall, f1)``
    with the convention 0/0 = 0.
    """
    if len(true_family) != len(est_family):
        raise ValueError(f"families differ in regime count: {len(true_family)} vs {len(est_family)}")
    tp = fp = fn = 0
    for tq, eq in zip(list(true_family)[1:], list(est_family)[1:]):
        ts = {int(j) for j in tq if d is None or j < d}
        es = {int(j) for j in eq if d is None or j < d}
        tp += len(ts & es)
        fp += len(es - ts)
        fn += len(ts - es)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
