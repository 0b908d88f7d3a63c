"""Synthetic benchmarks: Erdos-Renyi temporal DAGs, SVAR series and perfect
interventions with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import RegimeDataset
from .exceptions import ConfigError
from .graph import TemporalGraph

__all__ = [
    "GenSpec",
    "WeightedTemporalGraph",
    "sample_weighted_graph",
    "generate_svar",
    "apply_perfect_intervention",
    "build_benchmark",
    "Benchmark",
    "dataset1_spec",
    "dataset2_spec",
]

_W_LOW, _W_HIGH = 0.25, 1.0


@dataclass(frozen=True)
class GenSpec:
    """Generator configuration.

    The default edge probabilities give an expected total (in + out)
    intra-slice degree of one per node and one lagged parent per variable.
    """

    d: int = 5
    p: int = 1
    intra_edge_prob: float | None = None
    inter_edge_prob: float | None = None
    eta: float = 1.0
    noise_std: float = 1.0
    T: int = 1000
    burn_in: int = 100
    Q: int = 6
    targets: list[list[int]] | None = None
    stable: bool = True
    max_draws: int = 1000

    def __post_init__(self):
        if self.intra_edge_prob is None:
            object.__setattr__(self, "intra_edge_prob", 1.0 / (self.d - 1) if self.d > 1 else 0.0)
        if self.inter_edge_prob is None:
            object.__setattr__(self, "inter_edge_prob", 1.0 / self.d if self.d > 0 else 0.0)
        self.validate()

    def validate(self):
        if self.d < 1 or self.p < 0:
            raise ConfigError(f"invalid sizes d={self.d}, p={self.p}")
        for name in ("intra_edge_prob", "inter_edge_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.eta < 1:
            raise ConfigError(f"eta must be >= 1, got {self.eta}")
        if self.noise_std <= 0:
            raise ConfigError(f"noise_std must be positive, got {self.noise_std}")
        if self.burn_in < 0 or self.T <= self.p + self.burn_in:
            raise ConfigError(f"need T > p + burn_in (T={self.T}, p={self.p}, burn_in={self.burn_in})")
        if self.Q < 1:
            raise ConfigError(f"Q must be >= 1, got {self.Q}")
        if self.max_draws < 1:
            raise ConfigError(f"max_draws must be >= 1, got {self.max_draws}")
        if self.targets is not None:
            if len(self.targets) != self.Q:
                raise ConfigError(f"targets has {len(self.targets)} entries, expected Q={self.Q}")
            if list(self.targets[0]):
                raise ConfigError("regime 0 is observational; its target set must be empty")
            for tq in self.targets:
                for j in tq:
                    if not 0 <= j < self.d:
                        raise ConfigError(f"target {j} outside 0..{self.d - 1}")

    def to_dict(self) -> dict:
        return {
            "d": self.d, "p": self.p,
            "intra_edge_prob": self.intra_edge_prob, "inter_edge_prob": self.inter_edge_prob,
            "eta": self.eta, "noise_std": self.noise_std, "T": self.T, "burn_in": self.burn_in,
            "Q": self.Q, "targets": self.targets, "stable": self.stable, "max_draws": self.max_draws,
        }

    @classmethod
    def from_dict(cls, data: dict) -> GenSpec:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**data)


def dataset1_spec(**overrides) -> GenSpec:
    """5 variables, lag 1, observational regime plus 5 single-target regimes."""
    return replace(GenSpec(d=5, p=1, Q=6), **overrides)


def dataset2_spec(**overrides) -> GenSpec:
    """10 variables, lag 1, observational regime plus 10 single-target regimes."""
    return replace(GenSpec(d=10, p=1, Q=11), **overrides)


@dataclass(frozen=True, eq=False)
class WeightedTemporalGraph:
    """Real-valued intra (``W``, d x d) and inter (``A``, p x d x d) weights."""

    W: np.ndarray
    A: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def spectral_radius(self) -> float:
        """Largest |eigenvalue| of the reduced-form VAR companion matrix.

        ``Y_t = sum_k Y_{t-k} A_k (I - W)^-1 + noise``; the process is
        stationary iff the radius is below one.
        """
        d, p = self.d, self.p
        if p == 0:
            return 0.0
        inv = np.linalg.inv(np.eye(d) - self.W)
        # row-vector convention: state [Y_{t-1} .. Y_{t-p}] maps by right-multiplication
        C = np.zeros((p * d, p * d))
        for k in range(p):
            C[k * d:(k + 1) * d, :d] = self.A[k] @ inv
        if p > 1:
            C[:d * (p - 1), d:] = np.eye(d * (p - 1))
        return float(np.abs(np.linalg.eigvals(C)).max())

    def support(self) -> TemporalGraph:
        d, p = self.d, self.p
        n = (p + 1) * d
        adj = np.zeros((n, n), dtype=np.int8)
        adj[:d, :d] = self.W != 0
        for k in range(p):
            adj[(k + 1) * d:(k + 2) * d, :d] = self.A[k] != 0
        return TemporalGraph(d, p, adj)

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "A": self.A.tolist()}

    def __eq__(self, other):
        if not isinstance(other, WeightedTemporalGraph):
            return NotImplemented
        return np.array_equal(self.W, other.W) and np.array_equal(self.A, other.A)


def _signed_uniform(rng, size, scale=1.0):
    mag = rng.uniform(_W_LOW * scale, _W_HIGH * scale, size=size)
    sign = np.where(rng.uniform(size=size) < 0.5, -1.0, 1.0)
    return sign * mag


def sample_weighted_graph(spec: GenSpec, seed=None) -> WeightedTemporalGraph:
    """Erdos-Renyi intra DAG (under a random order) plus Erdos-Renyi lag edges.

    With ``spec.stable`` draws are repeated (same generator stream) until the
    implied SVAR is stationary, both as drawn and after a perfect intervention
    on any single variable.  Signed weights make this necessary: cutting the
    parents of one node can remove a cancellation and push the radius past one.
    """
    rng = np.random.default_rng(seed)
    for _ in range(spec.max_draws):
        g = _draw_graph(spec, rng)
        if not spec.stable or _robustly_stationary(g):
            return g
    raise ConfigError(f"no stationary graph in {spec.max_draws} draws; lower the edge probabilities or raise eta")


def _robustly_stationary(g: WeightedTemporalGraph) -> bool:
    if g.spectral_radius() >= 1.0:
        return False
    return all(apply_perfect_intervention(g, [j]).spectral_radius() < 1.0 for j in range(g.d))


def _draw_graph(spec: GenSpec, rng) -> WeightedTemporalGraph:
    d, p = spec.d, spec.p
    order = rng.permutation(d)
    rank = np.empty(d, dtype=int)
    rank[order] = np.arange(d)
    forward = rank[:, None] < rank[None, :]
    B = forward & (rng.uniform(size=(d, d)) < spec.intra_edge_prob)
    W = np.where(B, _signed_uniform(rng, (d, d)), 0.0)
    A = np.zeros((p, d, d))
    for k in range(1, p + 1):
        Bk = rng.uniform(size=(d, d)) < spec.inter_edge_prob
        A[k - 1] = np.where(Bk, _signed_uniform(rng, (d, d), scale=spec.eta ** (-k)), 0.0)
    return WeightedTemporalGraph(W=W, A=A)


def _topological_order(W: np.ndarray) -> list[int]:
    B = W != 0
    d = B.shape[0]
    indeg = B.sum(axis=0).astype(int)
    ready = [j for j in range(d) if indeg[j] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(B[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    if len(order) != d:
        raise ValueError("intra-slice weights have a cyclic support")
    return order


def generate_svar(g: WeightedTemporalGraph, noise_std=1.0, T=1000, burn_in=100, seed=None, noise=None):
    """Simulate ``Y_t = Y_t W + sum_k Y_{t-k} A_k + Z_t`` and return ``T`` rows.

    The first ``p`` steps are pure noise and the first ``burn_in`` simulated
    steps are discarded.  ``noise`` may supply the full ``(burn_in + T, d)``
    innovation matrix instead of drawing it.
    """
    d, p = g.d, g.p
    order = _topological_order(g.W)
    total = burn_in + T
    if noise is None:
        rng = np.random.default_rng(seed)
        Z = rng.normal(0.0, noise_std, size=(total, d))
    else:
        Z = np.asarray(noise, dtype=float)
        if Z.shape != (total, d):
            raise ValueError(f"noise must have shape {(total, d)}, got {Z.shape}")
    Y = np.zeros((total, d))
    parents = [np.flatnonzero(g.W[:, j]) for j in range(d)]
    for t in range(total):
        if t < p:
            Y[t] = Z[t]
            continue
        base = Z[t].copy()
        for k in range(1, p + 1):
            base += Y[t - k] @ g.A[k - 1]
        row = Y[t]
        for j in order:
            pa = parents[j]
            row[j] = base[j] + (row[pa] @ g.W[pa, j] if pa.size else 0.0)
    return Y[burn_in:]


def apply_perfect_intervention(g: WeightedTemporalGraph, targets) -> WeightedTemporalGraph:
    """Copy of ``g`` with every incoming weight of each target set to zero."""
    W = g.W.copy()
    A = g.A.copy()
    for j in targets:
        if not 0 <= j < g.d:
            raise ValueError(f"intervention target {j} outside 0..{g.d - 1}")
        W[:, j] = 0.0
        A[:, :, j] = 0.0
    return WeightedTemporalGraph(W=W, A=A)


@dataclass(frozen=True, eq=False)
class Benchmark:
    dataset: RegimeDataset
    graph: TemporalGraph
    targets: list[list[int]]
    weights: WeightedTemporalGraph = field(repr=False)

    def ground_truth_dict(self) -> dict:
        return {**self.graph.to_dict(), "targets": [sorted(t) for t in self.targets],
                "weights": self.weights.to_dict()}


def _sample_targets(spec: GenSpec, rng) -> list[list[int]]:
    if spec.Q - 1 > spec.d:
        raise ConfigError(f"cannot draw {spec.Q - 1} distinct single targets from {spec.d} variables")
    picks = rng.choice(spec.d, size=spec.Q - 1, replace=False)
    return [[]] + [[int(j)] for j in picks]


def build_benchmark(spec: GenSpec, seed=0) -> Benchmark:
    """Observational regime 0 plus one perfect-intervention regime per target set."""
    root = np.random.SeedSequence(seed)
    graph_seq, target_seq, series_seq = root.spawn(3)
    g = sample_weighted_graph(spec, np.random.default_rng(graph_seq))
    targets = spec.targets if spec.targets is not None else _sample_targets(spec, np.random.default_rng(target_seq))
    targets = [sorted(int(j) for j in t) for t in targets]
    regime_seeds = series_seq.spawn(spec.Q)
    series = []
    for q in range(spec.Q):
        gq = apply_perfect_intervention(g, targets[q]) if q else g
        if spec.stable and gq.spectral_radius() >= 1.0:
            raise ConfigError(f"regime {q} (targets {targets[q]}) is non-stationary under the drawn graph")
        series.append(generate_svar(gq, spec.noise_std, spec.T, spec.burn_in, seed=np.random.default_rng(regime_seeds[q])))
    names = [f"x{j + 1}" for j in range(spec.d)]
    ds = RegimeDataset.from_series(series, p=spec.p, variable_names=names)
    return Benchmark(dataset=ds, graph=g.support(), targets=targets, weights=g)
