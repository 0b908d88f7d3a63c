"""Masked neural conditional densities with reverse-mode gradients.

Every unrolled node ``j`` owns a small MLP per parameter set.  Set 0 is the
observational mechanism; set ``q >= 1`` is the mechanism node ``j`` switches
to when it is an intervention target of regime ``q``.  The network sees
``mask_col * x`` (the node's parents only) and outputs the mean and the
log-variance of a Gaussian for ``x_j``.

All nodes, regimes and samples are evaluated in one batched pass.  The
parameters of layer ``l`` are stored as arrays of shape
``(n_sets, n_nodes, fan_in, fan_out)`` (weights) and
``(n_sets, n_nodes, fan_out)`` (biases).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, UsageError

__all__ = [
    "DensityParams",
    "GradientTape",
    "init_params",
    "forward",
    "backward",
    "node_logdensity",
    "joint_loglikelihood",
    "mixed_loglikelihood",
    "save_params",
    "load_params",
    "LOGVAR_CLAMP",
]

LOGVAR_CLAMP = 10.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DensityParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "leaky_relu"
    slope: float = 0.1

    @property
    def n_sets(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_nodes(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[-1] for w in self.weights[:-1])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> DensityParams:
        return DensityParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             self.activation, self.slope)

    def zeros_like(self) -> DensityParams:
        return DensityParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases],
                             self.activation, self.slope)


def init_params(n_nodes: int, n_sets: int = 1, hidden=(16,), activation="leaky_relu", slope=0.1,
                rng=None) -> DensityParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for every layer."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; choose from {sorted(_ACTIVATIONS)}")
    rng = np.random.default_rng(rng)
    sizes = [n_nodes, *hidden, 2]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(n_sets, n_nodes, fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=(n_sets, n_nodes, fan_out)))
    return DensityParams(weights, biases, activation, slope)


_ACTIVATIONS = ("leaky_relu", "tanh")


class GradientTape:
    """Forward intermediates of one batched evaluation; consumed by :func:`backward`."""

    def __init__(self):
        self._record = None
        self._used = False

    def record(self, **values):
        self._record = values
        self._used = False

    def pop(self):
        if self._record is None:
            raise UsageError("backward called without a recorded forward pass")
        if self._used:
            raise UsageError("tape already consumed; run forward again before another backward")
        self._used = True
        return self._record

    @property
    def recorded(self) -> bool:
        return self._record is not None

    def kink_margin(self) -> float:
        """Smallest |pre-activation| of the recorded pass (leaky-ReLU kinks sit at 0)."""
        if self._record is None:
            raise UsageError("nothing recorded")
        pre = self._record["pre"]
        return min((float(np.abs(z).min()) for z in pre), default=np.inf)


def forward(params: DensityParams, X: np.ndarray, mask: np.ndarray, set_index: np.ndarray,
            tape: GradientTape | None = None, return_moments: bool = False):
    """Per-node Gaussian log-densities.

    Parameters
    ----------
    X : array (Q, B, n)
        ``B`` samples for each of ``Q`` regimes.
    mask : array (n, n) or (Q, n, n), or None
        Column ``j`` selects the inputs of node ``j``; a leading regime axis
        allows regime-specific masks.  ``None`` means no inputs at all: each
        network is then evaluated once and its output shared by the batch.
    set_index : int array (Q, n)
        Parameter set used by node ``j`` in regime ``q``.

    Returns
    -------
    array (Q, B, n) of log-densities; with ``return_moments`` also the
    predicted means and (clamped) log-variances, broadcast to (Q, B, n).
    """
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite value in density input")
    Q, B, n = X.shape
    nodes = np.arange(n)[None, :]
    Ws = [w[set_index, nodes] for w in params.weights]
    bs = [b[set_index, nodes] for b in params.biases]
    # internal layout (Q, node, batch, feature); a0[q, j, b, i] = x[q, b, i] * M[q, i, j]
    if mask is None:
        a = np.zeros((Q, n, 1, n))
    else:
        M = np.broadcast_to(np.asarray(mask, dtype=float), (Q, n, n))
        a = np.empty((Q, n, B, n))
        np.multiply(X[:, None, :, :], np.swapaxes(M, 1, 2)[:, :, None, :], out=a)
    acts, slopes, pre = [a], [], []
    for layer, (W, b) in enumerate(zip(Ws, bs)):
        z = np.matmul(a, W) + b[:, :, None, :]
        if layer < len(Ws) - 1:
            if params.activation == "leaky_relu":
                g = (z > 0).astype(float)
                g *= 1.0 - params.slope
                g += params.slope
                a = z * g
            else:
                a = np.tanh(z)
                g = 1.0 - a * a
            slopes.append(g)
            acts.append(a)
            pre.append(z)
    mu = z[..., 0]
    raw = z[..., 1]
    logv = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    prec = np.exp(-logv)
    x_node = np.swapaxes(X, 1, 2)
    r = x_node - mu
    ll = -0.5 * (r * r * prec + logv + _LOG_2PI)
    if tape is not None:
        inside = (raw > -LOGVAR_CLAMP) & (raw < LOGVAR_CLAMP)
        tape.record(X=X, collapsed=mask is None, set_index=set_index, Ws=Ws, acts=acts, slopes=slopes, pre=pre, r=r,
                    prec=prec, inside=inside, params=params)
    ll = np.swapaxes(ll, 1, 2)
    if return_moments:
        shape = (Q, n, B)
        return ll, np.swapaxes(np.broadcast_to(mu, shape), 1, 2), np.swapaxes(np.broadcast_to(logv, shape), 1, 2)
    return ll


def _batch_sum(a):
    # sum over axis 2 of a 4-d array; a ones-vector matmul beats ndarray.sum here
    return np.matmul(np.ones((1, a.shape[2])), a)[:, :, 0, :]


def _scatter_add(target, set_index, nodes, vals, mode):
    if mode == "shared":
        target[0] += vals.sum(axis=0)
    elif mode == "distinct":
        target[set_index, nodes] += vals
    else:
        np.add.at(target, (set_index, nodes), vals)


def backward(tape: GradientTape, upstream: np.ndarray, grads: DensityParams | None = None,
             want_mask: bool = True):
    """Accumulate d(loss)/d(params) given ``upstream = d(loss)/d(log-density)``.

    Gradients are added into ``grads`` (allocated if ``None``).  Returns
    ``(grads, dmask)`` where ``dmask`` has shape (Q, n, n) and holds the
    derivative with respect to every entry of the (per-regime) input mask.
    """
    rec = tape.pop()
    params = rec["params"]
    if grads is None:
        grads = params.zeros_like()
    G = np.swapaxes(np.asarray(upstream, dtype=float), 1, 2)
    r, prec = rec["r"], rec["prec"]
    dmu = G * r * prec
    dlogv = G * 0.5 * (r * r * prec - 1.0) * rec["inside"]
    dz = np.stack([dmu, dlogv], axis=-1)
    if rec["collapsed"]:
        dz = _batch_sum(dz)[:, :, None, :]
        want_mask = False
    acts, slopes, Ws = rec["acts"], rec["slopes"], rec["Ws"]
    set_index = rec["set_index"]
    Q, n = set_index.shape
    nodes = np.broadcast_to(np.arange(n)[None, :], (Q, n))
    if not set_index.any():
        mode = "shared"
    elif all(np.unique(col).size == Q for col in set_index.T):
        mode = "distinct"
    else:
        mode = "general"
    da = None
    for layer in range(len(Ws) - 1, -1, -1):
        dW = np.matmul(np.swapaxes(acts[layer], 2, 3), dz)
        db = _batch_sum(dz)
        _scatter_add(grads.weights[layer], set_index, nodes, dW, mode)
        _scatter_add(grads.biases[layer], set_index, nodes, db, mode)
        if layer == 0 and not want_mask:
            break
        da = np.matmul(dz, np.swapaxes(Ws[layer], 2, 3))
        if layer > 0:
            dz = da * slopes[layer - 1]
    dmask = None
    if want_mask:
        # a0[q, j, b, i] = x[q, b, i] * M[q, i, j]
        dmask = np.swapaxes(_batch_sum(da * rec["X"][:, None, :, :]), 1, 2)
    return grads, dmask


def mixed_loglikelihood(params, X, mask, R, perfect=False, tapes=None):
    """Per-node log-densities blended by target indicators ``R`` (Q, n).

    Node ``j`` in regime ``q`` contributes ``(1 - R[q, j])`` times its
    observational log-density plus ``R[q, j]`` times its regime-``q``
    log-density.  Returns ``(ll_obs, ll_reg, ll_mix)``; ``ll_reg`` is ``None``
    when ``R`` is identically zero.  With ``perfect`` the regime mechanism
    ignores all parents (and has no mask gradient).
    """
    Q, _, n = X.shape
    R = np.asarray(R, dtype=float)
    obs_tape, reg_tape = tapes if tapes is not None else (None, None)
    obs_idx = np.zeros((Q, n), dtype=int)
    ll_obs = forward(params, X, mask, obs_idx, obs_tape)
    if not np.any(R):
        return ll_obs, None, ll_obs
    if Q > params.n_sets:
        raise ValueError(f"{Q} regimes but only {params.n_sets} parameter sets")
    reg_idx = np.broadcast_to(np.arange(Q)[:, None], (Q, n))
    ll_reg = forward(params, X, None if perfect else mask, reg_idx, reg_tape)
    mix = (1.0 - R)[:, None, :] * ll_obs + R[:, None, :] * ll_reg
    return ll_obs, ll_reg, mix


def node_logdensity(x, j: int, mask_col, params: DensityParams, param_set: int = 0) -> float:
    """Log-density of ``x[j]`` under node ``j``'s network fed ``mask_col * x``."""
    x = np.asarray(x, dtype=float)
    n = params.n_nodes
    if x.shape != (n,):
        raise ValueError(f"sample must have {n} entries, got shape {x.shape}")
    M = np.zeros((n, n))
    M[:, j] = mask_col
    idx = np.full((1, n), param_set, dtype=int)
    return float(forward(params, x[None, None, :], M, idx)[0, 0, j])


def joint_loglikelihood(x, M, R_q, params: DensityParams, q: int = 0, perfect: bool = False) -> float:
    """Log-density of one sample under regime ``q`` (0 = observational)."""
    x = np.asarray(x, dtype=float)
    n = params.n_nodes
    R_q = np.asarray(R_q, dtype=float).reshape(n)
    idx = np.where(R_q > 0, q, 0).astype(int)[None, :]
    mask = np.asarray(M, dtype=float)
    ll = forward(params, x[None, None, :], mask, idx)[0, 0]
    if perfect and np.any(R_q > 0):
        free = forward(params, x[None, None, :], None, idx)[0, 0]
        ll = np.where(R_q > 0, free, ll)
    return float(ll.sum())


def save_params(params: DensityParams, path) -> None:
    """JSON checkpoint keyed ``"node=<j>/set=<q>/layer=<l>"``.

    Floats are written with ``repr`` precision so a reload is bit-exact.
    """
    entries = {}
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        for q in range(params.n_sets):
            for j in range(params.n_nodes):
                entries[f"node={j}/set={q}/layer={layer}"] = {
                    "weight": W[q, j].tolist(),
                    "bias": b[q, j].tolist(),
                }
    doc = {
        "format": "ticd-density",
        "version": 1,
        "n_nodes": params.n_nodes,
        "n_sets": params.n_sets,
        "hidden": list(params.hidden),
        "activation": params.activation,
        "slope": params.slope,
        "params": entries,
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> DensityParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "ticd-density" or doc.get("version") != 1:
        raise DataError(f"{path}: not a density checkpoint (format/version mismatch)")
    n, S = doc["n_nodes"], doc["n_sets"]
    sizes = [n, *doc["hidden"], 2]
    weights = [np.empty((S, n, a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.empty((S, n, b)) for b in sizes[1:]]
    for layer in range(len(weights)):
        for q in range(S):
            for j in range(n):
                e = doc["params"][f"node={j}/set={q}/layer={layer}"]
                weights[layer][q, j] = e["weight"]
                biases[layer][q, j] = e["bias"]
    return DensityParams(weights, biases, doc["activation"], doc["slope"])
