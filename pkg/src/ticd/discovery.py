"""Joint learning of the temporal graph and the interventional family.

The graph logits ``Lambda`` ((p+1)d x (p+1)d) and target logits ``Gamma``
(Q x (p+1)d) parameterise Bernoulli masks.  Each gradient step draws one hard
mask sample (straight-through: hard values in the forward pass, gradients
through the logistic-noise relaxation), evaluates the regularised
log-likelihood of a minibatch from every regime, and takes an RMSprop step.
Acyclicity of ``sigmoid(Lambda)`` is enforced with an augmented Lagrangian
outer loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .density import DensityParams, GradientTape, backward, forward, init_params, mixed_loglikelihood
from .exceptions import ConfigError, DataError, DivergenceError
from .graph import SliceViews, TemporalGraph, acyclicity_with_grad, structural_mask, threshold_extract

__all__ = [
    "HyperParams",
    "ScoreParams",
    "MaskSample",
    "DiscoveryResult",
    "TraceEntry",
    "sigmoid",
    "target_mask",
    "sample_masks",
    "relaxed_loss",
    "score_terms",
    "fit_discovery",
    "extract_family",
    "family_to_matrix",
]

log = logging.getLogger(__name__)

LOGIT_CLAMP = 10.0
MODES = ("unknown", "known")


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class HyperParams:
    lambda_edges: float = 0.1
    lambda_targets: float = 0.05
    temperature: float = 1.0
    learning_rate: float = 1e-2
    batch_size: int = 64
    subproblem_steps: int = 1000
    max_outer: int = 20
    mu_init: float = 1e-3
    gamma_init: float = 0.0
    mu_growth: float = 10.0
    mu_max: float = 1e6
    progress_factor: float = 0.9
    constraint_tol: float = 1e-8
    mode: str = "unknown"
    perfect: bool = False
    literal_eq6: bool = False
    hidden: tuple[int, ...] = (16,)
    activation: str = "leaky_relu"
    slope: float = 0.1
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    target_logit_init: float = 0.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.lambda_edges < 0 or self.lambda_targets < 0:
            raise ConfigError("sparsity weights must be non-negative")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not self.mu_growth > 1:
            raise ConfigError(f"mu_growth must exceed 1, got {self.mu_growth}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1 or self.subproblem_steps < 0 or self.max_outer < 0:
            raise ConfigError("batch_size >= 1, subproblem_steps >= 0 and max_outer >= 0 required")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.progress_factor < 1:
            raise ConfigError(f"progress_factor must lie in (0, 1), got {self.progress_factor}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> HyperParams:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**data)


def target_mask(Q: int, d: int, p: int) -> np.ndarray:
    """Positions of ``Gamma`` that are learned: regimes >= 1, contemporaneous columns."""
    m = np.zeros((Q, (p + 1) * d), dtype=bool)
    m[1:, :d] = True
    return m


@dataclass
class ScoreParams:
    """Graph logits, target logits and density parameters."""

    Lambda: np.ndarray
    Gamma: np.ndarray
    phi: DensityParams
    edge_mask: np.ndarray
    target_mask: np.ndarray

    def clamp(self):
        np.clip(self.Lambda, -LOGIT_CLAMP, LOGIT_CLAMP, out=self.Lambda)
        np.clip(self.Gamma, -LOGIT_CLAMP, LOGIT_CLAMP, out=self.Gamma)
        self.Lambda[~self.edge_mask] = 0.0
        self.Gamma[~self.target_mask] = 0.0

    def edge_probs(self) -> np.ndarray:
        return np.where(self.edge_mask, sigmoid(self.Lambda), 0.0)

    def target_probs(self) -> np.ndarray:
        return np.where(self.target_mask, sigmoid(self.Gamma), 0.0)


@dataclass
class MaskSample:
    M_hard: np.ndarray
    M_soft: np.ndarray
    R_hard: np.ndarray | None
    R_soft: np.ndarray | None


def _logistic_noise(rng, shape):
    u = rng.uniform(size=shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return np.log(u) - np.log1p(-u)


def _relax(logits, active, temperature, noise):
    soft = np.where(active, sigmoid((logits + noise) / temperature), 0.0)
    hard = (soft > 0.5).astype(float)
    return hard, soft


def sample_masks(Lambda, Gamma, temperature, rng, edge_mask=None, gamma_mask=None, noise=None) -> MaskSample:
    """Straight-through sample of the graph mask and (optionally) target mask.

    ``noise`` may supply the logistic draws as a pair ``(L_edges, L_targets)``.
    Positions outside the masks are always zero.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if edge_mask is None:
        edge_mask = np.ones_like(Lambda, dtype=bool)
    rng = np.random.default_rng(rng)
    L_e = noise[0] if noise is not None else _logistic_noise(rng, Lambda.shape)
    M_hard, M_soft = _relax(Lambda, edge_mask, temperature, L_e)
    R_hard = R_soft = None
    if Gamma is not None:
        Gamma = np.asarray(Gamma, dtype=float)
        if gamma_mask is None:
            gamma_mask = np.ones_like(Gamma, dtype=bool)
        L_t = noise[1] if noise is not None else _logistic_noise(rng, Gamma.shape)
        R_hard, R_soft = _relax(Gamma, gamma_mask, temperature, L_t)
    return MaskSample(M_hard, M_soft, R_hard, R_soft)


@dataclass
class ScoreTerms:
    loss: float
    nll: float
    sparsity: float
    h: float
    grad_phi: DensityParams | None = None
    grad_M: np.ndarray | None = None
    grad_R: np.ndarray | None = None
    grad_Lambda: np.ndarray | None = None
    grad_Gamma: np.ndarray | None = None


def score_terms(X, M, R, phi: DensityParams, Lambda, Gamma, edge_mask, gamma_mask, *,
                lambda_edges=0.0, lambda_targets=0.0, al_gamma=0.0, al_mu=0.0, perfect=False,
                with_grad=True, need_R_grad=True) -> ScoreTerms:
    """Penalised negative log-likelihood of one minibatch per regime.

    ``M`` (n x n) and ``R`` (Q x n) enter the likelihood as given (hard samples
    during training, arbitrary reals for gradient checks).  The sparsity and
    acyclicity terms use the expected edge / target probabilities
    ``sigmoid(Lambda)``, ``sigmoid(Gamma)``.  ``Gamma=None`` drops the target
    penalty (known-targets mode).

    Loss = -sum_q mean_b log f_q(x) + lambda_edges * sum sigma(Lambda)
           + lambda_targets * sum sigma(Gamma) + al_gamma * h + al_mu / 2 * h^2.
    """
    X = np.asarray(X, dtype=float)
    Q, B, n = X.shape
    R = np.zeros((Q, n)) if R is None else np.asarray(R, dtype=float)
    tapes = (GradientTape(), GradientTape()) if with_grad else None
    ll_obs, ll_reg, ll_mix = mixed_loglikelihood(phi, X, M, R, perfect=perfect, tapes=tapes)
    nll = -float(ll_mix.sum()) / B

    S = np.where(edge_mask, sigmoid(Lambda), 0.0)
    sparsity = lambda_edges * float(S.sum())
    if Gamma is not None:
        T = np.where(gamma_mask, sigmoid(Gamma), 0.0)
        sparsity += lambda_targets * float(T.sum())
    h, dh = acyclicity_with_grad(S)
    loss = nll + sparsity + al_gamma * h + 0.5 * al_mu * h * h
    terms = ScoreTerms(loss=loss, nll=nll, sparsity=sparsity, h=h)
    if not with_grad:
        return terms

    grad_phi = phi.zeros_like()
    G_obs = np.broadcast_to(-(1.0 - R)[:, None, :] / B, ll_obs.shape)
    grad_phi, dM_obs = backward(tapes[0], G_obs, grad_phi)
    grad_M = dM_obs.sum(axis=0)
    grad_R = None
    if ll_reg is not None:
        G_reg = np.broadcast_to(-R[:, None, :] / B, ll_reg.shape)
        grad_phi, dM_reg = backward(tapes[1], G_reg, grad_phi, want_mask=not perfect)
        if dM_reg is not None:
            grad_M = grad_M + dM_reg.sum(axis=0)
        if need_R_grad:
            grad_R = -(ll_reg - ll_obs).sum(axis=1) / B
    elif need_R_grad:
        # regime networks are never evaluated when R == 0; compute their
        # log-densities once to obtain dLoss/dR
        Qn = np.broadcast_to(np.arange(Q)[:, None], (Q, n))
        ll_reg = forward(phi, X, None if perfect else M, Qn)
        grad_R = -(ll_reg - ll_obs).sum(axis=1) / B

    sig_grad = S * (1.0 - S)
    grad_Lambda = np.where(edge_mask, (lambda_edges + (al_gamma + al_mu * h) * dh) * sig_grad, 0.0)
    grad_Gamma = None
    if Gamma is not None:
        grad_Gamma = np.where(gamma_mask, lambda_targets * T * (1.0 - T), 0.0)
    terms.grad_phi = grad_phi
    terms.grad_M = grad_M
    terms.grad_R = grad_R
    terms.grad_Lambda = grad_Lambda
    terms.grad_Gamma = grad_Gamma
    return terms


def relaxed_loss(batches, sample: MaskSample, phi: DensityParams, Lambda, Gamma, hp: HyperParams,
                 edge_mask=None, gamma_mask=None, R_fixed=None) -> float:
    """Regularised relaxed score (to be minimised) for one minibatch per regime.

    In known-targets mode ``R_fixed`` replaces the sampled target mask and the
    target penalty is dropped.
    """
    if any(b is None for b in batches):
        raise DataError("a minibatch is missing for at least one regime")
    X = np.stack([np.asarray(b, dtype=float) for b in batches])
    Lambda = np.asarray(Lambda, dtype=float)
    if edge_mask is None:
        edge_mask = np.ones_like(Lambda, dtype=bool)
    known = hp.mode == "known"
    if known:
        if R_fixed is None:
            raise ConfigError("known-targets mode needs the true target matrix")
        R, G = R_fixed, None
    else:
        R, G = sample.R_hard, Gamma
        if gamma_mask is None and G is not None:
            gamma_mask = np.ones_like(G, dtype=bool)
    terms = score_terms(X, sample.M_hard, R, phi, Lambda, G, edge_mask, gamma_mask,
                        lambda_edges=hp.lambda_edges, lambda_targets=hp.lambda_targets,
                        perfect=hp.perfect, with_grad=False)
    return terms.nll + terms.sparsity


def family_to_matrix(family, Q: int, d: int, p: int) -> np.ndarray:
    """Binary (Q x (p+1)d) target matrix of an interventional family."""
    if len(family) != Q:
        raise ValueError(f"family has {len(family)} regimes, expected {Q}")
    R = np.zeros((Q, (p + 1) * d))
    for q, targets in enumerate(family):
        for j in targets:
            if not 0 <= j < d:
                raise ValueError(f"target {j} outside 0..{d - 1}")
            R[q, j] = 1.0
    return R


def extract_family(Gamma, d: int, threshold: float = 0.5) -> list[list[int]]:
    """``I_q = {j < d : sigmoid(Gamma[q, j]) > 0.5}``; the first regime is always empty."""
    Gamma = np.asarray(Gamma, dtype=float)
    fam = [[]]
    for q in range(1, Gamma.shape[0]):
        fam.append([int(j) for j in np.flatnonzero(sigmoid(Gamma[q, :d]) > threshold)])
    return fam


@dataclass
class TraceEntry:
    iteration: int
    score: float | None
    h: float
    gamma: float
    mu: float


@dataclass
class DiscoveryResult:
    d: int
    p: int
    soft: np.ndarray
    graph: TemporalGraph
    target_probs: np.ndarray
    family: list[list[int]]
    trace: list[TraceEntry]
    params: ScoreParams | None = field(default=None, repr=False)

    @property
    def views(self) -> SliceViews:
        return self.graph.slices()

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "p": self.p,
            "soft": self.soft.tolist(),
            "graph": self.graph.to_dict(),
            "target_probs": self.target_probs.tolist(),
            "family": self.family,
            "trace": [asdict(t) for t in self.trace],
            "slices": self.views.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> DiscoveryResult:
        return cls(
            d=int(data["d"]),
            p=int(data["p"]),
            soft=np.asarray(data["soft"], dtype=float),
            graph=TemporalGraph.from_dict(data["graph"]),
            target_probs=np.asarray(data["target_probs"], dtype=float),
            family=[list(f) for f in data["family"]],
            trace=[TraceEntry(**t) for t in data.get("trace", [])],
        )


class _RMSprop:
    def __init__(self, arrays, lr, decay, eps):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        for a, g, s in zip(arrays, grads, self.sq):
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            a -= self.lr * g / (np.sqrt(s) + self.eps)


def _check_regimes(regimes, n):
    if not regimes:
        raise DataError("at least one regime is required")
    out = []
    for q, r in enumerate(regimes):
        r = np.asarray(r, dtype=float)
        if r.ndim != 2 or r.shape[1] != n:
            raise DataError(f"regime {q}: expected samples with {n} columns, got shape {r.shape}")
        if len(r) < 1:
            raise DataError(f"regime {q} is empty")
        if not np.all(np.isfinite(r)):
            raise DataError(f"regime {q} contains non-finite values")
        out.append(r)
    return out


def fit_discovery(regimes, d: int, p: int, hp: HyperParams | None = None, init_logits=None, R_true=None,
                  seed=0, callback=None) -> DiscoveryResult:
    """Augmented-Lagrangian maximisation of the relaxed score.

    Parameters
    ----------
    regimes : list of arrays (N_q, (p+1)d)
        Windowed samples; regime 0 is observational.
    init_logits : array, optional
        Initial graph logits (meta-initialisation); zeros otherwise.
    R_true : array (Q, (p+1)d), optional
        Ground-truth target matrix; required in known-targets mode.
    callback : callable, optional
        Called with each :class:`TraceEntry`.
    """
    hp = hp or HyperParams()
    hp.validate()
    n = (p + 1) * d
    regimes = _check_regimes(regimes, n)
    Q = len(regimes)
    known = hp.mode == "known"
    literal = hp.literal_eq6 and not known
    if (known or literal) and R_true is None:
        raise ConfigError("known-targets mode (and the literal objective) needs ground-truth targets")
    if R_true is not None:
        R_true = np.asarray(R_true, dtype=float)
        if R_true.shape != (Q, n):
            raise ConfigError(f"target matrix must have shape {(Q, n)}, got {R_true.shape}")
        if R_true[0].any() or R_true[:, d:].any():
            raise ConfigError("targets must be contemporaneous variables of interventional regimes")

    root = np.random.SeedSequence(seed)
    init_seq, batch_seq, mask_seq = root.spawn(3)
    batch_rng = np.random.default_rng(batch_seq)
    mask_rng = np.random.default_rng(mask_seq)

    edge_mask = structural_mask(d, p)
    gmask = target_mask(Q, d, p)
    Lambda = np.zeros((n, n))
    if init_logits is not None:
        init_logits = np.asarray(init_logits, dtype=float)
        if init_logits.shape != (n, n):
            raise ConfigError(f"initial logits must be {n}x{n}, got {init_logits.shape}")
        Lambda = init_logits.copy()
    Gamma = np.where(gmask, hp.target_logit_init, 0.0)
    n_sets = Q if (not known or (R_true is not None and R_true.any())) else 1
    phi = init_params(n, n_sets, hp.hidden, hp.activation, hp.slope, rng=np.random.default_rng(init_seq))
    sp = ScoreParams(Lambda, Gamma, phi, edge_mask, gmask)
    sp.clamp()

    learn_gamma = not known and Q > 1
    arrays = [sp.Lambda] + ([sp.Gamma] if learn_gamma else []) + phi.arrays()
    opt = _RMSprop(arrays, hp.learning_rate, hp.rms_decay, hp.rms_eps)

    al_gamma, al_mu = hp.gamma_init, hp.mu_init
    h = acyclicity_with_grad(sp.edge_probs())[0]
    trace = [TraceEntry(0, None, h, al_gamma, al_mu)]
    if callback:
        callback(trace[-1])
    h_prev = math.inf
    B = hp.batch_size
    tau = hp.temperature

    for t in range(hp.max_outer):
        if h <= hp.constraint_tol:
            break
        losses = []
        for _ in range(hp.subproblem_steps):
            X = np.stack([r[batch_rng.integers(0, len(r), size=B)] for r in regimes])
            sample = sample_masks(sp.Lambda, sp.Gamma if learn_gamma else None, tau, mask_rng, edge_mask, gmask)
            if known or literal:
                R = R_true
            else:
                R = sample.R_hard if learn_gamma else np.zeros((Q, n))
            terms = score_terms(
                X, sample.M_hard, R, phi, sp.Lambda, sp.Gamma if learn_gamma else None, edge_mask, gmask,
                lambda_edges=hp.lambda_edges, lambda_targets=hp.lambda_targets,
                al_gamma=al_gamma, al_mu=al_mu, perfect=hp.perfect,
                need_R_grad=learn_gamma and not literal,
            )
            if not math.isfinite(terms.loss):
                raise DivergenceError(f"non-finite loss at outer iteration {t}", trace_entry=trace[-1])
            losses.append(terms.loss)
            # straight-through: dLoss/dsoft = dLoss/dhard, then through the relaxation
            gL = terms.grad_Lambda + np.where(
                edge_mask, terms.grad_M * sample.M_soft * (1.0 - sample.M_soft) / tau, 0.0)
            grads = [gL]
            if learn_gamma:
                gG = terms.grad_Gamma
                if terms.grad_R is not None:
                    gG = gG + np.where(gmask, terms.grad_R * sample.R_soft * (1.0 - sample.R_soft) / tau, 0.0)
                grads.append(gG)
            grads.extend(terms.grad_phi.arrays())
            opt.step(arrays, grads)
            sp.clamp()
        h_new = acyclicity_with_grad(sp.edge_probs())[0]
        tail = losses[len(losses) // 2:] if losses else []
        score = -float(np.mean(tail)) if tail else None
        al_gamma = al_gamma + al_mu * h_new
        if h_new > hp.progress_factor * h_prev:
            al_mu = min(al_mu * hp.mu_growth, hp.mu_max)
        h_prev, h = h_new, h_new
        trace.append(TraceEntry(t + 1, score, h, al_gamma, al_mu))
        log.debug("outer %d: score=%s h=%.3e gamma=%.3e mu=%.3e", t + 1, score, h, al_gamma, al_mu)
        if callback:
            callback(trace[-1])

    soft = sp.edge_probs()
    graph = threshold_extract(soft, d, p)
    if known:
        family = [[int(j) for j in np.flatnonzero(R_true[q, :d])] for q in range(Q)]
        tprobs = R_true.copy()
    else:
        tprobs = sp.target_probs()
        family = extract_family(np.where(gmask, sp.Gamma, -np.inf), d)
    return DiscoveryResult(d, p, soft, graph, tprobs, family, trace, sp)
