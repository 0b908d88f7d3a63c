"""scikit-learn style front end for interventional temporal causal discovery."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_regime_dataset, check_family, check_series
from .data import normalize, window
from .density import forward
from .discovery import HyperParams, family_to_matrix, fit_discovery
from .exceptions import ConfigError

__all__ = ["TemporalCausalDiscovery"]

_HP_FIELDS = (
    "lambda_edges", "lambda_targets", "temperature", "learning_rate", "batch_size", "subproblem_steps",
    "max_outer", "mu_init", "gamma_init", "mu_growth", "mu_max", "mode", "perfect", "hidden", "activation",
)


class TemporalCausalDiscovery(BaseEstimator):
    """Learn a temporal DAG (and unknown intervention targets) from regimes.

    Parameters
    ----------
    p : int
        Maximum lag.
    mode : {"unknown", "known"}
        Whether the intervention targets are learned or supplied to ``fit``.
    perfect : bool
        Model intervened mechanisms as parent-free.
    normalize : bool
        z-score the variables with statistics pooled over regimes.
    random_state : int
        Seed for initialisation, minibatches and mask sampling.

    The remaining parameters are the optimiser settings of
    :class:`ticd.discovery.HyperParams`.

    Attributes
    ----------
    graph_ : TemporalGraph
    adjacency_ : ndarray ((p+1)d, (p+1)d)
    soft_adjacency_ : ndarray
        Edge probabilities ``sigmoid(Lambda)``.
    target_probs_ : ndarray (Q, (p+1)d)
    family_ : list of lists
        Estimated (or supplied) targets of every regime.
    trace_ : list of TraceEntry
    """

    def __init__(self, p=1, mode="unknown", perfect=False, lambda_edges=0.1, lambda_targets=0.05,
                 temperature=1.0, learning_rate=1e-2, batch_size=64, subproblem_steps=1000, max_outer=20,
                 mu_init=1e-3, gamma_init=0.0, mu_growth=10.0, mu_max=1e6, hidden=(16,),
                 activation="leaky_relu", normalize=True, variable_names=None, random_state=0):
        self.p = p
        self.mode = mode
        self.perfect = perfect
        self.lambda_edges = lambda_edges
        self.lambda_targets = lambda_targets
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.subproblem_steps = subproblem_steps
        self.max_outer = max_outer
        self.mu_init = mu_init
        self.gamma_init = gamma_init
        self.mu_growth = mu_growth
        self.mu_max = mu_max
        self.hidden = hidden
        self.activation = activation
        self.normalize = normalize
        self.variable_names = variable_names
        self.random_state = random_state

    def _hyperparams(self) -> HyperParams:
        return HyperParams(**{k: getattr(self, k) for k in _HP_FIELDS})

    def fit(self, X, y=None, *, targets=None, init_logits=None, callback=None):
        """Fit on regime data.

        Parameters
        ----------
        X : RegimeDataset, list of (T_q, d) arrays, or (T, d) array
            Raw series.  A single array is split by the regime labels ``y``.
        y : array of int, optional
            Regime label of each row of ``X`` (0 = observational).
        targets : list of lists, optional
            Intervention targets per regime; required when ``mode="known"``.
        init_logits : array, optional
            Initial edge logits (e.g. from :func:`ticd.prior.to_logits`).
        """
        if not isinstance(self.p, (int, np.integer)) or self.p < 0:
            raise ConfigError(f"p must be a non-negative integer, got {self.p!r}")
        hp = self._hyperparams()
        ds = as_regime_dataset(X, y, self.p, self.variable_names)
        if self.normalize:
            ds, self.normalization_ = normalize(ds)
        else:
            self.normalization_ = None
        d, p, Q = ds.d, ds.p, ds.Q
        R_true = None
        if hp.mode == "known":
            family = check_family(targets, Q, d)
            R_true = family_to_matrix(family, Q, d, p)
        elif targets is not None:
            raise ConfigError("targets are only used with mode='known'")
        res = fit_discovery(ds.regimes, d, p, hp, init_logits=init_logits, R_true=R_true,
                            seed=self.random_state, callback=callback)
        self.result_ = res
        self.graph_ = res.graph
        self.adjacency_ = res.graph.adj.astype(int)
        self.soft_adjacency_ = res.soft
        self.target_probs_ = res.target_probs
        self.family_ = res.family
        self.trace_ = res.trace
        self.n_features_in_ = d
        self.n_regimes_ = Q
        self.variable_names_ = list(ds.variable_names)
        return self

    def _windows(self, X):
        check_is_fitted(self, "result_")
        X = check_series(X, self.p, self.n_features_in_)
        if self.normalization_ is not None:
            X = self.normalization_.apply(X)
        return window(X, self.p)

    def _moments(self, X):
        W = self._windows(X)
        n = W.shape[1]
        idx = np.zeros((1, n), dtype=int)
        ll, mu, logv = forward(self.result_.params.phi, W[None], self.adjacency_.astype(float), idx,
                               return_moments=True)
        d = self.n_features_in_
        return ll[0, :, :d], mu[0, :, :d], logv[0, :, :d]

    def transform(self, X):
        """Per-variable log-density of every (standardised) window under the
        observational model.

        Returns an array ``(T - p, d)``; low values flag atypical samples.
        """
        return self._moments(X)[0]

    def predict(self, X):
        """Conditional mean of each current variable given its estimated parents.

        Returns an array ``(T - p, d)`` in the units of ``X``.
        """
        mu = self._moments(X)[1]
        if self.normalization_ is not None:
            mu = self.normalization_.invert(mu)
        return mu

    def score_samples(self, X):
        """Joint log-density of each window (sum over current variables)."""
        return self.transform(X).sum(axis=1)

    def score(self, X, y=None):
        """Mean joint log-density per window; higher is better."""
        return float(self.score_samples(X).mean())
