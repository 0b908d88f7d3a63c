"""Central finite-difference check of the relaxed training loss.

The relaxed loss replaces the hard straight-through masks by their soft
relaxations ``sigmoid((logits + noise) / tau)`` with the logistic noise held
fixed.  Its analytic gradient is the one the optimiser uses, so agreement with
finite differences covers the density networks, the likelihood blend, the
sparsity and augmented-Lagrangian terms and the relaxation chain rule.
"""

import numpy as np

from ticd.density import GradientTape, init_params, mixed_loglikelihood
from ticd.discovery import score_terms, sigmoid, target_mask
from ticd.graph import structural_mask

EPS = 1e-6
KINK_MARGIN = 1e-4


def make_instance(seed, d=3, p=1, Q=2, B=8, perfect=False, hidden=(16,)):
    rng = np.random.default_rng(seed)
    n = (p + 1) * d
    emask = structural_mask(d, p)
    gmask = target_mask(Q, d, p)
    return dict(
        X=rng.normal(size=(Q, B, n)),
        phi=init_params(n, Q, hidden, rng=rng),
        Lambda=np.where(emask, rng.normal(size=(n, n)), 0.0),
        Gamma=np.where(gmask, rng.normal(size=(Q, n)), 0.0),
        noise_e=rng.logistic(size=(n, n)),
        noise_t=rng.logistic(size=(Q, n)),
        emask=emask, gmask=gmask, perfect=perfect, tau=0.7,
        hp=dict(lambda_edges=0.1, lambda_targets=0.05, al_gamma=0.3, al_mu=2.0),
    )


def relaxed(inst, with_grad=False):
    tau = inst["tau"]
    M = np.where(inst["emask"], sigmoid((inst["Lambda"] + inst["noise_e"]) / tau), 0.0)
    R = np.where(inst["gmask"], sigmoid((inst["Gamma"] + inst["noise_t"]) / tau), 0.0)
    terms = score_terms(inst["X"], M, R, inst["phi"], inst["Lambda"], inst["Gamma"], inst["emask"], inst["gmask"],
                        perfect=inst["perfect"], with_grad=with_grad, **inst["hp"])
    return terms, M, R


def kink_margin(inst):
    tau = inst["tau"]
    M = np.where(inst["emask"], sigmoid((inst["Lambda"] + inst["noise_e"]) / tau), 0.0)
    R = np.where(inst["gmask"], sigmoid((inst["Gamma"] + inst["noise_t"]) / tau), 0.0)
    tapes = (GradientTape(), GradientTape())
    mixed_loglikelihood(inst["phi"], inst["X"], M, R, perfect=inst["perfect"], tapes=tapes)
    return min(t.kink_margin() for t in tapes if t.recorded)


def analytic_grads(inst):
    terms, M, R = relaxed(inst, with_grad=True)
    tau = inst["tau"]
    gL = terms.grad_Lambda + np.where(inst["emask"], terms.grad_M * M * (1 - M) / tau, 0.0)
    gG = terms.grad_Gamma + np.where(inst["gmask"], terms.grad_R * R * (1 - R) / tau, 0.0)
    return {"phi": terms.grad_phi.arrays(), "Lambda": [gL], "Gamma": [gG]}


def numeric_grads(inst, eps=EPS):
    def f():
        return relaxed(inst)[0].loss

    out = {}
    blocks = {"phi": inst["phi"].arrays(), "Lambda": [inst["Lambda"]], "Gamma": [inst["Gamma"]]}
    masks = {"Lambda": [inst["emask"]], "Gamma": [inst["gmask"]]}
    for name, arrays in blocks.items():
        grads = []
        for k, arr in enumerate(arrays):
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            active = masks[name][k].reshape(-1) if name in masks else np.ones(flat.size, bool)
            for i in np.flatnonzero(active):
                old = flat[i]
                flat[i] = old + eps
                up = f()
                flat[i] = old - eps
                down = f()
                flat[i] = old
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
        out[name] = grads
    return out


def relative_errors(seed, max_tries=20, **kw):
    """Relative error ``||analytic - fd|| / ||fd||`` per parameter block.

    Instances with a hidden pre-activation within ``KINK_MARGIN`` of the
    leaky-ReLU kink are redrawn (finite differences straddling the kink are
    not derivatives).
    """
    for t in range(max_tries):
        inst = make_instance(seed * 7919 + t, **kw)
        if kink_margin(inst) > KINK_MARGIN:
            break
    else:
        raise RuntimeError("no kink-free instance found")
    a, f = analytic_grads(inst), numeric_grads(inst)
    errs = {}
    for name in a:
        va = np.concatenate([g.ravel() for g in a[name]])
        vf = np.concatenate([g.ravel() for g in f[name]])
        errs[name] = float(np.linalg.norm(va - vf) / max(np.linalg.norm(vf), 1e-12))
    return errs
