"""Gradient estimators for the multi-sample objective.

Every proposal-parameter estimator has the form

    sum_j a_j * dlog Q(h^j|x)/dtheta  +  sum_j w_j * dlog f(x, h^j)/dtheta

and differs only in the learning signal a_j.  The ``*_grad`` functions take
explicit per-sample gradient arrays of shape ``(..., K, D)`` (the literal
form, used by the oracle and the tests).  `estimate` is the fused form used
in training: it folds the coefficients into one weighted backward pass per
network.  All estimates are ascent directions.
"""
from dataclasses import dataclass, field

import numpy as np

from .objective import LEARNED, bound, importance_weights, local_signals

KINDS = ("naive", "nvil", "vimco", "rws-wake", "rws-sleep")


@dataclass
class GradientAccumulator:
    """Proposal-parameter (theta) and model-parameter (psi) gradient blocks."""
    theta: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)

    def __add__(self, other):
        return GradientAccumulator(_add(self.theta, other.theta), _add(self.psi, other.psi))

    def scaled(self, c):
        return GradientAccumulator({k: c * v for k, v in self.theta.items()},
                                   {k: c * v for k, v in self.psi.items()})


def _add(a, b):
    out = dict(a)
    for k, v in b.items():
        if k in out:
            if np.shape(out[k]) != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}")
            out[k] = out[k] + v
        else:
            out[k] = v
    return out


def _combine(q_coef, dlogq, f_coef=None, dlogf=None):
    dlogq = np.asarray(dlogq, dtype=np.float64)
    if dlogq.shape[:-1] != q_coef.shape:
        raise ValueError(f"expected per-sample gradients of shape {q_coef.shape} + (D,), got {dlogq.shape}")
    g = np.einsum("...k,...kd->...d", q_coef, dlogq)
    if dlogf is not None:
        dlogf = np.asarray(dlogf, dtype=np.float64)
        if dlogf.shape[:-1] != f_coef.shape:
            raise ValueError("per-sample dlog f has the wrong shape")
        g = g + np.einsum("...k,...kd->...d", f_coef, dlogf)
    return g


def model_grad(s, dlogf):
    """sum_j w_j dlog f(x, h^j)/dpsi; the proposal does not depend on psi."""
    w = importance_weights(s)
    return _combine(w, dlogf)


def nvil_signal(s, b=0.0, b_x=0.0, scale=1.0):
    L = bound(s)
    return np.broadcast_to(((L - b_x - b) / scale)[..., None], s.logf.shape)


def naive_grad(s, dlogq, dlogf=None):
    """Global learning signal L shared by all K samples."""
    return _combine(nvil_signal(s), dlogq, importance_weights(s), dlogf)


def nvil_grad(s, dlogq, dlogf=None, b=0.0, b_x=0.0, scale=1.0):
    """Naive estimator with the constant and input-dependent baselines removed.

    `scale` is the variance-normalisation divisor applied to the centered
    signal (1 means no normalisation).
    """
    return _combine(nvil_signal(s, b, b_x, scale), dlogq, importance_weights(s), dlogf)


def vimco_grad(s, dlogq, dlogf=None, mean_kind="geometric", log_fhat=None):
    if s.K < 2:
        raise ValueError("VIMCO needs K >= 2")
    return _combine(local_signals(s, mean_kind, log_fhat), dlogq, importance_weights(s), dlogf)


def rws_wake_grad(s, dlogq):
    return _combine(importance_weights(s), dlogq)


def rws_sleep_grad(model, proposal, rng, context=None, n=1):
    """dlog Q(h|x)/dtheta for (x, h) drawn from the model, averaged over n draws."""
    if context is not None:
        context = np.atleast_2d(context)
        n = context.shape[0]
    x, h = model.sample_joint(rng, context=context, n=n)
    g = proposal.grad_log_q(x, h, context)
    return {k: v / n for k, v in g.items()}


def learning_signal(kind, s, *, mean_kind="geometric", log_fhat=None, b=0.0, b_x=0.0, scale=1.0):
    """Coefficient a_j on dlog Q(h^j|x)/dtheta for the given estimator."""
    if kind == "naive":
        return nvil_signal(s)
    if kind == "nvil":
        return nvil_signal(s, b, b_x, scale)
    if kind == "vimco":
        if s.K < 2:
            raise ValueError("VIMCO needs K >= 2")
        return local_signals(s, mean_kind, log_fhat)
    if kind == "rws-wake":
        return importance_weights(s)
    raise ValueError(f"no per-sample signal for estimator {kind!r}")


def estimate(kind, s, model, proposal, fused=True, **signal_kw):
    """Network-level estimate summed over the cases in `s`.

    In learned-proposal mode dlog f/dtheta = -dlog Q/dtheta, so the fused path
    uses a single backward pass with coefficients (a_j - w_j); the literal
    path runs the two terms separately.  RWS wake has no dlog f term.
    """
    a = learning_signal(kind, s, **signal_kw)
    w = importance_weights(s)
    x, h, c = s.rows()
    if s.mode == LEARNED:
        psi = model.grad_log_joint(x, h, c, weights=w.ravel())
        if kind == "rws-wake":
            theta = proposal.grad_log_q(x, h, c, weights=a.ravel())
        elif fused:
            theta = proposal.grad_log_q(x, h, c, weights=(a - w).ravel())
        else:
            first = proposal.grad_log_q(x, h, c, weights=a.ravel())
            second = proposal.grad_log_q(x, h, c, weights=w.ravel())
            theta = {k: first[k] - second[k] for k in first}
    else:
        psi = model.grad_log_joint(x, h, c, weights=w.ravel(), part="obs")
        theta = proposal.grad_log_q(x, h, c, weights=a.ravel())
    return GradientAccumulator(theta, psi)
