"""Multi-sample objective: scoring K-sample sets, the bound, weights, signals.

All functions reduce over the last axis, so a ``(B, K)`` array of log-scores
is treated as B independent sample sets.
"""
from dataclasses import dataclass

import numpy as np

from .core import log_sum_exp, softmax_from_logs
from .sbn import PriorProposal

LEARNED = "learned"
PRIOR = "prior"
MEAN_KINDS = ("geometric", "arithmetic", "learned")


@dataclass
class SampleSet:
    """K latent stacks per observation with their log-scores.

    ``logf[..., i] = log f(x, h^i)``; in learned-proposal mode that is
    ``log P(x, h) - log Q(h|x)``, in prior-proposal mode ``log P(x|h, c)``.
    Latent arrays in `h` have shape ``(..., K, size)``.
    """
    logf: np.ndarray
    h: dict
    x: np.ndarray
    context: np.ndarray = None
    mode: str = LEARNED
    logq: np.ndarray = None

    def __post_init__(self):
        self.logf = np.asarray(self.logf, dtype=np.float64)
        if self.logf.ndim == 0 or self.logf.shape[-1] < 1:
            raise ValueError("a sample set needs at least one sample")
        if not np.all(np.isfinite(self.logf)):
            raise ValueError("log-scores must be finite")

    @property
    def K(self):
        return self.logf.shape[-1]

    def rows(self):
        """(x, h, context) repeated/flattened to one row per sample."""
        K = self.K
        x = np.repeat(np.atleast_2d(self.x), K, axis=0)
        h = {n: v.reshape(-1, v.shape[-1]) for n, v in self.h.items()}
        c = None
        if self.context is not None:
            c = np.repeat(np.atleast_2d(self.context), K, axis=0)
        return x, h, c


@dataclass
class BoundReport:
    Lhat: np.ndarray
    w: np.ndarray
    local: np.ndarray
    mean_kind: str


def _logf(s):
    return s.logf if isinstance(s, SampleSet) else np.asarray(s, dtype=np.float64)


def score_samples(model, proposal, x, K, rng=None, mode=LEARNED, context=None, rngs=None):
    """Draw K proposal samples per observation and score them.

    `x` is one observation (1-d) or a batch (2-d).  Randomness comes either
    from one generator `rng`, or from `rngs`, one generator per case, so that
    each case's samples do not depend on the rest of the batch.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if mode not in (LEARNED, PRIOR):
        raise ValueError(f"unknown scoring mode {mode!r}")
    if mode == PRIOR and not isinstance(proposal, PriorProposal):
        raise ValueError("prior-proposal scoring needs the model prior as proposal")
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    B = x2.shape[0]
    c2 = None
    if context is not None:
        c2 = np.atleast_2d(np.asarray(context, dtype=np.float64))
        if c2.shape[0] != B:
            raise ValueError("context and x disagree on the number of cases")
    bits = proposal.total_latent_bits
    if rngs is not None:
        u = np.concatenate([r.random((K, bits)) for r in rngs])
    else:
        u = rng.random((B * K, bits))
    xr = np.repeat(x2, K, axis=0)
    cr = None if c2 is None else np.repeat(c2, K, axis=0)
    h, logq = proposal.sample(xr, context=cr, u=u)
    if mode == LEARNED:
        logf = model.log_joint(xr, h, cr) - logq
    else:
        logf = model.log_likelihood(xr, h, cr)
    shape = (K,) if single else (B, K)
    hs = {n: v.reshape(shape + (v.shape[-1],)) for n, v in zip(proposal.latent_names, h)}
    return SampleSet(
        logf=logf.reshape(shape), h=hs, x=x2[0] if single else x2,
        context=None if c2 is None else (c2[0] if single else c2),
        mode=mode, logq=logq.reshape(shape),
    )


def bound(s):
    """Stochastic lower bound log((1/K) sum_i f(x, h^i))."""
    l = _logf(s)
    return log_sum_exp(l) - np.log(l.shape[-1])


def importance_weights(s):
    return softmax_from_logs(_logf(s))


def local_signals(s, mean_kind="geometric", log_fhat=None):
    """Per-sample learning signals L - L^{-j} with leave-one-out baselines.

    L^{-j} is the bound with log f(x, h^j) replaced by an estimate built from
    the other K-1 scores: their geometric mean (mean of logs), their
    arithmetic mean, or a supplied prediction `log_fhat` (mean_kind="learned",
    one value per sample set).
    """
    l = _logf(s)
    K = l.shape[-1]
    if K < 2:
        raise ValueError("local learning signals need K >= 2")
    if not np.all(np.isfinite(l)):
        raise ValueError("log-scores must be finite")
    eye = np.eye(K, dtype=bool)
    if mean_kind == "geometric":
        # shift by the max so equal scores give the held-out value back exactly
        m = l.max(axis=-1, keepdims=True)
        d = l - m
        held = m + (d.sum(axis=-1, keepdims=True) - d) / (K - 1)
    elif mean_kind == "arithmetic":
        # log-mean-exp of the other K-1 scores, shifted by their own max so
        # that equal scores sum to exactly K-1
        others = np.where(eye, -np.inf, l[..., None, :])
        m = others.max(axis=-1)
        held = m + (np.log(np.exp(others - m[..., None]).sum(axis=-1)) - np.log(K - 1))
    elif mean_kind == "learned":
        if log_fhat is None:
            raise ValueError("mean_kind='learned' needs log_fhat")
        held = np.broadcast_to(np.asarray(log_fhat, dtype=np.float64)[..., None], l.shape)
    else:
        raise ValueError(f"unknown mean_kind {mean_kind!r}")
    # row j of `replaced` is l with entry j swapped for the held-out estimate
    replaced = np.where(eye, held[..., :, None], l[..., None, :])
    L_minus = log_sum_exp(replaced) - np.log(K)
    L = log_sum_exp(l) - np.log(K)
    return L[..., None] - L_minus


def report(s, mean_kind="geometric", log_fhat=None):
    l = _logf(s)
    local = local_signals(l, mean_kind, log_fhat) if l.shape[-1] >= 2 else None
    return BoundReport(Lhat=bound(l), w=importance_weights(l), local=local, mean_kind=mean_kind)
