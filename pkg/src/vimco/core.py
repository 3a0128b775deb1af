"""Numerically stable primitives and the seeding contract.

Everything that touches probabilities works in the log domain.  Arrays are
float64 throughout; vector operations reduce over the last axis so batches of
sample sets can be processed in one call.
"""
import numpy as np
from scipy import special

# Stream purposes for make_rng; keeps e.g. shuffling independent of sampling.
SAMPLE, SHUFFLE, EVAL, INIT = 0, 1, 2, 3


def _as_finite(v, what="input"):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} contains non-finite values")
    return v


def log_sum_exp(v, axis=-1):
    """log(sum(exp(v))) along `axis`, max-shifted."""
    v = _as_finite(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise ValueError("log_sum_exp needs a non-empty vector")
    return special.logsumexp(v, axis=axis)


def softmax_from_logs(v, axis=-1):
    v = _as_finite(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise ValueError("softmax_from_logs needs a non-empty vector")
    return np.exp(v - special.logsumexp(v, axis=axis, keepdims=True))


def sigmoid(a):
    return special.expit(a)


def log_sigmoid(a):
    # log_expit switches branches internally, so log(sigmoid(-100)) is -100, not -inf
    return special.log_expit(a)


def bernoulli_log_prob(bit, logit):
    """b*log(sigmoid(a)) + (1-b)*log(sigmoid(-a)), elementwise.

    Uses log(sigmoid(-a)) = log(sigmoid(a)) - a to need one log-sigmoid.
    """
    bit = np.asarray(bit, dtype=np.float64)
    logit = np.asarray(logit, dtype=np.float64)
    return special.log_expit(logit) - (1.0 - bit) * logit


def bernoulli_from_uniform(p, u):
    """Threshold uniforms in [0, 1) against means; u < p gives a one."""
    return (u < p).astype(np.float64)


def bernoulli_sample(p, rng):
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("Bernoulli means must lie in [0, 1]")
    return bernoulli_from_uniform(p, rng.random(p.shape))


def make_rng(seed, *keys):
    """Independent generator for the substream identified by `keys`.

    Streams with the same (seed, keys) are identical no matter in which order
    or on which worker they are created, which is what per-case sampling in a
    minibatch relies on.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
