"""Desk-scale MNIST-subset runs shared by the acceptance tests.

Each run is computed once per session.  The K=10 runs go 5000 steps with a
validation bound at every epoch end; their first 20 epochs are step-for-step
the same as a 20-epoch run.
"""
import functools
import time

import numpy as np

from vimco import data, train

LR = 1e-3
EPOCHS = 20
STEPS = 5000
SECONDS = {}


@functools.cache
def subset():
    return data.mnist10k()


@functools.cache
def run(estimator, k, epochs=EPOCHS, max_steps=0):
    cfg = train.TrainConfig(estimator=estimator, k=k, lr=LR, batch_size=24, epochs=epochs, max_steps=max_steps,
                            latent_sizes=(200,), log_every=10, seed=0)
    t = time.perf_counter()
    res = train.train(cfg, subset())
    SECONDS[(estimator, k, epochs, max_steps)] = time.perf_counter() - t
    return res


def long_run(estimator):
    return run(estimator, 10, epochs=0, max_steps=STEPS)


def valid_after(res, epochs=EPOCHS):
    """Validation bound logged at the end of epoch `epochs`."""
    vals = [float(r["value"]) for r in res.metrics if r["split"] == "valid" and r["epoch"] == epochs - 1]
    return vals[-1]


def rms_series(res):
    rows = [(r["step"], float(r["value"])) for r in res.metrics if r["metric"] == "signal_rms"]
    steps, vals = zip(*rows)
    return np.array(steps), np.array(vals)
