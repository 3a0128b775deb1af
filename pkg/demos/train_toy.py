"""
Training a small sigmoid belief network on bars and stripes
============================================================

A few hundred Adam steps on a 4x4 toy dataset, with VIMCO and with NVIL.
Latent layers are small enough that the exact log-likelihood is available
to check the sampled NLL estimate against.
"""

import numpy as np

from vimco import data, oracle, train

ds = data.bars_and_stripes()
print("train images:", ds.split("train").shape)

results = {}
for est, k in (("vimco", 5), ("nvil", 1)):
    cfg = train.TrainConfig(estimator=est, k=k, lr=0.05, batch_size=4, epochs=40, latent_sizes=(6,),
                            baseline_hidden=8, log_every=20)
    results[est] = res = train.train(cfg, ds)
    curve = [float(r["value"]) for r in res.metrics if r["split"] == "train" and r["metric"] == "bound"]
    print(est, "K=%d" % k, "train bound every 20 steps:", np.round(curve, 2))

# sampled NLL against the enumerated one, on the test split
x = ds.split("test")
for est, res in results.items():
    exact = -np.mean([oracle.exact_log_likelihood(res.model, xi) for xi in x])
    print(est, "NLL S=1000: %.3f   exact: %.3f" % (train.eval_nll(res.model, res.proposal, x, 1000), exact))

# a few samples from the VIMCO-trained model, as Bernoulli means
m = results["vimco"].model
_, probs = m.sample_prior(np.random.default_rng(0), n=4)
for img in probs:
    print("\n".join("".join("#" if p > 0.5 else "." for p in row) for row in img.reshape(4, 4)), "\n")
