"""
Comparing gradient estimators by exact enumeration
===================================================

Each estimator is a function of K proposal samples.  Summing over every
K-tuple of latent configurations gives its exact mean and variance, so
unbiasedness and variance can be read off without any sampling noise.
"""

import numpy as np

from vimco import oracle
from vimco.core import make_rng

inst = oracle.toy_instance(make_rng(3), "generative", latent_sizes=(3,), obs_size=5, scale=1.5)
t = oracle.exact_tables(inst.model, inst.proposal, inst.x)

print("%3s %10s %12s %12s" % ("K", "estimator", "bias", "total var"))
for K in (2, 3, 5):
    exact_theta, _ = oracle.gradient_from_tables(t, K)
    LK = oracle.bound_from_tables(t, K)
    for kind, base in (("naive", None), ("nvil", (LK, 0.0)), ("vimco", None), ("rws-wake", None)):
        mom = oracle.moments_from_tables(kind, t, K, base)
        bias = np.linalg.norm(mom.mean - exact_theta)
        print("%3d %10s %12.2e %12.4f" % (K, kind, bias, mom.total_var))

# naive, nvil and vimco are unbiased for the bound gradient; the wake update is
# not, since it estimates the gradient of a different objective (KL(P||Q)).
# Among the unbiased ones the leave-one-out signals of vimco shrink variance
# without any learned parameters.
