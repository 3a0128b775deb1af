"""
How the multi-sample bound tightens with K
==========================================

On a model small enough to enumerate, the K-sample bound can be computed
exactly.  It starts at the ordinary ELBO for K = 1 and climbs towards
log P(x).  With the true posterior as proposal every K gives log P(x).
"""

import numpy as np

from vimco import oracle
from vimco.core import make_rng

inst = oracle.toy_instance(make_rng(0), "generative", latent_sizes=(2, 1), scale=2.0)
m, q, x = inst.model, inst.proposal, inst.x
log_px = oracle.exact_log_likelihood(m, x)
print("observation", x.astype(int), " log P(x) = %.4f" % log_px)

# the ladder: each extra sample can only help
for K in range(1, 7):
    print("K=%d  L^K = %.4f   gap %.4f" % (K, oracle.exact_bound(m, q, x, K), log_px - oracle.exact_bound(m, q, x, K)))

# the exact posterior as a proposal closes the gap for every K
post = oracle.PosteriorProposal(m, x)
print("posterior proposal:", [round(oracle.exact_bound(m, post, x, K), 6) for K in (1, 2, 3)])
