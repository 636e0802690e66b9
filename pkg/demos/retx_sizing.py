"""How many retransmission bits a backtrack decode needs to hit a target
average error rate, given samples of the first-round SINR."""

import numpy as np

from rsma_harq.harqmath import empirical_cdf, min_retransmission_length

rng = np.random.default_rng(0)
n = 256
rate = 3.0
# first-round SINR of a failed packet: below the level needed for 3 bits/symbol
samples = rng.uniform(3.0, 7.0, size=500)
cdf = empirical_cdf(samples)
for eps in (0.3, 0.1, 0.03, 0.01):
    res = min_retransmission_length(eps, rate, [], cdf, n)
    share = res.bits / (rate * n)
    print(f"target {eps:5.2f}: {res.bits:4d} bits ({share:5.1%} of the payload), "
          f"achieved {res.achieved_per:.4f}{'  [saturated]' if res.saturated else ''}")
