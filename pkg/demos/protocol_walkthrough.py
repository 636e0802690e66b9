"""Walk two users through three blocks of the layered HARQ protocol with
forced decode outcomes, printing what is sent and what is fed back."""

import numpy as np

from rsma_harq.phy import RateAllocation, SinrReport
from rsma_harq.protocol import ForcedDecoder
from rsma_harq.sched_advanced import AdvancedScheme, FractionSizer

sinrs = SinrReport(np.array([10.0, 10.0]), np.array([10.0, 10.0]))
rates = RateAllocation(1.0, (0.5, 0.5), (1.0, 1.0))

# (block, user, tag) -> decoded?
outcomes = {
    (0, 0, "c(1)"): True, (0, 0, "p(1)"): True,
    (0, 1, "c(1)"): False,
    (1, 0, "c(1)"): True, (1, 0, "p(1)"): False,
    (1, 1, "c(1)"): True, (1, 1, "c(2)"): True, (1, 1, "p(1)"): True, (1, 1, "p(2)"): True,
    (2, 0, "c(1)"): True, (2, 0, "p(1)"): True, (2, 0, "p(2)"): True,
    (2, 1, "c(1)"): True, (2, 1, "p(1)"): True,
}
scheme = AdvancedScheme(2, 256, 3, 3, retx_sizer=FractionSizer(0.15))
decoder = ForcedDecoder(outcomes)

for block in range(3):
    plan, feedback = scheme.run_block(block, rates, sinrs, decoder)
    print(f"block {block + 1}")
    for g in plan.common_groups:
        print(f"  common retx of packet {g.pid}: {g.bits} bits")
    for r in plan.private_retx:
        print(f"  user {r.user + 1} private retx: {r.bits_in_common} bits in common, "
              f"{r.bits_in_private} in private")
    print(f"  new common bits per user: {plan.new_common_bits_per_user}")
    for u, fb in enumerate(feedback):
        print(f"  user {u + 1} feedback: {' '.join(fb.tokens)}")
