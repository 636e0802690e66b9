"""RSMA with AMC and no HARQ.

Each block is sent once. Bits of a failed packet go back to the front of
their user's queue for that stream and are re-scheduled later, keeping their
original birth block for latency accounting.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .harqmath import ir_per
from .metrics import COMMON, PRIVATE, BlockLedger
from .phy import RateAllocation, SinrReport, split_bits
from .protocol import tag

Chunk = tuple[int, int]  # (birth block, bits)


def _take(queue: deque, bits: int, block: int) -> list[Chunk]:
    """Pop up to ``bits`` from the queue front, topping up with fresh bits."""
    out = []
    while bits > 0 and queue:
        birth, b = queue.popleft()
        if b > bits:
            queue.appendleft((birth, b - bits))
            b = bits
        out.append((birth, b))
        bits -= b
    if bits > 0:
        out.append((block, bits))
    return out


@dataclass
class NoHarqState:
    num_users: int
    block_length: int
    ledger: Optional[BlockLedger] = None
    common_queue: list[deque] = field(default_factory=list)
    private_queue: list[deque] = field(default_factory=list)

    def __post_init__(self):
        if not self.common_queue:
            self.common_queue = [deque() for _ in range(self.num_users)]
        if not self.private_queue:
            self.private_queue = [deque() for _ in range(self.num_users)]


class NoHarqScheme:
    name = "no_harq"

    def __init__(self, num_users, block_length, ledger=None, **_):
        self.state = NoHarqState(num_users, block_length, ledger)

    def run_block(self, block_index: int, rates: RateAllocation, sinrs: SinrReport, decoder, **_):
        st = self.state
        n, n_s, k = block_index, st.block_length, st.num_users
        ledger = st.ledger
        cap_c = math.floor(rates.common_rate * n_s)
        shares = split_bits(cap_c, k)
        common = [_take(st.common_queue[u], shares[u], n) for u in range(k)]
        private = [
            _take(st.private_queue[u], math.floor(r * n_s), n)
            for u, r in enumerate(rates.private_rate_per_user)
        ]
        if ledger is not None:
            ledger.open_packet(COMMON, k)
            ledger.open_packet(PRIVATE, k)
            fresh = sum(b for chunks in common + private for birth, b in chunks if birth == n)
            ledger.scheduled_bits[n] += fresh
            for u in range(k):
                if shares[u] > 0:
                    ledger.open_message_part(u, n, COMMON)
                if private[u]:
                    ledger.open_message_part(u, n, PRIVATE)

        pid = 2 * k * n
        results = []
        for u in range(k):
            g_c = float(sinrs.common_sinr_per_user[u])
            g_p = float(sinrs.private_sinr_per_user[u])
            ok_c = decoder.decode(n, u, tag("c", 1), ("c", pid, u),
                                  ir_per((g_c,), rates.common_rate, n_s))
            ok_p = ok_c and decoder.decode(n, u, tag("p", 1), ("p", pid, u),
                                           ir_per((g_p,), rates.private_rate_per_user[u], n_s))
            for stream, ok, chunks, queue in (
                (COMMON, ok_c, common[u], st.common_queue[u]),
                (PRIVATE, ok_p, private[u], st.private_queue[u]),
            ):
                if ledger is not None:
                    ledger.close_packet(stream, ok)
                    ledger.resolve_message_part(u, n, stream, ok)
                if ok:
                    if ledger is not None:
                        for birth, b in chunks:
                            ledger.record_decode(n, u, stream, birth, b)
                else:
                    queue.extendleft(reversed(chunks))
            results.append((ok_c, ok_p))
        return common, private, results
