"""Baseline RSMA-HARQ: every stream runs its own HARQ-IR process.

A failed common packet is resent whole on the common stream (so no new
common bits flow that block) and a failed private packet is resent whole on
its own private stream, both at the rate fixed in their first round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .harqmath import ir_per
from .metrics import COMMON, PRIVATE, BlockLedger
from .phy import RateAllocation, SinrReport, split_bits
from .protocol import CompressedFeedback, Feedback, tag


@dataclass
class CommonProcess:
    pid: int
    birth: int
    rate: float
    payload_bits: int
    owner_bits: tuple[int, ...]
    max_rounds: int
    round_index: int = 0
    sinr_history: list[list[float]] = field(default_factory=list)  # per user
    decoded_by: set[int] = field(default_factory=set)


@dataclass
class PrivateProcess:
    pid: int
    user: int
    birth: int
    rate: float
    payload_bits: int
    max_rounds: int
    round_index: int = 0
    # (SINR, pid of the common packet sent in the same block)
    sinr_history: list[tuple[float, int]] = field(default_factory=list)
    decoded: bool = False


@dataclass
class BaselineState:
    num_users: int
    block_length: int
    max_rounds_common: int
    max_rounds_private: tuple[int, ...]
    ledger: Optional[BlockLedger] = None
    common: Optional[CommonProcess] = None
    private: list[Optional[PrivateProcess]] = field(default_factory=list)
    known_common: list[set[int]] = field(default_factory=list)
    next_pid: int = 0
    opened: int = 0
    decoded: int = 0
    dropped: int = 0

    def __post_init__(self):
        if isinstance(self.max_rounds_private, int):
            self.max_rounds_private = (self.max_rounds_private,) * self.num_users
        if not self.private:
            self.private = [None] * self.num_users
        if not self.known_common:
            self.known_common = [set() for _ in range(self.num_users)]

    def _pid(self) -> int:
        self.next_pid += 1
        return self.next_pid


@dataclass(frozen=True)
class BaselineTransmission:
    block_index: int
    common: CommonProcess
    private: tuple[PrivateProcess, ...]
    new_common: bool
    new_private: tuple[bool, ...]

    @property
    def common_round(self) -> int:
        return self.common.round_index

    def expected_tags(self, user: int) -> tuple[str, str]:
        return (tag("c", self.common.round_index), tag("p", self.private[user].round_index))


def baseline_tx_step(state: BaselineState, rates: RateAllocation, block_index: int) -> BaselineTransmission:
    """Resend pending packets unchanged; open fresh processes elsewhere."""
    n_s = state.block_length
    k = state.num_users
    ledger = state.ledger
    new_common = state.common is None
    if new_common:
        payload = math.floor(rates.common_rate * n_s)
        owners = tuple(split_bits(payload, k))
        state.common = CommonProcess(
            state._pid(), block_index, rates.common_rate, payload, owners,
            state.max_rounds_common, sinr_history=[[] for _ in range(k)],
        )
        state.opened += k
        if ledger is not None:
            ledger.open_packet(COMMON, k)
            ledger.scheduled_bits[block_index] += payload
            for u, b in enumerate(owners):
                if b > 0:
                    ledger.open_message_part(u, block_index, COMMON)
    state.common.round_index += 1

    new_private = []
    for u in range(k):
        fresh = state.private[u] is None
        if fresh:
            rate = rates.private_rate_per_user[u]
            payload = math.floor(rate * n_s)
            state.private[u] = PrivateProcess(
                state._pid(), u, block_index, rate, payload, state.max_rounds_private[u]
            )
            state.opened += 1
            if ledger is not None:
                ledger.open_packet(PRIVATE)
                ledger.scheduled_bits[block_index] += payload
                if payload > 0:
                    ledger.open_message_part(u, block_index, PRIVATE)
        state.private[u].round_index += 1
        new_private.append(fresh)
    return BaselineTransmission(
        block_index, state.common, tuple(state.private), new_common, tuple(new_private)
    )


def baseline_rx_step(user: int, sinrs: SinrReport, state: BaselineState, tx: BaselineTransmission, decoder):
    """Decode at one user. Returns ``({tag: ok}, Feedback)``.

    A user that already holds the common packet subtracts it directly. The
    private packet is only attempted once the common packet of this block is
    known; buffered private rounds count towards the IR combine only if the
    common packet sent alongside them is known by now.
    """
    n = tx.block_index
    n_s = state.block_length
    ledger = state.ledger
    c = tx.common
    t_c = tag("c", c.round_index)
    if user in c.decoded_by:
        ok_c = True
    else:
        hist = c.sinr_history[user]
        hist.append(float(sinrs.common_sinr_per_user[user]))
        per = ir_per(hist, c.rate, n_s)
        ok_c = decoder.decode(n, user, t_c, (c.pid, user), per)
        if ok_c:
            c.decoded_by.add(user)
            state.known_common[user].add(c.pid)
            state.decoded += 1
            if ledger is not None:
                ledger.record_decode(n, user, COMMON, c.birth, c.owner_bits[user])
                ledger.close_packet(COMMON, True)
                ledger.resolve_message_part(user, c.birth, COMMON, True)

    p = tx.private[user]
    t_p = tag("p", p.round_index)
    p.sinr_history.append((float(sinrs.private_sinr_per_user[user]), c.pid))
    ok_p = False
    if ok_c:
        known = state.known_common[user]
        usable = [g for g, cp in p.sinr_history if cp in known]
        per = ir_per(usable, p.rate, n_s)
        ok_p = decoder.decode(n, user, t_p, (p.pid, user), per)
        if ok_p:
            p.decoded = True
            state.decoded += 1
            if ledger is not None:
                ledger.record_decode(n, user, PRIVATE, p.birth, p.payload_bits)
                ledger.close_packet(PRIVATE, True)
                ledger.resolve_message_part(user, p.birth, PRIVATE, True)
    fb = Feedback(((t_c, ok_c), (t_p, ok_p)))
    return {t_c: ok_c, t_p: ok_p}, fb


def baseline_apply_feedback(
    state: BaselineState, tx: BaselineTransmission, feedback: Sequence[CompressedFeedback]
) -> None:
    """Transmitter side: close, keep, or drop each process from the feedback."""
    ledger = state.ledger
    fbs = [f.expand(tx.expected_tags(u)) for u, f in enumerate(feedback)]
    c = tx.common
    nack_c = [u for u, f in enumerate(fbs) if not f.results[0][1]]
    if not nack_c:
        state.common = None
    elif c.round_index >= c.max_rounds:
        state.dropped += len(nack_c)
        if ledger is not None:
            for u in nack_c:
                ledger.close_packet(COMMON, False)
                ledger.resolve_message_part(u, c.birth, COMMON, False)
        state.common = None
    for u, f in enumerate(fbs):
        p = tx.private[u]
        if f.results[1][1]:
            state.private[u] = None
        elif p.round_index >= p.max_rounds:
            state.dropped += 1
            if ledger is not None:
                ledger.close_packet(PRIVATE, False)
                ledger.resolve_message_part(u, p.birth, PRIVATE, False)
            state.private[u] = None


def baseline_expected_rewards(
    per_common: Sequence[float],
    per_private: Sequence[float],
    private_rates: Sequence[float],
    common_portions: Sequence[float],
) -> tuple[list[float], list[float]]:
    """Expected per-user rewards ``(common, private)``.

    The private reward is gated by the common decode because of SIC.
    """
    for p in (*per_common, *per_private):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"PER {p} outside [0, 1]")
    common = [c * (1 - pc) for c, pc in zip(common_portions, per_common)]
    private = [r * (1 - pc) * (1 - pp) for r, pc, pp in zip(private_rates, per_common, per_private)]
    return common, private


class BaselineScheme:
    name = "baseline"

    def __init__(self, num_users, block_length, max_rounds_common, max_rounds_private, ledger=None):
        self.state = BaselineState(num_users, block_length, max_rounds_common, max_rounds_private, ledger)

    def run_block(self, block_index: int, rates: RateAllocation, sinrs: SinrReport, decoder, **_):
        st = self.state
        tx = baseline_tx_step(st, rates, block_index)
        feedback = []
        for u in range(st.num_users):
            _, fb = baseline_rx_step(u, sinrs, st, tx, decoder)
            feedback.append(fb.compress())
        baseline_apply_feedback(st, tx, feedback)
        return tx, feedback
