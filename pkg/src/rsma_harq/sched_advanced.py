"""Advanced RSMA-HARQ with layered HARQ (L-HARQ).

Every block carries fresh data on all streams at rates picked for that block.
Retransmissions are short bursts of extra bits. They are packed into the
common stream first: common-packet retransmissions, then private ones from
the oldest HARQ round down. When the common payload runs out, one private
retransmission is split and its remainder rides, jointly encoded with new
data, on the owner's private stream. A receiver that extracts those bits
credits them to the old packet and re-decodes the buffered first-round
signal at the correspondingly reduced rate (backtrack decoding).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .harqmath import (
    backtrack_error,
    empirical_cdf,
    ir_per,
    min_retransmission_length,
    reduced_backtrack_rate,
)
from .metrics import COMMON, PRIVATE, BlockLedger
from .phy import RateAllocation, SinrReport, split_bits
from .protocol import CompressedFeedback, Feedback, tag

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """Transmitter and receiver state disagree."""


@dataclass
class CommonPacket:
    pid: int
    birth: int
    rate: float
    payload_bits: int
    owner_bits: tuple[int, ...]
    undecoded: set[int]
    sinr_samples: Optional[np.ndarray] = None  # (S, K) conditional SINR draws


@dataclass
class PrivatePacket:
    pid: int
    user: int
    birth: int
    rate: float
    payload_bits: int
    new_bits: int
    common_pid: int
    decoded: bool = False
    sinr_samples: Optional[np.ndarray] = None  # (S,)


@dataclass(frozen=True)
class CommonGroupRetx:
    round_index: int
    pid: int
    bits: int


@dataclass(frozen=True)
class PrivateRetx:
    user: int
    round_index: int
    pid: int
    bits: int
    bits_in_common: int
    bits_in_private: int


@dataclass(frozen=True)
class SplitRecord:
    user: int
    round_index: int
    bits_in_common: int
    bits_in_private: int


@dataclass(frozen=True)
class RetransmissionPlan:
    block_index: int
    common_rate: float
    common_payload_bits: int
    common_groups: tuple[CommonGroupRetx, ...]
    private_retx: tuple[PrivateRetx, ...]
    split_records: tuple[SplitRecord, ...]
    new_common_bits_per_user: tuple[int, ...]
    private_payload_bits: tuple[int, ...]
    new_private_bits: tuple[int, ...]
    common_packet: CommonPacket
    private_packets: tuple[PrivatePacket, ...]

    @property
    def common_supermessage_bits(self) -> int:
        return sum(g.bits for g in self.common_groups)

    @property
    def common_retx_bits_per_group(self) -> tuple[int, ...]:
        return tuple(g.bits for g in self.common_groups)

    @property
    def common_bits_packed(self) -> int:
        return (
            self.common_supermessage_bits
            + sum(r.bits_in_common for r in self.private_retx)
            + sum(self.new_common_bits_per_user)
        )

    def private_bits_packed(self, user: int) -> int:
        carried = sum(r.bits_in_private for r in self.private_retx if r.user == user)
        return carried + self.new_private_bits[user]

    def private_retx_for(self, user: int) -> list[PrivateRetx]:
        return [r for r in self.private_retx if r.user == user]


@dataclass
class BacktrackLedger:
    """Receiver-side memory of one user."""

    first_sinr: dict[int, float] = field(default_factory=dict)
    rate: dict[int, float] = field(default_factory=dict)
    birth: dict[int, int] = field(default_factory=dict)
    # pid -> [(block, bits)]
    credits: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    known_common: set[int] = field(default_factory=set)
    decoded_private: set[int] = field(default_factory=set)

    def remember(self, pid: int, sinr: float, rate: float, birth: int) -> None:
        self.first_sinr[pid] = sinr
        self.rate[pid] = rate
        self.birth[pid] = birth
        self.credits[pid] = []

    def add_credit(self, pid: int, block: int, bits: int) -> None:
        if pid not in self.credits:
            raise ProtocolError(f"credit for unknown packet {pid}")
        if block <= self.birth[pid]:
            raise ProtocolError(f"credit for packet {pid} in its birth block")
        if bits > 0:
            self.credits[pid].append((block, bits))

    def total_credits(self, pid: int) -> int:
        return sum(b for _, b in self.credits[pid])

    def reduced_rate(self, pid: int, block_length: int) -> float:
        return reduced_backtrack_rate(self.rate[pid], self.total_credits(pid), block_length)


class RetxSizer(Protocol):
    def __call__(self, state: "AdvancedState", packet, round_index: int) -> int: ...


class FractionSizer:
    """Fixed fraction of the packet's full payload per retransmission round."""

    def __init__(self, fraction: float = 0.15):
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        self.fraction = fraction

    def __call__(self, state, packet, round_index: int) -> int:
        return math.ceil(self.fraction * packet.payload_bits)


class TargetPerSizer:
    """Smallest retransmission that meets a target average backtrack PER.

    Uses the conditional SINR draws stored with each packet at birth and the
    credits the transmitter has seen acknowledged so far. For a common packet
    the largest requirement over the users still missing it is used.
    """

    def __init__(self, target_per: float):
        if not 0 < target_per < 1:
            raise ValueError("target_per must lie in (0, 1)")
        self.target_per = target_per

    def _length(self, state, pid, rate, samples, user) -> int:
        prior = [b for _, b in state.tx_credits.get((pid, user), [])]
        res = min_retransmission_length(
            self.target_per, rate, prior, empirical_cdf(samples), state.block_length
        )
        return res.bits

    def __call__(self, state, packet, round_index: int) -> int:
        if packet.sinr_samples is None:
            raise ValueError("target-PER sizing needs SINR samples stored with the packet")
        if isinstance(packet, CommonPacket):
            return max(
                (self._length(state, packet.pid, packet.rate, packet.sinr_samples[:, u], u)
                 for u in sorted(packet.undecoded)),
                default=0,
            )
        return self._length(state, packet.pid, packet.rate, packet.sinr_samples, packet.user)


@dataclass
class AdvancedState:
    num_users: int
    block_length: int
    max_rounds_common: int
    max_rounds_private: tuple[int, ...]
    ledger: Optional[BlockLedger] = None
    common_pending: list[CommonPacket] = field(default_factory=list)
    private_pending: list[PrivatePacket] = field(default_factory=list)
    receivers: list[BacktrackLedger] = field(default_factory=list)
    # transmitter mirror of acknowledged credits, (pid, user) -> [(block, bits)]
    tx_credits: dict[tuple[int, int], list[tuple[int, int]]] = field(default_factory=dict)
    next_pid: int = 0
    opened: int = 0
    decoded: int = 0
    dropped: int = 0
    clamp_warnings: int = 0
    control_bits: int = 0

    def __post_init__(self):
        if isinstance(self.max_rounds_private, int):
            self.max_rounds_private = (self.max_rounds_private,) * self.num_users
        if not self.receivers:
            self.receivers = [BacktrackLedger() for _ in range(self.num_users)]

    def _pid(self) -> int:
        self.next_pid += 1
        return self.next_pid


def _sized(state: AdvancedState, sizer, packet, round_index: int) -> int:
    bits = int(sizer(state, packet, round_index))
    if bits < 0:
        raise ValueError("retransmission sizer returned a negative size")
    if bits > packet.payload_bits:
        state.clamp_warnings += 1
        log.warning("retransmission of %d bits exceeds packet payload %d; clamped", bits, packet.payload_bits)
        bits = packet.payload_bits
    return bits


def advanced_tx_step(
    state: AdvancedState,
    rates: RateAllocation,
    retx_sizer,
    block_index: int,
    sinr_samples: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> RetransmissionPlan:
    """Pack retransmissions and new data for one block.

    ``sinr_samples`` optionally carries ``(common (S, K), private (S, K))``
    conditional SINR draws for this block, stored with the new packets for
    the target-PER sizer.
    """
    n = block_index
    n_s = state.block_length
    k = state.num_users
    cap_c = math.floor(rates.common_rate * n_s)
    room = cap_c

    groups = []
    for pkt in sorted(state.common_pending, key=lambda p: p.birth):
        t = n - pkt.birth + 1
        bits = min(_sized(state, retx_sizer, pkt, t), room)
        room -= bits
        groups.append(CommonGroupRetx(t, pkt.pid, bits))

    retx = []
    split = []
    for pkt in sorted(state.private_pending, key=lambda p: (p.birth, p.user)):
        t = n - pkt.birth + 1
        bits = _sized(state, retx_sizer, pkt, t)
        if bits <= room:
            in_c, in_p = bits, 0
        elif room > 0 and not split:
            in_c, in_p = room, bits - room
            split.append(SplitRecord(pkt.user, t, in_c, in_p))
        else:
            in_c, in_p = 0, bits
        room -= in_c
        retx.append([pkt, t, bits, in_c, in_p])

    payload_p = [math.floor(r * n_s) for r in rates.private_rate_per_user]
    carried = [0] * k
    for item in retx:
        pkt, in_p = item[0], item[4]
        fit = min(in_p, payload_p[pkt.user] - carried[pkt.user])
        if fit < in_p:
            item[4] = fit
            item[2] = item[3] + fit
        carried[pkt.user] += fit
    # split records must describe what was actually scheduled
    split = [
        SplitRecord(s.user, s.round_index, s.bits_in_common, next(
            it[4] for it in retx if it[0].user == s.user and it[1] == s.round_index))
        for s in split
    ]
    private_retx = tuple(PrivateRetx(p.user, t, p.pid, b, c, q) for p, t, b, c, q in retx)

    scheduled = {r.user for r in private_retx if r.bits_in_common > 0}
    for g, pkt in zip(groups, sorted(state.common_pending, key=lambda p: p.birth)):
        if g.bits > 0:
            scheduled |= pkt.undecoded
    unscheduled = [u for u in range(k) if u not in scheduled]
    new_common = split_bits(room, k, unscheduled or None)

    ledger = state.ledger
    common_samples = private_samples = None
    if sinr_samples is not None:
        common_samples, private_samples = sinr_samples
    cpkt = CommonPacket(
        state._pid(), n, rates.common_rate, cap_c, tuple(new_common), set(range(k)), common_samples
    )
    state.common_pending.append(cpkt)
    state.opened += k
    ppkts = []
    for u in range(k):
        new_bits = payload_p[u] - carried[u]
        p = PrivatePacket(
            state._pid(), u, n, rates.private_rate_per_user[u], payload_p[u], new_bits, cpkt.pid,
            sinr_samples=None if private_samples is None else private_samples[:, u],
        )
        ppkts.append(p)
        state.private_pending.append(p)
        state.opened += 1
    if ledger is not None:
        ledger.open_packet(COMMON, k)
        ledger.open_packet(PRIVATE, k)
        ledger.scheduled_bits[n] += sum(new_common) + sum(p.new_bits for p in ppkts)
        for u in range(k):
            if new_common[u] > 0:
                ledger.open_message_part(u, n, COMMON)
            if ppkts[u].new_bits > 0:
                ledger.open_message_part(u, n, PRIVATE)
    # two bit-range boundaries per retransmission segment; diagnostic only
    state.control_bits += 2 * math.ceil(math.log2(cap_c + 2)) * (len(groups) + len(private_retx))

    return RetransmissionPlan(
        block_index=n,
        common_rate=rates.common_rate,
        common_payload_bits=cap_c,
        common_groups=tuple(groups),
        private_retx=private_retx,
        split_records=tuple(split),
        new_common_bits_per_user=tuple(new_common),
        private_payload_bits=tuple(payload_p),
        new_private_bits=tuple(p.new_bits for p in ppkts),
        common_packet=cpkt,
        private_packets=tuple(ppkts),
    )


def expected_tags(user: int, plan: RetransmissionPlan, state: AdvancedState) -> list[str]:
    """Order in which ``user`` decodes and reports this block."""
    pending = {p.pid: p for p in state.common_pending}
    tags = [tag("c", 1)]
    tags += [tag("c", g.round_index) for g in plan.common_groups if user in pending[g.pid].undecoded]
    tags.append(tag("p", 1))
    tags += [tag("p", r.round_index) for r in plan.private_retx if r.user == user]
    return tags


def _reward(state, block, user, stream, birth, bits):
    ledger = state.ledger
    state.decoded += 1
    if ledger is not None:
        ledger.record_decode(block, user, stream, birth, bits)
        ledger.close_packet(stream, True)
        ledger.resolve_message_part(user, birth, stream, True)


def advanced_rx_step(
    user: int,
    sinrs: SinrReport,
    plan: RetransmissionPlan,
    state: AdvancedState,
    decoder,
    ledger: Optional[BacktrackLedger] = None,
):
    """Decode at one user; returns ``({tag: ok}, Feedback)``.

    Order: current common packet; backtracks of old common packets; SIC and
    the current private packet; backtracks of this user's old private packets.
    Nothing is credited or attempted when the current common packet fails.
    """
    rx = ledger if ledger is not None else state.receivers[user]
    n = plan.block_index
    n_s = state.block_length
    cpkt = plan.common_packet
    ppkt = plan.private_packets[user]
    g_c = float(sinrs.common_sinr_per_user[user])
    g_p = float(sinrs.private_sinr_per_user[user])
    rx.remember(cpkt.pid, g_c, cpkt.rate, n)
    rx.remember(ppkt.pid, g_p, ppkt.rate, n)

    pending_common = {p.pid: p for p in state.common_pending}
    pending_private = {p.pid: p for p in state.private_pending}
    my_groups = []
    for g in plan.common_groups:
        if g.pid not in pending_common:
            raise ProtocolError(f"plan retransmits unknown common packet {g.pid}")
        if g.pid not in rx.credits:
            raise ProtocolError(f"user {user} has no buffered signal for common packet {g.pid}")
        if user in pending_common[g.pid].undecoded:
            my_groups.append(g)
    my_retx = plan.private_retx_for(user)
    for r in my_retx:
        if r.pid not in rx.credits:
            raise ProtocolError(f"user {user} has no buffered signal for private packet {r.pid}")

    results: list[tuple[str, bool]] = []
    ok_c = decoder.decode(n, user, tag("c", 1), (cpkt.pid, user), ir_per((g_c,), cpkt.rate, n_s))
    results.append((tag("c", 1), ok_c))
    if ok_c:
        rx.known_common.add(cpkt.pid)
        _reward(state, n, user, COMMON, n, cpkt.owner_bits[user])

    for g in my_groups:
        ok = False
        if ok_c:
            rx.add_credit(g.pid, n, g.bits)
            per = backtrack_error(rx.first_sinr[g.pid], rx.reduced_rate(g.pid, n_s), n_s)
            ok = decoder.decode(n, user, tag("c", g.round_index), (g.pid, user), per)
            if ok:
                rx.known_common.add(g.pid)
                old = pending_common[g.pid]
                _reward(state, n, user, COMMON, old.birth, old.owner_bits[user])
        results.append((tag("c", g.round_index), ok))

    ok_p = False
    if ok_c:
        ok_p = decoder.decode(n, user, tag("p", 1), (ppkt.pid, user), ir_per((g_p,), ppkt.rate, n_s))
        if ok_p:
            rx.decoded_private.add(ppkt.pid)
            _reward(state, n, user, PRIVATE, n, ppkt.new_bits)
    results.append((tag("p", 1), ok_p))

    for r in my_retx:
        ok = False
        if ok_c:
            credit = r.bits_in_common + (r.bits_in_private if ok_p else 0)
            rx.add_credit(r.pid, n, credit)
            old = pending_private[r.pid]
            if old.common_pid in rx.known_common:
                per = backtrack_error(rx.first_sinr[r.pid], rx.reduced_rate(r.pid, n_s), n_s)
                ok = decoder.decode(n, user, tag("p", r.round_index), (r.pid, user), per)
            if ok:
                rx.decoded_private.add(r.pid)
                _reward(state, n, user, PRIVATE, old.birth, old.new_bits)
        results.append((tag("p", r.round_index), ok))
    return dict(results), Feedback(tuple(results))


def advanced_apply_feedback(
    state: AdvancedState, plan: RetransmissionPlan, feedback: Sequence[CompressedFeedback]
) -> None:
    """Transmitter side: update decode sets and credit mirrors, drop expired packets."""
    n = plan.block_index
    pending_common = {p.pid: p for p in state.common_pending}
    pending_private = {p.pid: p for p in state.private_pending}
    by_round_c = {g.round_index: g for g in plan.common_groups}
    for u, cf in enumerate(feedback):
        fb = cf.expand(expected_tags(u, plan, state))
        acks = dict(fb.results)
        common_ok = acks[tag("c", 1)]
        private_ok = acks[tag("p", 1)]
        if common_ok:
            plan.common_packet.undecoded.discard(u)
        if private_ok:
            plan.private_packets[u].decoded = True
        for t, ok in fb.results:
            stream, rnd = t[0], int(t[2:-1])
            if rnd == 1:
                continue
            if stream == "c":
                g = by_round_c[rnd]
                if common_ok and g.bits > 0:
                    state.tx_credits.setdefault((g.pid, u), []).append((n, g.bits))
                if ok:
                    pending_common[g.pid].undecoded.discard(u)
            else:
                r = next(x for x in plan.private_retx if x.user == u and x.round_index == rnd)
                credit = (r.bits_in_common if common_ok else 0) + (r.bits_in_private if private_ok else 0)
                if credit > 0:
                    state.tx_credits.setdefault((r.pid, u), []).append((n, credit))
                if ok:
                    pending_private[r.pid].decoded = True

    ledger = state.ledger
    keep = []
    for p in state.common_pending:
        if not p.undecoded:
            continue
        if n - p.birth + 1 >= state.max_rounds_common:
            state.dropped += len(p.undecoded)
            if ledger is not None:
                for u in p.undecoded:
                    ledger.close_packet(COMMON, False)
                    ledger.resolve_message_part(u, p.birth, COMMON, False)
            continue
        keep.append(p)
    state.common_pending = keep
    keep = []
    for p in state.private_pending:
        if p.decoded:
            continue
        if n - p.birth + 1 >= state.max_rounds_private[p.user]:
            state.dropped += 1
            if ledger is not None:
                ledger.close_packet(PRIVATE, False)
                ledger.resolve_message_part(p.user, p.birth, PRIVATE, False)
            continue
        keep.append(p)
    state.private_pending = keep


def advanced_expected_rewards(
    per_common_current: float,
    per_private_current: float,
    common_portion_current: float,
    private_rate_current: float,
    common_backlog: Sequence[tuple[float, float]] = (),
    private_backlog: Sequence[tuple[float, float, float]] = (),
) -> tuple[float, float]:
    """Expected common and private rewards of one user in one block.

    ``common_backlog`` holds ``(portion, backtrack PER)`` per old common
    packet. ``private_backlog`` holds ``(rate, PER_A, PER_B)`` per old private
    packet, where ``PER_A`` is the backtrack PER with only the common-carried
    credits (used when the current private packet fails) and ``PER_B`` the
    one with all credits (used when it succeeds). Everything is gated by the
    current common decode.
    """
    probs = [per_common_current, per_private_current]
    probs += [p for _, p in common_backlog]
    probs += [x for _, a, b in private_backlog for x in (a, b)]
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise ValueError("probabilities must lie in [0, 1]")
    gate = 1.0 - per_common_current
    common = (sum(c * (1 - p) for c, p in common_backlog) + common_portion_current) * gate
    pp = per_private_current
    backlog = sum(r * (pp * (1 - a) + (1 - pp) * (1 - b)) for r, a, b in private_backlog)
    private = (backlog + private_rate_current * (1 - pp)) * gate
    return common, private


def decoding_workload(user: int, state: AdvancedState) -> int:
    """Decode attempts ``user`` makes in the next block if the common decodes."""
    old_common = sum(1 for p in state.common_pending if user in p.undecoded)
    old_private = sum(1 for p in state.private_pending if p.user == user)
    return 2 + old_common + old_private


class AdvancedScheme:
    name = "advanced"

    def __init__(self, num_users, block_length, max_rounds_common, max_rounds_private,
                 ledger=None, retx_sizer=None):
        self.state = AdvancedState(num_users, block_length, max_rounds_common, max_rounds_private, ledger)
        self.sizer = retx_sizer if retx_sizer is not None else FractionSizer(0.15)

    def run_block(self, block_index, rates, sinrs, decoder, sinr_samples=None):
        st = self.state
        plan = advanced_tx_step(st, rates, self.sizer, block_index, sinr_samples)
        feedback = [advanced_rx_step(u, sinrs, plan, st, decoder)[1].compress() for u in range(st.num_users)]
        advanced_apply_feedback(st, plan, feedback)
        return plan, feedback
