"""Scheduler state machines: baseline, advanced (layered) and no-HARQ."""

import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_harq.harqmath import empirical_cdf, min_retransmission_length
from rsma_harq.metrics import BlockLedger
from rsma_harq.phy import RateAllocation, SinrReport
from rsma_harq.protocol import ForcedDecoder, RandomDecoder
from rsma_harq.sched_advanced import (
    AdvancedScheme,
    BacktrackLedger,
    FractionSizer,
    ProtocolError,
    TargetPerSizer,
    advanced_expected_rewards,
    advanced_rx_step,
    advanced_tx_step,
    decoding_workload,
)
from rsma_harq.sched_baseline import BaselineScheme, baseline_expected_rewards
from rsma_harq.sched_noharq import NoHarqScheme


class SequenceDecoder:
    """Answers decode attempts from a fixed sequence, logging the keys."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def decode(self, block, user, t, key, per):
        self.calls.append((block, user, t))
        return self.outcomes[len(self.calls) - 1] if len(self.calls) <= len(self.outcomes) else True


class ConstDecoder:
    def __init__(self, ok):
        self.ok = ok

    def decode(self, *a):
        return self.ok


def alloc(r_c, r_p):
    k = len(r_p)
    return RateAllocation(r_c, tuple([r_c / k] * (k - 1) + [r_c - (k - 1) * (r_c / k)]), tuple(r_p))


def sinrs(k, g=10.0):
    return SinrReport(np.full(k, g), np.full(k, g))


# -- baseline ---------------------------------------------------------------

@pytest.mark.parametrize("max_rounds", [2, 3])
def test_baseline_round_counts_exhaustive(max_rounds):
    """Single user, every outcome sequence over 5 blocks."""
    blocks = 5
    for pattern in itertools.product((False, True), repeat=2 * blocks):
        led = BlockLedger(blocks, 1, 256)
        sch = BaselineScheme(1, 256, max_rounds, max_rounds, led)
        dec = SequenceDecoder(pattern)
        for n in range(blocks):
            tx, _ = sch.run_block(n, alloc(1.0, [1.0]), sinrs(1), dec)
            assert 1 <= tx.common_round <= max_rounds
            assert 1 <= tx.private[0].round_index <= max_rounds
        c, p = led.packets["c"], led.packets["p"]
        st_ = sch.state
        c_inflight = 0 if st_.common is None else 1 - len(st_.common.decoded_by)
        p_inflight = 0 if st_.private[0] is None else 1
        assert c.opened == c.decoded + c.dropped + c_inflight
        assert p.opened == p.decoded + p.dropped + p_inflight
        # every decoded bit was delivered within the round limit
        assert all(1 <= d <= max_rounds for *_, d, _ in led.decoded)


def test_baseline_private_waits_for_common():
    # user 0 fails the common packet: private is never attempted, one NACK
    dec = ForcedDecoder({(0, 0, "c(1)"): False})
    sch = BaselineScheme(1, 256, 2, 2)
    _, fb = sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), dec)
    assert fb[0].tokens == ("NACK",)
    # second round: common and private combine both rounds
    dec = ForcedDecoder({(1, 0, "c(2)"): True, (1, 0, "p(2)"): True})
    _, fb = sch.run_block(1, alloc(3.0, [3.0]), sinrs(1), dec)
    assert fb[0].tokens == ("ACK",)


def test_baseline_retx_keeps_first_rate():
    sch = BaselineScheme(1, 256, 2, 2)
    sch.run_block(0, alloc(1.0, [2.0]), sinrs(1), ConstDecoder(False))
    tx, _ = sch.run_block(1, alloc(5.0, [6.0]), sinrs(1), ConstDecoder(False))
    assert tx.common.rate == 1.0 and tx.private[0].rate == 2.0
    # both dropped after the second round; fresh processes at the new rate
    tx, _ = sch.run_block(2, alloc(5.0, [6.0]), sinrs(1), ConstDecoder(True))
    assert tx.new_common and tx.common.rate == 5.0


def test_baseline_expected_rewards():
    c, p = baseline_expected_rewards([0.1, 1.0], [0.5, 0.0], [2.0, 3.0], [1.0, 1.0])
    assert c == pytest.approx([0.9, 0.0])
    assert p == pytest.approx([0.9, 0.0])
    with pytest.raises(ValueError):
        baseline_expected_rewards([1.1], [0.0], [1.0], [1.0])


# -- advanced: planning ---------------------------------------------------

def test_no_pending_all_new():
    sch = AdvancedScheme(3, 256, 2, 2)
    plan = advanced_tx_step(sch.state, alloc(2.0, [1.0, 1.0, 1.0]), sch.sizer, 0)
    assert plan.common_supermessage_bits == 0
    assert sum(plan.new_common_bits_per_user) == 512 == plan.common_bits_packed


def test_small_private_retx_fits_in_common():
    sch = AdvancedScheme(2, 256, 2, 2)
    dec = ForcedDecoder({(0, 0, "c(1)"): True, (0, 0, "p(1)"): False,
                         (0, 1, "c(1)"): True, (0, 1, "p(1)"): True})
    sch.run_block(0, alloc(2.0, [1.0, 1.0]), sinrs(2), dec)
    plan = advanced_tx_step(sch.state, alloc(2.0, [1.0, 1.0]), sch.sizer, 1)
    (r,) = plan.private_retx
    assert (r.user, r.round_index, r.bits, r.bits_in_private) == (0, 2, math.ceil(0.15 * 256), 0)
    assert plan.split_records == ()
    assert plan.new_private_bits == (256, 256)
    # leftover common bits go to the user with nothing scheduled
    assert plan.new_common_bits_per_user == (0, 512 - r.bits)


def test_sizer_clamped_with_warning(caplog):
    sch = AdvancedScheme(1, 256, 2, 2, retx_sizer=lambda st, pkt, t: 10_000)
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), ConstDecoder(False))
    with caplog.at_level(logging.WARNING):
        plan = advanced_tx_step(sch.state, alloc(4.0, [4.0]), sch.sizer, 1)
    assert plan.common_groups[0].bits == 256
    assert sch.state.clamp_warnings >= 1
    assert "clamped" in caplog.text


def test_common_failure_gives_single_nack_and_no_credit():
    sch = AdvancedScheme(1, 256, 3, 3)
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), ConstDecoder(False))
    dec = ForcedDecoder({(1, 0, "c(1)"): False})
    plan, fb = sch.run_block(1, alloc(1.0, [1.0]), sinrs(1), dec)
    assert fb[0].tokens == ("NACK",)
    rx = sch.state.receivers[0]
    assert all(not c for c in rx.credits.values())
    assert dec.seen == [(1, 0, "c(1)")]


def test_term_a_credit_is_common_part_only():
    # retransmission split across streams; current private fails
    sizer = lambda st, pkt, t: 100  # noqa: E731
    sch = AdvancedScheme(1, 256, 2, 2, retx_sizer=sizer)
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), ForcedDecoder({(0, 0, "c(1)"): True, (0, 0, "p(1)"): False}))
    dec = ForcedDecoder({(1, 0, "c(1)"): True, (1, 0, "p(1)"): False, (1, 0, "p(2)"): True})
    plan, fb = sch.run_block(1, alloc(40 / 256, [1.0]), sinrs(1), dec)
    (s,) = plan.split_records
    assert (s.bits_in_common, s.bits_in_private) == (40, 60)
    old_pid = plan.private_retx[0].pid
    assert sch.state.receivers[0].credits[old_pid] == [(1, 40)]
    assert fb[0].tokens == ("ACK_c(1)", "NACK_p(1)", "ACK_p(2)")
    assert sch.state.tx_credits[(old_pid, 0)] == [(1, 40)]


def test_term_b_credit_includes_private_part():
    sizer = lambda st, pkt, t: 100  # noqa: E731
    sch = AdvancedScheme(1, 256, 2, 2, retx_sizer=sizer)
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), ForcedDecoder({(0, 0, "c(1)"): True, (0, 0, "p(1)"): False}))
    dec = ForcedDecoder({(1, 0, "c(1)"): True, (1, 0, "p(1)"): True, (1, 0, "p(2)"): False})
    plan, _ = sch.run_block(1, alloc(40 / 256, [1.0]), sinrs(1), dec)
    assert sch.state.receivers[0].credits[plan.private_retx[0].pid] == [(1, 100)]


def test_plan_with_unknown_packet_is_protocol_error():
    sch = AdvancedScheme(1, 256, 2, 2)
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), ConstDecoder(False))
    plan = advanced_tx_step(sch.state, alloc(1.0, [1.0]), sch.sizer, 1)
    with pytest.raises(ProtocolError):
        advanced_rx_step(0, sinrs(1), plan, sch.state, ConstDecoder(True), BacktrackLedger())


def test_backtrack_ledger_causality():
    led = BacktrackLedger()
    led.remember(7, 1.0, 2.0, birth=3)
    with pytest.raises(ProtocolError):
        led.add_credit(7, 3, 10)
    with pytest.raises(ProtocolError):
        led.add_credit(8, 4, 10)
    led.add_credit(7, 4, 10)
    r1 = led.reduced_rate(7, 256)
    led.add_credit(7, 5, 10)
    assert led.reduced_rate(7, 256) < r1


@pytest.mark.parametrize("m_c,m_p", [(2, 2), (3, 3), (2, 3), (3, 2)])
def test_workload_full_buffers(m_c, m_p):
    sch = AdvancedScheme(2, 256, m_c, m_p)
    assert decoding_workload(0, sch.state) == 2
    for n in range(6):
        sch.run_block(n, alloc(1.0, [1.0, 1.0]), sinrs(2), ConstDecoder(False))
        assert decoding_workload(0, sch.state) <= m_c + m_p
    assert decoding_workload(0, sch.state) == m_c + m_p
    sch.run_block(6, alloc(1.0, [1.0, 1.0]), sinrs(2), ConstDecoder(True))
    assert decoding_workload(0, sch.state) == 2


def test_expected_rewards():
    assert advanced_expected_rewards(0.0, 0.0, 1.5, 2.0) == (1.5, 2.0)
    assert advanced_expected_rewards(1.0, 0.0, 1.5, 2.0, [(1.0, 0.0)], [(3.0, 0.0, 0.0)]) == (0.0, 0.0)
    # A + B coefficient = 0.5 * 1 + 0.5 * 1: the old packet contributes fully
    c, p = advanced_expected_rewards(0.0, 0.5, 0.0, 2.0, private_backlog=[(3.0, 0.0, 0.0)])
    assert p == pytest.approx(3.0 + 2.0 * 0.5)
    # hand evaluation with every term active
    c, p = advanced_expected_rewards(0.2, 0.3, 1.0, 2.0, [(0.5, 0.4)], [(3.0, 0.6, 0.1)])
    assert c == pytest.approx(0.8 * (0.5 * 0.6 + 1.0))
    assert p == pytest.approx(0.8 * (3.0 * (0.3 * 0.4 + 0.7 * 0.9) + 2.0 * 0.7))
    with pytest.raises(ValueError):
        advanced_expected_rewards(-0.1, 0.0, 1.0, 1.0)


def test_target_per_sizer():
    rng = np.random.default_rng(0)
    k = 2
    samples_c = rng.exponential(3.0, size=(200, k))
    samples_p = rng.exponential(2.0, size=(200, k))
    sizer = TargetPerSizer(0.1)
    sch = AdvancedScheme(k, 256, 2, 2, retx_sizer=sizer)
    sch.run_block(0, alloc(1.0, [1.0] * k), sinrs(k), ConstDecoder(False), sinr_samples=(samples_c, samples_p))
    plan = advanced_tx_step(sch.state, alloc(6.0, [1.0] * k), sizer, 1, (samples_c, samples_p))
    want_c = max(min_retransmission_length(0.1, 1.0, [], empirical_cdf(samples_c[:, u]), 256).bits for u in range(k))
    assert plan.common_groups[0].bits == want_c
    want_p = min_retransmission_length(0.1, 1.0, [], empirical_cdf(samples_p[:, 0]), 256).bits
    assert plan.private_retx_for(0)[0].bits == want_p
    with pytest.raises(ValueError):
        TargetPerSizer(0.0)
    with pytest.raises(ValueError):
        FractionSizer(0.0)


# -- advanced: random histories ------------------------------------------

RATES = [2 / 3, 1.0, 4 / 3, 2.0, 3.0, 4.0, 5.0, 6.0]


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(1, 4),
    m_c=st.sampled_from([2, 3]),
    m_p=st.sampled_from([2, 3]),
    fraction=st.sampled_from([0.15, 0.5, 1.0]),
    seed=st.integers(0, 2**32 - 1),
)
def test_advanced_invariants_random_history(k, m_c, m_p, fraction, seed):
    rng = np.random.default_rng(seed)
    n_blocks = 10
    led = BlockLedger(n_blocks, k, 256)
    sch = AdvancedScheme(k, 256, m_c, m_p, led, FractionSizer(fraction))
    dec = RandomDecoder(rng)
    last_rate = {}
    for n in range(n_blocks):
        for u in range(k):
            assert decoding_workload(u, sch.state) <= m_c + m_p
        r_c = float(rng.choice(RATES))
        r_p = [float(x) for x in rng.choice(RATES, size=k)]
        g = SinrReport(rng.exponential(8.0, size=k), rng.exponential(4.0, size=k))
        plan, fb = sch.run_block(n, alloc(r_c, r_p), g, dec)
        assert plan.common_bits_packed == math.floor(r_c * 256)
        for u in range(k):
            assert plan.private_bits_packed(u) == math.floor(r_p[u] * 256)
        assert plan.common_supermessage_bits == sum(plan.common_retx_bits_per_group)
        assert len(plan.split_records) <= 1
        for s in plan.split_records:
            r = next(x for x in plan.private_retx if x.user == s.user and x.round_index == s.round_index)
            assert s.bits_in_common + s.bits_in_private == r.bits
        for u, rx in enumerate(sch.state.receivers):
            for pid, credits in rx.credits.items():
                assert all(rx.birth[pid] < b <= n and bits > 0 for b, bits in credits)
                if credits:
                    r_hat = rx.reduced_rate(pid, 256)
                    assert r_hat >= 0
                    if (u, pid) in last_rate and len(credits) > last_rate[(u, pid)][0]:
                        assert r_hat < last_rate[(u, pid)][1] or r_hat == 0
                    last_rate[(u, pid)] = (len(credits), r_hat)
    c, p = led.packets["c"], led.packets["p"]
    inflight_c = sum(len(x.undecoded) for x in sch.state.common_pending)
    assert c.opened == c.decoded + c.dropped + inflight_c
    assert p.opened == p.decoded + p.dropped + len(sch.state.private_pending)
    assert all(1 <= d <= max(m_c, m_p) for *_, d, _ in led.decoded)
    assert led.common_reward.sum() + led.private_reward.sum() <= led.scheduled_bits.sum()


# -- no HARQ -------------------------------------------------------------

def test_noharq_requeue_keeps_birth():
    led = BlockLedger(3, 1, 256)
    sch = NoHarqScheme(1, 256, led)
    dec = ForcedDecoder({(0, 0, "c(1)"): True, (0, 0, "p(1)"): False,
                         (1, 0, "c(1)"): True, (1, 0, "p(1)"): True})
    sch.run_block(0, alloc(1.0, [1.0]), sinrs(1), dec)
    sch.run_block(1, alloc(1.0, [2.0]), sinrs(1), dec)
    # block 1 private packet: the 256 failed bits from block 0 plus 256 new ones
    assert (0, "p", 0, 2, 256) in led.decoded
    assert (0, "p", 1, 1, 256) in led.decoded
    assert led.scheduled_bits.tolist() == [512, 512, 0]
    assert led.packets["p"].dropped == 1


def test_noharq_no_losses_throughput_equals_scheduled():
    led = BlockLedger(4, 2, 256)
    sch = NoHarqScheme(2, 256, led)
    rates = [alloc(2.0, [1.0, 3.0]), alloc(4.0, [2.0, 2.0]), alloc(1.0, [1.0, 1.0]), alloc(6.0, [5.0, 6.0])]
    for n, r in enumerate(rates):
        sch.run_block(n, r, sinrs(2, 1e9), ConstDecoder(True))
    assert led.common_reward.sum() + led.private_reward.sum() == led.scheduled_bits.sum()
    assert all(d == 1 for *_, d, _ in led.decoded)
