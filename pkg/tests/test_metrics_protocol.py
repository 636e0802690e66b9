import itertools

import pytest

from rsma_harq.metrics import (
    COMMON,
    PRIVATE,
    BlockLedger,
    DropSummary,
    average_latency_per_bit,
    per_and_mer,
    throughput,
)
from rsma_harq.protocol import CompressedFeedback, Feedback, ForcedDecoder, RandomDecoder, ThresholdDecoder


# -- metrics ---------------------------------------------------------------

def test_throughput_hand_ledger():
    led = BlockLedger(3, 2, 100)
    led.record_decode(0, 0, COMMON, 0, 50)
    led.record_decode(0, 1, PRIVATE, 0, 150)
    led.record_decode(2, 0, PRIVATE, 1, 100)
    # (50 + 150 + 0 + 100) / 100 / 3
    assert throughput(led, 3, 100) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        throughput(led, 0, 100)


def test_throughput_all_first_try():
    led = BlockLedger(4, 1, 256)
    for n in range(4):
        led.record_decode(n, 0, PRIVATE, n, 4 * 256)
    assert throughput(led, 4, 256) == 4.0
    assert throughput(BlockLedger(4, 1, 256), 4, 256) == 0.0


def test_latency():
    led = BlockLedger(3, 1, 10)
    assert average_latency_per_bit(led) is None
    led.record_decode(0, 0, COMMON, 0, 10)
    led.record_decode(2, 0, PRIVATE, 1, 10)
    assert average_latency_per_bit(led) == 1.5
    led.record_decode(2, 0, COMMON, 0, 20)
    # (1*10 + 2*10 + 3*20) / 40
    assert average_latency_per_bit(led) == pytest.approx(90 / 40)


def test_record_decode_validation():
    led = BlockLedger(2, 1, 10)
    with pytest.raises(ValueError):
        led.record_decode(0, 0, COMMON, 1, 5)
    with pytest.raises(ValueError):
        led.record_decode(1, 0, COMMON, 0, -1)
    led.record_decode(1, 0, COMMON, 0, 0)
    assert led.decoded == []


def test_per_and_mer():
    led = BlockLedger(2, 2, 10)
    assert per_and_mer(led) == (None, None, None)
    for u in range(2):
        led.open_message_part(u, 0, COMMON)
        led.open_message_part(u, 0, PRIVATE)
    led.open_packet(COMMON, 2)
    led.open_packet(PRIVATE, 2)
    # user 0: common dropped, private decoded -> message failure
    led.close_packet(COMMON, False)
    led.resolve_message_part(0, 0, COMMON, False)
    led.close_packet(PRIVATE, True)
    led.resolve_message_part(0, 0, PRIVATE, True)
    # user 1: both decoded
    led.close_packet(COMMON, True)
    led.resolve_message_part(1, 0, COMMON, True)
    led.close_packet(PRIVATE, True)
    led.resolve_message_part(1, 0, PRIVATE, True)
    assert per_and_mer(led) == (0.5, 0.0, 0.5)
    s = led.summary()
    assert (s.common_opened, s.common_decoded, s.common_dropped) == (2, 1, 1)
    assert (s.messages_done, s.messages_failed) == (2, 1)


def test_pending_messages_not_counted():
    led = BlockLedger(1, 1, 10)
    led.open_message_part(0, 0, COMMON)
    led.open_message_part(0, 0, PRIVATE)
    led.resolve_message_part(0, 0, PRIVATE, False)
    assert led.message_counts() == (0, 0)


def test_drop_summary_adds():
    a = DropSummary(num_blocks=1, reward_bits=5)
    b = DropSummary(num_blocks=2, messages_failed=1)
    assert a + b == DropSummary(num_blocks=3, reward_bits=5, messages_failed=1)


# -- feedback codec --------------------------------------------------------

@pytest.mark.parametrize("length", range(1, 9))
def test_codec_round_trip_exhaustive(length):
    tags = [f"x({i})" for i in range(length)]
    for pattern in itertools.product((False, True), repeat=length):
        fb = Feedback(tuple(zip(tags, pattern)))
        wire = fb.compress()
        assert wire.expand(tags) == fb
        if len(set(pattern)) == 1:
            assert wire.tokens == ("ACK" if pattern[0] else "NACK",)
        else:
            # a trailing run of two or more collapses to one untagged token
            run = 1
            while pattern[-1 - run] == pattern[-1]:
                run += 1
            expected = length - run + 1 if run >= 2 else length
            assert len(wire.tokens) == expected


def test_codec_examples():
    fb = Feedback((("c(1)", True), ("c(2)", False), ("p(1)", True), ("p(2)", False)))
    assert fb.compress().tokens == ("ACK_c(1)", "NACK_c(2)", "ACK_p(1)", "NACK_p(2)")
    fb = Feedback((("c(1)", True), ("p(1)", False), ("p(2)", False)))
    assert fb.compress().tokens == ("ACK_c(1)", "NACK")
    assert fb.ack("p(2)") is False
    with pytest.raises(KeyError):
        fb.ack("c(3)")


def test_codec_rejects_mismatch():
    with pytest.raises(ValueError):
        CompressedFeedback(("ACK_c(2)",)).expand(["c(1)"])
    with pytest.raises(ValueError):
        CompressedFeedback(("ACK", "NACK")).expand(["c(1)", "p(1)"])
    with pytest.raises(ValueError):
        CompressedFeedback(("MAYBE",)).expand(["c(1)"])
    with pytest.raises(ValueError):
        CompressedFeedback(("ACK_c(1)",)).expand(["c(1)", "p(1)"])


# -- decoders --------------------------------------------------------------

def test_random_decoder_nested_events():
    import numpy as np

    dec = RandomDecoder(np.random.default_rng(0))
    # same key: once decoded at PER p, decodes at any lower PER too
    outcomes = []
    for key in range(2000):
        first = dec.decode(0, 0, "c(1)", key, 0.6)
        second = dec.decode(1, 0, "c(2)", key, 0.3)
        assert not (first and not second)
        outcomes.append((first, second))
    assert sum(f for f, _ in outcomes) / 2000 == pytest.approx(0.4, abs=0.04)
    assert sum(s for _, s in outcomes) / 2000 == pytest.approx(0.7, abs=0.04)


def test_threshold_and_forced():
    assert ThresholdDecoder().decode(0, 0, "c(1)", None, 0.49)
    assert not ThresholdDecoder().decode(0, 0, "c(1)", None, 0.5)
    f = ForcedDecoder({(0, 0, "c(1)"): True})
    assert f.decode(0, 0, "c(1)", None, 1.0)
    with pytest.raises(KeyError):
        f.decode(0, 1, "c(1)", None, 0.0)
