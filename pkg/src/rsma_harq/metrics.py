"""Per-drop bookkeeping of decoded bits, packet fates and message fates."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

COMMON = "c"
PRIVATE = "p"

_PENDING, _OK, _FAIL = 0, 1, 2


@dataclass
class PacketCounts:
    opened: int = 0
    decoded: int = 0
    dropped: int = 0

    @property
    def in_flight(self) -> int:
        return self.opened - self.decoded - self.dropped


class BlockLedger:
    """Decode outcomes, rewards and bit latencies for one drop.

    Common-stream packet counts are per (packet, user) pair since every user
    must decode the common stream; private counts are per packet. A message is
    one user's common and private parts born in the same block.
    """

    def __init__(self, num_blocks: int, num_users: int, block_length: int):
        self.num_blocks = num_blocks
        self.num_users = num_users
        self.block_length = block_length
        self.common_reward = np.zeros((num_blocks, num_users), dtype=np.int64)
        self.private_reward = np.zeros((num_blocks, num_users), dtype=np.int64)
        self.scheduled_bits = np.zeros(num_blocks, dtype=np.int64)
        # (user, stream, birth_block, delay_blocks, bits)
        self.decoded: list[tuple[int, str, int, int, int]] = []
        self.packets = {COMMON: PacketCounts(), PRIVATE: PacketCounts()}
        self._messages: dict[tuple[int, int], list[Optional[int]]] = {}

    # packets -----------------------------------------------------------
    def open_packet(self, stream: str, count: int = 1) -> None:
        self.packets[stream].opened += count

    def close_packet(self, stream: str, decoded: bool) -> None:
        c = self.packets[stream]
        if decoded:
            c.decoded += 1
        else:
            c.dropped += 1

    # rewards -----------------------------------------------------------
    def record_decode(self, block: int, user: int, stream: str, birth: int, bits: int) -> None:
        if bits < 0:
            raise ValueError("negative bit count")
        if block < birth:
            raise ValueError("decoded before birth")
        if bits == 0:
            return
        reward = self.common_reward if stream == COMMON else self.private_reward
        reward[block, user] += bits
        self.decoded.append((user, stream, birth, block - birth + 1, bits))

    # messages ----------------------------------------------------------
    def open_message_part(self, user: int, birth: int, stream: str) -> None:
        parts = self._messages.setdefault((user, birth), [None, None])
        parts[0 if stream == COMMON else 1] = _PENDING

    def resolve_message_part(self, user: int, birth: int, stream: str, ok: bool) -> None:
        parts = self._messages.get((user, birth))
        i = 0 if stream == COMMON else 1
        if parts is None or parts[i] is None:
            return
        if parts[i] == _PENDING:
            parts[i] = _OK if ok else _FAIL

    def message_counts(self) -> tuple[int, int]:
        """(terminated messages, failed messages)."""
        done = failed = 0
        for parts in self._messages.values():
            present = [p for p in parts if p is not None]
            if any(p == _PENDING for p in present):
                continue
            done += 1
            failed += any(p == _FAIL for p in present)
        return done, failed

    def summary(self) -> "DropSummary":
        done, failed = self.message_counts()
        lat_num = sum(d * b for _, _, _, d, b in self.decoded)
        lat_den = sum(b for *_, b in self.decoded)
        c, p = self.packets[COMMON], self.packets[PRIVATE]
        return DropSummary(
            num_blocks=self.num_blocks,
            reward_bits=int(self.common_reward.sum() + self.private_reward.sum()),
            scheduled_bits=int(self.scheduled_bits.sum()),
            latency_weighted_bits=int(lat_num),
            latency_bits=int(lat_den),
            common_opened=c.opened,
            common_decoded=c.decoded,
            common_dropped=c.dropped,
            private_opened=p.opened,
            private_decoded=p.decoded,
            private_dropped=p.dropped,
            messages_done=done,
            messages_failed=failed,
        )


@dataclass(frozen=True)
class DropSummary:
    """Integer sufficient statistics of one drop; adds exactly across drops."""

    num_blocks: int = 0
    reward_bits: int = 0
    scheduled_bits: int = 0
    latency_weighted_bits: int = 0
    latency_bits: int = 0
    common_opened: int = 0
    common_decoded: int = 0
    common_dropped: int = 0
    private_opened: int = 0
    private_decoded: int = 0
    private_dropped: int = 0
    messages_done: int = 0
    messages_failed: int = 0

    def __add__(self, other: "DropSummary") -> "DropSummary":
        return DropSummary(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


def throughput(ledger: BlockLedger, num_blocks: int, block_length: int) -> float:
    """Average decoded bits per channel use over ``num_blocks`` blocks."""
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    per_block = (ledger.common_reward.sum(axis=1) + ledger.private_reward.sum(axis=1)) / block_length
    return float(per_block[:num_blocks].sum() / num_blocks)


def average_latency_per_bit(ledger: BlockLedger) -> Optional[float]:
    """Bit-weighted mean number of blocks needed to decode; None if nothing decoded."""
    den = sum(b for *_, b in ledger.decoded)
    if den == 0:
        return None
    return sum(d * b for _, _, _, d, b in ledger.decoded) / den


def per_and_mer(ledger: BlockLedger) -> tuple[Optional[float], Optional[float], Optional[float]]:
    """(common PER, private PER, MER) over terminated packets and messages."""

    def rate(c: PacketCounts) -> Optional[float]:
        done = c.decoded + c.dropped
        return c.dropped / done if done else None

    done, failed = ledger.message_counts()
    return (
        rate(ledger.packets[COMMON]),
        rate(ledger.packets[PRIVATE]),
        failed / done if done else None,
    )
