"""Pieces shared by the link-layer schemes: feedback codec and decode oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np


def tag(stream: str, round_index: int) -> str:
    """Feedback tag, e.g. ``c(1)`` for the current common packet."""
    return f"{stream}({round_index})"


def _token(ok: bool, t: str | None = None) -> str:
    word = "ACK" if ok else "NACK"
    return word if t is None else f"{word}_{t}"


@dataclass(frozen=True)
class CompressedFeedback:
    """Wire form: leading results sent individually, then at most one untagged
    ACK/NACK standing for a trailing run of equal results."""

    tokens: tuple[str, ...]

    def expand(self, tags: Sequence[str]) -> "Feedback":
        """Rebuild the full ordered results given the tags the transmitter expects."""
        tags = tuple(tags)
        results: list[tuple[str, bool]] = []
        for i, tok in enumerate(self.tokens):
            word, _, t = tok.partition("_")
            if word not in ("ACK", "NACK"):
                raise ValueError(f"bad feedback token {tok!r}")
            ok = word == "ACK"
            if t:
                if i >= len(tags) or tags[i] != t:
                    raise ValueError(f"token {tok!r} does not match expected tags {tags}")
                results.append((t, ok))
            else:
                if i != len(self.tokens) - 1:
                    raise ValueError("untagged token must be last")
                results.extend((x, ok) for x in tags[i:])
        if len(results) != len(tags):
            raise ValueError(f"feedback {self.tokens} does not cover tags {tags}")
        return Feedback(tuple(results))


@dataclass(frozen=True)
class Feedback:
    """Ordered per-stream decode results of one user in one block."""

    results: tuple[tuple[str, bool], ...]

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.results)

    def ack(self, t: str) -> bool:
        for x, ok in self.results:
            if x == t:
                return ok
        raise KeyError(t)

    def compress(self) -> CompressedFeedback:
        res = self.results
        if not res:
            return CompressedFeedback(())
        oks = [ok for _, ok in res]
        if all(o == oks[0] for o in oks):
            return CompressedFeedback((_token(oks[0]),))
        run = 1
        while oks[-1 - run] == oks[-1]:
            run += 1
        head = tuple(_token(ok, t) for t, ok in res)
        if run >= 2:
            return CompressedFeedback(head[: len(res) - run] + (_token(oks[-1]),))
        return CompressedFeedback(head)


class RandomDecoder:
    """Decode outcomes drawn against the packet error probability.

    Every (packet, user) decode process owns one latent uniform: a decode
    succeeds iff the latent is at least the current error probability, so
    repeated attempts on the same packet see nested error events and each
    attempt's marginal failure probability equals the PER it was given.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._latent: dict[Hashable, float] = {}

    def decode(self, block: int, user: int, t: str, key: Hashable, per: float) -> bool:
        u = self._latent.get(key)
        if u is None:
            u = self._latent[key] = float(self.rng.random())
        return u >= per


class ThresholdDecoder:
    """Deterministic: success iff PER < 0.5."""

    def decode(self, block, user, t, key, per) -> bool:
        return per < 0.5


class ForcedDecoder:
    """Outcomes looked up by ``(block, user, tag)``; unknown keys raise."""

    def __init__(self, outcomes: Mapping[tuple[int, int, str], bool]):
        self.outcomes = dict(outcomes)
        self.seen: list[tuple[int, int, str]] = []

    def decode(self, block, user, t, key, per) -> bool:
        k = (block, user, t)
        if k not in self.outcomes:
            raise KeyError(f"no forced outcome for block={block} user={user} tag={t}")
        self.seen.append(k)
        return self.outcomes[k]
