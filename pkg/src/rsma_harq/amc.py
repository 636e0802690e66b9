"""Adaptive modulation and coding from estimated CSIT."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .phy import RateAllocation, equal_split, sinrs_from_gains
from .precoder import PrecoderSet, gains

MODULATION_ORDERS = (4, 16, 64, 256)
DEFAULT_CODE_RATES = (Fraction(1, 3), Fraction(1, 2), Fraction(2, 3), Fraction(3, 4), Fraction(5, 6))


@dataclass(frozen=True)
class McsEntry:
    modulation_order: int
    code_rate: float
    spectral_efficiency: float


@dataclass(frozen=True)
class McsTable:
    entries: tuple[McsEntry, ...]
    backoff_db: float = 0.0

    def __post_init__(self):
        if not self.entries:
            raise ValueError("MCS table is empty")
        if self.backoff_db < 0:
            raise ValueError("backoff_db must be >= 0")
        for e in self.entries:
            if e.modulation_order not in MODULATION_ORDERS:
                raise ValueError(f"unsupported modulation order {e.modulation_order}")
            if not 0 < e.code_rate <= 1:
                raise ValueError(f"code rate {e.code_rate} outside (0, 1]")
            if not math.isclose(e.spectral_efficiency, math.log2(e.modulation_order) * e.code_rate):
                raise ValueError(f"inconsistent spectral efficiency in {e}")
        se = [e.spectral_efficiency for e in self.entries]
        if any(b <= a for a, b in zip(se, se[1:])):
            raise ValueError("entries must be strictly increasing in spectral efficiency")

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([e.spectral_efficiency for e in self.entries])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], backoff_db: float = 0.0) -> "McsTable":
        """Build from (modulation order, code rate) pairs.

        Pairs are sorted by spectral efficiency; when two pairs give the same
        efficiency the lower modulation order is kept.
        """
        best: dict[Fraction, McsEntry] = {}
        for m, r in pairs:
            m = int(m)
            fr = Fraction(r).limit_denominator(10_000)
            key = Fraction(int(math.log2(m))) * fr if m > 0 and m & (m - 1) == 0 else Fraction(-1)
            entry = McsEntry(m, float(fr), math.log2(m) * float(fr))
            if key not in best or best[key].modulation_order > m:
                best[key] = entry
        entries = tuple(best[k] for k in sorted(best))
        return cls(entries, backoff_db)

    def quantize(self, capacity) -> np.ndarray:
        """Highest entry with efficiency <= ``capacity``; the lowest entry when
        none qualifies."""
        se = self.efficiencies
        idx = np.searchsorted(se, np.asarray(capacity, dtype=float) + 1e-12, side="right") - 1
        return se[np.maximum(idx, 0)]


def default_table(backoff_db: float = 0.0) -> McsTable:
    """QAM 4..256 with code rates {1/3, 1/2, 2/3, 3/4, 5/6}."""
    return McsTable.from_pairs(
        ((m, r) for m in MODULATION_ORDERS for r in DEFAULT_CODE_RATES), backoff_db
    )


def load_table(path, backoff_db: float = 0.0) -> McsTable:
    """Read (modulation, code rate) pairs from a file.

    ``.json`` files hold a list of ``[modulation, rate]`` pairs. Any other file
    is read as text with one pair per line; rates may be fractions like
    ``2/3`` and ``#`` starts a comment.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read MCS table {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        pairs = [(int(m), Fraction(str(r))) for m, r in json.loads(text)]
    else:
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'modulation code_rate'")
            pairs.append((int(parts[0]), Fraction(parts[1])))
    return McsTable.from_pairs(pairs, backoff_db)


def estimated_sinrs(estimated_channel, p_c, p_priv, noise_powers):
    """SINRs as the transmitter predicts them from the estimated channel."""
    g = gains(estimated_channel, p_c, p_priv)
    return sinrs_from_gains(g.common, g.private, noise_powers)


def select_rates_array(est_common, est_private, table: McsTable) -> tuple[np.ndarray, np.ndarray]:
    """Batched rate selection from estimated SINRs (users on the last axis)."""
    scale = 10.0 ** (-table.backoff_db / 10.0)
    cap_c = np.log2(1.0 + scale * np.min(est_common, axis=-1))
    cap_p = np.log2(1.0 + scale * np.asarray(est_private))
    return table.quantize(cap_c), table.quantize(cap_p)


def select_rates(
    estimated_channel: np.ndarray,
    precoders: PrecoderSet,
    noise_powers: Sequence[float],
    table: McsTable,
) -> RateAllocation:
    """Pick the common and private rates for one block.

    The common stream is sized for the weakest estimated user; every rate is
    the largest table efficiency not above ``log2(1 + SINR)`` after backoff.
    """
    if not table.entries:
        raise ValueError("empty MCS table")
    g_c, g_p = estimated_sinrs(
        estimated_channel, precoders.common_precoder, precoders.private_precoders, noise_powers
    )
    r_c, r_p = select_rates_array(g_c, g_p, table)
    k = len(g_p)
    return RateAllocation(
        float(r_c), tuple(equal_split(float(r_c), k)), tuple(float(x) for x in r_p)
    )
