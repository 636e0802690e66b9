"""Per-user SINRs of the common and private streams and the rate split."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .precoder import GainTable


@dataclass(frozen=True)
class SinrReport:
    common_sinr_per_user: np.ndarray
    private_sinr_per_user: np.ndarray

    def __post_init__(self):
        for a in (self.common_sinr_per_user, self.private_sinr_per_user):
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError("SINRs must be finite and >= 0")

    @property
    def num_users(self) -> int:
        return len(self.common_sinr_per_user)


@dataclass(frozen=True)
class RateAllocation:
    common_rate: float
    common_portion_per_user: tuple[float, ...]
    private_rate_per_user: tuple[float, ...]

    def __post_init__(self):
        if abs(sum(self.common_portion_per_user) - self.common_rate) > 1e-9:
            raise ValueError(
                f"common portions sum to {sum(self.common_portion_per_user)}, "
                f"expected R_c={self.common_rate}"
            )

    @property
    def num_users(self) -> int:
        return len(self.private_rate_per_user)


def sinrs_from_gains(common: np.ndarray, private: np.ndarray, noise) -> tuple[np.ndarray, np.ndarray]:
    """Batched SINR computation; ``private`` is ``(..., K, K)``."""
    noise = np.asarray(noise, dtype=float)
    total_priv = np.sum(private, axis=-1)
    own = np.diagonal(private, axis1=-2, axis2=-1)
    g_c = common / (total_priv + noise)
    g_p = own / (total_priv - own + noise)
    return g_c, g_p


def compute_sinrs(gains: GainTable, noise_powers: Sequence[float]) -> SinrReport:
    """Common SINR treats all private streams as noise; private SINR assumes
    the common stream was removed by SIC and treats the other privates as noise.
    """
    noise = np.asarray(noise_powers, dtype=float)
    if np.any(noise <= 0) or not np.all(np.isfinite(noise)):
        raise ValueError("noise powers must be positive and finite")
    c = np.asarray(gains.common, dtype=float)
    p = np.asarray(gains.private, dtype=float)
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite gains")
    k = c.shape[-1]
    if p.shape[-2:] != (k, k) or noise.shape not in ((), (k,)):
        raise ValueError("gain table and noise dimensions disagree")
    g_c, g_p = sinrs_from_gains(c, p, noise)
    return SinrReport(g_c, g_p)


SplitRule = Callable[[float, int], Sequence[float]]


def equal_split(common_rate: float, num_users: int) -> list[float]:
    return [common_rate / num_users] * num_users


def proportional_split(demands: Sequence[float]) -> SplitRule:
    """Split the common rate in proportion to ``demands``; equal if all zero."""
    d = np.asarray(demands, dtype=float)
    if np.any(d < 0):
        raise ValueError("demands must be nonnegative")

    def rule(common_rate: float, num_users: int) -> list[float]:
        if len(d) != num_users:
            raise ValueError("one demand per user required")
        total = d.sum()
        if total == 0:
            return equal_split(common_rate, num_users)
        return list(common_rate * d / total)

    return rule


def ideal_rate_allocation(sinrs: SinrReport, split_rule: SplitRule = equal_split) -> RateAllocation:
    r_c = float(np.min(np.log2(1.0 + np.asarray(sinrs.common_sinr_per_user))))
    r_p = tuple(float(x) for x in np.log2(1.0 + np.asarray(sinrs.private_sinr_per_user)))
    portions = tuple(float(x) for x in split_rule(r_c, sinrs.num_users))
    # absorb rounding so the portions sum exactly
    if portions and not math.isclose(sum(portions), r_c, abs_tol=1e-12):
        portions = portions[:-1] + (r_c - sum(portions[:-1]),)
    return RateAllocation(r_c, portions, r_p)


def split_bits(total_bits: int, num_users: int, among: Sequence[int] | None = None) -> list[int]:
    """Split an integer payload as evenly as possible, remainder to the lowest
    indices; only users in ``among`` (default all) receive bits."""
    users = list(range(num_users)) if among is None else sorted(among)
    out = [0] * num_users
    if not users:
        return out
    q, r = divmod(total_bits, len(users))
    for i, k in enumerate(users):
        out[k] = q + (1 if i < r else 0)
    return out
