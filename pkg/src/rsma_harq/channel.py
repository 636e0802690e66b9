"""Block-fading Rayleigh channels with Gaussian CSIT error.

For user ``k`` the true channel column is ``h_k = h_hat_k + h_err_k`` with
``h_hat_k ~ CN(0, s_k - e)`` and ``h_err_k ~ CN(0, e)`` independent, where the
error power is ``e = P_t ** -alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CsitModel:
    """Channel and CSIT-quality parameters.

    ``max_error_fraction`` caps the error power at that fraction of the
    channel power. It is ``None`` by default, in which case any transmit
    power whose error power reaches the channel power is rejected.
    """

    num_tx_antennas: int
    num_users: int
    channel_power_per_user: tuple[float, ...] = ()
    csit_scaling_exponent: float = 0.6
    noise_power_per_user: tuple[float, ...] = ()
    max_error_fraction: Optional[float] = None

    def __post_init__(self):
        if self.num_tx_antennas < 1 or self.num_users < 1:
            raise ValueError("antenna and user counts must be positive")
        k = self.num_users
        if not self.channel_power_per_user:
            object.__setattr__(self, "channel_power_per_user", (1.0,) * k)
        if not self.noise_power_per_user:
            object.__setattr__(self, "noise_power_per_user", (1.0,) * k)
        object.__setattr__(self, "channel_power_per_user", tuple(map(float, self.channel_power_per_user)))
        object.__setattr__(self, "noise_power_per_user", tuple(map(float, self.noise_power_per_user)))
        for name in ("channel_power_per_user", "noise_power_per_user"):
            vals = getattr(self, name)
            if len(vals) != k:
                raise ValueError(f"{name} has {len(vals)} entries, expected {k}")
            if any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ValueError(f"{name} must be strictly positive")
        if self.csit_scaling_exponent < 0:
            raise ValueError("csit_scaling_exponent must be >= 0")
        if self.max_error_fraction is not None and not 0 < self.max_error_fraction < 1:
            raise ValueError("max_error_fraction must lie in (0, 1)")

    def error_power(self, transmit_power: float) -> np.ndarray:
        """Per-user CSIT error power; raises if it is not below the channel power."""
        if not transmit_power > 0:
            raise ValueError(f"transmit_power must be > 0, got {transmit_power}")
        sig = np.asarray(self.channel_power_per_user)
        err = np.full(self.num_users, transmit_power ** -self.csit_scaling_exponent)
        if self.max_error_fraction is not None:
            err = np.minimum(err, self.max_error_fraction * sig)
        if np.any(err >= sig):
            raise ValueError(
                f"CSIT error power {err.max():.4g} >= channel power at P_t={transmit_power:.4g}"
            )
        return err


@dataclass(frozen=True)
class ChannelRealization:
    true_channel: np.ndarray
    estimated_channel: np.ndarray
    error_channel: np.ndarray
    block_index: int = 0


def _cn(rng: np.random.Generator, shape, var) -> np.ndarray:
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(
    model: CsitModel, transmit_power: float, rng: np.random.Generator, num_blocks: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``num_blocks`` independent blocks at once.

    Returns ``(true, estimated)``, each of shape ``(num_blocks, N_t, K)``.
    """
    err_pow = model.error_power(transmit_power)
    sig = np.asarray(model.channel_power_per_user)
    shape = (num_blocks, model.num_tx_antennas, model.num_users)
    est = _cn(rng, shape, sig - err_pow)
    err = _cn(rng, shape, err_pow)
    return est + err, est


def draw_realization(
    model: CsitModel, transmit_power: float, rng: np.random.Generator, block_index: int = 0
) -> ChannelRealization:
    """One block: estimated CSIT, independent error, and their sum."""
    err_pow = model.error_power(transmit_power)
    sig = np.asarray(model.channel_power_per_user)
    shape = (model.num_tx_antennas, model.num_users)
    est = _cn(rng, shape, sig - err_pow)
    err = _cn(rng, shape, err_pow)
    return ChannelRealization(est + err, est, err, block_index)


def perfect_csit(realization: ChannelRealization) -> ChannelRealization:
    return replace(
        realization,
        estimated_channel=realization.true_channel.copy(),
        error_channel=np.zeros_like(realization.true_channel),
    )
