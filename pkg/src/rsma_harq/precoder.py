"""SVD/MRT precoding for one common and K private streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PrecoderSet:
    common_precoder: np.ndarray  # (N_t,)
    private_precoders: np.ndarray  # (N_t, K), column k feeds user k
    total_power: float
    common_power_fraction: float

    @property
    def matrix(self) -> np.ndarray:
        """``P = [p_c, p_1, ..., p_K]``."""
        return np.column_stack([self.common_precoder, self.private_precoders])

    @property
    def used_power(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))


@dataclass(frozen=True)
class GainTable:
    """Received power gains ``|h_k^H p|^2``.

    ``common[..., k]`` is the common-stream gain at user k and
    ``private[..., k, j]`` the gain of private stream j at user k.
    """

    common: np.ndarray
    private: np.ndarray


def _fix_phase(v: np.ndarray) -> np.ndarray:
    # rotate so the largest-magnitude entry is real positive
    idx = np.argmax(np.abs(v), axis=-1)
    pivot = np.take_along_axis(v, idx[..., None], axis=-1)
    return v * (np.conj(pivot) / np.abs(pivot))


def svd_mrt(estimated_channel: np.ndarray, total_power, common_power_fraction: float):
    """Batched core of :func:`build_svd_mrt` over leading axes.

    Returns ``(p_c, P_priv)`` with shapes ``(..., N_t)`` and ``(..., N_t, K)``.
    """
    h = np.asarray(estimated_channel)
    if not np.all(np.isfinite(h)):
        raise ValueError("estimated channel has non-finite entries")
    if not 0.0 <= common_power_fraction <= 1.0:
        raise ValueError(f"common_power_fraction must lie in [0, 1], got {common_power_fraction}")
    norms = np.linalg.norm(h, axis=-2)
    if np.any(norms == 0):
        raise ValueError("all-zero channel column: MRT direction undefined")
    k = h.shape[-1]
    p = np.asarray(total_power, dtype=float)[..., None]
    u, _, _ = np.linalg.svd(h, full_matrices=False)
    dominant = _fix_phase(u[..., :, 0])
    p_c = dominant * np.sqrt(common_power_fraction * p)
    mrt = h / norms[..., None, :]
    p_priv = mrt * np.sqrt((1.0 - common_power_fraction) * p / k)[..., None]
    return p_c, p_priv


def build_svd_mrt(
    estimated_channel: np.ndarray, total_power: float, common_power_fraction: float = 0.9
) -> PrecoderSet:
    """Common precoder along the dominant left singular vector of the estimated
    channel; private precoders by per-user MRT. Power is split as
    ``fraction * P_t`` to the common stream and the rest equally over users.
    """
    h = np.asarray(estimated_channel, dtype=complex)
    if h.ndim != 2:
        raise ValueError("estimated_channel must be an N_t x K matrix")
    if not total_power > 0:
        raise ValueError("total_power must be positive")
    p_c, p_priv = svd_mrt(h, total_power, common_power_fraction)
    return PrecoderSet(p_c, p_priv, float(total_power), float(common_power_fraction))


def gains(channel: np.ndarray, p_c: np.ndarray, p_priv: np.ndarray) -> GainTable:
    """Batched gain table; ``channel`` is ``(..., N_t, K)``."""
    h = np.asarray(channel)
    if h.shape[-2] != p_c.shape[-1] or p_priv.shape[-2:] != (h.shape[-2], h.shape[-1]):
        raise ValueError(
            f"dimension mismatch: channel {h.shape}, p_c {p_c.shape}, private {p_priv.shape}"
        )
    hh = np.conj(np.swapaxes(h, -1, -2))  # (..., K, N_t)
    common = np.abs(np.einsum("...kn,...n->...k", hh, p_c)) ** 2
    private = np.abs(hh @ p_priv) ** 2
    return GainTable(common, private)


def effective_gains(realization, precoders: PrecoderSet) -> GainTable:
    """Gains seen over the TRUE channel of ``realization``."""
    return gains(realization.true_channel, precoders.common_precoder, precoders.private_precoders)
