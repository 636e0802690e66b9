"""HARQ numerics: mutual-information accumulation, finite-blocklength error
probabilities, backtrack decoding and retransmission sizing.

All rates are in bits/symbol and block lengths in channel uses (symbols).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import erfc

LOG2E = math.log2(math.e)
_SQRT2 = math.sqrt(2.0)


class HarqCategory(enum.Enum):
    TYPE_I = "type_i"
    CHASE_COMBINING = "cc"
    INCREMENTAL_REDUNDANCY = "ir"


@dataclass(frozen=True)
class DecodeAttempt:
    """Decode of one packet after ``len(sinr_history)`` HARQ-IR rounds."""

    sinr_history: tuple[float, ...]
    first_round_rate: float
    block_length: int

    def __post_init__(self):
        if len(self.sinr_history) == 0:
            raise ValueError("sinr_history must be nonempty")
        if any(not math.isfinite(g) or g < 0 for g in self.sinr_history):
            raise ValueError(f"SINRs must be finite and >= 0, got {self.sinr_history}")
        if not math.isfinite(self.first_round_rate) or self.first_round_rate < 0:
            raise ValueError(f"rate must be finite and >= 0, got {self.first_round_rate}")
        if self.block_length < 1:
            raise ValueError("block_length must be positive")


@dataclass(frozen=True)
class BacktrackAttempt:
    """Backtrack decode of a buffered first-round signal with extracted credits."""

    first_round_sinr: float
    original_rate: float
    extracted_bit_credits: tuple[int, ...]
    block_length: int

    def __post_init__(self):
        if not math.isfinite(self.first_round_sinr) or self.first_round_sinr < 0:
            raise ValueError(f"SINR must be finite and >= 0, got {self.first_round_sinr}")
        if any(b < 0 for b in self.extracted_bit_credits):
            raise ValueError("bit credits must be nonnegative")
        if self.block_length < 1:
            raise ValueError("block_length must be positive")

    @property
    def reduced_rate(self) -> float:
        return reduced_backtrack_rate(
            self.original_rate, sum(self.extracted_bit_credits), self.block_length
        )


@dataclass(frozen=True)
class SurrogateParams:
    """Piecewise-linear stand-in for the Q-function around the rate threshold.

    ``slope`` is infinite (and ``lower_knee == center == upper_knee == 0``)
    when the reduced rate is zero; the surrogate is then a step at 0.
    """

    slope: float
    center: float
    lower_knee: float
    upper_knee: float

    @property
    def is_step(self) -> bool:
        return math.isinf(self.slope)


def qfunc(x):
    """Gaussian tail probability ``Q(x) = 0.5 * erfc(x / sqrt(2))``."""
    if isinstance(x, (float, int)):
        return 0.5 * math.erfc(x / _SQRT2)
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)


def accumulated_mutual_information(
    category: HarqCategory, sinr_history: Sequence[float]
) -> float:
    g = np.asarray(sinr_history, dtype=float)
    if g.size == 0:
        raise ValueError("sinr_history must be nonempty")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("SINRs must be finite and >= 0")
    if category is HarqCategory.TYPE_I:
        return float(np.max(np.log2(1.0 + g)))
    if category is HarqCategory.CHASE_COMBINING:
        return float(np.log2(1.0 + np.sum(g)))
    if category is HarqCategory.INCREMENTAL_REDUNDANCY:
        return float(np.sum(np.log2(1.0 + g)))
    raise ValueError(f"unknown HARQ category {category!r}")


def _clamp01(p: float) -> float:
    return min(1.0, max(0.0, p))


def ir_per(sinr_history: Sequence[float], rate: float, block_length: int) -> float:
    """Finite-blocklength HARQ-IR packet error probability (unvalidated fast path).

    Rounds with zero SINR contribute nothing to either sum; ``T`` in the
    ``log2(T * N_s)`` correction counts every transmitted round.
    """
    cap = 0.0
    disp = 0.0
    for g in sinr_history:
        if g > 0.0:
            cap += math.log2(1.0 + g)
            disp += 1.0 - (1.0 + g) ** -2
    if disp <= 0.0:
        return 1.0 if rate > 0.0 else 0.0
    n = block_length
    t = len(sinr_history)
    num = cap - rate + math.log2(t * n) / (2.0 * n)
    den = math.sqrt(disp / n) * LOG2E
    return _clamp01(0.5 * math.erfc(num / den / _SQRT2))


def harq_ir_per(attempt: DecodeAttempt) -> float:
    """Packet error probability after ``T`` HARQ-IR rounds.

    Normal approximation of the accumulated information density::

        Q( (sum_t log2(1+g_t) - R + log2(T*N_s)/(2*N_s))
           / (sqrt(sum_t (1 - (1+g_t)^-2) / N_s) * log2(e)) )

    If every round has zero SINR the dispersion vanishes; the limit
    convention returns 1 for a positive rate and 0 for a zero rate.
    """
    return ir_per(attempt.sinr_history, attempt.first_round_rate, attempt.block_length)


def ir_per_array(sinr: np.ndarray, rate, block_length: int) -> np.ndarray:
    """Vectorised :func:`ir_per` over the leading axes of ``sinr`` (rounds last)."""
    g = np.asarray(sinr, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    pos = g > 0
    safe = np.where(pos, g, 0.0)
    cap = np.sum(np.log2(1.0 + safe), axis=-1)
    disp = np.sum(np.where(pos, 1.0 - (1.0 + safe) ** -2, 0.0), axis=-1)
    n = block_length
    t = g.shape[-1]
    rate = np.asarray(rate, dtype=float)
    num = cap - rate + math.log2(t * n) / (2.0 * n)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = num / (np.sqrt(disp / n) * LOG2E)
        per = 0.5 * erfc(arg / _SQRT2)
    degenerate = np.where(rate > 0, 1.0, 0.0)
    per = np.where(disp > 0, per, degenerate)
    return np.clip(per, 0.0, 1.0)


def reduced_backtrack_rate(rate: float, total_credits: float, block_length: int) -> float:
    """``R - sum(beta)/N_s + log2(N_s)/(2 N_s)``, clamped at zero."""
    n = block_length
    return max(0.0, rate - total_credits / n + math.log2(n) / (2.0 * n))


def backtrack_error(sinr: float, reduced_rate: float, block_length: int) -> float:
    """Backtrack error probability at an already-reduced rate (fast path)."""
    if sinr <= 0.0:
        return 1.0 if reduced_rate > 0.0 else 0.0
    num = math.sqrt(block_length) * (math.log2(1.0 + sinr) - reduced_rate)
    den = math.sqrt(1.0 - (1.0 + sinr) ** -2) * LOG2E
    return _clamp01(0.5 * math.erfc(num / den / _SQRT2))


def backtrack_per(attempt: BacktrackAttempt) -> float:
    """Error probability of backtrack decoding a buffered first-round signal.

    Every extracted retransmission bit lowers the effective rate of the
    original packet by ``1/N_s``::

        Q( sqrt(N_s) * (log2(1+g) - R_hat) / (sqrt(1 - (1+g)^-2) * log2(e)) )
    """
    return backtrack_error(
        attempt.first_round_sinr, attempt.reduced_rate, attempt.block_length
    )


def sample_decode_outcome(attempt, rng=None, *, deterministic: bool = False, uniform=None) -> bool:
    """Draw a decode success flag with probability ``1 - PER``.

    ``attempt`` may be a :class:`DecodeAttempt` or a :class:`BacktrackAttempt`.
    With ``deterministic=True`` the decode succeeds iff ``PER < 0.5``. A
    pre-drawn ``uniform`` in [0, 1) may be supplied instead of ``rng`` so that
    repeated decodes of the same packet share one noise realisation.
    """
    if isinstance(attempt, BacktrackAttempt):
        per = backtrack_per(attempt)
    else:
        per = harq_ir_per(attempt)
    if deterministic:
        return per < 0.5
    if uniform is None:
        if rng is None:
            raise ValueError("need rng or uniform for a random decode")
        uniform = rng.random()
    return uniform >= per


def surrogate_params(reduced_rate: float, block_length: int) -> SurrogateParams:
    if reduced_rate < 0 or not math.isfinite(reduced_rate):
        raise ValueError(f"reduced rate must be finite and >= 0, got {reduced_rate}")
    if block_length < 1:
        raise ValueError("block_length must be positive")
    if reduced_rate == 0.0:
        return SurrogateParams(math.inf, 0.0, 0.0, 0.0)
    slope = math.sqrt(block_length / (2.0 * math.pi * (2.0 ** (2.0 * reduced_rate) - 1.0)))
    center = 2.0**reduced_rate - 1.0
    half = 1.0 / (2.0 * slope)
    return SurrogateParams(slope, center, center - half, center + half)


def surrogate_q(sinr, params: SurrogateParams):
    """Evaluate the piecewise-linear surrogate at ``sinr``."""
    x = np.asarray(sinr, dtype=float)
    if params.is_step:
        out = np.where(x <= 0.0, 1.0, 0.0)
    else:
        out = np.clip(0.5 - params.slope * (x - params.center), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def average_backtrack_per(
    conditional_sinr_cdf: Callable[[float], float], params: SurrogateParams
) -> float:
    """Average backtrack error over the SINR distribution via the surrogate.

    Integrates ``slope * F(x)`` over ``[lower_knee, upper_knee]``. A CDF
    built by :func:`empirical_cdf` is piecewise linear and is integrated
    exactly over its breakpoints; any other CDF goes through adaptive
    quadrature (absolute tolerance 1e-6).
    """

    def cdf(x: float) -> float:
        v = float(conditional_sinr_cdf(x))
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"cdf returned {v} at x={x}; values must lie in [0, 1]")
        return v

    if params.is_step:
        return cdf(0.0)
    knots = getattr(conditional_sinr_cdf, "samples", None)
    if knots is not None:
        lo, hi = params.lower_knee, params.upper_knee
        inner = knots[(knots > lo) & (knots < hi)]
        x = np.concatenate(([lo], inner, [hi]))
        y = conditional_sinr_cdf(x)
        # the only jump sits at the smallest sample; use left limits there
        y_left = np.where(x[1:] == knots[0], 0.0, y[1:])
        return _clamp01(params.slope * float(np.sum(0.5 * (y[:-1] + y_left) * np.diff(x))))
    val, _ = integrate.quad(
        cdf, params.lower_knee, params.upper_knee, epsabs=1e-6, epsrel=1e-9, limit=400
    )
    return _clamp01(params.slope * val)


def empirical_cdf(samples: Sequence[float]) -> Callable[[float], float]:
    """Piecewise-linear empirical CDF through the sorted samples.

    Zero below the smallest sample, one at and above the largest.
    """
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("need at least one sample")
    ys = np.arange(1, xs.size + 1, dtype=float) / xs.size

    def cdf(x):
        return np.interp(x, xs, ys, left=0.0, right=1.0)

    cdf.samples = xs
    return cdf


@dataclass(frozen=True)
class RetransmissionLength:
    bits: int
    saturated: bool
    achieved_per: float


def min_retransmission_length(
    target_per: float,
    original_rate: float,
    prior_credits: Sequence[int],
    conditional_sinr_cdf: Callable[[float], float],
    block_length: int,
) -> RetransmissionLength:
    """Smallest retransmission size meeting ``target_per`` on average.

    Bisects over integer bit counts in ``[0, ceil(R * N_s)]``. The average
    backtrack PER is nonincreasing in the number of credited bits for a
    nondecreasing CDF; a bracket that contradicts this raises ``ValueError``.
    If even the cap misses the target the cap is returned with
    ``saturated=True``.
    """
    if not 0.0 < target_per < 1.0:
        raise ValueError(f"target_per must lie in (0, 1), got {target_per}")
    prior = sum(prior_credits)
    cap = math.ceil(original_rate * block_length)

    def avg_per(beta: int) -> float:
        r_hat = reduced_backtrack_rate(original_rate, prior + beta, block_length)
        return average_backtrack_per(conditional_sinr_cdf, surrogate_params(r_hat, block_length))

    f_lo = avg_per(0)
    if f_lo <= target_per:
        return RetransmissionLength(0, False, f_lo)
    f_hi = avg_per(cap)
    if f_hi > f_lo:
        raise ValueError("average backtrack PER increases with credits; is the cdf monotone?")
    if f_hi > target_per:
        return RetransmissionLength(cap, True, f_hi)
    lo, hi = 0, cap  # f(lo) > target >= f(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        f_mid = avg_per(mid)
        if f_mid > f_lo or f_mid < f_hi:
            raise ValueError("average backtrack PER not monotone in credits; is the cdf monotone?")
        if f_mid <= target_per:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return RetransmissionLength(hi, False, f_hi)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    num_samples: int


def average_per_monte_carlo(
    joint_sinr_sampler: Callable[[np.random.Generator, int], np.ndarray],
    first_round_rate: float,
    rounds: int,
    block_length: int,
    num_samples: int,
    rng: np.random.Generator,
) -> MonteCarloEstimate:
    """Monte Carlo average of the HARQ-IR PER over a joint SINR distribution.

    ``joint_sinr_sampler(rng, n)`` must return an ``(n, rounds)`` array of
    SINR vectors.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    draws = np.asarray(joint_sinr_sampler(rng, num_samples), dtype=float)
    if draws.shape != (num_samples, rounds):
        raise ValueError(f"sampler returned shape {draws.shape}, expected {(num_samples, rounds)}")
    if np.any(draws < 0):
        raise ValueError("sampler returned negative SINR")
    per = ir_per_array(draws, first_round_rate, block_length)
    mean = float(np.mean(per))
    se = float(np.std(per, ddof=1) / math.sqrt(num_samples)) if num_samples > 1 else math.inf
    return MonteCarloEstimate(_clamp01(mean), se, num_samples)
