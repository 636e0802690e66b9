"""Rate-splitting multiple access with HARQ: link-level building blocks,
baseline and layered retransmission schedulers, and a Monte Carlo harness."""

from .amc import McsTable, default_table, load_table, select_rates
from .channel import ChannelRealization, CsitModel, draw_channels, draw_realization
from .harqmath import (
    BacktrackAttempt,
    DecodeAttempt,
    HarqCategory,
    accumulated_mutual_information,
    average_backtrack_per,
    backtrack_per,
    harq_ir_per,
    min_retransmission_length,
    surrogate_params,
)
from .metrics import BlockLedger, average_latency_per_bit, per_and_mer, throughput
from .phy import RateAllocation, SinrReport, compute_sinrs
from .precoder import PrecoderSet, build_svd_mrt, effective_gains
from .sched_advanced import AdvancedScheme, RetransmissionPlan
from .sched_baseline import BaselineScheme
from .sched_noharq import NoHarqScheme
from .sim import SimConfig, SweepResult, emit_results, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AdvancedScheme", "BacktrackAttempt", "BaselineScheme", "BlockLedger", "ChannelRealization",
    "CsitModel", "DecodeAttempt", "HarqCategory", "McsTable", "NoHarqScheme", "PrecoderSet",
    "RateAllocation", "RetransmissionPlan", "SimConfig", "SinrReport", "SweepResult",
    "accumulated_mutual_information", "average_backtrack_per", "average_latency_per_bit",
    "backtrack_per", "build_svd_mrt", "compute_sinrs", "default_table", "draw_channels",
    "draw_realization", "effective_gains", "emit_results", "harq_ir_per", "load_table",
    "min_retransmission_length", "per_and_mer", "run_sweep", "select_rates", "surrogate_params",
    "throughput",
]
