"""Monte Carlo sweeps over SNR for the three link-layer schemes.

A drop is one independent protocol history of several blocks with i.i.d.
block fading. Every drop gets its own seed derived from the master seed and
its (SNR index, drop index), so results do not depend on how drops are
spread over worker processes, and all schemes see the same channels.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .amc import McsTable, default_table, load_table, select_rates_array
from .channel import CsitModel, draw_channels
from .metrics import BlockLedger, DropSummary
from .phy import RateAllocation, SinrReport, sinrs_from_gains
from .precoder import gains, svd_mrt
from .protocol import RandomDecoder
from .sched_advanced import AdvancedScheme, FractionSizer, TargetPerSizer
from .sched_baseline import BaselineScheme
from .sched_noharq import NoHarqScheme

SCHEMES = ("no_harq", "baseline", "advanced")


@dataclass(frozen=True)
class SimConfig:
    num_tx_antennas: int = 8
    num_users: int = 4
    block_length: int = 256
    csit_exponent: float = 0.6
    common_power_fraction: float = 0.9
    snr_grid_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    num_realizations: int = 10_000
    scheme: str = "advanced"
    max_retx_common: int = 1
    max_retx_private: tuple[int, ...] = (1,)
    retx_fraction: float = 0.15
    target_eps: Optional[float] = None
    master_seed: int = 0
    # caps the CSIT error power below the channel power; needed at 0 dB
    max_error_fraction: float = 0.99
    mcs_table: Optional[str] = None
    backoff_db: float = 0.0
    num_blocks: Optional[int] = None
    sinr_samples: int = 200
    workers: int = 1

    def __post_init__(self):
        mp = self.max_retx_private
        mp = (int(mp),) if isinstance(mp, (int, np.integer)) else tuple(int(x) for x in mp)
        if len(mp) == 1:
            mp = mp * self.num_users
        object.__setattr__(self, "max_retx_private", mp)
        object.__setattr__(self, "snr_grid_db", tuple(float(x) for x in self.snr_grid_db))
        self.validate()

    def validate(self) -> None:
        errs = []
        if self.num_tx_antennas < 1 or self.num_users < 1:
            errs.append("antenna and user counts must be positive")
        if self.block_length < 1:
            errs.append("block_length must be positive")
        if not self.snr_grid_db:
            errs.append("snr_grid_db is empty")
        if self.num_realizations < 1:
            errs.append("num_realizations must be positive")
        if self.scheme not in SCHEMES:
            errs.append(f"scheme must be one of {SCHEMES}")
        if self.max_retx_common not in (1, 2):
            errs.append("max_retx_common must be 1 or 2")
        if len(self.max_retx_private) != self.num_users or any(m not in (1, 2) for m in self.max_retx_private):
            errs.append("max_retx_private must hold 1 or 2 per user")
        if not 0 < self.retx_fraction <= 1:
            errs.append("retx_fraction must lie in (0, 1]")
        if not 0 <= self.common_power_fraction <= 1:
            errs.append("common_power_fraction must lie in [0, 1]")
        if self.target_eps is not None and not 0 < self.target_eps < 1:
            errs.append("target_eps must lie in (0, 1)")
        if not 0 < self.max_error_fraction < 1:
            errs.append("max_error_fraction must lie in (0, 1)")
        if not 0 <= self.master_seed < 2**64:
            errs.append("master_seed must be a 64-bit unsigned integer")
        if self.num_blocks is not None and self.num_blocks < 1:
            errs.append("num_blocks must be positive")
        if self.workers < 1:
            errs.append("workers must be >= 1")
        if errs:
            raise ValueError("invalid configuration: " + "; ".join(errs))

    @property
    def max_rounds(self) -> int:
        return 1 + max(self.max_retx_common, *self.max_retx_private)

    @property
    def drop_blocks(self) -> int:
        return self.num_blocks if self.num_blocks is not None else max(8, 4 * self.max_rounds)

    def table(self) -> McsTable:
        if self.mcs_table:
            return load_table(self.mcs_table, self.backoff_db)
        return default_table(self.backoff_db)


@dataclass(frozen=True)
class PointResult:
    snr_db: float
    scheme: str
    throughput: float
    throughput_se: float
    per_common: Optional[float]
    per_private: Optional[float]
    mer: Optional[float]
    latency: Optional[float]
    latency_se: Optional[float]
    n_drops: int
    totals: DropSummary
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class SweepResult:
    config: SimConfig
    points: tuple[PointResult, ...]

    @property
    def snr_db(self) -> list[float]:
        return [p.snr_db for p in self.points]

    def column(self, name: str) -> list:
        return [getattr(p, name) for p in self.points]


@dataclass
class DropArrays:
    """Per-block physical layer quantities of one drop, computed in batch."""

    common_rate: np.ndarray  # (N,)
    private_rate: np.ndarray  # (N, K)
    common_sinr: np.ndarray  # (N, K)
    private_sinr: np.ndarray  # (N, K)
    transmit_power: float
    precoder_power: np.ndarray  # (N,)
    sample_common: Optional[np.ndarray] = None  # (N, S, K)
    sample_private: Optional[np.ndarray] = None


def drop_seed(master_seed: int, point_index: int, drop_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(point_index, drop_index))


def draw_drop(config: SimConfig, snr_db: float, rng: np.random.Generator, table: McsTable) -> DropArrays:
    p_t = 10.0 ** (snr_db / 10.0)
    model = CsitModel(
        config.num_tx_antennas, config.num_users,
        csit_scaling_exponent=config.csit_exponent,
        max_error_fraction=config.max_error_fraction,
    )
    n = config.drop_blocks
    h, h_est = draw_channels(model, p_t, rng, n)
    p_c, p_priv = svd_mrt(h_est, np.full(n, p_t), config.common_power_fraction)
    noise = np.asarray(model.noise_power_per_user)
    g = gains(h, p_c, p_priv)
    g_c, g_p = sinrs_from_gains(g.common, g.private, noise)
    ge = gains(h_est, p_c, p_priv)
    e_c, e_p = sinrs_from_gains(ge.common, ge.private, noise)
    r_c, r_p = select_rates_array(e_c, e_p, table)
    power = np.sum(np.abs(p_c) ** 2, axis=-1) + np.sum(np.abs(p_priv) ** 2, axis=(-2, -1))
    arrays = DropArrays(r_c, r_p, g_c, g_p, p_t, power)
    if config.scheme == "advanced" and config.target_eps is not None:
        # conditional draws of the true channel around each estimate
        s = config.sinr_samples
        err_pow = model.error_power(p_t)
        shape = (n, s, config.num_tx_antennas, config.num_users)
        err = np.sqrt(err_pow / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        hs = h_est[:, None] + err
        gs = gains(hs, p_c[:, None], p_priv[:, None])
        arrays.sample_common, arrays.sample_private = sinrs_from_gains(gs.common, gs.private, noise)
    return arrays


def _make_scheme(config: SimConfig, ledger: BlockLedger):
    k, n_s = config.num_users, config.block_length
    mc = 1 + config.max_retx_common
    mp = tuple(1 + m for m in config.max_retx_private)
    if config.scheme == "baseline":
        return BaselineScheme(k, n_s, mc, mp, ledger)
    if config.scheme == "advanced":
        sizer = TargetPerSizer(config.target_eps) if config.target_eps is not None else FractionSizer(config.retx_fraction)
        return AdvancedScheme(k, n_s, mc, mp, ledger, sizer)
    return NoHarqScheme(k, n_s, ledger)


def _in_flight(scheme) -> tuple[int, int]:
    st = scheme.state
    if isinstance(scheme, AdvancedScheme):
        return sum(len(p.undecoded) for p in st.common_pending), len(st.private_pending)
    if isinstance(scheme, BaselineScheme):
        c = 0 if st.common is None else st.num_users - len(st.common.decoded_by)
        return c, sum(p is not None for p in st.private)
    return 0, 0


def run_drop(
    config: SimConfig,
    snr_db: float,
    seed: np.random.SeedSequence,
    table: Optional[McsTable] = None,
    audit: Optional[Counter] = None,
) -> DropSummary:
    """Simulate one drop and return its integer summary.

    With ``audit`` given, consistency checks are run every block and each
    violation increments a named counter.
    """
    table = table if table is not None else config.table()
    chan_seed, dec_seed = seed.spawn(2)
    arrays = draw_drop(config, snr_db, np.random.default_rng(chan_seed), table)
    decoder = RandomDecoder(np.random.default_rng(dec_seed))
    k, n_s, n_blocks = config.num_users, config.block_length, config.drop_blocks
    ledger = BlockLedger(n_blocks, k, n_s)
    scheme = _make_scheme(config, ledger)
    for n in range(n_blocks):
        r_c = float(arrays.common_rate[n])
        rates = RateAllocation(r_c, (r_c / k,) * (k - 1) + (r_c - (k - 1) * (r_c / k),),
                               tuple(arrays.private_rate[n].tolist()))
        sinrs = SinrReport(arrays.common_sinr[n], arrays.private_sinr[n])
        extra = {}
        if arrays.sample_common is not None:
            extra["sinr_samples"] = (arrays.sample_common[n], arrays.sample_private[n])
        out = scheme.run_block(n, rates, sinrs, decoder, **extra)
        if audit is not None:
            _audit_block(audit, config, scheme, ledger, rates, arrays, n, out)
    if audit is not None:
        c_if, p_if = _in_flight(scheme)
        for counts, inflight, name in ((ledger.packets["c"], c_if, "common"), (ledger.packets["p"], p_if, "private")):
            if counts.opened != counts.decoded + counts.dropped + inflight:
                audit[f"conservation_{name}"] += 1
    return ledger.summary()


def _audit_block(audit, config, scheme, ledger, rates, arrays, n, out) -> None:
    n_s = config.block_length
    audit["blocks"] += 1
    if abs(sum(rates.common_portion_per_user) - rates.common_rate) > 1e-9:
        audit["common_split"] += 1
    if arrays.precoder_power[n] > arrays.transmit_power + 1e-9:
        audit["power"] += 1
    if isinstance(scheme, AdvancedScheme):
        plan, _ = out
        if plan.common_bits_packed != math.floor(rates.common_rate * n_s):
            audit["payload_common"] += 1
        for u, r in enumerate(rates.private_rate_per_user):
            if plan.private_bits_packed(u) != math.floor(r * n_s):
                audit["payload_private"] += 1
        for rx in scheme.state.receivers:
            for pid, credits in rx.credits.items():
                if any(b <= rx.birth[pid] or b > n or bits <= 0 for b, bits in credits):
                    audit["credit_causality"] += 1
        for s in plan.split_records:
            r = next(x for x in plan.private_retx if x.user == s.user and x.round_index == s.round_index)
            if s.bits_in_common + s.bits_in_private != r.bits:
                audit["split"] += 1
    reward = int(ledger.common_reward[: n + 1].sum() + ledger.private_reward[: n + 1].sum())
    if reward > int(ledger.scheduled_bits[: n + 1].sum()):
        audit["reward_exceeds_scheduled"] += 1


def _run_chunk(args) -> list[DropSummary]:
    config, point_index, snr_db, start, stop = args
    table = config.table()
    return [
        run_drop(config, snr_db, drop_seed(config.master_seed, point_index, i), table)
        for i in range(start, stop)
    ]


def _summarize(config: SimConfig, snr_db: float, drops: Sequence[DropSummary], wall: float) -> PointResult:
    m = len(drops)
    scale = config.drop_blocks * config.block_length
    tp = np.array([d.reward_bits for d in drops], dtype=float) / scale
    total = DropSummary()
    for d in drops:
        total = total + d
    tp_mean = float(np.mean(tp)) if m else 0.0
    tp_se = float(np.std(tp, ddof=1) / math.sqrt(m)) if m > 1 else math.nan

    def ratio(num, den):
        return num / den if den else None

    latency = ratio(total.latency_weighted_bits, total.latency_bits)
    latency_se = None
    if latency is not None and m > 1:
        a = np.array([d.latency_weighted_bits for d in drops], dtype=float)
        b = np.array([d.latency_bits for d in drops], dtype=float)
        resid = a - latency * b
        latency_se = float(math.sqrt(np.sum(resid**2) / (m * (m - 1))) / np.mean(b))
    return PointResult(
        snr_db=snr_db,
        scheme=config.scheme,
        throughput=tp_mean,
        throughput_se=tp_se,
        per_common=ratio(total.common_dropped, total.common_dropped + total.common_decoded),
        per_private=ratio(total.private_dropped, total.private_dropped + total.private_decoded),
        mer=ratio(total.messages_failed, total.messages_done),
        latency=latency,
        latency_se=latency_se,
        n_drops=m,
        totals=total,
        wall_time=wall,
    )


def run_sweep(config: SimConfig, workers: Optional[int] = None) -> SweepResult:
    """Run ``num_realizations`` drops at every SNR point of the grid."""
    config.validate()
    config.table()  # surface table errors before any work
    workers = workers if workers is not None else config.workers
    points = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for i, snr in enumerate(config.snr_grid_db):
            t0 = time.perf_counter()
            m = config.num_realizations
            if pool is None:
                drops = _run_chunk((config, i, snr, 0, m))
            else:
                bounds = np.linspace(0, m, 4 * workers + 1).astype(int)
                jobs = [(config, i, snr, int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
                drops = [d for chunk in pool.map(_run_chunk, jobs) for d in chunk]
            points.append(_summarize(config, snr, drops, time.perf_counter() - t0))
    finally:
        if pool is not None:
            pool.shutdown()
    return SweepResult(config, tuple(points))


def audit_drops(config: SimConfig, snr_db: float, num_drops: int, point_index: int = 0) -> Counter:
    """Run drops with per-block consistency checks; returns violation counts
    (plus the number of audited ``blocks``)."""
    table = config.table()
    audit: Counter = Counter()
    for i in range(num_drops):
        run_drop(config, snr_db, drop_seed(config.master_seed, point_index, i), table, audit)
    return audit


# output -----------------------------------------------------------------

CSV_COLUMNS = (
    "snr_db", "scheme", "throughput", "throughput_se", "per_common", "per_private",
    "mer", "latency", "latency_se", "n_drops",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rows(results: Sequence[SweepResult]) -> list[dict]:
    rows = []
    for res in results:
        for p in res.points:
            rows.append({c: getattr(p, c) for c in CSV_COLUMNS})
    rows.sort(key=lambda r: SCHEMES.index(r["scheme"]) if r["scheme"] in SCHEMES else len(SCHEMES))
    return rows


def _config_echo(cfg: SimConfig) -> dict:
    return asdict(cfg)


def emit_results(results, fmt: str, path) -> Path:
    """Write one or more sweeps as CSV or JSON; rows are grouped by scheme."""
    if isinstance(results, SweepResult):
        results = [results]
    path = Path(path)
    rows = _rows(results)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as f:
                w = csv.writer(f)
                w.writerow(CSV_COLUMNS)
                for r in rows:
                    w.writerow([_cell(r[c]) for c in CSV_COLUMNS])
        elif fmt == "json":
            doc = {
                "config": [_config_echo(r.config) for r in results],
                "rows": rows,
            }
            path.write_text(json.dumps(doc, indent=2))
        else:
            raise ValueError(f"unknown format {fmt!r}; use csv or json")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results_csv(path) -> list[dict]:
    """Parse a results CSV back into typed rows."""
    out = []
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            typed = {}
            for k, v in row.items():
                if k == "scheme":
                    typed[k] = v
                elif k == "n_drops":
                    typed[k] = int(v)
                else:
                    typed[k] = float(v) if v != "" else None
            out.append(typed)
    return out


PLOT_METRICS = {
    "throughput": ("throughput",),
    "per": ("per_common", "per_private"),
    "mer": ("mer",),
    "latency": ("latency",),
}


def emit_plot_data(results: Sequence[SweepResult], directory) -> list[Path]:
    """One CSV per plot: SNR in the first column, one column per scheme
    (and per stream for PER)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    results = sorted(results, key=lambda r: SCHEMES.index(r.config.scheme))
    snrs = sorted({p.snr_db for r in results for p in r.points})
    written = []
    for name, metrics in PLOT_METRICS.items():
        header = ["snr_db"]
        columns = []
        for r in results:
            by_snr = {p.snr_db: p for p in r.points}
            for m in metrics:
                label = r.config.scheme if len(metrics) == 1 else f"{r.config.scheme}_{m.split('_')[1]}"
                header.append(label)
                columns.append([getattr(by_snr[s], m) if s in by_snr else None for s in snrs])
        path = directory / f"{name}.csv"
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for i, s in enumerate(snrs):
                w.writerow([repr(s)] + [_cell(col[i]) for col in columns])
        written.append(path)
    return written


# configuration files ----------------------------------------------------

def _parse_value(name: str, text: str):
    text = text.strip()
    if name == "snr_grid_db":
        return tuple(float(x) for x in text.replace(",", " ").split())
    if name == "max_retx_private":
        return tuple(int(x) for x in text.replace(",", " ").split())
    if name in ("target_eps", "mcs_table", "num_blocks"):
        if text.lower() in ("", "none"):
            return None
        return {"target_eps": float, "mcs_table": str, "num_blocks": int}[name](text)
    if name == "scheme":
        return text
    kind = {f.name: f.type for f in fields(SimConfig)}[name]
    return float(text) if kind == "float" else int(text)


def load_config(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    names = {f.name for f in fields(SimConfig)}
    out = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in names:
            raise ValueError(f"{path}:{lineno}: expected 'field = value' with a SimConfig field")
        out[key] = _parse_value(key, value)
    return out


def snr_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    if step <= 0 or hi < lo:
        raise ValueError("need step > 0 and snr max >= snr min")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(float(lo + i * step) for i in range(count))


def with_scheme(config: SimConfig, scheme: str) -> SimConfig:
    return replace(config, scheme=scheme)
