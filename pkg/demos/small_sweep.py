"""Compare the three schemes on a coarse SNR grid with a few hundred drops."""

from dataclasses import replace

from rsma_harq.sim import SimConfig, run_sweep

base = SimConfig(num_realizations=300, snr_grid_db=(0.0, 10.0, 20.0, 30.0), master_seed=1)
print(f"{'scheme':9} {'snr':>5} {'thpt':>7} {'perC':>7} {'perP':>7} {'latency':>8}")
for scheme in ("no_harq", "baseline", "advanced"):
    for p in run_sweep(replace(base, scheme=scheme)).points:
        print(f"{scheme:9} {p.snr_db:5.0f} {p.throughput:7.3f} {p.per_common:7.4f} "
              f"{p.per_private:7.4f} {p.latency:8.4f}")
