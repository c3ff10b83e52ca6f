"""
Per-sweep timing of the sampler as the array grows.

The benchmark simulates independent Bernoulli trains (no edges, bias
``-3``), times a few Gibbs sweeps at each array size and fits
``log t = slope * log N + c``. At the largest size it also times the
level-1 chains of a ``k``-region split, to be compared with ``1/k^2`` of the
full-array sweep.
"""
import time
from dataclasses import dataclass

import numpy as np

from .hierarchy import plan_split, region_config
from .model import HyperParams, NetworkSample, simulate_spike_train
from .sampler import SamplerConfig, run_gibbs
from .spikedata import default_geometry

__all__ = ["BenchResult", "time_sweeps", "run_benchmark"]


@dataclass
class BenchResult:
    sizes: list
    sweep_seconds: list
    slope: float
    intercept: float
    split_k: int
    region_sweep_seconds: float
    split_ratio: float

    def rows(self):
        return list(zip(self.sizes, self.sweep_seconds))


def _null_train(n, n_bins, hp, seed):
    net = NetworkSample(np.zeros((n, n), dtype=np.int8), np.zeros((n, n)), np.full(n, -3.0))
    return simulate_spike_train(net, n_bins, hp, seed=seed)


def time_sweeps(train, hp, cfg, n_sweeps):
    """Mean wall time of ``n_sweeps`` sweeps, the first (warm-up) sweep excluded."""
    stamps = []
    run_cfg = SamplerConfig(n_iterations=n_sweeps + 1, burn_in=0, seed=cfg.seed,
                            parallel_width=cfg.parallel_width, pg_method=cfg.pg_method)
    run_gibbs(train, hp, run_cfg, progress=lambda it, ll: stamps.append(time.perf_counter()))
    return float(np.mean(np.diff(stamps)))


def run_benchmark(sizes=(16, 32, 64, 128), n_bins=2000, n_sweeps=3, split_k=4,
                  hp=None, cfg=None, seed=0, log=None):
    """Time sweeps over ``sizes`` and under a ``split_k``-region split."""
    hp = HyperParams() if hp is None else hp
    cfg = SamplerConfig(seed=seed) if cfg is None else cfg
    sizes = sorted(int(n) for n in sizes)
    secs = []
    trains = {}
    for n in sizes:
        trains[n] = _null_train(n, n_bins, hp, seed)
        secs.append(time_sweeps(trains[n], hp, cfg, n_sweeps))
        if log:
            log(f"N={n}: {secs[-1]:.4f} s/sweep")
    if len(sizes) >= 2:
        slope, intercept = np.polyfit(np.log(sizes), np.log(secs), 1)
    else:
        slope, intercept = float("nan"), float("nan")

    region_secs, ratio = float("nan"), float("nan")
    if split_k and split_k > 1:
        big = sizes[-1]
        layout = plan_split(default_geometry(big), split_k)
        region_times = [
            time_sweeps(trains[big].subset(r), hp, region_config(cfg, i), n_sweeps)
            for i, r in enumerate(layout.regions)
        ]
        region_secs = float(np.mean(region_times))
        ratio = region_secs / (secs[-1] / split_k ** 2)
        if log:
            log(f"k={split_k} split of N={big}: {region_secs:.4f} s/sweep per region, "
                f"{ratio:.2f} x full/k^2")
    return BenchResult(sizes, secs, float(slope), float(intercept), split_k, region_secs, float(ratio))
