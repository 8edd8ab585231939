"""Forecast throughput: compiled kernel vs numpy fallback.

Usage: python benchmarks/bench_forecast.py [--steps N] [--batch B] [--repeat R]

Times a single long forecast (sequential recursion, where the compiled kernel
matters most) and a batch of FRC-style forecasts, for each available backend,
and checks that both backends agree.
"""
import argparse
import time

import numpy as np

from frcnet.forecast import ForecastConfig, available_backends, forecast, forecast_batch
from frcnet.network import init_network
from frcnet.oscillator import ForcingSpec, SystemParams
from frcnet.trainer import BruCurriculum, ModelSpec, TrainingConfig, fit_system


def trained_net():
    net, _, _ = fit_system(SystemParams(0.2), BruCurriculum(), ModelSpec(), TrainingConfig(epochs=5))
    return net


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=10000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--random", action="store_true", help="untrained network")
    args = ap.parse_args()

    net = init_network("V3", seed=1) if args.random else trained_net()
    single = ForecastConfig(0.01, args.steps, ForcingSpec("harmonic_force", 1.0, 3.77))
    conds = [((0.2, 0.0), ForecastConfig(0.01, args.steps // 4,
                                          ForcingSpec("harmonic_force", 1.0, r)))
             for r in np.linspace(0.1, 10.0, args.batch)]

    print(f"network: V3 {net.n_parameters()} parameters; steps {args.steps}, batch {args.batch}")
    results = {}
    for be in available_backends():
        t1, res = best_of(lambda: forecast(net, (0.2, 0.0), single, backend=be), args.repeat)
        tb, _ = best_of(lambda: forecast_batch(net, conds, backend=be), args.repeat)
        n_batch = sum(c.n_steps for _, c in conds)
        results[be] = (t1, tb, res)
        print(f"{be:>9}: single {1e6 * t1 / args.steps:8.2f} us/step   "
              f"batch {1e6 * tb / n_batch:8.2f} us/step")
    if len(results) == 2:
        (c1, cb, cr), (p1, pb, pr) = results["compiled"], results["python"]
        diff = np.max(np.abs(cr.trajectory.states - pr.trajectory.states))
        print(f"speed-up: single {p1 / c1:.1f}x, batch {pb / cb:.1f}x; "
              f"max state difference {diff:.2e}")


if __name__ == "__main__":
    main()
