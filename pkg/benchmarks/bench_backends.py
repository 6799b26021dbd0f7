"""Throughput comparison of the two event-loop backends.

Runs the same replicate (same seed, same event stream) through the
compiled kernel and the pure-Python loop and reports events per second.
Both produce bitwise-identical trajectories; only pace differs.

Usage: python benchmarks/bench_backends.py [--scale N ...] [--repeat K]
"""
import argparse
import time

import numpy as np

from epigrid.contact import GaussianContact
from epigrid.grid import TorusGrid
from epigrid.infectivity import ConstantExponential
from epigrid.model import ModelParams, cosine_densities
from epigrid.sim.driver import HAVE_COMPILED, run_replicate


def time_backend(backend, scale, repeat):
    grid = TorusGrid(1, 8)
    params = ModelParams(0.15, 0.2, 0.5, 0.5)
    kernel = GaussianContact(1.2, 0.15)
    dens = cosine_densities(0.8, 0.2, 0.3, 0.4)
    best = float("inf")
    events = 0
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = run_replicate(grid, params, kernel,
                            ConstantExponential(0.9, 0.7),
                            ConstantExponential(0.6, 0.5), dens, scale, 7,
                            np.array([0.0, 0.5]), backend=backend)
        best = min(best, time.perf_counter() - t0)
        events = res.stats["events"]
    return events, best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, nargs="+",
                    default=[100, 400, 1600])
    ap.add_argument("--repeat", type=int, default=3,
                    help="timing repeats, best of K")
    args = ap.parse_args()

    backends = ["python"] + (["compiled"] if HAVE_COMPILED else [])
    if not HAVE_COMPILED:
        print("note: compiled extension not built, timing python loop only")
    print(f"{'scale':>7} {'events':>9}" +
          "".join(f" {b + ' ev/s':>15}" for b in backends) +
          (" {:>8}".format("speedup") if HAVE_COMPILED else ""))
    for scale in args.scale:
        rates = {}
        events = 0
        for b in backends:
            events, secs = time_backend(b, scale, args.repeat)
            rates[b] = events / secs
        row = f"{scale:>7} {events:>9}"
        for b in backends:
            row += f" {rates[b]:>15,.0f}"
        if HAVE_COMPILED:
            row += f" {rates['compiled'] / rates['python']:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
