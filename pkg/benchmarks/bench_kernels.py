"""Numba loop kernels vs numpy kernels at training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--step]

``--step`` also times one full optimisation step (batch 64, H = 128) under
each backend in a fresh interpreter, since the backend is fixed at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dtic import kernels as K
from dtic.interpnet import ALPHA_INIT, ReferenceGrid

STEP = """
import time, numpy as np
from dtic.batch import PaddedCohort
from dtic.timeseries import SyntheticSpec, generate_synthetic_cohort, load_ranges, preprocess
from dtic.trainer import TrainConfig, pretrain
raw = generate_synthetic_cohort(SyntheticSpec(n_per_archetype=32), seed=0)
data = PaddedCohort.from_encounters(preprocess(raw, load_ranges())[0])
pretrain(data, TrainConfig(pretrain_iters=2))  # compile / warm caches
t = time.perf_counter()
pretrain(data, TrainConfig(pretrain_iters=10))
print((time.perf_counter() - t) / 10)
"""


def inputs(rng, B=128, width=14, H=128, n=2000):
    cnt = rng.integers(width // 2, width + 1, size=(B, 6))
    t = np.sort(rng.uniform(0, 360, size=(B, 6, width)), axis=-1)
    x = rng.random((B, 6, width))
    grid = ReferenceGrid().r
    gx = rng.normal(size=(B, 3 * H))
    h = rng.normal(size=(B, H))
    z = rng.random((B, H))
    X = rng.normal(size=(n, H))
    return {
        "interp_forward": (t, x, cnt, grid, np.full(6, ALPHA_INIT), 10.0),
        "rbf_forward": (rng.normal(size=(B, 36, 6)), grid, t, cnt, 1 / 900),
        "rbf_backward": (rng.normal(size=t.shape), grid, t, cnt, 1 / 900),
        "gru_gates": (gx, rng.normal(size=(B, 2 * H)), h),
        "gru_update": (gx, rng.normal(size=(B, H)), h, z),
        "gru_back_out": (rng.normal(size=(B, H)), h, z, np.tanh(h)),
        "assign_labels": (X, rng.normal(size=(4, H))),
        "pairwise_distances": (X,),
        "cluster_distance_sums": (K.pairwise_distances_numpy(X), rng.integers(0, 4, n), 4),
    }


def best_of(fn, args, repeat):
    fn(*args)  # compile
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def time_step(disable):
    env = dict(os.environ, DTIC_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", STEP], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--step", action="store_true", help="also time a full training step per backend")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numba ms':>10}{'numpy ms':>10}{'speed-up':>10}")
    for name, a in inputs(rng).items():
        fast = best_of(getattr(K, f"{name}_loops"), a, args.repeat)
        slow = best_of(getattr(K, f"{name}_numpy"), a, args.repeat)
        print(f"{name:<24}{fast * 1e3:>10.3f}{slow * 1e3:>10.3f}{slow / fast:>9.1f}x")
    if args.step:
        fast, slow = time_step(False), time_step(True)
        print(f"\ntraining step (batch 64): numba {fast * 1e3:.0f} ms, numpy {slow * 1e3:.0f} ms")


if __name__ == "__main__":
    main()
