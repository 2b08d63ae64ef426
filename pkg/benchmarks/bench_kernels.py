"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Workloads match the default scene: a 0.25 m^2 ORM (1271 RPs, 8 APs)
searched by 200 queries, and one training epoch of an 8-9-2 network
over the same map.
"""

import argparse
import time

import numpy as np

from fwips import _kernels, ann, pipelines, synth
from fwips.radiomap import AffineNormalizer


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(seed):
    scene = synth.SynthScene(seed=seed)
    orm, vds = synth.generate_orm(scene), synth.generate_vds(scene)
    S = np.ascontiguousarray(orm.fingerprints)
    Q = np.ascontiguousarray(vds.queries)
    X = AffineNormalizer.fit(orm.fingerprints).forward(orm.fingerprints)
    Y = AffineNormalizer.fit(orm.points).forward(orm.points)
    net = ann.init_network([9], 8, 2, seed=seed)
    order = np.random.default_rng(seed).permutation(orm.M).astype(np.int64)
    p0 = net.flat_parameters()
    widths = list(net.widths)

    def knn():
        _kernels.knn_select(S, Q, 35)

    def epoch_b1():
        _kernels.train_epoch(p0.copy(), widths, X, Y, order, 1, 0.05)

    def epoch_b16():
        _kernels.train_epoch(p0.copy(), widths, X, Y, order, 16, 0.05)

    def train_la():
        pipelines.train_la(orm, [9], ann.TrainingConfig(max_epochs=50, max_error=0.0, seed=seed))

    return {"knn_select k=35 (200 x 1271)": knn, "train_epoch batch=1": epoch_b1,
            "train_epoch batch=16": epoch_b16, "train_la 50 epochs": train_la}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    backends = sorted(_kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    cases = workloads(args.seed)
    print(f"{'workload':32s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases.items():
        timings = {}
        for b in backends:
            prev = _kernels.use(b)
            try:
                fn()  # warm-up
                timings[b] = best_of(fn, args.repeat)
            finally:
                _kernels.use(prev)
        row = f"{name:32s}" + "".join(f"{timings[b] * 1e3:10.2f}ms" for b in backends)
        if "cython" in timings:
            row += f"  {timings['python'] / timings['cython']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
