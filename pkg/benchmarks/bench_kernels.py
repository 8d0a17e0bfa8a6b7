"""Time the AugMix kernel: compiled extension vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 96] [--repeat 20]

Both backends receive the same pre-drawn plan, so outputs are also checked
for bitwise agreement.
"""
import argparse
import timeit

import numpy as np

from fedccrl.augment import AugmentConfig, sample_augmix_plan
from fedccrl.kernels import available_backends, load_backend


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=96)
    ap.add_argument("--dims", default="3,8,8")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    c, h, w = (int(v) for v in args.dims.split(","))

    rng = np.random.default_rng(0)
    X = rng.uniform(size=(args.batch, c, h, w))
    plan = sample_augmix_plan(args.batch, AugmentConfig(), rng, h, w)
    call_args = (X, plan.nchains, plan.weights, plan.depth, plan.ops, plan.params, plan.m)

    outputs, times = {}, {}
    for name in available_backends():
        fn = load_backend(name).augmix_batch
        outputs[name] = fn(*call_args)
        times[name] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        print(f"{name:>7}: {times[name] * 1e3:9.3f} ms per batch of {args.batch} ({c}x{h}x{w})")
    if len(times) == 2:
        same = np.array_equal(outputs["cython"], outputs["python"])
        print(f"speedup: {times['python'] / times['cython']:.1f}x, bitwise equal: {same}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
