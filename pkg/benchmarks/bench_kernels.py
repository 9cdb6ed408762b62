"""Time the numpy and numba kernel backends on model-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call of each kernel compiles (or loads the on-disk cache);
it is run once as warm-up and excluded from the timings.
"""
import argparse
import time

import numpy as np

from cran_highlight import _kernels


def cases(rng):
    x = rng.standard_normal((128, 4000))
    w = rng.standard_normal((64, 128, 3)) * 0.05
    b = np.zeros(64)
    h = rng.standard_normal((64, 4000))
    gconv = rng.standard_normal((64, 4000))
    seq = rng.standard_normal((50, 64))
    H = 64
    Wt = rng.standard_normal((64, 4 * H)) * 0.1
    Ut = rng.standard_normal((H, 4 * H)) * 0.1
    lb = np.zeros(4 * H)
    e = rng.random(4000)
    audio = rng.standard_normal(44100 * 5)

    def lstm_bwd(k):
        hs, cs, gates = k.lstm_forward(seq, Wt, Ut, lb)
        return k.lstm_backward(seq, Wt, Ut, hs, cs, gates, np.ones_like(hs))

    def pool_bwd(k):
        out, idx = k.maxpool_forward(h, 2)
        return k.maxpool_backward(np.ones_like(out), idx, h.shape[1])

    return {
        "conv1d_forward 128x4000 -> 64": lambda k: k.conv1d_forward(x, w, b),
        "conv1d_backward": lambda k: k.conv1d_backward(x, w, gconv),
        "maxpool fwd+bwd 64x4000/2": pool_bwd,
        "lstm_forward T=50 H=64": lambda k: k.lstm_forward(seq, Wt, Ut, lb),
        "lstm fwd+bwd T=50 H=64": lstm_bwd,
        "window_sums N=4000 S=491": lambda k: k.window_sums(e, 491),
        "sinc_resample 5 s 44100->8372": lambda k: k.sinc_resample(audio, 44100.0, 8372.0, 32),
    }


def bench(fn, kernels, repeat):
    fn(kernels)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(kernels)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--skip", action="append", default=[], help="substring of a case name to skip")
    args = p.parse_args()
    if _kernels.numba_kernels is None:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for name, fn in cases(rng).items():
        if any(s in name for s in args.skip):
            continue
        t_np = bench(fn, _kernels.numpy_kernels, args.repeat)
        t_nb = bench(fn, _kernels.numba_kernels, args.repeat)
        print(f"{name:<34}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
