"""Compare the pure-numpy and compiled recurrent-scan backends.

Run directly:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from skycast.kernels import available_backends


def make_case(rng, B, T, C, H):
    x = rng.normal(size=(B, T, C))
    W = rng.normal(size=(C, 4 * H)) / np.sqrt(C)
    R = rng.normal(size=(H, 4 * H)) / np.sqrt(H)
    b = rng.normal(size=4 * H) * 0.1
    dh = rng.normal(size=(B, H))
    return x, W, R, b, dh


def time_backend(mod, case, reps):
    x, W, R, b, dh = case
    h, c, g = mod.lstm_forward(x, W, R, b)  # warm up
    mod.lstm_backward(x, W, R, g, c, h, dh)
    t0 = time.perf_counter()
    for _ in range(reps):
        h, c, g = mod.lstm_forward(x, W, R, b)
        mod.lstm_backward(x, W, R, g, c, h, dh)
    return (time.perf_counter() - t0) / reps


def main():
    rng = np.random.default_rng(0)
    backends = available_backends()
    cases = [
        ("desk-scale batch", (32, 6, 8, 16), 200),
        ("training batch", (256, 12, 80, 64), 20),
        ("long sequence", (64, 48, 80, 64), 20),
    ]
    print(f"backends: {', '.join(sorted(backends))}")
    header = f"{'case':<18} {'(B,T,C,H)':<18}" + "".join(
        f"{name + ' ms':>12}" for name in sorted(backends)
    )
    print(header)
    for label, dims, reps in cases:
        case = make_case(rng, *dims)
        row = f"{label:<18} {str(dims):<18}"
        times = {}
        for name in sorted(backends):
            times[name] = time_backend(backends[name], case, reps)
            row += f"{times[name] * 1000:>12.3f}"
        if len(times) == 2:
            row += f"   speedup {times['pure'] / times['fast']:.2f}x"
        print(row)


if __name__ == "__main__":
    main()
