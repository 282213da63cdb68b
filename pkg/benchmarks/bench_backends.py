"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_backends.py [--n 4096] [--repeats 5]
"""
import argparse

from sagpool import _kernels
from sagpool.bench import backend_comparison


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=4096, help="nodes in the random test graph")
    p.add_argument("--features", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()

    timings = backend_comparison(n=args.n, num_features=args.features, repeats=args.repeats)
    if len(timings) < 2:
        print("only the", _kernels.BACKEND, "backend is available; build the extension to compare")
    kernels = list(next(iter(timings.values())))
    names = list(timings)
    print(f"{'kernel':<14}" + "".join(f"{n + ' (ms)':>16}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for k in kernels:
        row = f"{k:<14}" + "".join(f"{timings[n][k] * 1e3:>16.3f}" for n in names)
        if "cython" in timings and "python" in timings:
            row += f"{timings['python'][k] / timings['cython'][k]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
