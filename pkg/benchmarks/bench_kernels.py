"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from aerotrack import kernels


def dbscan_case(rng, n=400):
    blobs = [rng.normal(c, 0.3, (n // 8, 3)) for c in rng.uniform(-20, 20, (4, 3))]
    return np.vstack(blobs + [rng.uniform(-25, 25, (n // 2, 3))])


def lstm_case(rng, B=32, T=20, D=12, H=32):
    Wx = rng.normal(0, 0.3, (4 * H, D))
    Uh = rng.normal(0, 0.3, (4 * H, H))
    b = np.zeros(4 * H)
    a = rng.normal(0, 0.3, H)
    X = rng.normal(size=(B, T, D))
    M = rng.random((B, T)) < 0.8
    M[:, 0] = True
    return Wx, Uh, b, a, 0.0, X, M


def bench(impl, repeat):
    rng = np.random.default_rng(0)
    pts = dbscan_case(rng)
    cases = {"dbscan (400 pts)": lambda: impl.dbscan_labels(pts, 1.0, 4)}
    # small batches match detection (a few clusters per window), B=32 matches training
    for B in (1, 4, 32):
        args = lstm_case(rng, B=B)
        Wx, Uh, b, a, ab, X, M = args
        fwd = impl.lstm_forward(*args)
        dctx = rng.normal(size=(B, Uh.shape[1]))
        cases[f"lstm forward  B={B:<2d} T=20 H=32"] = lambda args=args: impl.lstm_forward(*args)
        cases[f"lstm backward B={B:<2d} T=20 H=32"] = (
            lambda Wx=Wx, Uh=Uh, a=a, X=X, M=M, fwd=fwd, dctx=dctx:
            impl.lstm_backward(Wx, Uh, a, X, M, *fwd[:4], dctx))
    return {name: min(timeit.repeat(fn, number=5, repeat=repeat)) / 5 for name, fn in cases.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    results = {name: bench(mod, args.repeat) for name, mod in sorted(backends.items())}
    names = sorted(results)
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for case in results[names[0]]:
        row = [results[n][case] for n in names]
        line = f"{case:34s}" + "".join(f"{1e3 * v:10.3f}ms" for v in row)
        if len(row) == 2:
            line += f"{results['python'][case] / results['cython'][case]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
