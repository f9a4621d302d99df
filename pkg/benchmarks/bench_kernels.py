"""Compare the compiled and pure-Python modular exponentiation kernels.

    python benchmarks/bench_kernels.py [--bits 512 1024 2048] [--reps 20]
"""

import argparse
import random
import statistics
import time

from privpoly import _pykernels

try:
    from privpoly import _gmpkernels
except ImportError:
    _gmpkernels = None


def timeit(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--bits", type=int, nargs="+", default=[512, 1024, 2048])
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    rng = random.Random(0)
    backends = {"python": _pykernels}
    if _gmpkernels is not None:
        backends["compiled"] = _gmpkernels
    print(f"{'bits':>6} {'kernel':>12} " + " ".join(f"{b:>12}" for b in backends) + "  speedup")
    for bits in args.bits:
        n2 = rng.getrandbits(2 * bits) | (1 << (2 * bits - 1)) | 1
        base, exp = rng.getrandbits(2 * bits) % n2, rng.getrandbits(bits)
        bases = [rng.getrandbits(2 * bits) % n2 for _ in range(8)]
        exps = [rng.getrandbits(200) for _ in range(8)]
        for name, call in (("powmod", lambda m: m.powmod(base, exp, n2)),
                           ("prod_powmod", lambda m: m.prod_powmod(bases, exps, n2))):
            t = {b: timeit(lambda m=m: call(m), args.reps) for b, m in backends.items()}
            ratio = t["python"] / t["compiled"] if "compiled" in t else float("nan")
            print(f"{bits:>6} {name:>12} " + " ".join(f"{v * 1e3:>10.3f}ms" for v in t.values()) + f"  {ratio:6.1f}x")


if __name__ == "__main__":
    main()
