"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_core.py [--repeat N] [--skip-e2e]

Each kernel is timed on identical inputs under both backends and the
outputs are checked for agreement. The end-to-end row runs one toy FWL
training in a subprocess per backend (FWL_PURE_PYTHON selects it).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fwl import _pycore

try:
    from fwl import _core
except ImportError:
    _core = None


def spd(n, rng):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + np.eye(n)


def cases(rng):
    for n in (50, 200, 500):
        a = spd(n, rng)
        L = np.linalg.cholesky(a)
        b = rng.standard_normal((n, 1))
        yield f"cholesky_lower n={n}", lambda m, a=a: m.cholesky_lower(a, 0.0)
        yield f"solve_lower n={n}", lambda m, L=L, b=b: m.solve_lower(L, b)
        yield f"solve_lower_t n={n}", lambda m, L=L, b=b: m.solve_lower_t(L, b)
    for n, d in ((500, 2), (2000, 16)):
        x, y = rng.standard_normal((n, d)), rng.standard_normal((n // 4, d))
        yield f"pairwise_sqdist {n}x{n // 4} d={d}", lambda m, x=x, y=y: m.pairwise_sqdist(x, y)
    for n, k, d in ((1000, 10, 2), (10000, 50, 16)):
        p, c = rng.standard_normal((n, d)), rng.standard_normal((k, d))
        yield f"nearest_centroid n={n} k={k}", lambda m, p=p, c=c: m.nearest_centroid(p, c)
    for n in (4_500, 100_000):
        g = rng.standard_normal(n)

        def adam(m, n=n, g=g):
            p, mo, v = np.zeros(n), np.zeros(n), np.zeros(n)
            m.adam_update(p, g, mo, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001, 0.7)
            return p
        yield f"adam_update n={n}", adam


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def best(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


E2E = ("import time; from fwl.engine import Session, preset_config; t = time.perf_counter(); "
       "Session(preset_config('toy', seed=0)).run('FWL'); print(time.perf_counter() - t)")


def end_to_end():
    out = {}
    for name, flag in (("cython", "0"), ("python", "1")):
        env = {**os.environ, "FWL_PURE_PYTHON": flag}
        res = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True,
                             text=True, check=True)
        out[name] = float(res.stdout.split()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if _core is None:
        sys.exit("fwl._core is not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng):
        ok = agree(fn(_core), fn(_pycore))
        tc = best(lambda: fn(_core), args.repeat)
        tp = best(lambda: fn(_pycore), args.repeat)
        rows.append((name, tc, tp, ok))
    if not args.skip_e2e:
        e = end_to_end()
        rows.append(("toy FWL run (seed 0)", e["cython"], e["python"], True))

    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'cython':>11}  {'python':>11}  {'speedup':>7}  agree")
    for name, tc, tp, ok in rows:
        print(f"{name:<{w}}  {tc * 1e3:9.3f}ms  {tp * 1e3:9.3f}ms  {tp / tc:6.2f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
