"""Compare the numba and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each backend runs in a fresh interpreter because the backend is fixed at
import time by ``COVGROW_DISABLE_NUMBA``. Timings are the best of
``--repeat`` runs after one warm-up call (which also triggers numba
compilation).
"""

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "profiles40.cfg"


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_cases(repeat):
    import numpy as np

    from covgrow import kernels
    from covgrow.bspline import dense_to_band, make_basis
    from covgrow.io import load_config
    from covgrow.pipeline import fit_dataset
    from covgrow.simulate import simulate

    rng = np.random.default_rng(0)
    basis = make_basis(np.linspace(0, 1, 44)[1:-1], (0.0, 1.0))
    ts = rng.uniform(0, 1, 200_000)
    first, vals = kernels.basis_derivs(basis.knots, basis.order, basis.K, ts, 0)
    w = rng.uniform(0.5, 2.0, ts.size)

    n, bw = 2000, 7
    A = np.zeros((n, n))
    for d in range(bw + 1):
        v = rng.uniform(-0.1, 0.1, n - d)
        A += np.diag(v, -d) + (np.diag(v, d) if d else 0)
    A += np.eye(n) * 2 * bw
    ab = dense_to_band(A, bw)
    rhs = rng.normal(size=(n, 4))
    lb = ab.copy()
    kernels.band_cholesky(lb, 1e-12)

    config = load_config(CONFIG)
    dataset, _, _ = simulate(config, seed=7)

    cases = {
        "basis_derivs (200k points, K=46)": lambda: kernels.basis_derivs(basis.knots, basis.order, basis.K, ts, 1),
        "gram_band (200k rows)": lambda: kernels.gram_band(first, vals, w, basis.K, basis.order - 1),
        "band_matvec + rmatvec": lambda: kernels.band_rmatvec(first, vals,
                                                             kernels.band_matvec(first, vals, np.ones(basis.K)),
                                                             basis.K),
        "band_cholesky (n=2000, bw=7)": lambda: kernels.band_cholesky(ab.copy(), 1e-12),
        "band forward+backward (4 rhs)": lambda: kernels.band_backward(lb, kernels.band_forward(lb, rhs)),
        "fit 40x61 with gcv-grid": lambda: fit_dataset(dataset, config),
    }
    return {"backend": kernels.BACKEND,
            "times": {name: best_of(fn, 1 if name.startswith("fit") else repeat) for name, fn in cases.items()}}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(run_cases(args.repeat)))
        return

    results = {}
    for disable in ("0", "1"):
        env = dict(os.environ, COVGROW_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["times"]

    names = list(next(iter(results.values())))
    width = max(map(len, names))
    print(f"{'case':<{width}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  {'speedup':>8}")
    for name in names:
        a, b = results.get("numba", {}).get(name), results["numpy"][name]
        speed = f"{b / a:8.1f}" if a else "     n/a"
        a_txt = f"{1e3 * a:11.2f}" if a else "        n/a"
        print(f"{name:<{width}}  {a_txt}  {1e3 * b:11.2f}  {speed}")


if __name__ == "__main__":
    main()
