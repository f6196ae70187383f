"""Timing comparison of the compiled and pure-Python kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
the same inputs under both backends and the outputs are checked to agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mprim import kernels
from mprim.dpm import McmcConfig, fit_dpm
from mprim.geometry import fit_spline


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(rng):
    t = np.linspace(0.0, 4.0, 201)
    c = fit_spline(t, np.column_stack([np.cos(3 * t), np.sin(2 * t), 0.3 * t])).coeffs
    piece = np.arange(c.shape[1])
    a = np.zeros(len(piece))
    b = np.diff(t)
    pts = rng.normal(size=(400, 3))
    ref = rng.normal(size=(600, 3))
    Xs = np.vstack([rng.normal(-2, 1, (60, 2)), rng.normal(2, 1, (60, 2))])
    ys = np.r_[-np.ones(60), np.ones(60)]
    K = np.exp(-0.5 * np.sum((Xs[:, None] - Xs[None]) ** 2, axis=-1))
    Xd = np.vstack([rng.normal(m, 1.0, (50, 3)) for m in (-10, 0, 10)])
    cfg = McmcConfig(iters=40, burnin=10, chains=1, seed=1)
    return {
        "arc_length_pieces": lambda: kernels.arc_length_pieces(c, piece, a, b, 1e-10),
        "nearest": lambda: kernels.nearest(pts, ref),
        "smo_solve": lambda: kernels.smo_solve(K, ys, 1.0, 1e-3, 100000),
        "dpm (fit, 40 sweeps)": lambda: fit_dpm(Xd, config=cfg).labels,
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-7, atol=1e-9)
    return np.isclose(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled backend unavailable; build the package first")
        return 1
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    print(f"{'kernel':<24}{'cython [ms]':>14}{'python [ms]':>14}{'speedup':>10}  agree")
    for name, fn in cases.items():
        kernels.use_backend("cython")
        tc, oc = _time(fn, args.repeat)
        kernels.use_backend("python")
        tp, op = _time(fn, args.repeat)
        print(f"{name:<24}{1e3 * tc:>14.2f}{1e3 * tp:>14.2f}{tp / tc:>10.1f}  {_same(oc, op)}")
    kernels.use_backend("cython")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
