"""Benchmark the compiled pointwise kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py --points 200000 --repeat 5
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from nlmaxwell import _pykernels
from nlmaxwell.material import KINDS

try:
    from nlmaxwell import _kernels
except ImportError:  # extension not built
    _kernels = None

PARAMS = {
    "kerr": (1.0, 0.0, 4.0, 8.0),
    "saturation": (0.7, 0.0, 4.0, 8.0),
    "cubic_quintic": (2.0, 0.5, 4.0, 8.0),
    "double_power_piecewise": (1.0, 0.0, 4.0, 8.0),
    "double_power_smooth": (1.5, 0.0, 3.0, 7.0),
    "power": (1.0, 0.0, 3.5, 8.0),
}


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(points: int, repeat: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((points, 3))
    M = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    rows = []
    for name, (c1, c2, p, q) in PARAMS.items():
        code = KINDS[name]
        for hess in (False, True):
            args = (code, U, np.full(points, c1), np.full(points, c2), p, q, M, hess, 0.0)
            t_py = _time(lambda: _pykernels.pointwise(*args), repeat)
            row = {"kind": name, "hessian": hess, "python_s": t_py, "compiled_s": float("nan"),
                   "speedup": float("nan"), "max_rel_diff": float("nan")}
            if _kernels is not None:
                t_c = _time(lambda: _kernels.pointwise(*args), repeat)
                a = _pykernels.pointwise(*args)
                b = _kernels.pointwise(*args)
                diff = max(float(np.max(np.abs(x - y)) / max(np.max(np.abs(x)), 1e-300)) for x, y in zip(a, b))
                row.update(compiled_s=t_c, speedup=t_py / t_c, max_rel_diff=diff)
            rows.append(row)
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; timing the numpy fallback only")
    print(f"{'kind':<24}{'hessian':>8}{'python [ms]':>14}{'compiled [ms]':>15}{'speedup':>10}{'max rel diff':>14}")
    for r in run(args.points, args.repeat, args.seed):
        print(f"{r['kind']:<24}{str(r['hessian']):>8}{1e3 * r['python_s']:>14.2f}"
              f"{1e3 * r['compiled_s']:>15.2f}{r['speedup']:>10.2f}{r['max_rel_diff']:>14.1e}")


if __name__ == "__main__":
    main()
