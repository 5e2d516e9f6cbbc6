"""Compare the compiled and pure-Python sparse Cholesky kernels.

Usage::

    python benchmarks/bench_kernels.py [--h 0.06 0.03] [--repeat 3]

Times the numeric factorization, a forward/backward solve and the selected
inverse on the precision matrix of the desk study graph, for each backend.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from graphfield import _kernels_py
from graphfield.cholesky import Symbolic
from graphfield.demo import desk_design
from graphfield.fem import HyperParams, precision
from graphfield.mesh import build_mesh

try:
    from graphfield import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(impl, sym: Symbolic, data: np.ndarray, repeat: int) -> dict[str, float]:
    Cx = np.ascontiguousarray(data[sym.src])
    Li, Lx, _ = impl.chol_numeric(sym.n, sym.Cp, sym.Ci, Cx, sym.parent, sym.Lp)
    b = np.random.default_rng(0).standard_normal(sym.n)

    def solve():
        y = b.copy()
        impl.lsolve(sym.n, sym.Lp, Li, Lx, y)
        impl.ltsolve(sym.n, sym.Lp, Li, Lx, y)

    return {
        "factor": _best(lambda: impl.chol_numeric(sym.n, sym.Cp, sym.Ci, Cx, sym.parent, sym.Lp), repeat),
        "solve": _best(solve, repeat),
        "selinv": _best(lambda: impl.takahashi(sym.n, sym.Lp, Li, Lx), repeat),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, nargs="+", default=[0.06, 0.03])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    graph = desk_design().graph
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    print(f"{'K':>6} {'nnz(L)':>8} {'kernel':>7} " + " ".join(f"{n:>10}" for n, _ in backends) + "  speedup")
    for h in args.h:
        Q = precision(build_mesh(graph, h), HyperParams(0.35, 1.0))
        sym = Symbolic(Q)
        res = {name: bench(impl, sym, Q.data, args.repeat) for name, impl in backends}
        for kernel in ("factor", "solve", "selinv"):
            cells = " ".join(f"{res[n][kernel] * 1e3:9.2f}ms" for n, _ in backends)
            speed = f"{res['python'][kernel] / res['cython'][kernel]:7.1f}x" if "cython" in res else "    n/a"
            print(f"{sym.n:>6} {int(sym.Lp[-1]):>8} {kernel:>7} {cells} {speed}")


if __name__ == "__main__":
    main()
