#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the numpy fallback.

Every hot kernel in the package has two interchangeable
implementations selected by CBFSYNTH_BACKEND (or per call): a numba
@njit loop and a vectorized pure-numpy path. This script times the
workloads that dominate real runs — constraint sweeps, constrained
sampling, model evaluation, and the per-step safety filter — on both
backends and prints the speedups.

Usage: python benchmarks/bench_backends.py [--points 100000] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cbfsynth import constraints as C
from cbfsynth import dynamics as D
from cbfsynth import hjloss as HJ
from cbfsynth import kernels as K
from cbfsynth import network as N
from cbfsynth import qpfilter as Q
from cbfsynth import sampling as S
from cbfsynth import scenarios as SC
from cbfsynth.accel import NUMBA_AVAILABLE


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_workloads(n_points: int):
    """Shared inputs: DI cluttered geometry, a small model, QP states."""
    expr = C.normalize_nnf(SC.di_cluttered_expr())
    cc = K.compile_constraint(expr)
    system = D.by_name("di")
    rng = np.random.default_rng(0)
    X = rng.uniform(system.domain_lo, system.domain_hi, size=(n_points, 2))
    smoothing = C.SmoothingConfig(beta=2.0)
    net = N.init_params((2, 50, 50, 1), activation="tanh", seed=0,
                        input_box=(system.domain_lo, system.domain_hi))
    model = N.make_model(expr, smoothing, net)
    hyper = HJ.LossHyper(gamma=0.25, lam=1.0)
    Xq = rng.uniform(system.domain_lo, system.domain_hi, size=(500, 2))
    u_ref = rng.uniform(-1.0, 1.0, size=(500, 1))

    def qp_sweep(backend):
        for x, u in zip(Xq, u_ref):
            Q.filter_control(system, model, x, u, hyper, backend=backend)

    return [
        ("constraint values (batch_smooth)",
         lambda b: K.batch_smooth(cc, X, 2.0, backend=b)),
        ("constraint gradients (batch_smooth_grad)",
         lambda b: K.batch_smooth_grad(cc, X, 2.0, backend=b)),
        ("model evaluation (h_batch)",
         lambda b: N.h_batch(model, X, backend=b)),
        ("HJ residuals (batch_eval)",
         lambda b: HJ.batch_eval(system, model, X, hyper, backend=b)),
        ("rejection sampling (10^4 states)",
         lambda b: S.rejection_sample(expr, smoothing, system.domain_lo,
                                      system.domain_hi, 10_000, seed=1,
                                      backend=b)),
        ("RWMH sampling (10^4 states)",
         lambda b: S.rwmh_sample(expr, smoothing, system.domain_lo,
                                 system.domain_hi, 10_000, seed=1,
                                 backend=b)),
        ("CBF-QP filter (500 states)",
         lambda b: qp_sweep(b)),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=100_000,
                        help="batch size for the sweep workloads")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repeats; the best run counts")
    args = parser.parse_args()

    workloads = build_workloads(args.points)
    name_w = max(len(name) for name, _ in workloads)
    print(f"batch size {args.points}, best of {args.repeats} runs\n")
    print(f"{'workload':{name_w}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")

    for name, fn in workloads:
        t_np = _time(lambda: fn("numpy"), args.repeats)
        if NUMBA_AVAILABLE:
            fn("numba")  # JIT compile outside the timed region
            t_nb = _time(lambda: fn("numba"), args.repeats)
            ratio = f"{t_np / t_nb:7.2f}x"
            nb_txt = f"{t_nb * 1e3:9.1f}ms"
        else:
            nb_txt, ratio = "      n/a", "     n/a"
        print(f"{name:{name_w}}  {t_np * 1e3:9.1f}ms  {nb_txt}  {ratio}")

    if not NUMBA_AVAILABLE:
        print("\nnumba is not importable; only the numpy fallback was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
