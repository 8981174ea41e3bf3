#!/usr/bin/env python3
"""Benchmark the compiled integrator kernel against the pure-Python twin.

Times single solves, batched solves, and full insect log-likelihood
evaluations. Run after building the extension:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from evidest._ode import backend_name, rk45_py

try:
    from evidest._ode import _rk45_cy
except ImportError:
    _rk45_cy = None

PARAMS = np.array([2.41, 3.99, 0.74, 0.69, 0.16, 0.53, 0.0, 1.25, 0.0])
T_EVAL = np.linspace(0.0, 10.0, 41)


def time_it(fn, n_reps):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(n_reps):
        fn()
    return (time.perf_counter() - t0) / n_reps


def bench_solver(mod, label, n_reps):
    dt = time_it(lambda: mod.solve_insect(PARAMS, 10.0, T_EVAL, rtol=1e-6, atol=1e-8),
                 n_reps)
    print(f"  {label:8s} solve_insect (rtol 1e-6): {dt * 1e6:9.1f} us/solve")
    return dt


def bench_batch(mod, label, n_batch, n_reps):
    batch = np.tile(PARAMS, (n_batch, 1))
    batch[:, 0] *= np.linspace(0.9, 1.1, n_batch)
    dt = time_it(lambda: mod.solve_insect_batch(batch, 10.0, T_EVAL), n_reps)
    print(f"  {label:8s} batch of {n_batch}: {dt * 1e3:9.2f} ms  "
          f"({dt / n_batch * 1e6:6.1f} us/solve)")
    return dt


def bench_likelihood(n_evals):
    from evidest import lifestage

    mask = lifestage.MechanismMask.from_string("111010")
    data = lifestage.simulate_dataset(mask, seed=11)
    target = lifestage.insect_target(mask, data)
    rng = np.random.default_rng(0)
    thetas = target.prior.means + 0.05 * rng.standard_normal((n_evals, target.dim))
    t0 = time.perf_counter()
    lls = target.log_unnorm_batch(thetas)
    dt = time.perf_counter() - t0
    print(f"  active backend log-likelihood batch ({n_evals} evals): "
          f"{dt:6.2f} s ({dt / n_evals * 1e6:6.1f} us/eval, "
          f"{np.isfinite(lls).sum()} finite)")


def main():
    print(f"active backend: {backend_name()}")
    print("single solves:")
    dt_py = bench_solver(rk45_py, "python", 30)
    if _rk45_cy is not None:
        dt_cy = bench_solver(_rk45_cy, "cython", 2000)
        print(f"  speedup: {dt_py / dt_cy:.1f}x")
    print("batched solves:")
    bench_batch(rk45_py, "python", 200, 3)
    if _rk45_cy is not None:
        bench_batch(_rk45_cy, "cython", 200, 50)
    print("likelihood throughput:")
    bench_likelihood(20_000)


if __name__ == "__main__":
    main()
