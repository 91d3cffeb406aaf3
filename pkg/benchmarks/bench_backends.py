"""Compare the compiled kernels with the pure-Python fallback.

Times the individual kernels on a 50-step nominal and full solves of the
built-in scenarios, then prints mean times and the speed-up.

    python benchmarks/bench_backends.py --repeats 20
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from cilqg import _backend, builtin_scenarios, solve


def timed(fn, repeats: int, warmup: int = 1) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(1e3 * (time.perf_counter() - t0))
    return statistics.fmean(samples), statistics.stdev(samples)


def kernel_cases(sc):
    """Kernel calls on the scenario's seed nominal, keyed by a short label."""
    U = np.ascontiguousarray(sc.initial_controls, dtype=float)
    p = sc.params
    L, tr = float(p.wheelbase), float(p.sampling_time)
    N = U.shape[0]
    Sw, Sv, S0 = (np.ascontiguousarray(a, dtype=float) for a in (p.process_noise_cov, p.measurement_noise_cov,
                                                                  sc.initial_cov))
    ref = np.ascontiguousarray(sc.reference, dtype=float)
    Gx, hx = np.zeros((N + 1, 0, 4)), np.zeros((N + 1, 0))
    Gu, hu = np.zeros((N, 0, 2)), np.zeros((N, 0))

    def cases(k):
        X = k.bicycle_rollout(sc.initial_mean, U, L, tr)
        return {
            "rollout": lambda: k.bicycle_rollout(sc.initial_mean, U, L, tr),
            "covariances": lambda: k.bicycle_covariances(X, U, S0, Sw, Sv, L, tr, 1),
            "inner_solve": lambda: k.inner_solve(X, U, ref, sc.Q, sc.R, sc.Qf, Gx, hx, Gu, hu, L, tr, 0, 1.0,
                                                 100, 1e-4, 0.0, 1e-6, 1e10, 10.0, 0.5, 0.5, 10),
        }

    return cases


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args(argv)
    if _backend.compiled_kernels is None:
        print("compiled kernels are not built; nothing to compare")
        return 1
    backends = {"compiled": _backend.get("compiled"), "python": _backend.get("python")}
    rows = []
    for name, sc in builtin_scenarios().items():
        make = kernel_cases(sc)
        per_backend = {b: make(k) for b, k in backends.items()}
        for label in per_backend["compiled"]:
            rows.append((name, label, *(timed(per_backend[b][label], args.repeats) for b in backends)))
        rows.append((name, "solve", *(timed(lambda b=b: solve(sc, backend=b), args.repeats) for b in backends)))
    print(f"{'scenario':<28} {'operation':<12} {'compiled [ms]':>14} {'python [ms]':>12} {'speed-up':>9}")
    for name, label, (c, _), (p, _) in rows:
        print(f"{name:<28} {label:<12} {c:>14.3f} {p:>12.3f} {p / c:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
