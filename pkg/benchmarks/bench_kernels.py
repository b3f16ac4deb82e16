"""Compare the compiled link-evaluation kernel with the numpy fallback.

Times one dual evaluation (value, gradient, flows, curvature) and a full
Newton solve on random strongly connected networks of increasing size, for
every available backend, and checks that the backends agree.

    python3 benchmarks/bench_kernels.py [--sizes 1000 10000 100000] [--repeat 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from purc import Problem, SolverConfig, kernels, solve
from purc.datasets import random_strongly_connected
from purc.kernels import available_backends, get_backend
from purc.perturbation import entropy, entropy_like, piecewise_quadratic, quadratic


def make_problem(rng, n_links):
    n_nodes = max(4, n_links // 4)
    net = random_strongly_connected(rng, n_nodes, n_links)
    fams = [quadratic(), entropy(), entropy_like(), piecewise_quadratic()]
    perts = [fams[i] for i in rng.integers(0, 4, size=n_links)]
    return Problem.single_od(net, perts, rng.uniform(0.5, 3.0, size=n_links), 0, n_nodes - 1)


def time_eval(problem, backend, u, repeat):
    problem.evaluate(u, want_curv=True, backend=backend)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        problem.evaluate(u, want_curv=True, backend=backend)
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--solve", action="store_true", help="also time full Newton solves")
    ap.add_argument("--solve-max", type=int, default=10_000, help="largest network to solve (links)")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'links':>8} " + " ".join(f"{b + ' [ms]':>14}" for b in backends) + f" {'speedup':>9} {'max |diff|':>11}")
    for m in args.sizes:
        problem = make_problem(rng, m)
        u = rng.normal(scale=0.3, size=problem.n_potentials)
        times = {b: time_eval(problem, b, u, args.repeat) for b in backends}
        evs = [problem.evaluate(u, want_curv=True, backend=b) for b in backends]
        diff = max(float(np.max(np.abs(evs[0].grad - e.grad))) for e in evs)
        speed = times["numpy"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{m:>8} " + " ".join(f"{1e3 * times[b]:>14.3f}" for b in backends) + f" {speed:>9.2f} {diff:>11.2e}")
        if args.solve and m <= args.solve_max:
            for b in backends:
                saved = kernels.evaluate
                kernels.evaluate = get_backend(b)
                try:
                    t0 = time.perf_counter()
                    sol = solve(problem, SolverConfig(method="newton", grad_tol=1e-9))
                    dt = time.perf_counter() - t0
                finally:
                    kernels.evaluate = saved
                print(f"         newton solve [{b}]: {dt:.3f} s, {sol.report.iterations} iterations")


if __name__ == "__main__":
    main()
