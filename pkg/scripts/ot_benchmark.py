"""Compare Sinkhorn against the exact linear-programming solver.

    python3 scripts/ot_benchmark.py --instances 200 --eps-frac 0.01

Draws random problems with up to 10 points per side and uniform [0, 1)
costs, then reports relative cost errors, convergence and timings for a
few iteration budgets.
"""

import argparse
import time

import numpy as np

from ecg2text.ot_loss import exact_ot, sinkhorn


def instances(n_inst: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(n_inst):
        n, m = (int(k) for k in rng.integers(1, 11, size=2))
        mu, nu = rng.random(n) + 0.05, rng.random(m) + 0.05
        yield mu / mu.sum(), nu / nu.sum(), rng.random((n, m))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--seed", type=int, default=101)
    ap.add_argument("--eps-frac", type=float, default=0.01, help="eps as a fraction of mean C")
    ap.add_argument("--budgets", type=int, nargs="+", default=[500, 5000, 100_000])
    args = ap.parse_args()
    probs = list(instances(args.instances, args.seed))
    t0 = time.perf_counter()
    exact = [exact_ot(mu, nu, C).cost for mu, nu, C in probs]
    print(f"exact: {time.perf_counter() - t0:.2f}s")
    for budget in args.budgets:
        t0 = time.perf_counter()
        plans = [sinkhorn(mu, nu, C, args.eps_frac * C.mean(), max_iters=budget)
                 for mu, nu, C in probs]
        dt = time.perf_counter() - t0
        rel = np.array([abs(p.cost - e) / e for p, e in zip(plans, exact)])
        unconv = sum(not p.converged for p in plans)
        print(f"max_iters {budget:>7}: worst rel err {rel.max():.2e}, median {np.median(rel):.2e}, "
              f"unconverged {unconv}, {dt:.2f}s")


if __name__ == "__main__":
    main()
