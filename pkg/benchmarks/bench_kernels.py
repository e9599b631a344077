"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from coupledpower.gaussian import kronecker_generator, permuted_cholesky
from coupledpower.kernels import backends
from coupledpower.model import initial_state
from coupledpower.montecarlo import sample_terminal
from coupledpower.scenario import bundled_scenario, with_flow_bound
from coupledpower.model import capacities


def spot_args(n):
    s = with_flow_bound(bundled_scenario("table1_highdem_highfuel"), 4000.0)
    x = sample_terminal(s, n, seed=1).states
    ma, mb = s.market_a, s.market_b
    N = s.n_fuels
    return (
        np.ascontiguousarray(x[:, list(ma.fuel_ids)]), np.ascontiguousarray(x[:, list(mb.fuel_ids)]),
        np.ascontiguousarray(capacities(ma, s.maturity)), np.ascontiguousarray(capacities(mb, s.maturity)),
        np.ascontiguousarray(x[:, N]), np.ascontiguousarray(x[:, N + 1]),
        ma.alpha, ma.beta, mb.alpha, mb.beta, s.coupling.flow_min, s.coupling.flow_max,
    )


def genz_args(dim, count):
    rng = np.random.default_rng(dim)
    a = rng.normal(size=(dim, dim))
    cov = a @ a.T + 0.1 * np.eye(dim)
    sd = np.sqrt(np.diag(cov))
    lo = (rng.normal(size=dim) - 1.0) * sd
    hi = lo + rng.uniform(0.5, 3.0, size=dim) * sd
    corr = cov / np.outer(sd, sd)
    chol, lo_p, hi_p, rank, _ = permuted_cholesky(corr, lo / sd, hi / sd)
    shifts = np.ascontiguousarray(rng.random((12, dim - 1 if rank == dim else rank)))
    gen = kronecker_generator(shifts.shape[1])
    return (np.ascontiguousarray(chol), np.ascontiguousarray(lo_p), np.ascontiguousarray(hi_p), int(rank), gen,
            shifts, 1, count)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args()
    impls = backends()
    cases = [(f"batch_spot n={n}", "batch_spot", spot_args(n)) for n in (10_000, 1_000_000)]
    cases += [(f"genz_sums dim={d} pts=4096x12", "genz_sums", genz_args(d, 4096)) for d in (2, 4, 6)]
    names = sorted(impls)
    print(f"{'kernel':<32}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn, args in cases:
        t = {n: best_of(getattr(impls[n], fn), args, opts.repeat) for n in names}
        row = f"{label:<32}" + "".join(f"{t[n] * 1e3:>10.2f}ms" for n in names)
        if "compiled" in t:
            row += f"{t['python'] / t['compiled']:>11.2f}x"
        print(row)
    if "compiled" not in impls:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
