"""Compare the numba-compiled kernels against their NumPy / pure-Python twins.

    python3 benchmarks/bench_kernels.py [--reps N] [--machines M] [--horizon T]

Both paths of each kernel are checked for agreement before timing.
"""

import argparse
import time

import numpy as np
from numba import njit

from whittlemaint import kernels, mdp
from whittlemaint.experiment import ScenarioConfig, Study, sample_scenario
from whittlemaint.policy import index_policy
from whittlemaint.sim import _fleet_arrays, _tie_uniforms, _uniforms


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_simulation(reps, machines, horizon, repeat):
    config = ScenarioConfig.default(Study.LARGE_SYSTEM, fleet_shape=(machines, 2, 25))
    fleet = sample_scenario(config, 0, config.cells[-1])
    pol = index_policy(fleet)
    score, elig = pol.tables([m.n_states for m in fleet.machines])
    pa, pf, K, C, cdf1, B, beta = _fleet_arrays(fleet)
    r = range(reps)
    u_op, u_int = _uniforms(0, r, horizon, machines)
    u_tie = _tie_uniforms(0, pol.seed, r, horizon, machines)
    states0 = np.zeros((reps, machines), dtype=np.int64)

    def runner(fn):
        out = (np.empty(reps), np.empty(reps, dtype=np.int64), np.empty(reps, dtype=np.int64))

        def go():
            fn(states0, score, elig, pa, pf, cdf1, K, C, B, beta, fleet.n_repairmen,
               u_op, u_int, u_tie, *out)
            return out
        return go

    compiled = runner(njit(cache=True)(kernels._simulate_loops))
    vectorised = runner(kernels.simulate_numpy)
    a, b = compiled(), vectorised()
    assert np.allclose(a[0], b[0], rtol=1e-12) and np.array_equal(a[1], b[1])
    return best_of(compiled, repeat), best_of(vectorised, repeat)


def bench_wcharge(repeat):
    config = ScenarioConfig.default(Study.LARGE_SYSTEM)
    spec = sample_scenario(config, 0, config.cells[0]).machines[0]
    K, C, ps, pa, pf, P1 = mdp._machine_arrays(spec)
    w = 500.0

    def runner(fn):
        def go():
            V = np.zeros(spec.n_states)
            fn(V, K, C, w, ps, pa, pf, spec.fail_cost, P1, spec.beta, 1.0, 1e-10, 10**7)
            return V
        return go

    compiled = runner(njit(cache=True)(kernels._wcharge_vi))
    python = runner(kernels._wcharge_vi)
    assert np.allclose(compiled(), python(), rtol=1e-12)
    return best_of(compiled, repeat), best_of(python, max(1, repeat // 3))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--machines", type=int, default=25)
    ap.add_argument("--horizon", type=int, default=520)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    t_nb, t_np = bench_simulation(args.reps, args.machines, args.horizon, args.repeat)
    print(f"simulate  {args.reps} reps x {args.machines} machines x {args.horizon} periods")
    print(f"  numba  {t_nb * 1e3:9.1f} ms")
    print(f"  numpy  {t_np * 1e3:9.1f} ms   ({t_np / t_nb:.1f}x)")

    t_nb, t_py = bench_wcharge(args.repeat)
    print("W-charge value iteration, 25 states, tol 1e-10")
    print(f"  numba  {t_nb * 1e3:9.2f} ms")
    print(f"  python {t_py * 1e3:9.2f} ms   ({t_py / t_nb:.0f}x)")


if __name__ == "__main__":
    main()
