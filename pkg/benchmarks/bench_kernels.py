"""Wall-clock comparison of the numba kernels and the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is run once per backend to warm caches (and JIT), then timed.
"""

import argparse
import time

import numpy as np

from bee_ident import _accel
from bee_ident.transport import TransportParams, simulate

CASES = {
    "plain": TransportParams(dt=0.1, t_end=40.0),
    "henry": TransportParams(da_a=0.005, da_d=0.05, dt=0.1, t_end=40.0),
    "langmuir": TransportParams(da_a=100.0, da_d=1.0, m_cap=1000.0, isotherm="langmuir",
                                dt=30.0, t_end=1800.0),
    "langmuir-fine": TransportParams(da_a=100.0, da_d=1.0, m_cap=1000.0, isotherm="langmuir",
                                     nx=352, ny=32, dt=30.0, t_end=1800.0),
}


def best_time(params, use_numba, repeat):
    simulate(params, use_numba=use_numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        simulate(params, use_numba=use_numba)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("cases", nargs="*", default=list(CASES))
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':<14} {'steps':>6} {'numba ms':>9} {'numpy ms':>9} {'speedup':>8} {'max |diff|':>11}")
    for name in args.cases:
        p = CASES[name]
        t_nb = best_time(p, True, args.repeat)
        t_np = best_time(p, False, args.repeat)
        diff = np.max(np.abs(simulate(p, use_numba=True)[0].values
                             - simulate(p, use_numba=False)[0].values))
        print(f"{name:<14} {p.n_steps:>6} {1e3 * t_nb:>9.1f} {1e3 * t_np:>9.1f} "
              f"{t_np / t_nb:>7.2f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
