"""Time the compiled kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--traj 2000] [--repeat 3]

Covers the telegraph Monte Carlo (chloroform with proton reset) and the
Lindblad integrator (four spins with dephasing). Each case is run once per
backend before timing so numba compilation is excluded, and the two
backends' outputs are checked against each other.
"""
import argparse
import os
import time

import numpy as np

from spinbath._accel import DISABLE_ENV, NUMBA_AVAILABLE
from spinbath.dynamics import LindbladTerm, TimeGrid, evolve_lindblad
from spinbath.qcore import SZ, embed_array, random_density_matrix, random_hermitian
from spinbath.scenarios import load_scenario, prepare_factors, resolve_molecule, run_engine


def reset_mc_case(n_traj):
    cfg = load_scenario("chloroform-reset-mc")
    m = resolve_molecule(cfg)
    factors = prepare_factors(m, cfg.pulses)
    return lambda: run_engine(cfg, m, factors, seed=7, n_traj=n_traj).record.s


def lindblad_case():
    rng = np.random.default_rng(1)
    n = 4
    h = random_hermitian(2**n, rng, scale=20.0)
    rho = random_density_matrix(2**n, rng)
    terms = [LindbladTerm(embed_array(SZ, k, n), 1.0) for k in range(n)]
    grid = TimeGrid(0, 1.0, 200)
    return lambda: evolve_lindblad(rho, h, terms, grid).states


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def run_backend(disabled, fn, repeat):
    old = os.environ.get(DISABLE_ENV)
    os.environ[DISABLE_ENV] = "1" if disabled else "0"
    try:
        fn()  # warm-up, includes compilation
        return timed(fn, repeat)
    finally:
        if old is None:
            os.environ.pop(DISABLE_ENV, None)
        else:
            os.environ[DISABLE_ENV] = old


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--traj", type=int, default=2000, help="Monte Carlo trajectories")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = [(f"reset-mc ({args.traj} traj, 500 pts)", reset_mc_case(args.traj)), ("lindblad (4 spins)", lindblad_case())]
    print(f"{'case':<32} {'numpy s':>10} {'numba s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases:
        t_np, out_np = run_backend(True, fn, args.repeat)
        t_nb, out_nb = run_backend(False, fn, args.repeat)
        diff = float(np.max(np.abs(np.asarray(out_np) - np.asarray(out_nb))))
        print(f"{name:<32} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>7.1f}x {diff:>11.1e}")


if __name__ == "__main__":
    main()
