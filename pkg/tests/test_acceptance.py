"""Acceptance criteria, one test each.

Every test records one ``criterion N: PASS|FAIL`` line with the measured
numbers and its runtime; the lines are printed together in an "acceptance
report" section at the end of the pytest run. Run the file directly to
execute just these checks.
"""
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_REPORT
from spinbath.channels import SuperMap, blp_measure, dephasing_maps, divide, to_kraus, tomograph, tomograph_engine
from spinbath.dynamics import (
    LindbladTerm,
    TimeGrid,
    detect_revivals,
    evolve_factorized,
    evolve_lindblad,
    evolve_unitary,
    first_revival_amplitude,
    lightcone,
    otoc,
    spectrum,
)
from spinbath.qcore import ID2, SX, SY, SZ, embed_array, random_density_matrix, random_hermitian, random_unitary
from spinbath.scenarios import load_scenario, prepare_factors, resolve_molecule, run, run_engine

J_CHCL3 = 2 * math.pi * 215
J_TMS = 2 * math.pi * 6.6
TMS_RATES = (0.0, 1 / 0.140, 1 / 0.070)


@contextmanager
def criterion(number, limit_s=None):
    """Time the body and print one report line whatever the outcome."""
    info = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        if limit_s is not None and elapsed >= limit_s:
            ok = False
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        budget = f" (limit {limit_s:g} s)" if limit_s is not None else ""
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  [{elapsed:.2f} s{budget}] {detail}"
        ACCEPTANCE_REPORT.append(line)
    if limit_s is not None:
        assert elapsed < limit_s, f"runtime {elapsed:.2f} s over the {limit_s} s limit"


def test_criterion_1_chloroform_fid():
    with criterion(1, limit_s=1.0) as info:
        cfg = load_scenario("chloroform")
        m = resolve_molecule(cfg)
        result = run_engine(cfg, m, prepare_factors(m, cfg.pulses))
        spect = spectrum(result.record)

        t = cfg.grid.points
        # brute force: exact 4x4 exponentials of the coupling Hamiltonian
        h = oracles.weak_chain(2, {(0, 1): J_CHCL3})
        plus = 0.5 * np.ones((2, 2), dtype=complex)
        states = oracles.unitary_states(np.kron(plus, oracles.I2 / 2), h, t)
        s_brute = 2 * oracles.reduced_first(states, 2)[:, 1, 0]
        dev_brute = float(np.max(np.abs(result.record.s - s_brute)))
        dev_cos = float(np.max(np.abs(result.record.s - np.cos(J_CHCL3 * t / 2))))
        info["max_dev_brute"] = f"{dev_brute:.1e}"
        info["max_dev_cos"] = f"{dev_cos:.1e}"
        assert t[-1] == pytest.approx(0.05)
        assert dev_brute < 1e-9 and dev_cos < 1e-9

        peaks = np.sort(spect.peak_frequencies(2))
        bin_hz = spect.freq_hz[1] - spect.freq_hz[0]
        info["peaks_hz"] = peaks.tolist()
        assert np.all(np.abs(peaks - np.array([-107.5, 107.5])) <= 0.5 * bin_hz)


def test_criterion_2_tms_revivals():
    with criterion(2, limit_s=1.0) as info:
        grid = TimeGrid(0, 1.6, 16000)
        rec = evolve_factorized(12, J_TMS, 0.0, grid)
        dev = float(np.max(np.abs(rec.s - np.cos(J_TMS * grid.points / 2) ** 12)))
        revivals = detect_revivals(grid.points, rec.s)
        info["max_dev"] = f"{dev:.1e}"
        info["revivals"] = len(revivals)
        assert dev < 1e-12
        assert len(revivals) >= 10


def test_criterion_3_crossover():
    with criterion(3, limit_s=30.0) as info:
        grid = TimeGrid(0, 1.6, 16000)
        amps, blps = [], []
        for rate in TMS_RATES:
            rec = evolve_factorized(12, J_TMS, rate, grid)
            amps.append(first_revival_amplitude(grid.points, rec.s))
            # the factorized engine's channel is pure dephasing with coherence factor S(t)
            blps.append(blp_measure(dephasing_maps(rec.s, grid.points)).N)
        info["first_revival"] = [f"{a:.3g}" for a in amps]
        info["N"] = [f"{n:.3g}" for n in blps]
        assert amps[0] > amps[1] > amps[2]
        assert amps[2] < 0.05
        assert blps[0] >= blps[1] >= blps[2]
        assert blps[0] >= 0.9
        assert blps[2] < 1e-3


def _qubit_lindblad_maps(gamma, grid, h=None, extra=()):
    h = np.zeros((2, 2), dtype=complex) if h is None else h
    terms = [LindbladTerm(SZ, gamma), *extra]

    def run_probe(rho_s):
        return evolve_lindblad(rho_s, h, terms, grid).states

    return tomograph_engine(run_probe, grid)


def test_criterion_4_divisibility_and_backflow():
    with criterion(4, limit_s=30.0) as info:
        base = load_scenario("chloroform-channel")
        # one coupling period without landing exactly on the zero of S
        cfg = replace(base, grid=TimeGrid(0, base.grid.t1, 399))
        grid = cfg.grid
        m = resolve_molecule(cfg)
        factors = prepare_factors(m, cfg.pulses)

        def run_probe(rho_s):
            probe = list(factors)
            probe[m.active_system_index] = rho_s
            return run_engine(cfg, m, probe).trajectory.states

        maps = tomograph_engine(run_probe, grid)
        s_abs = np.abs(run_engine(cfg, m, factors).record.s)
        rising = [k for k in range(grid.steps) if s_abs[k + 1] > s_abs[k]]
        worst = -np.inf
        for k in rising:
            _, verdict = divide(maps[k + 1], maps[k])
            worst = max(worst, verdict.min_choi_eig)
        info["rising_intervals"] = len(rising)
        info["max_min_choi"] = f"{worst:.2e}"
        assert rising and worst < -1e-6

        # Markovian side: constant rates give a semigroup on the system
        mgrid = TimeGrid(0, 0.5, 100)
        h = random_hermitian(2, np.random.default_rng(4), scale=10.0)
        lowering = np.array([[0, 1], [0, 0]], dtype=complex)
        cases = [
            _qubit_lindblad_maps(3.0, mgrid),
            _qubit_lindblad_maps(0.7, mgrid, h),
            _qubit_lindblad_maps(1.5, mgrid, h, [LindbladTerm(lowering, 2.0)]),
        ]
        worst_cp, worst_n = np.inf, 0.0
        for maps_m in cases:
            for k in range(mgrid.steps):
                for j in (k + 1, min(k + 17, mgrid.steps)):
                    _, verdict = divide(maps_m[j], maps_m[k])
                    worst_cp = min(worst_cp, verdict.min_choi_eig)
                    assert verdict.cp_divisible
            worst_n = max(worst_n, blp_measure(maps_m).N)
        info["lindblad_min_choi"] = f"{worst_cp:.1e}"
        info["lindblad_N"] = f"{worst_n:.1e}"
        assert worst_n <= 1e-6


def test_criterion_5_monte_carlo_vs_lindblad(tmp_path):
    with criterion(5, limit_s=60.0) as info:
        mc = run(load_scenario("chloroform-reset-mc"), tmp_path / "mc", n_traj=100_000, seed=7)
        lind = run(load_scenario("chloroform-reset"), tmp_path / "lind")
        a = np.loadtxt(tmp_path / "mc" / "fid.csv", delimiter=",", skiprows=1)
        b = np.loadtxt(tmp_path / "lind" / "fid.csv", delimiter=",", skiprows=1)
        dev = float(np.max(np.abs(a[:, 1:3] - b[:, 1:3])))
        info["points"] = len(a)
        info["max_dev"] = f"{dev:.2e}"
        assert mc.n_traj == 100_000 and mc.seed == 7 and lind.outputs
        assert len(a) == 500 and np.array_equal(a[:, 0], b[:, 0])
        assert dev < 1.5e-2


def _random_instance(rng):
    n = int(rng.integers(1, 5))
    d = 2**n
    if rng.random() < 0.5:
        h = random_hermitian(d, rng, scale=5.0)
    else:
        h = np.zeros((d, d), dtype=complex)
        for j in range(n):
            for k in range(j + 1, n):
                h = h + 0.25 * rng.normal(scale=20) * embed_array(SZ, j, n) @ embed_array(SZ, k, n)
    return n, h, random_density_matrix(d, rng)


def test_criterion_6_conservation():
    rng = np.random.default_rng(2024)
    worst = dict(trace=0.0, herm=0.0, spectrum=0.0, kraus=0.0, tomo=0.0)
    probes = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), 0.5 * np.ones((2, 2)), 0.5 * np.array([[1, -1j], [1j, 1]])]
    with criterion(6) as info:
        for _ in range(1000):
            n, h, rho = _random_instance(rng)
            grid = TimeGrid(0, float(rng.uniform(0.1, 1.0)), 8)
            u = evolve_unitary(rho, h, grid)
            ev0 = np.linalg.eigvalsh(rho)
            for state in u.states:
                worst["spectrum"] = max(worst["spectrum"], float(np.max(np.abs(np.linalg.eigvalsh(state) - ev0))))
            terms = [LindbladTerm(embed_array(SZ, k, n), float(rng.uniform(0, 2))) for k in range(n)]
            terms.append(LindbladTerm(embed_array(np.array([[0, 1], [0, 0]]), 0, n), float(rng.uniform(0, 2))))
            lind = evolve_lindblad(rho, h, terms, grid)
            for traj in (u, lind):
                worst["trace"] = max(worst["trace"], traj.trace_drift())
                worst["herm"] = max(worst["herm"], traj.hermiticity_error())

            kraus = [k for k in np.split(random_unitary(2 * 3, rng)[:, :2], 3)]
            m = SuperMap.from_kraus(kraus)
            worst["kraus"] = max(worst["kraus"], to_kraus(m).completeness_error())
            outputs = np.stack([np.stack([m.apply(p)]) for p in probes])
            rebuilt = tomograph(probes, outputs)[0]
            held_out = random_density_matrix(2, rng)
            worst["tomo"] = max(worst["tomo"], float(np.max(np.abs(rebuilt.apply(held_out) - m.apply(held_out)))))
        info.update({k: f"{v:.1e}" for k, v in worst.items()})
        assert worst["trace"] < 1e-8
        assert worst["herm"] < 1e-10
        assert worst["spectrum"] < 1e-9
        assert worst["kraus"] < 1e-10
        assert worst["tomo"] < 1e-7


def _pauli_string(rng, n):
    paulis = (ID2, SX, SY, SZ)
    idx = rng.integers(0, 4, size=n)
    if not idx.any():
        idx[rng.integers(n)] = 3
    out = paulis[idx[0]]
    for k in idx[1:]:
        out = np.kron(out, paulis[k])
    return out


def test_criterion_7_otoc():
    rng = np.random.default_rng(77)
    tau = np.linspace(0, 2.0, 41)
    worst, worst_conserved = 0.0, 0.0
    with criterion(7) as info:
        for _ in range(100):
            h = random_hermitian(8, rng, scale=3.0)
            w = random_unitary(8, rng) if rng.random() < 0.5 else _pauli_string(rng, 3)
            v = _pauli_string(rng, 3)
            rho = random_density_matrix(8, rng) if rng.random() < 0.5 else None
            worst = max(worst, otoc(h, w, v, tau, rho).path_mismatch)
        for _ in range(20):
            couplings = {(j, k): rng.normal(scale=20) for j in range(3) for k in range(j + 1, 3)}
            h = oracles.weak_chain(3, couplings)
            j, k = rng.choice(3, size=2, replace=False)
            res = otoc(h, oracles.site_op(SZ, j, 3), oracles.site_op(SZ, k, 3), tau)
            worst_conserved = max(worst_conserved, float(np.max(np.abs(res.F - 1))))
        info["max_path_mismatch"] = f"{worst:.1e}"
        info["conserved_max_dev"] = f"{worst_conserved:.1e}"
        assert worst < 1e-10
        assert worst_conserved < 1e-10


def test_criterion_8_lightcone(tmp_path):
    with criterion(8) as info:
        manifest = run(load_scenario("chain6-lab"), tmp_path, outputs=("lightcone",))
        rows = np.genfromtxt(tmp_path / "lightcone.csv", delimiter=",", skip_header=1)
        order = np.argsort(rows[:, 1], kind="stable")
        arrivals = rows[order, 2]
        info["arrivals_ms"] = [round(1e3 * float(a), 2) for a in arrivals]
        assert manifest.summary["lightcone_monotone"]
        assert not np.any(np.isnan(arrivals))
        assert np.all(np.diff(arrivals) >= 0)

        eps = 0.01
        j = 2 * math.pi * 10
        grid = TimeGrid(0, 0.05, 5000)
        # coupling-only pair: ||[sx_0(t), sx_1]|| = 2|sin(Jt/2)|
        table = lightcone(oracles.weak_chain(2, {(0, 1): j}), SX, 0, grid, probe_sites=[1], eps=eps)
        expect = 2 / j * math.asin(eps / 2)
        err = table.arrivals[0] - expect
        # isotropic pair: ||[sx_0(t), sx_1]|| = 2|sin(Jt)|
        iso = 0.25 * j * sum(np.kron(p, p) for p in (SX, SY, SZ))
        table_iso = lightcone(iso, SX, 0, grid, probe_sites=[1], eps=eps)
        err_iso = table_iso.arrivals[0] - math.asin(eps / 2) / j
        info["two_site_offset_steps"] = [round(err / grid.dt, 3), round(err_iso / grid.dt, 3)]
        assert 0 <= err <= grid.dt
        assert 0 <= err_iso <= grid.dt


def test_criterion_9_qualitative(tmp_path):
    with criterion(9) as info:
        run(load_scenario("dss-full"), tmp_path / "dss")
        d = np.loadtxt(tmp_path / "dss" / "fid.csv", delimiter=",", skiprows=1)
        t, s = d[:, 0], np.abs(d[:, 1] + 1j * d[:, 2])
        at_collapse = float(s[np.argmin(np.abs(t - 0.1))])
        revivals = [r for r in detect_revivals(t, s) if r[0] > 0.1]
        info["dss_abs_s_at_0.1s"] = f"{at_collapse:.2e}"
        info["dss_revival"] = revivals[:1]
        assert at_collapse < 0.1 and np.max(s[(t >= 0.1) & (t < 0.2)]) < 0.1
        assert revivals and abs(revivals[0][0] - 0.3) <= 0.1

        peaks = {}
        for name in ("transcrotonic-full", "transcrotonic-decoupled"):
            run(load_scenario(name), tmp_path / name)
            d = np.loadtxt(tmp_path / name / "fid.csv", delimiter=",", skiprows=1)
            a = np.abs(d[:, 1] + 1j * d[:, 2])
            below = np.nonzero(a < 0.01)[0]
            assert below.size, f"{name} never collapses"
            peaks[name] = float(np.max(a[below[0]:]))
        info["transcrotonic_post_collapse_max"] = {k.split("-")[1]: round(v, 3) for k, v in peaks.items()}
        assert peaks["transcrotonic-full"] < peaks["transcrotonic-decoupled"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
