import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spinbath import channels
from spinbath.channels import (
    QUBIT_PROBES,
    StatePair,
    SuperMap,
    antipodal_pairs,
    blp_measure,
    dephasing_maps,
    divide,
    exhaustive_pairs,
    to_kraus,
    tomograph,
    tomograph_engine,
)
from spinbath.dynamics import LindbladTerm, ResetModel, TimeGrid, evolve_factorized, evolve_lindblad, evolve_unitary
from spinbath.errors import GridError, NotCompletelyPositiveError, SingularMapError
from spinbath.qcore import ID2, SX, SY, SZ, random_density_matrix, random_hermitian, random_unitary

J = 2 * math.pi * 215
PERIOD = 2 * math.pi / J
seeds = st.integers(0, 2**32 - 1)


def chloroform_maps(grid):
    h = oracles.weak_chain(2, {(0, 1): J})

    def run(rho_s):
        return evolve_unitary(np.kron(rho_s, ID2 / 2), h, grid, keep=[0]).states

    return tomograph_engine(run, grid)


def random_kraus(rng, n_ops=3, d=2):
    """Kraus set from the blocks of a random isometry."""
    u = random_unitary(d * n_ops, rng)[:, :d]
    return [u[k * d : (k + 1) * d] for k in range(n_ops)]


def test_supermap_row_major_convention():
    rng = np.random.default_rng(0)
    u = random_unitary(2, rng)
    rho = random_density_matrix(2, rng)
    m = SuperMap.from_unitary(u)
    assert np.allclose(m.apply(rho), u @ rho @ u.conj().T, atol=1e-14)
    assert np.array_equal(channels.vec(rho), rho.reshape(-1))


def test_tomograph_unitary_system_dynamics():
    w = 2 * math.pi * 30
    grid = TimeGrid(0, 0.1, 20)

    def run(rho_s):
        return evolve_unitary(rho_s, 0.5 * w * SX, grid).states

    maps = tomograph_engine(run, grid)
    for m in maps:
        u = oracles.expm(-0.5j * w * SX * m.t)
        assert np.max(np.abs(m.matrix - np.kron(u, u.conj()))) < 1e-10


def test_tomograph_chloroform_bloch_action():
    grid = TimeGrid(0, 2 * PERIOD, 200)
    maps = chloroform_maps(grid)
    assert np.max(np.abs(maps[0].matrix - np.eye(4))) < 1e-10
    for m in maps[::7]:
        c = math.cos(J * m.t / 2)
        expect = np.diag([1.0, c, c, 1.0])
        assert np.max(np.abs(m.bloch_matrix() - expect)) < 1e-8


def test_tomograph_full_revival_period():
    # after 2 pi / J the coherence is -1: a pi rotation about z, not the identity
    grid = TimeGrid(0, 2 * PERIOD, 200)
    maps = chloroform_maps(grid)
    half = maps[100]
    assert half.t == pytest.approx(PERIOD)
    assert np.max(np.abs(half.matrix - SuperMap.from_unitary(SZ).matrix)) < 1e-8
    assert np.max(np.abs(maps[-1].matrix - np.eye(4))) < 1e-8


def test_tomograph_reproduces_held_out_states():
    rng = np.random.default_rng(7)
    grid = TimeGrid(0, 0.02, 40)
    reset = ResetModel((0.0, 40.0))
    h = oracles.weak_chain(2, {(0, 1): J})

    def run(rho_s):
        return evolve_lindblad(np.kron(rho_s, ID2 / 2), h, reset.lindblad_terms(), grid, keep=[0]).states

    maps = tomograph_engine(run, grid)
    for _ in range(3):
        rho = random_density_matrix(2, rng)
        rho = 0.5 * (rho + rho.conj().T)
        direct = run(rho)
        rebuilt = np.array([m.apply(rho) for m in maps])
        assert np.max(np.abs(direct - rebuilt)) < 1e-7


def test_tomograph_rank_deficient():
    inputs = [QUBIT_PROBES["0"], QUBIT_PROBES["1"], QUBIT_PROBES["+"], ID2 / 2]
    outputs = np.stack([np.stack([r]) for r in inputs])
    with pytest.raises(ValueError):
        tomograph(inputs, outputs)


def test_kraus_identity_and_dephasing():
    ident = to_kraus(SuperMap.identity())
    assert len(ident.kraus_ops) == 1
    k = ident.kraus_ops[0]
    assert np.allclose(k, k[0, 0] * np.eye(2), atol=1e-12) and abs(abs(k[0, 0]) - 1) < 1e-12
    full = dephasing_maps([0.0], [0.0])[0]
    deph = to_kraus(full)
    assert len(deph.kraus_ops) == 2
    assert np.allclose(deph.to_supermap().matrix, full.matrix, atol=1e-12)
    p0, p1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert np.allclose(SuperMap.from_kraus([p0, p1]).matrix, full.matrix)


def test_kraus_chloroform_weights():
    grid = TimeGrid(0, PERIOD, 40)
    for m in chloroform_maps(grid)[3:38:5]:
        ch = to_kraus(m)
        c = math.cos(J * m.t / 2)
        weights = sorted(np.trace(k.conj().T @ k).real / 2 for k in ch.kraus_ops)
        expect = sorted([(1 + c) / 2, (1 - c) / 2])
        assert np.allclose(weights, expect, atol=1e-8)
        assert ch.completeness_error() < 1e-10


@given(seeds, st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_kraus_round_trip(seed, n_ops):
    rng = np.random.default_rng(seed)
    ops = random_kraus(rng, n_ops)
    m = SuperMap.from_kraus(ops)
    ch = to_kraus(m)
    assert ch.completeness_error() < 1e-10
    assert np.max(np.abs(ch.to_supermap().matrix - m.matrix)) < 1e-8
    rho = random_density_matrix(2, rng)
    assert np.max(np.abs(ch.apply(rho) - m.apply(rho))) < 1e-8
    assert m.trace_error() < 1e-10


def test_kraus_rejects_non_cp():
    transpose = SuperMap(np.eye(4)[[0, 2, 1, 3]])
    with pytest.raises(NotCompletelyPositiveError) as info:
        to_kraus(transpose)
    assert info.value.min_eig == pytest.approx(-1.0)


def test_divide_semigroup():
    rng = np.random.default_rng(3)
    h = random_hermitian(2, rng)
    terms = [LindbladTerm(SZ, 2.0), LindbladTerm(np.array([[0, 1], [0, 0]]), 0.5)]
    from spinbath.dynamics import lindblad_generator

    gen = lindblad_generator(h, terms)
    phi = {t: SuperMap(oracles.expm(gen * t), t) for t in (0.0, 0.3, 0.7, 1.2)}
    for s in (0.0, 0.3, 0.7):
        for t in (0.7, 1.2):
            if t < s:
                continue
            inter, verdict = divide(phi[t], phi[s])
            assert np.max(np.abs(inter.matrix - oracles.expm(gen * (t - s)))) < 1e-9
            assert verdict.cp_divisible and verdict.p_divisible


def test_divide_equal_times_is_identity():
    m = dephasing_maps([0.4 + 0.2j], [0.5])[0]
    inter, verdict = divide(m, m)
    assert np.max(np.abs(inter.matrix - np.eye(4))) < 1e-12
    assert verdict.cp_divisible and verdict.p_divisible


def test_divide_rising_coherence_is_not_cp():
    grid = TimeGrid(0, PERIOD, 400)
    maps = chloroform_maps(grid)
    s_abs = np.abs(np.cos(J * grid.points / 2))
    rising = [k for k in range(1, 400) if s_abs[k + 1] > s_abs[k] and s_abs[k] > 1e-3]
    assert rising
    for k in rising[::10]:
        _, verdict = divide(maps[k + 1], maps[k])
        assert verdict.min_choi_eig < -1e-6
        assert verdict.cp_divisible is False


def test_divide_singular_map():
    dead = dephasing_maps([0.0], [0.1])[0]
    later = dephasing_maps([0.5], [0.2])[0]
    with pytest.raises(SingularMapError):
        divide(later, dead)
    inter, verdict = divide(later, dead, strict=False)
    assert inter is None and not verdict.defined


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_cp_implies_p(seed):
    rng = np.random.default_rng(seed)
    a = SuperMap.from_kraus(random_kraus(rng))
    b = SuperMap.from_kraus(random_kraus(rng))
    if b.condition() > 1e6:
        return
    _, verdict = divide(a, b)
    if verdict.cp_divisible:
        assert verdict.p_divisible


def test_blp_dephasing_semigroup_is_zero():
    t = np.linspace(0, 1, 201)
    maps = dephasing_maps(np.exp(-2 * 3.0 * t), t)
    res = blp_measure(maps)
    assert res.N == 0.0
    assert np.all(res.sigma <= 0)


def test_blp_chloroform_one_period():
    grid = TimeGrid(0, PERIOD, 400)
    maps = chloroform_maps(grid)
    res = blp_measure(maps)
    # analytic: |cos| falls to 0 then rises back to 1
    assert res.N >= 0.9
    assert res.N <= 1.0 + 1e-9
    assert abs(res.pair.p - 0.5) < 1e-15
    refined = blp_measure(maps, refine=True)
    assert refined.N >= res.N
    assert refined.N == pytest.approx(1.0, abs=5e-3)


def test_blp_exhaustive_mode_agrees():
    grid = TimeGrid(0, PERIOD, 200)
    maps = chloroform_maps(grid)
    default = blp_measure(maps)
    wide = blp_measure(maps, exhaustive_pairs(12))
    assert wide.N <= default.N + 0.05
    assert wide.N > 0.5


def test_blp_global_phase_invariance():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 101)
    maps, phased = [], []
    for tk in t:
        c = math.cos(6 * tk)
        ops = [math.sqrt((1 + c) / 2) * ID2, math.sqrt((1 - c) / 2) * SZ]
        maps.append(SuperMap.from_kraus(ops, tk))
        phase = np.exp(1j * rng.uniform(0, 2 * math.pi, size=2))
        phased.append(SuperMap.from_kraus([p * k for p, k in zip(phase, ops)], tk))
    a, b = blp_measure(maps), blp_measure(phased)
    assert a.N > 0
    assert a.N == pytest.approx(b.N, abs=1e-12)


def test_blp_tms_sweep_non_increasing():
    grid = TimeGrid(0, 1.6, 16000)
    values = []
    for rate in (0.0, 1 / 0.140, 1 / 0.070):
        rec = evolve_factorized(12, 2 * math.pi * 6.6, rate, grid)
        values.append(blp_measure(dephasing_maps(0.5 * rec.s / 0.5, grid.points)).N)
    assert values[0] >= values[1] >= values[2] >= 0
    assert values[0] >= 0.9
    assert values[2] < 1e-3


def test_blp_nyquist_detection():
    t = np.linspace(0, 1, 101)
    # just under Nyquist: centred differences flip sign nearly every sample
    c = 0.5 + 0.3 * np.cos(0.9 * math.pi * np.arange(101))
    with pytest.raises(GridError):
        blp_measure(dephasing_maps(c, t))


def test_blp_input_errors():
    t = np.array([0.0, 0.1, 0.3])
    with pytest.raises(GridError):
        blp_measure(dephasing_maps([1, 0.5, 0.2], t))
    with pytest.raises(ValueError):
        blp_measure(dephasing_maps([1, 0.5, 0.2], [0, 0.1, 0.2]), [])
    with pytest.raises(ValueError):
        StatePair(1.5, ID2 / 2, ID2 / 2)


def test_state_pair_delta():
    pair = antipodal_pairs(4)[0]
    assert np.allclose(pair.delta, 0.5 * (pair.rho1 - pair.rho2))
    assert np.trace(pair.rho1 @ pair.rho2).real == pytest.approx(0.0, abs=1e-12)


def test_exports(tmp_path):
    grid = TimeGrid(0, PERIOD, 40)
    maps = chloroform_maps(grid)
    path = channels.write_channels(maps[:3], tmp_path / "channel.json")
    data = json.loads(path.read_text())
    assert set(data[1]) == {"t", "superop", "kraus", "choi_min_eig"}
    assert len(data[1]["superop"]) == 4 and len(data[1]["superop"][0]) == 4
    back = np.array([[complex(*z) for z in row] for row in data[1]["superop"]])
    assert np.allclose(back, maps[1].matrix, atol=1e-15)
    res = blp_measure(maps)
    csv = res.to_csv(tmp_path / "blp.csv")
    assert csv.read_text().splitlines()[0] == "t,d_opt,sigma"
    summary = json.loads(res.write_summary(tmp_path / "blp.json").read_text())
    assert summary["N"] == res.N and summary["pair"]["p"] == 0.5
