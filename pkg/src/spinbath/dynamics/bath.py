"""Reset-augmented ancilla baths under the weak-coupling Hamiltonian.

Under ``H = sum J zz / 4`` with ancillas starting diagonal, an ancilla only
enters the system coherence through its z value. Resetting an ancilla at
Poisson times (rate r) to +1 with probability ``p_up`` turns each ``z_k`` into
a two-state Markov chain, so the coherence factor of one ancilla is
``1^T exp(M t) p0`` with ``M = Q + i diag(J/2, -J/2)`` and ``Q`` the chain's
rate matrix. The closed form below evaluates that 2x2 exponential exactly;
the Monte Carlo engine samples the same process trajectory by trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import EngineIncompatibleError
from ..molecule import Molecule, weak_diagonal, z_table
from ..qcore import SMINUS, SPLUS, DensityMatrix, _space_of, as_array, embed_array, partial_trace_array
from . import kernels
from .engines import LindbladTerm
from .records import FIDRecord, TimeGrid, Trajectory


@dataclass(frozen=True)
class ResetModel:
    """Per-site reset rates (1/s) and the distribution a reset draws from.

    ``p_up`` is the probability a reset leaves the spin at z = +1; the
    renormalized high-temperature target is the fair coin ``p_up = 0.5``,
    for which z flips at rate ``r/2``.
    """

    rates: tuple[float, ...]
    p_up: float = 0.5

    def __post_init__(self):
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        if any(not r >= 0 for r in rates):
            raise ValueError(f"reset rates must be >= 0, got {rates}")
        if not 0.0 <= self.p_up <= 1.0:
            raise ValueError("p_up must lie in [0, 1]")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def uniform(cls, rate: float, n_sites: int, p_up: float = 0.5) -> "ResetModel":
        return cls((rate,) * n_sites, p_up)

    @classmethod
    def from_molecule(cls, m: Molecule, include_system: bool = False, p_up: float = 0.5) -> "ResetModel":
        """Rates of the active sites in active-space order.

        The observed spin's own T1 is far longer than the FID windows of
        interest, so it is dropped unless ``include_system`` is set.
        """
        rates = [m.sites[k].reset_rate for k in m.active_sites]
        if not include_system:
            rates[m.active_system_index] = 0.0
        return cls(tuple(rates), p_up)

    def lindblad_terms(self, n_sites: int | None = None) -> list[LindbladTerm]:
        """Equivalent amplitude-damping pair per site with a nonzero rate."""
        n = len(self.rates) if n_sites is None else n_sites
        if n != len(self.rates):
            raise ValueError(f"reset model covers {len(self.rates)} sites, register has {n}")
        terms = []
        for k, r in enumerate(self.rates):
            if r == 0:
                continue
            # SPLUS = |0><1| raises to z = +1, SMINUS lowers to z = -1
            terms.append(LindbladTerm(embed_array(SPLUS, k, n), r * self.p_up))
            terms.append(LindbladTerm(embed_array(SMINUS, k, n), r * (1.0 - self.p_up)))
        return terms


def ancilla_factor(times, j: float, rate: float, p_up: float = 0.5, init_up: float = 0.5) -> np.ndarray:
    """Coherence factor contributed by one ancilla coupled with strength ``j``.

    Equals ``cos(j t / 2)`` without resets and decays to zero as the chain
    mixes. Uses the Cayley-Hamilton form of the 2x2 propagator with a series
    branch where ``|Omega t|`` is small.
    """
    t = np.asarray(times, dtype=float)
    r = float(rate)
    j = float(j)
    omega = np.sqrt(complex(0.25 * r * r - 0.25 * j * j, -0.5 * r * j * (1.0 - 2.0 * p_up)))
    if omega.real < 0:
        omega = -omega
    lead = 0.5 * r + 0.5j * j * (2.0 * init_up - 1.0)
    x = omega * t
    small = np.abs(x) < 1e-2
    big = ~small
    decay = np.exp(-0.5 * r * t)
    cosh = np.empty(t.shape, dtype=complex)
    sinc = np.empty(t.shape, dtype=complex)  # sinh(omega t) / omega
    up = np.exp((omega - 0.5 * r) * t[big])
    down = np.exp((-omega - 0.5 * r) * t[big])
    cosh[big] = 0.5 * (up + down)
    sinc[big] = 0.5 * (up - down) / omega if omega != 0 else 0.0
    x2 = x[small] ** 2
    cosh[small] = decay[small] * (1 + x2 / 2 * (1 + x2 / 12 * (1 + x2 / 30)))
    sinc[small] = decay[small] * t[small] * (1 + x2 / 6 * (1 + x2 / 20 * (1 + x2 / 42)))
    return cosh + lead * sinc


def evolve_factorized(
    ancilla_count: int,
    j: float | Sequence[float],
    reset: ResetModel | float | None,
    grid: TimeGrid,
    *,
    init_up: float | Sequence[float] = 0.5,
) -> FIDRecord:
    """FID of a spin coupled to independent ancillas: ``S(t) = prod_k f_k(t)``.

    ``j`` is one coupling for all ancillas or one per ancilla; ``reset`` is a
    :class:`ResetModel` over the ancillas, a single shared rate, or ``None``.
    ``init_up`` is the probability each ancilla starts at z = +1. The
    system starts with unit transverse magnetization along x.
    """
    if ancilla_count < 0:
        raise ValueError("ancilla_count must be >= 0")
    js = np.broadcast_to(np.asarray(j, dtype=float), (ancilla_count,))
    ups = np.broadcast_to(np.asarray(init_up, dtype=float), (ancilla_count,))
    if reset is None:
        reset = ResetModel.uniform(0.0, ancilla_count)
    elif not isinstance(reset, ResetModel):
        reset = ResetModel.uniform(float(reset), ancilla_count)
    if len(reset.rates) != ancilla_count:
        raise ValueError(f"reset model has {len(reset.rates)} rates for {ancilla_count} ancillas")
    times = grid.points
    s = np.ones(times.size, dtype=complex)
    # identical ancillas share one factor
    groups: dict[tuple[float, float, float], int] = {}
    for key in zip(js.tolist(), reset.rates, ups.tolist()):
        groups[key] = groups.get(key, 0) + 1
    for (jk, rk, uk), count in groups.items():
        if jk != 0:
            s = s * ancilla_factor(times, jk, rk, reset.p_up, uk) ** count
    return FIDRecord.from_signal(grid, s, meta={"engine": "factorized", "ancillas": ancilla_count})


def system_couplings(m: Molecule) -> list[tuple[int, float]]:
    """``(active position, J)`` for every active site coupled to the observed spin."""
    sys_pos = m.active_system_index
    out = []
    for p, q, J in m.active_couplings():
        if p == sys_pos:
            out.append((q, J))
        elif q == sys_pos:
            out.append((p, J))
    return out


def molecule_factorized(
    m: Molecule, grid: TimeGrid, reset: ResetModel | None = None, rho0=None
) -> FIDRecord:
    """Factorized FID of the observed spin of ``m``.

    Without ``rho0`` the system starts with unit x magnetization and the
    ancillas maximally mixed. A given ``rho0`` must factor into a system state
    times a diagonal ancilla state, either as a dense matrix or as a sequence
    of single-site states in active-site order; its ancilla populations set each
    ancilla's starting distribution. Couplings among ancillas commute with
    the weak-coupling Hamiltonian and never touch the system coherence, so
    only direct system couplings enter.
    """
    reset = ResetModel.from_molecule(m) if reset is None else reset
    pairs = system_couplings(m)
    sys_pos = m.active_system_index
    if rho0 is None:
        coherence = 0.5
        init_up = [0.5] * len(pairs)
        nz = 0.0
    else:
        if isinstance(rho0, (list, tuple)):
            rho_s, ups = _factor_initial_state(rho0, sys_pos)
        else:
            rho_s, ups = bath_initial_state(rho0, sys_pos)
        coherence = rho_s[1, 0]
        init_up = [ups[p] for p, _ in pairs]
        nz = (rho_s[0, 0] - rho_s[1, 1]).real
    rates = tuple(reset.rates[p] for p, _ in pairs)
    rec = evolve_factorized(
        len(pairs), [J for _, J in pairs], ResetModel(rates, reset.p_up), grid, init_up=init_up
    )
    s = 2.0 * coherence * rec.s
    return FIDRecord.from_signal(grid, s, nz, {"engine": "factorized", "molecule": m.name})


def _factor_initial_state(factors, system_site):
    mats = [np.asarray(as_array(f), dtype=complex) for f in factors]
    ups = {}
    for k, f in enumerate(mats):
        if f.shape != (2, 2):
            raise ValueError(f"site factor {k} has shape {f.shape}, expected (2, 2)")
        if k == system_site:
            continue
        if abs(f[0, 1]) > 1e-14 or abs(f[1, 0]) > 1e-14:
            raise EngineIncompatibleError("needs a diagonal ancilla state")
        ups[k] = float(f[0, 0].real)
    return mats[system_site], ups


def bath_initial_state(rho0, system_site: int) -> tuple[np.ndarray, dict[int, float]]:
    """System state and per-site up-probabilities of a product initial state.

    Raises :class:`EngineIncompatibleError` unless ``rho0`` is a system state
    times a diagonal state of the remaining sites.
    """
    r0 = as_array(rho0)
    n = _space_of(r0).n_sites
    rho_s = partial_trace_array(r0, n, [system_site])
    others = [k for k in range(n) if k != system_site]
    if others:
        rho_e = partial_trace_array(r0, n, others)
        product = _reorder_product(rho_s, rho_e, n, system_site)
        if np.max(np.abs(product - r0)) > 1e-10:
            raise EngineIncompatibleError("needs a product initial state of system and ancillas")
        if np.max(np.abs(rho_e - np.diag(np.diag(rho_e)))) > 1e-14:
            raise EngineIncompatibleError("needs a diagonal ancilla state")
    ups = {k: float(partial_trace_array(r0, n, [k])[0, 0].real) for k in others}
    return rho_s, ups


def walsh_coefficients(diag: np.ndarray, n_sites: int, site: int) -> tuple[float, dict[int, float], float]:
    """Split a diagonal Hamiltonian into terms touching ``site``.

    Returns ``(c_site, {k: c_site_k}, residual)`` where the Hamiltonian
    contains ``c_site z_site + sum_k c_site_k z_site z_k`` plus terms free of
    ``site``; ``residual`` is the largest leftover coefficient of a
    higher-order term involving ``site``.
    """
    z = z_table(n_sites).astype(float)
    dim = 2**n_sites
    zs = z[site]
    c_single = float(diag @ zs) / dim
    pairs = {}
    for k in range(n_sites):
        if k != site:
            c = float(diag @ (zs * z[k])) / dim
            if c != 0:
                pairs[k] = c
    part = c_single * zs
    for k, c in pairs.items():
        part = part + c * zs * z[k]
    sys_dep = diag - _drop_site(diag, n_sites, site)
    residual = float(np.max(np.abs(sys_dep - part)))
    return c_single, pairs, residual


def _drop_site(diag, n_sites, site):
    """Average of the diagonal over ``site``: the part independent of it."""
    t = diag.reshape((2,) * n_sites)
    mean = t.mean(axis=site, keepdims=True)
    return np.broadcast_to(mean, t.shape).reshape(-1)


@dataclass
class StochasticTrajectory(Trajectory):
    """Averaged reduced trajectory with the standard error of ``S(t)``."""

    s_stderr: np.ndarray | None = None
    n_traj: int = 0
    seed: int = 0


def evolve_reset_mc(
    rho0,
    h_weak,
    reset: ResetModel,
    grid: TimeGrid,
    n_traj: int,
    seed: int,
    system_site: int = 0,
) -> StochasticTrajectory:
    """Telegraph-process Monte Carlo for the reduced state of ``system_site``.

    ``h_weak`` (an operator or its diagonal) must be diagonal with at most
    two-body terms on the system site; ``rho0`` must factor into a system
    state times a diagonal ancilla state. Each trajectory samples independent
    reset histories and the system coherence is the average of
    ``exp(i phase)``. Results depend only on ``(seed, n_traj)``.
    """
    space = _space_of(rho0)
    n = space.n_sites
    r0 = as_array(rho0)
    hm = as_array(h_weak)
    diag = hm if hm.ndim == 1 else np.diag(hm)
    if hm.ndim == 2 and np.any(hm - np.diag(diag)):
        raise EngineIncompatibleError("reset-mc needs a diagonal (weak-coupling) Hamiltonian")
    if diag.shape[0] != space.dim:
        raise ValueError("Hamiltonian and state dimensions differ")
    if np.max(np.abs(diag.imag)) > 0:
        raise EngineIncompatibleError("Hamiltonian diagonal must be real")
    diag = diag.real.astype(float)
    if len(reset.rates) != n:
        raise ValueError(f"reset model has {len(reset.rates)} rates for {n} sites")
    if reset.rates[system_site] != 0:
        raise EngineIncompatibleError("reset-mc assumes the observed spin is not reset")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")

    c_single, pairs, residual = walsh_coefficients(diag, n, system_site)
    if residual > 1e-9 * max(1.0, float(np.max(np.abs(diag)))):
        raise EngineIncompatibleError("Hamiltonian has many-body terms on the system site")
    rho_s, ups = bath_initial_state(r0, system_site)
    ancillas = sorted(pairs)
    weights = np.array([2.0 * pairs[k] for k in ancillas])
    rates = np.array([reset.rates[k] for k in ancillas])
    init_up = np.array([ups[k] for k in ancillas])
    times = grid.points

    sum_c, sum_s, sq_c, sq_s = kernels.telegraph_phase_sums(
        times, weights, rates, float(reset.p_up), init_up, 2.0 * c_single, int(n_traj), int(seed)
    )
    mean = (sum_c + 1j * sum_s) / n_traj
    var_c = np.maximum(sq_c / n_traj - (sum_c / n_traj) ** 2, 0.0)
    var_s = np.maximum(sq_s / n_traj - (sum_s / n_traj) ** 2, 0.0)
    coh = rho_s[1, 0] * mean
    states = np.empty((times.size, 2, 2), dtype=complex)
    states[:, 0, 0] = rho_s[0, 0]
    states[:, 1, 1] = rho_s[1, 1]
    states[:, 1, 0] = coh
    states[:, 0, 1] = coh.conj()
    # S = 2 rho_10, so its error scales the phase-average error by 2|rho_10(0)|
    scale = 2.0 * abs(rho_s[1, 0]) / np.sqrt(n_traj)
    stderr = scale * (np.sqrt(var_c) + 1j * np.sqrt(var_s))
    sub = space.subspace([system_site])
    meta = {"engine": "reset-mc", "seed": int(seed), "n_traj": int(n_traj)}
    return StochasticTrajectory(grid, states, sub, meta, stderr, int(n_traj), int(seed))


def _reorder_product(rho_s, rho_e, n, site):
    """``rho_s (x) rho_e`` with the system factor moved back to ``site``."""
    full = np.kron(rho_s, rho_e)
    order = [site] + [k for k in range(n) if k != site]
    inv = np.argsort(order)
    t = full.reshape((2,) * (2 * n)).transpose(list(inv) + [n + i for i in inv])
    return t.reshape(2**n, 2**n)


def molecule_reset_mc(m: Molecule, rho0: DensityMatrix, grid: TimeGrid, n_traj: int, seed: int, reset=None):
    """Monte Carlo FID engine applied to a molecule's weak-coupling Hamiltonian."""
    reset = ResetModel.from_molecule(m) if reset is None else reset
    return evolve_reset_mc(rho0, weak_diagonal(m), reset, grid, n_traj, seed, m.active_system_index)
