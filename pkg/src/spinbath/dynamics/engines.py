"""Deterministic engines: exact unitary evolution and Lindblad integration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import PositivityError, StepSizeError
from ..qcore import _space_of, as_array, eigh_checked, partial_trace_array
from . import kernels
from .records import TimeGrid, Trajectory

# memory budget (complex entries) for one chunk of stacked states
_CHUNK_ENTRIES = 1 << 24

LINDBLAD_ATOL = 1e-9
LINDBLAD_RTOL = 1e-9
TRACE_STEP_TOL = 1e-10
NEGATIVE_EIG_TOL = -1e-6


def _check_dims(rho0, h):
    if as_array(rho0).shape != as_array(h).shape:
        raise ValueError(f"state {as_array(rho0).shape} and Hamiltonian {as_array(h).shape} dimensions differ")


def _is_diagonal(a: np.ndarray) -> bool:
    return not np.any(a - np.diag(np.diag(a)))


def evolve_unitary(rho0, h, grid: TimeGrid, keep: Sequence[int | str] | None = None) -> Trajectory:
    """Exact ``U(t) rho0 U(t)^dag`` on every grid point.

    A diagonal Hamiltonian takes a fast path that only multiplies matrix
    elements by phases. With ``keep`` the reduced trajectory on those sites is
    returned, which avoids materializing full states for large registers.
    """
    _check_dims(rho0, h)
    space = _space_of(rho0)
    r0 = as_array(rho0)
    hm = as_array(h)
    times = grid.points
    n = space.n_sites
    keep_idx = None if keep is None else sorted({space.index(k) for k in keep})

    if _is_diagonal(hm):
        eigh_checked(hm)  # Hermiticity check only
        energies = np.diag(hm).real
        if keep_idx is not None:
            states = _diagonal_reduced(r0, energies, times, n, keep_idx)
            return Trajectory(grid, states, space.subspace(keep_idx), {"engine": "unitary"})
        basis = np.eye(space.dim)
        coeffs = r0
    else:
        energies, basis = eigh_checked(hm)
        coeffs = basis.conj().T @ r0 @ basis

    d = space.dim
    out_d = d if keep_idx is None else 2 ** len(keep_idx)
    out = np.empty((times.size, out_d, out_d), dtype=complex)
    chunk = max(1, _CHUNK_ENTRIES // (d * d))
    gap = energies[:, None] - energies[None, :]
    for start in range(0, times.size, chunk):
        ts = times[start : start + chunk]
        block = coeffs[None] * np.exp(-1j * ts[:, None, None] * gap[None])
        block = basis @ block @ basis.conj().T
        block = 0.5 * (block + block.conj().transpose(0, 2, 1))
        if keep_idx is not None:
            block = partial_trace_array(block, n, keep_idx)
        out[start : start + chunk] = block
    sub = space if keep_idx is None else space.subspace(keep_idx)
    return Trajectory(grid, out, sub, {"engine": "unitary"})


def _diagonal_reduced(r0, energies, times, n, keep):
    """Reduced states under a diagonal Hamiltonian without full-state stacks."""
    drop = [k for k in range(n) if k not in keep]
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    order = keep + drop
    t = r0.reshape((2,) * (2 * n)).transpose(order + [n + k for k in order]).reshape(dk, dd, dk, dd)
    e = energies.reshape((2,) * n).transpose(order).reshape(dk, dd)
    env_diag = np.einsum("aebe->abe", t)  # rho0[(a,e),(b,e)]
    gap = e[:, None, :] - e[None, :, :]  # (dk, dk, dd)
    out = np.empty((times.size, dk, dk), dtype=complex)
    chunk = max(1, _CHUNK_ENTRIES // (dk * dk * dd))
    for start in range(0, times.size, chunk):
        ts = times[start : start + chunk]
        phase = np.exp(-1j * ts[:, None, None, None] * gap[None])
        block = np.einsum("abe,tabe->tab", env_diag, phase)
        out[start : start + chunk] = 0.5 * (block + block.conj().transpose(0, 2, 1))
    return out


@dataclass(frozen=True)
class LindbladTerm:
    """Jump operator ``a`` with a fixed rate or a rate function ``gamma(t)``."""

    a: np.ndarray
    gamma: float | Callable[[float], float]

    def __post_init__(self):
        object.__setattr__(self, "a", np.array(as_array(self.a), dtype=complex))
        if not callable(self.gamma):
            if not float(self.gamma) >= 0:
                raise ValueError(f"fixed Lindblad rate must be >= 0, got {self.gamma}")
            object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def time_dependent(self) -> bool:
        return callable(self.gamma)

    def rate(self, t: float) -> float:
        return float(self.gamma(t)) if callable(self.gamma) else self.gamma

    def sign_changes(self, times) -> np.ndarray:
        """Grid times just after which the rate changes sign."""
        g = np.array([self.rate(t) for t in times])
        flips = np.nonzero(np.sign(g[1:]) * np.sign(g[:-1]) < 0)[0]
        return np.asarray(times)[flips + 1]


def evolve_lindblad(
    rho0,
    h,
    terms: Sequence[LindbladTerm],
    grid: TimeGrid,
    *,
    keep: Sequence[int | str] | None = None,
    atol: float = LINDBLAD_ATOL,
    rtol: float = LINDBLAD_RTOL,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate ``drho/dt = -i[H, rho] + sum g (A rho A^dag - {A^dag A, rho}/2)``.

    Adaptive Dormand-Prince 5(4) stepping lands exactly on every grid point.
    ``atol``/``rtol`` bound the error per unit step, so they also bound the
    error accumulated over the whole grid.
    Constant rates run in the compiled kernel; any callable rate switches to
    the interpreted integrator that evaluates ``gamma(t)`` at each stage.
    Raises :class:`PositivityError` if a state acquires an eigenvalue below
    -1e-6 and :class:`StepSizeError` when the step size underflows.
    """
    _check_dims(rho0, h)
    space = _space_of(rho0)
    hm = as_array(h)
    eigh_checked(hm)
    r0 = np.array(as_array(rho0), dtype=complex)
    d = space.dim
    for term in terms:
        if term.a.shape != (d, d):
            raise ValueError(f"jump operator shape {term.a.shape} does not match dimension {d}")
    times = grid.points
    h0 = grid.dt / 4

    if any(term.time_dependent for term in terms):
        states = _dp45_python(hm, list(terms), r0, times, atol, rtol, h0, max_steps)
    else:
        jumps = np.stack([term.a for term in terms]) if terms else np.zeros((0, d, d), dtype=complex)
        gammas = np.array([term.gamma for term in terms], dtype=float)
        heff = hm - 0.5j * np.einsum("k,kji,kjl->il", gammas, jumps.conj(), jumps)
        jumps_dag = np.ascontiguousarray(jumps.conj().transpose(0, 2, 1))
        states, steps, status = kernels.dp45_constant(
            np.ascontiguousarray(heff),
            np.ascontiguousarray(heff.conj().T),
            jumps,
            jumps_dag,
            gammas,
            r0,
            times,
            atol,
            rtol,
            h0,
            max_steps,
            TRACE_STEP_TOL,
        )
        if status == kernels.STEP_UNDERFLOW:
            raise StepSizeError(f"step size underflow after {steps} steps")
        if status == kernels.MAX_STEPS:
            raise StepSizeError(f"exceeded {max_steps} steps")

    _check_positive(states, times)
    traj = Trajectory(grid, states, space, {"engine": "lindblad"})
    return traj.reduced(keep) if keep is not None else traj


def _check_positive(states, times):
    evals = np.linalg.eigvalsh(states)
    lmin = evals[:, 0]
    bad = np.nonzero(lmin < NEGATIVE_EIG_TOL)[0]
    if bad.size:
        k = bad[0]
        raise PositivityError(
            f"state at t={times[k]:.6g} s has eigenvalue {lmin[k]:.3g}; grid too coarse or rates invalid",
            float(lmin[k]),
        )


def _dp45_python(h, terms, rho0, times, atol, rtol, h0, max_steps):
    """Interpreted Dormand-Prince loop for time-dependent rates."""
    ops = [t.a for t in terms]
    ops_dag = [a.conj().T for a in ops]
    products = [ad @ a for a, ad in zip(ops, ops_dag)]

    def rhs(t, rho):
        out = -1j * (h @ rho - rho @ h)
        for term, a, ad, p in zip(terms, ops, ops_dag, products):
            g = term.rate(t)
            if g:
                out += g * (a @ rho @ ad - 0.5 * (p @ rho + rho @ p))
        return out

    A, B5, E, C = kernels.DP_A, kernels.DP_B5, kernels.DP_E, kernels._C
    out = np.empty((times.size,) + rho0.shape, dtype=complex)
    out[0] = rho0
    rho = rho0.copy()
    t = times[0]
    step = h0
    span = abs(times[-1] - times[0])
    h_min = 1e-14 * span
    n_steps = 0
    k = [None] * 7
    for g in range(1, times.size):
        target = times[g]
        while t < target:
            if n_steps >= max_steps:
                raise StepSizeError(f"exceeded {max_steps} steps")
            last = t + step >= target
            hs = target - t if last else step
            k[0] = rhs(t, rho)
            for s in range(1, 7):
                acc = rho + hs * sum(A[s, j] * k[j] for j in range(s) if A[s, j])
                k[s] = rhs(t + C[s] * hs, acc)
            new = rho + hs * sum(B5[s] * k[s] for s in range(7) if B5[s])
            err = hs * sum(E[s] * k[s] for s in range(7))
            e = float(np.max(np.abs(err) / (atol + rtol * np.maximum(np.abs(rho), np.abs(new))))) * (span / hs)
            n_steps += 1
            drift = abs(np.trace(new) - np.trace(rho))
            if e <= 1.0 and drift <= TRACE_STEP_TOL:
                rho = 0.5 * (new + new.conj().T)
                t = target if last else t + hs
                fac = 5.0 if e == 0 else min(5.0, max(0.2, 0.9 * e**-0.25))
                step = max(step, hs * fac) if last else hs * fac
            else:
                step = 0.5 * hs if e <= 1.0 else hs * max(0.2, 0.9 * e**-0.25)
                if step < h_min:
                    raise StepSizeError(f"step size underflow at t={t:.6g} s")
        out[g] = rho
    return out


def lindblad_generator(h, terms: Sequence[LindbladTerm], t: float = 0.0) -> np.ndarray:
    """Superoperator ``L`` acting on row-major vectorized density matrices."""
    hm = as_array(h)
    d = hm.shape[0]
    eye = np.eye(d)
    gen = -1j * (np.kron(hm, eye) - np.kron(eye, hm.T))
    for term in terms:
        a = term.a
        p = a.conj().T @ a
        gen += term.rate(t) * (np.kron(a, a.conj()) - 0.5 * (np.kron(p, eye) + np.kron(eye, p.T)))
    return gen

