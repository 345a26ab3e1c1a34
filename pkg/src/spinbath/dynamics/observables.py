"""Observables: FID, spectrum, OTOC, commutator light cone, revival detection."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DisconnectedSiteError, GridError
from ..qcore import SX, _space_of, as_array, eigh_checked, embed_array, propagators
from .records import FLOAT_FMT, FIDRecord, TimeGrid, Trajectory

COLLAPSE_LEVEL = 0.01
REVIVAL_LEVEL = 0.02
LIGHTCONE_EPS = 0.01


def fid(traj: Trajectory) -> FIDRecord:
    """``S = Tr((sx + i sy) rho_1) = 2 rho_1[1, 0]`` from single-site states."""
    states = np.asarray(traj.states)
    if states.shape[-2:] != (2, 2):
        raise ValueError(f"fid needs single-site states, got shape {states.shape[-2:]}")
    s = 2.0 * states[:, 1, 0]
    nz = (states[:, 0, 0] - states[:, 1, 1]).real
    meta = dict(traj.meta)
    return FIDRecord.from_signal(traj.grid, s, nz, meta)


@dataclass
class Spectrum:
    """Discrete Fourier transform of an FID on a centred Hz axis."""

    freq_hz: np.ndarray
    amp: np.ndarray
    n_samples: int

    def peak_frequencies(self, count: int = 1) -> np.ndarray:
        order = np.argsort(-np.abs(self.amp), kind="stable")
        return self.freq_hz[order[:count]]

    def to_csv(self, path) -> Path:
        path = Path(path)
        table = np.column_stack([self.freq_hz, self.amp.real, self.amp.imag, np.abs(self.amp)])
        np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header="freq_hz,re,im,abs", comments="")
        return path


def spectrum(f: FIDRecord, zero_pad: int | None = None) -> Spectrum:
    """Unnormalized DFT ``A_k = sum_n S_n exp(-2 pi i k n / N)``.

    The grid's closing point is dropped when it would double-count a period,
    so ``N`` equals ``grid.steps``. Parseval: ``sum |S|^2 = sum |A|^2 / N``.
    ``zero_pad`` extends the sample count for a finer frequency axis.
    """
    times = f.times
    dts = np.diff(times)
    if not np.allclose(dts, f.grid.dt, rtol=1e-9, atol=0):
        raise GridError("spectrum needs a uniform grid")
    s = np.asarray(f.s)[:-1]
    n = s.size if zero_pad is None else max(int(zero_pad), s.size)
    amp = np.fft.fftshift(np.fft.fft(s, n))
    freq = np.fft.fftshift(np.fft.fftfreq(n, f.grid.dt))
    return Spectrum(freq, amp, s.size)


# -- revivals ----------------------------------------------------------------


def detect_revivals(times, s, collapse: float = COLLAPSE_LEVEL, threshold: float = REVIVAL_LEVEL):
    """Revivals as ``(t, |S|)`` pairs.

    Detection is armed once ``|S|`` drops below ``collapse``; the next local
    maximum above ``threshold`` is a revival and disarms it until the signal
    collapses again.
    """
    a = np.abs(np.asarray(s))
    times = np.asarray(times)
    out = []
    armed = False
    for k in range(a.size):
        if a[k] < collapse:
            armed = True
            continue
        if armed and 0 < k < a.size - 1 and a[k] >= a[k - 1] and a[k] > a[k + 1] and a[k] > threshold:
            out.append((float(times[k]), float(a[k])))
            armed = False
    return out


def first_revival_amplitude(times, s, collapse: float = COLLAPSE_LEVEL) -> float:
    """Height of the first local maximum of ``|S|`` after it falls below ``collapse``.

    No amplitude threshold applies, so vanishing revivals still give a number;
    a signal that never collapses or never turns upward again gives 0.
    """
    a = np.abs(np.asarray(s))
    below = np.nonzero(a < collapse)[0]
    if below.size == 0:
        return 0.0
    for k in range(below[0] + 1, a.size - 1):
        if a[k] > a[k - 1] and a[k] >= a[k + 1]:
            return float(a[k])
    return 0.0


# -- OTOC ---------------------------------------------------------------------


@dataclass
class OTOCResult:
    tau: np.ndarray
    F: np.ndarray
    F_split: np.ndarray
    commutator_sq: np.ndarray

    @property
    def path_mismatch(self) -> float:
        return float(np.max(np.abs(self.F - self.F_split)))


def _is_hermitian(a, tol=1e-12):
    return np.max(np.abs(a - a.conj().T)) <= tol


def _is_unitary(a, tol=1e-10):
    return np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0]))) <= tol


def otoc(h, w, v, tau, rho=None) -> OTOCResult:
    """``F(tau) = Tr(rho W_tau^dag V^dag W_tau V)`` with ``W_tau = U^dag W U``.

    ``F_split`` evaluates the same quantity as ``Tr(rho O_B^dag O_F)`` from
    ``O_F = W U V`` and ``O_B = U V U^dag W U``. ``commutator_sq`` is
    ``Tr(rho |[W_tau, V]|^2)`` computed directly; for unitary ``W`` and ``V``
    it equals ``2 (1 - Re F)``. The default state is maximally mixed.
    """
    hm, wm, vm = as_array(h), as_array(w), as_array(v)
    d = hm.shape[0]
    if wm.shape != (d, d) or vm.shape != (d, d):
        raise ValueError("W, V and H must share a dimension")
    if not (_is_unitary(wm) and _is_unitary(vm)):
        warnings.warn("OTOC operators are not unitary; 2(1 - Re F) no longer equals the commutator norm", stacklevel=2)
    r = np.eye(d) / d if rho is None else as_array(rho)
    if r.shape != (d, d):
        raise ValueError("state dimension does not match")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    us = propagators(hm, taus)
    uds = us.conj().transpose(0, 2, 1)
    w_tau = uds @ wm @ us
    wd_tau = w_tau.conj().transpose(0, 2, 1)
    vd = vm.conj().T
    direct = _trace_with(r, wd_tau @ vd @ w_tau @ vm)
    o_f = wm @ us @ vm
    o_b = us @ vm @ uds @ wm @ us
    split = _trace_with(r, o_b.conj().transpose(0, 2, 1) @ o_f)
    comm = w_tau @ vm - vm @ w_tau
    comm_sq = _trace_with(r, comm.conj().transpose(0, 2, 1) @ comm).real
    return OTOCResult(taus, direct, split, comm_sq)


def _trace_with(rho, stack):
    """``Tr(rho X_t)`` for every matrix in a stack."""
    return np.sum(stack * rho.T[None], axis=(1, 2))


# -- light cone -----------------------------------------------------------------


def coupling_graph(h, n_sites: int) -> dict[int, set[int]]:
    """Sites ``j, k`` are adjacent when ``h`` has a term acting on both.

    The two-site part is isolated with the averaging projectors
    ``P_j h = I_j/2 (x) Tr_j h``: ``h - P_j h - P_k h + P_j P_k h``.
    """
    hm = as_array(h)
    adj = {k: set() for k in range(n_sites)}
    tol = 1e-12 * max(1.0, float(np.max(np.abs(hm))))
    for j in range(n_sites):
        pj = _average_out(hm, n_sites, j)
        for k in range(j + 1, n_sites):
            pk = _average_out(hm, n_sites, k)
            pjk = _average_out(pj, n_sites, k)
            if np.max(np.abs(hm - pj - pk + pjk)) > tol:
                adj[j].add(k)
                adj[k].add(j)
    return adj


def _average_out(op, n, site):
    t = op.reshape((2,) * (2 * n))
    tr = np.trace(t, axis1=site, axis2=n + site) / 2.0
    tr = np.expand_dims(np.expand_dims(tr, site), n + site)
    eye = np.eye(2).reshape([2 if a in (site, n + site) else 1 for a in range(2 * n)])
    return (tr * eye).reshape(op.shape)


def graph_distances(adj: dict[int, set[int]], source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        k = queue.popleft()
        for nb in sorted(adj[k]):
            if nb not in dist:
                dist[nb] = dist[k] + 1
                queue.append(nb)
    return dist


@dataclass
class LightconeTable:
    grid: TimeGrid
    source_site: int
    probe_sites: list[int]
    distances: list[int]
    norms: np.ndarray  # (n_probe, n_t)
    arrivals: list[float | None]
    eps: float = LIGHTCONE_EPS
    meta: dict = field(default_factory=dict)

    def is_monotone(self) -> bool:
        """Arrival times never decrease with graph distance (ties allowed)."""
        pairs = sorted(zip(self.distances, self.arrivals), key=lambda p: p[0])
        last = -np.inf
        for d, t in pairs:
            t = np.inf if t is None else t
            if t < last:
                return False
            last = t
        return True

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["probe_site,distance,arrival_s"]
        for p, d, t in zip(self.probe_sites, self.distances, self.arrivals):
            lines.append(f"{p},{d},{'' if t is None else format(t, '.17g')}")
        path.write_text("\n".join(lines) + "\n")
        return path


def lightcone(
    h,
    source_op,
    source_site: int,
    grid: TimeGrid,
    *,
    probe_op=SX,
    probe_sites=None,
    eps: float = LIGHTCONE_EPS,
) -> LightconeTable:
    """Operator-norm growth of ``[O_1(t), O_2]`` and first arrival above ``eps``.

    ``O_1(t) = U^dag O_1 U`` is the evolved source operator on ``source_site``;
    ``O_2`` is ``probe_op`` on each probe site. Graph distances come from the
    couplings present in ``h``. A probe that is not connected to the source
    raises :class:`DisconnectedSiteError`.
    """
    space = _space_of(h)
    n = space.n_sites
    hm = as_array(h)
    src = space.index(source_site)
    probes = list(range(n)) if probe_sites is None else [space.index(p) for p in probe_sites]
    dist = graph_distances(coupling_graph(hm, n), src)
    for p in probes:
        if p not in dist:
            raise DisconnectedSiteError(f"probe site {p} is not connected to source site {src}")
    times = grid.points
    # work in the eigenbasis of h, where evolution is elementwise phases
    energies, basis = eigh_checked(hm)
    o1 = basis.conj().T @ embed_array(as_array(source_op), src, n) @ basis
    gap = energies[:, None] - energies[None, :]
    o1_t = o1[None] * np.exp(1j * times[:, None, None] * gap[None])
    o2_local = as_array(probe_op)
    hermitian = _is_hermitian(as_array(source_op)) and _is_hermitian(o2_local)
    norms = np.empty((len(probes), times.size))
    arrivals = []
    for i, p in enumerate(probes):
        o2 = basis.conj().T @ embed_array(o2_local, p, n) @ basis
        comm = o1_t @ o2 - o2 @ o1_t
        if hermitian:
            # i[A, B] is Hermitian for Hermitian A, B
            ev = np.linalg.eigvalsh(1j * comm)
            norms[i] = np.maximum(-ev[:, 0], ev[:, -1])
        else:
            norms[i] = np.linalg.norm(comm, ord=2, axis=(1, 2))
        hit = np.nonzero(norms[i] > eps)[0]
        arrivals.append(float(times[hit[0]]) if hit.size else None)
    return LightconeTable(grid, src, probes, [dist[p] for p in probes], norms, arrivals, eps)
