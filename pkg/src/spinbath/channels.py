"""Reduced-dynamics maps: tomography, Kraus form, divisibility and the BLP measure.

Superoperators act on row-major vectorized matrices, ``vec(X)[i*d + j] =
X[i, j]``, so ``X -> A X B`` is ``kron(A, B.T)``. Kraus operators satisfy
``sum K^dag K = I`` (trace preservation).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics.records import FLOAT_FMT, TimeGrid
from .errors import GridError, NotCompletelyPositiveError, SingularMapError
from .qcore import ID2, SX, SY, SZ, as_array, trace_norm

CONDITION_LIMIT = 1e12
KRAUS_CUTOFF = 1e-10
CP_TOL = -1e-9
COMPLETENESS_TOL = 1e-10
NONCP_LEVEL = -1e-6


def vec(x) -> np.ndarray:
    return np.asarray(x).reshape(-1)


def unvec(v, d: int) -> np.ndarray:
    return np.asarray(v).reshape(d, d)


@dataclass
class SuperMap:
    """Linear map on ``d x d`` matrices stored as a ``d^2 x d^2`` matrix."""

    matrix: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        n = self.matrix.shape[0]
        d = math.isqrt(n)
        if self.matrix.shape != (n, n) or d * d != n:
            raise ValueError(f"superoperator must be d^2 x d^2, got {self.matrix.shape}")

    @property
    def dim(self) -> int:
        return math.isqrt(self.matrix.shape[0])

    @classmethod
    def identity(cls, d: int = 2, t: float = 0.0) -> "SuperMap":
        return cls(np.eye(d * d), t)

    @classmethod
    def from_unitary(cls, u, t: float = 0.0) -> "SuperMap":
        u = as_array(u)
        return cls(np.kron(u, u.conj()), t)

    @classmethod
    def from_kraus(cls, ops, t: float = 0.0) -> "SuperMap":
        return cls(sum(np.kron(k, k.conj()) for k in map(as_array, ops)), t)

    def apply(self, rho) -> np.ndarray:
        d = self.dim
        return unvec(self.matrix @ vec(as_array(rho)), d)

    def compose(self, other: "SuperMap") -> "SuperMap":
        """``self o other`` (``other`` acts first)."""
        return SuperMap(self.matrix @ other.matrix, self.t)

    def choi(self) -> np.ndarray:
        """``J = sum_ij |i><j| (x) Phi(|i><j|)``."""
        d = self.dim
        # matrix[(a,b),(i,j)] = <a|Phi(|i><j|)|b>; J[(i,a),(j,b)]
        t = self.matrix.reshape(d, d, d, d)
        return t.transpose(2, 0, 3, 1).reshape(d * d, d * d)

    def min_choi_eig(self) -> float:
        j = self.choi()
        return float(np.linalg.eigvalsh(0.5 * (j + j.conj().T))[0])

    def trace_error(self) -> float:
        """Deviation from trace preservation on the matrix-unit basis."""
        d = self.dim
        tr_row = vec(np.eye(d)).conj() @ self.matrix
        return float(np.max(np.abs(tr_row - vec(np.eye(d)))))

    def condition(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def bloch_matrix(self) -> np.ndarray:
        """Affine Bloch action ``r -> T r + c`` as a 4x4 (qubit maps only)."""
        if self.dim != 2:
            raise ValueError("Bloch form needs a qubit map")
        basis = [ID2, SX, SY, SZ]
        out = np.empty((4, 4))
        for i, p in enumerate(basis):
            for j, q in enumerate(basis):
                out[i, j] = 0.5 * np.trace(p @ self.apply(q)).real
        return out


@dataclass
class KrausChannel:
    kraus_ops: list[np.ndarray]
    t: float = 0.0

    def completeness_error(self) -> float:
        d = self.kraus_ops[0].shape[0]
        total = sum(k.conj().T @ k for k in self.kraus_ops)
        return float(np.max(np.abs(total - np.eye(d))))

    def apply(self, rho) -> np.ndarray:
        r = as_array(rho)
        return sum(k @ r @ k.conj().T for k in self.kraus_ops)

    def to_supermap(self) -> SuperMap:
        return SuperMap.from_kraus(self.kraus_ops, self.t)


def to_kraus(m: SuperMap, cutoff: float = KRAUS_CUTOFF) -> KrausChannel:
    """Kraus operators from the eigendecomposition of the Choi matrix."""
    d = m.dim
    j = m.choi()
    evals, vecs = np.linalg.eigh(0.5 * (j + j.conj().T))
    if evals[0] < CP_TOL:
        raise NotCompletelyPositiveError(f"map at t={m.t:g} is not completely positive (Choi eigenvalue {evals[0]:.3g})", float(evals[0]))
    ops = []
    for lam, v in zip(evals[::-1], vecs.T[::-1]):
        if lam <= cutoff:
            break
        # v[(i, a)] = <a|K|i> up to sqrt(lam)
        ops.append(math.sqrt(lam) * v.reshape(d, d).T)
    return KrausChannel(ops, m.t)


# -- tomography -----------------------------------------------------------------

QUBIT_PROBES = {
    "0": np.array([[1, 0], [0, 0]], dtype=complex),
    "1": np.array([[0, 0], [0, 1]], dtype=complex),
    "+": 0.5 * np.array([[1, 1], [1, 1]], dtype=complex),
    "+i": 0.5 * np.array([[1, -1j], [1j, 1]], dtype=complex),
}


def tomograph(inputs: Sequence, outputs: np.ndarray, times=None) -> list[SuperMap]:
    """Least-squares maps reproducing ``outputs[k, t] = Phi_t(inputs[k])``.

    ``inputs`` are ``d x d`` system states; ``outputs`` has shape
    ``(n_inputs, n_t, d, d)``. The inputs must span the operator space.
    """
    x = np.stack([vec(as_array(r)) for r in inputs], axis=1)  # (d^2, n_in)
    d2 = x.shape[0]
    if np.linalg.matrix_rank(x, tol=1e-10) < d2:
        raise ValueError(f"input states span rank {np.linalg.matrix_rank(x, tol=1e-10)} < {d2}; need a spanning set")
    outputs = np.asarray(outputs)
    n_in, n_t = outputs.shape[:2]
    if n_in != x.shape[1]:
        raise ValueError("one output trajectory per input state required")
    y = outputs.reshape(n_in, n_t, d2).transpose(1, 2, 0)  # (n_t, d^2, n_in)
    pinv = np.linalg.pinv(x)
    times = np.zeros(n_t) if times is None else np.asarray(times)
    return [SuperMap(y[k] @ pinv, float(times[k])) for k in range(n_t)]


def tomograph_engine(run: Callable[[np.ndarray], np.ndarray], grid: TimeGrid, inputs=None) -> list[SuperMap]:
    """Tomography driven by ``run(rho_s0) -> (n_t, d, d)`` reduced trajectories."""
    inputs = list(QUBIT_PROBES.values()) if inputs is None else list(inputs)
    outputs = np.stack([run(r) for r in inputs])
    return tomograph(inputs, outputs, grid.points)


def dephasing_maps(coherence, times) -> list[SuperMap]:
    """Qubit maps that multiply ``rho_10`` by ``coherence(t)`` and keep populations."""
    out = []
    for c, t in zip(np.asarray(coherence, dtype=complex), times):
        out.append(SuperMap(np.diag([1.0, np.conj(c), c, 1.0]), float(t)))
    return out


# -- divisibility ------------------------------------------------------------------


@dataclass
class DivisibilityVerdict:
    interval: tuple[float, float]
    p_divisible: bool | None
    cp_divisible: bool | None
    min_choi_eig: float
    min_output_eig: float
    condition: float = 1.0

    @property
    def defined(self) -> bool:
        return self.cp_divisible is not None

    def as_dict(self) -> dict:
        return {
            "s": self.interval[0],
            "t": self.interval[1],
            "p_divisible": self.p_divisible,
            "cp_divisible": self.cp_divisible,
            "min_choi_eig": self.min_choi_eig,
            "min_output_eig": self.min_output_eig,
            "condition": self.condition,
        }


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - math.sqrt(5.0)) * k
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def _bloch_states(directions) -> np.ndarray:
    x, y, z = directions.T
    return 0.5 * (ID2[None] + x[:, None, None] * SX + y[:, None, None] * SY + z[:, None, None] * SZ)


def min_output_eig(m: SuperMap, n_dirs: int = 200) -> float:
    """Smallest output eigenvalue over a sphere of pure qubit inputs."""
    states = _bloch_states(fibonacci_sphere(n_dirs))
    outs = np.einsum("ij,nj->ni", m.matrix, states.reshape(len(states), -1)).reshape(states.shape)
    outs = 0.5 * (outs + outs.conj().transpose(0, 2, 1))
    return float(np.min(np.linalg.eigvalsh(outs)[:, 0]))


def divide(phi_t: SuperMap, phi_s: SuperMap, *, strict: bool = True, n_dirs: int = 200):
    """``Phi_{t,s} = Phi_t Phi_s^{-1}`` and its divisibility verdict.

    With ``strict`` a near-singular ``Phi_s`` (condition number at or above
    1e12) raises :class:`SingularMapError`; otherwise the verdict is returned
    as undefined with no intermediate map.
    """
    cond = phi_s.condition()
    if not cond < CONDITION_LIMIT:
        if strict:
            raise SingularMapError(f"Phi_s at s={phi_s.t:g} is singular (condition {cond:.3g})", cond)
        return None, DivisibilityVerdict((phi_s.t, phi_t.t), None, None, math.nan, math.nan, cond)
    inter = SuperMap(phi_t.matrix @ np.linalg.inv(phi_s.matrix), phi_t.t)
    choi_min = inter.min_choi_eig()
    out_min = min_output_eig(inter, n_dirs)
    cp = choi_min >= CP_TOL
    p = out_min >= CP_TOL
    return inter, DivisibilityVerdict((phi_s.t, phi_t.t), p, cp, choi_min, out_min, cond)


# -- BLP measure ------------------------------------------------------------------------


@dataclass
class StatePair:
    p: float
    rho1: np.ndarray
    rho2: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.rho1 = as_array(self.rho1)
        self.rho2 = as_array(self.rho2)

    @property
    def delta(self) -> np.ndarray:
        return self.p * self.rho1 - (1.0 - self.p) * self.rho2


def antipodal_pairs(n_dirs: int = 62) -> list[StatePair]:
    """Equal-weight pairs of orthogonal pure qubit states along sphere directions."""
    dirs = fibonacci_sphere(n_dirs)
    plus, minus = _bloch_states(dirs), _bloch_states(-dirs)
    return [StatePair(0.5, a, b) for a, b in zip(plus, minus)]


def exhaustive_pairs(n_dirs: int = 12, weights=(0.25, 0.5, 0.75)) -> list[StatePair]:
    """All ordered pairs of distinct pure states on a small grid, several weights."""
    dirs = fibonacci_sphere(n_dirs)
    states = _bloch_states(dirs)
    out = []
    for p in weights:
        for i in range(n_dirs):
            for j in range(n_dirs):
                if i != j:
                    out.append(StatePair(p, states[i], states[j]))
    return out


@dataclass
class BLPResult:
    N: float
    pair: StatePair
    pair_index: int
    times: np.ndarray
    distinguishability: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        table = np.column_stack([self.times, self.distinguishability, self.sigma])
        np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header="t,d_opt,sigma", comments="")
        return path

    def summary(self) -> dict:
        return {
            "N": self.N,
            "pair": {
                "p": self.pair.p,
                "bloch1": _bloch(self.pair.rho1),
                "bloch2": _bloch(self.pair.rho2),
            },
        }

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def _bloch(rho) -> list[float]:
    return [float(np.trace(rho @ p).real) for p in (SX, SY, SZ)]


def _uniform_dt(times) -> float:
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise GridError("BLP measure needs at least three grid points")
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise GridError("BLP measure needs a uniform grid")
    return float(dts[0])


def _nyquist_alternation(sigma, scale) -> bool:
    """True when sigma flips sign at every sample over a stretch (grid too coarse)."""
    big = np.abs(sigma) > 1e-6 * max(scale, 1e-300)
    sgn = np.sign(sigma) * big
    flips = (sgn[1:] * sgn[:-1]) < 0
    run = 0
    for f in flips:
        run = run + 1 if f else 0
        if run >= 4:
            return True
    return False


def _pair_curves(stack, pairs, dt):
    d = math.isqrt(stack.shape[1])
    deltas = np.stack([vec(p.delta) for p in pairs], axis=1)  # (d^2, n_pairs)
    evolved = (stack @ deltas).transpose(0, 2, 1).reshape(stack.shape[0], len(pairs), d, d)
    evolved = 0.5 * (evolved + evolved.conj().transpose(0, 1, 3, 2))
    dist = np.abs(np.linalg.eigvalsh(evolved)).sum(axis=-1)  # trace norm of Hermitian Delta(t)
    sigma = np.gradient(dist, dt, axis=0)
    values = np.trapezoid(np.maximum(sigma, 0.0), dx=dt, axis=0)
    return dist, sigma, values


def _direction_pair(theta, phi) -> StatePair:
    n = np.array([[math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]])
    return StatePair(0.5, _bloch_states(n)[0], _bloch_states(-n)[0])


def _refine(stack, dt, pair, value, step=0.2, min_step=1e-3):
    """Pattern search over the direction of an antipodal pair."""
    x, y, z = _bloch(pair.rho1)
    theta, phi = math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)
    best = (value, pair)
    while step >= min_step:
        moves = [(theta + dt_, phi + dp) for dt_, dp in ((step, 0), (-step, 0), (0, step), (0, -step))]
        cands = [_direction_pair(t, f) for t, f in moves]
        _, _, vals = _pair_curves(stack, cands, dt)
        k = int(np.argmax(vals))
        if vals[k] > best[0] + 1e-15:
            best = (float(vals[k]), cands[k])
            theta, phi = moves[k]
        else:
            step /= 2
    return best[1]


def blp_measure(
    maps: Sequence[SuperMap],
    pairs: Sequence[StatePair] | None = None,
    times=None,
    *,
    refine: bool = False,
) -> BLPResult:
    """``N = max_pairs  integral of max(sigma, 0) dt`` with ``sigma = d/dt ||Phi_t Delta||_1``.

    ``sigma`` uses centred differences on the native grid (one-sided at the
    ends) and the positive part is integrated with the trapezoid rule. The
    default search set is :func:`antipodal_pairs`; ``refine`` follows the
    best antipodal pair with a local search over its direction. Raises
    :class:`GridError` if the optimal pair's ``sigma`` alternates sign
    sample to sample.
    """
    if pairs is None:
        pairs = antipodal_pairs()
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pair search set is empty")
    times = np.array([m.t for m in maps]) if times is None else np.asarray(times, dtype=float)
    dt = _uniform_dt(times)
    stack = np.stack([m.matrix for m in maps])  # (n_t, d^2, d^2)
    dist, sigma, values = _pair_curves(stack, pairs, dt)
    best = int(np.argmax(values))
    pair = pairs[best]
    if refine and maps[0].dim == 2 and pair.p == 0.5:
        better = _refine(stack, dt, pair, float(values[best]))
        if better is not pair:
            dist1, sigma1, values1 = _pair_curves(stack, [better], dt)
            if values1[0] > values[best]:
                pair, best = better, -1
                dist, sigma, values = dist1, sigma1, values1
    col = 0 if best == -1 else best
    if _nyquist_alternation(sigma[:, col], float(np.max(np.abs(dist[:, col]))) / dt):
        raise GridError("sigma(t) alternates sign at the sampling rate; refine the time grid")
    return BLPResult(float(values[col]), pair, best, times, dist[:, col], sigma[:, col])


def trace_distance_trace(maps: Sequence[SuperMap], pair: StatePair) -> np.ndarray:
    """``||Phi_t Delta||_1`` for one pair along a map trajectory."""
    return np.array([trace_norm(m.apply(pair.delta)) for m in maps])


# -- export ---------------------------------------------------------------------------


def channel_record(m: SuperMap, with_kraus: bool = True) -> dict:
    rec = {
        "t": m.t,
        "superop": [[[float(z.real), float(z.imag)] for z in row] for row in m.matrix],
        "choi_min_eig": m.min_choi_eig(),
    }
    kraus = []
    if with_kraus:
        try:
            kraus = [[[[float(z.real), float(z.imag)] for z in row] for row in k] for k in to_kraus(m).kraus_ops]
        except NotCompletelyPositiveError:
            kraus = []
    rec["kraus"] = kraus
    return rec


def write_channels(maps: Sequence[SuperMap], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([channel_record(m) for m in maps]) + "\n")
    return path
