"""Dense operator algebra on small spin-1/2 registers.

Site 0 is always the leftmost tensor factor (big-endian): the computational
basis index of a register ``|b_0 b_1 ... b_{n-1}>`` is ``sum b_k 2**(n-1-k)``.
Every embedding and partial trace in the package relies on this convention.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, InvalidStateError, NotHermitianError

MAX_SITES = int(os.environ.get("SPINBATH_MAX_SITES", "13"))

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = -1e-9

ID2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SMINUS = np.array([[0, 0], [1, 0]], dtype=complex)
PAULI = {"x": SX, "y": SY, "z": SZ, "i": ID2}


def set_max_sites(n: int) -> int:
    """Change the dense-register cap; returns the previous value."""
    global MAX_SITES
    old, MAX_SITES = MAX_SITES, int(n)
    return old


def _check_capacity(n_sites: int) -> None:
    if n_sites > MAX_SITES:
        raise CapacityError(
            f"{n_sites} sites exceeds the dense cap of {MAX_SITES} "
            f"({2**n_sites}-dim); raise SPINBATH_MAX_SITES or use a factorized engine"
        )


@dataclass(frozen=True)
class SpinSpace:
    """Tensor-product space of ``n_sites`` spin-1/2 sites."""

    n_sites: int
    site_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("a spin space needs at least one site")
        _check_capacity(self.n_sites)
        labels = tuple(self.site_labels) or tuple(f"s{k}" for k in range(self.n_sites))
        if len(labels) != self.n_sites:
            raise ValueError("one label per site required")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate site labels: {labels}")
        object.__setattr__(self, "site_labels", labels)

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    def index(self, site: int | str) -> int:
        """Resolve a site given as an index or a label."""
        if isinstance(site, str):
            try:
                return self.site_labels.index(site)
            except ValueError:
                raise IndexError(f"no site labelled {site!r} in {self.site_labels}") from None
        site = int(site)
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site {site} out of range for {self.n_sites} sites")
        return site

    def subspace(self, sites: Iterable[int | str]) -> "SpinSpace":
        idx = sorted({self.index(s) for s in sites})
        return SpinSpace(len(idx), tuple(self.site_labels[k] for k in idx))

    @classmethod
    def for_dim(cls, dim: int) -> "SpinSpace":
        n = int(round(np.log2(dim)))
        if dim < 2 or 2**n != dim:
            raise ValueError(f"dimension {dim} is not a power of two")
        return cls(n)


class Operator:
    """Dense complex matrix bound to a :class:`SpinSpace`."""

    __slots__ = ("space", "data", "factors")
    __array_priority__ = 100

    def __init__(self, data, space: SpinSpace | None = None):
        arr = np.array(data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"operator must be square, got shape {arr.shape}")
        if space is None:
            space = SpinSpace.for_dim(arr.shape[0])
        if arr.shape[0] != space.dim:
            raise ValueError(f"matrix dim {arr.shape[0]} does not match space dim {space.dim}")
        arr.setflags(write=False)
        self.space = space
        self.data = arr
        # Kronecker factors when built by tensor_product, so nested products
        # are always evaluated left to right and agree bit for bit
        self.factors = None

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}(n_sites={self.space.n_sites}, dim={self.space.dim})"

    @property
    def dim(self) -> int:
        return self.space.dim

    def dag(self) -> "Operator":
        return Operator(self.data.conj().T, self.space)

    def _other(self, other):
        return other.data if isinstance(other, Operator) else other

    def __add__(self, other):
        return Operator(self.data + self._other(other), self.space)

    __radd__ = __add__

    def __sub__(self, other):
        return Operator(self.data - self._other(other), self.space)

    def __neg__(self):
        return Operator(-self.data, self.space)

    def __mul__(self, scalar):
        return Operator(self.data * scalar, self.space)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.data / scalar, self.space)

    def __matmul__(self, other):
        return Operator(self.data @ self._other(other), self.space)

    def __rmatmul__(self, other):
        return Operator(other @ self.data, self.space)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermiticity_error() <= tol

    def expect(self, rho) -> complex:
        return complex(np.trace(self.data @ np.asarray(rho)))


class DensityMatrix(Operator):
    """Operator satisfying the density-matrix invariants.

    Construction validates Hermiticity (1e-10), unit trace (1e-10) and a
    minimum eigenvalue of at least -1e-9. Pass ``check=False`` only for
    states produced by code that already enforces these.
    """

    __slots__ = ()

    def __init__(self, data, space: SpinSpace | None = None, *, check: bool = True):
        super().__init__(data, space)
        if check:
            validate_state(self.data)

    @classmethod
    def maximally_mixed(cls, space: SpinSpace | int) -> "DensityMatrix":
        if isinstance(space, int):
            space = SpinSpace(space)
        return cls(np.eye(space.dim) / space.dim, space)

    @classmethod
    def from_pure(cls, psi, space: SpinSpace | None = None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), space)

    @classmethod
    def from_bloch(cls, r: Sequence[float]) -> "DensityMatrix":
        """Single-qubit state ``(I + r.sigma)/2``."""
        x, y, z = r
        return cls(0.5 * (ID2 + x * SX + y * SY + z * SZ))

    def bloch(self) -> np.ndarray:
        if self.space.n_sites != 1:
            raise ValueError("Bloch vector only defined for one site")
        return np.real([np.trace(self.data @ p) for p in (SX, SY, SZ)])


def validate_state(rho: np.ndarray, positivity_tol: float = POSITIVITY_TOL) -> None:
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > HERMITIAN_TOL:
        raise InvalidStateError(f"not Hermitian (max |rho - rho^dag| = {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"trace {tr:.12g} != 1")
    lmin = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    if lmin < positivity_tol:
        raise InvalidStateError(f"negative eigenvalue {lmin:.3g}")


def as_array(op) -> np.ndarray:
    return op.data if isinstance(op, Operator) else np.asarray(op, dtype=complex)


def _space_of(op) -> SpinSpace:
    return op.space if isinstance(op, Operator) else SpinSpace.for_dim(np.shape(op)[0])


def tensor_product(a, b) -> Operator:
    """Kronecker product ``a (x) b``; ``a`` occupies the leading sites."""
    sa, sb = _space_of(a), _space_of(b)
    _check_capacity(sa.n_sites + sb.n_sites)
    la, lb = sa.site_labels, sb.site_labels
    if set(la) & set(lb):
        la = tuple(f"s{k}" for k in range(sa.n_sites))
        lb = tuple(f"s{k}" for k in range(sa.n_sites, sa.n_sites + sb.n_sites))
    space = SpinSpace(sa.n_sites + sb.n_sites, la + lb)
    factors = _factors_of(a) + _factors_of(b)
    out = Operator(kron_all(factors), space)
    out.factors = factors
    return out


def _factors_of(op) -> tuple:
    if isinstance(op, Operator) and op.factors is not None:
        return op.factors
    return (as_array(op),)


def kron_all(ops: Sequence) -> np.ndarray:
    ops = [as_array(op) for op in ops]
    if not ops:
        return np.ones((1, 1), dtype=complex)
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def embed(op, site: int | str, space: SpinSpace) -> Operator:
    """Place a single-site operator on ``site`` with identities elsewhere."""
    k = space.index(site)
    single = as_array(op)
    if single.shape != (2, 2):
        raise ValueError("embed expects a 2x2 single-site operator")
    left = np.eye(2**k)
    right = np.eye(2 ** (space.n_sites - k - 1))
    return Operator(np.kron(np.kron(left, single), right), space)


def embed_array(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2**site), op), np.eye(2 ** (n_sites - site - 1)))


def partial_trace_array(rho: np.ndarray, n_sites: int, keep: Sequence[int]) -> np.ndarray:
    """Partial trace on raw arrays; leading batch axes are preserved."""
    keep = sorted(set(keep))
    drop = [k for k in range(n_sites) if k not in keep]
    batch = rho.shape[:-2]
    nb = len(batch)
    t = rho.reshape(batch + (2,) * (2 * n_sites))
    row = [nb + k for k in keep] + [nb + k for k in drop]
    col = [nb + n_sites + k for k in keep] + [nb + n_sites + k for k in drop]
    t = t.transpose(list(range(nb)) + row + col)
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.reshape(batch + (dk, dd, dk, dd))
    return np.trace(t, axis1=nb + 1, axis2=nb + 3)


def partial_trace(rho, keep: Iterable[int | str]) -> DensityMatrix | Operator:
    """Trace out every site not in ``keep``; kept sites stay in ascending order."""
    space = _space_of(rho)
    keep = sorted({space.index(k) for k in keep})
    if not keep:
        raise ValueError("keep set must be nonempty")
    red = partial_trace_array(as_array(rho), space.n_sites, keep)
    sub = space.subspace(keep)
    if isinstance(rho, DensityMatrix):
        return DensityMatrix(red, sub, check=False)
    return Operator(red, sub)


def hermitian_expm(h, t: float) -> Operator:
    """``exp(-i h t)`` via the eigendecomposition of Hermitian ``h``."""
    space = _space_of(h)
    return Operator(propagators(h, [t])[0], space)


def eigh_checked(h) -> tuple[np.ndarray, np.ndarray]:
    arr = as_array(h)
    scale = max(1.0, float(np.max(np.abs(arr))))
    err = float(np.max(np.abs(arr - arr.conj().T)))
    if err > HERMITIAN_TOL * scale:
        raise NotHermitianError(f"matrix is not Hermitian (max deviation {err:.3g})")
    return np.linalg.eigh(0.5 * (arr + arr.conj().T))


def propagators(h, times) -> np.ndarray:
    """Stack of ``exp(-i h t)`` for each ``t`` in ``times``; shape (n_t, d, d)."""
    evals, vecs = eigh_checked(h)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    phases = np.exp(-1j * np.outer(times, evals))
    return (vecs[None] * phases[:, None, :]) @ vecs.conj().T


def commutator(a, b) -> np.ndarray:
    a, b = as_array(a), as_array(b)
    return a @ b - b @ a


def trace_norm(a) -> float:
    return float(np.sum(np.linalg.svd(as_array(a), compute_uv=False)))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b``."""
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 0.5 * trace_norm(a - b)


def operator_norm(op) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(as_array(op), 2))


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-ensemble mixed state of the given rank (full rank by default)."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (g + g.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))
