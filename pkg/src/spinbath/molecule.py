"""Molecules as small networks of coupled spin-1/2 nuclei.

All frequencies are angular (rad/s). Molecule definition files carry Hz and
seconds; :func:`load_molecule` multiplies by 2*pi on the way in.
"""
from __future__ import annotations

import fnmatch
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .qcore import (
    ID2,
    SX,
    SY,
    DensityMatrix,
    Operator,
    SpinSpace,
    _check_capacity,
    as_array,
    kron_all,
)

TWO_PI = 2.0 * math.pi
WEAK_COUPLING_RATIO = 10.0
MOLECULE_DIR_ENV = "SPINBATH_MOLECULES"


class WeakCouplingWarning(UserWarning):
    """A heteronuclear pair is treated in the weak-coupling limit without |dw| > 10|J|."""


@dataclass(frozen=True)
class SpinSite:
    label: str
    species: str
    omega0: float = 0.0
    reset_rate: float = 0.0

    def __post_init__(self):
        if not self.reset_rate >= 0:
            raise ValueError(f"site {self.label}: reset_rate must be >= 0")

    @property
    def t1(self) -> float:
        return math.inf if self.reset_rate == 0 else 1.0 / self.reset_rate


def coupling_table(entries: Mapping[tuple[int, int], float] | Iterable) -> Mapping[tuple[int, int], float]:
    """Normalize couplings to a read-only ``{(j, k): J}`` map with ``j < k``."""
    items = entries.items() if isinstance(entries, Mapping) else entries
    table: dict[tuple[int, int], float] = {}
    for (j, k), value in items:
        j, k = int(j), int(k)
        if j == k:
            raise ValueError(f"self-coupling on site {j}")
        key = (min(j, k), max(j, k))
        if key in table and table[key] != value:
            raise ValueError(f"conflicting couplings for pair {key}")
        if value != 0:
            table[key] = float(value)
    return MappingProxyType(dict(sorted(table.items())))


@dataclass(frozen=True)
class Molecule:
    name: str
    sites: tuple[SpinSite, ...]
    couplings: Mapping[tuple[int, int], float] = field(default_factory=dict)
    system_site: int = 0
    decoupled: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "couplings", coupling_table(self.couplings))
        object.__setattr__(self, "decoupled", frozenset(int(d) for d in self.decoupled))
        n = len(self.sites)
        labels = [s.label for s in self.sites]
        if len(set(labels)) != n:
            raise ValueError(f"{self.name}: duplicate site labels")
        for j, k in self.couplings:
            if k >= n:
                raise ValueError(f"{self.name}: coupling ({j}, {k}) references a missing site")
        if not 0 <= self.system_site < n:
            raise ValueError(f"{self.name}: system_site out of range")
        if self.system_site in self.decoupled:
            raise ValueError(f"{self.name}: the observed site cannot be decoupled")
        if any(not 0 <= d < n for d in self.decoupled):
            raise ValueError(f"{self.name}: decoupled index out of range")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.sites)

    @property
    def active_sites(self) -> list[int]:
        return [k for k in range(self.n_sites) if k not in self.decoupled]

    @property
    def system_label(self) -> str:
        return self.sites[self.system_site].label

    @property
    def active_system_index(self) -> int:
        return self.active_sites.index(self.system_site)

    def space(self) -> SpinSpace:
        active = self.active_sites
        return SpinSpace(len(active), tuple(self.sites[k].label for k in active))

    def index(self, label: str | int) -> int:
        if isinstance(label, str):
            try:
                return self.labels.index(label)
            except ValueError:
                raise IndexError(f"{self.name} has no site {label!r}") from None
        return int(label)

    def coupling(self, j: int, k: int) -> float:
        return self.couplings.get((min(j, k), max(j, k)), 0.0)

    def active_couplings(self) -> list[tuple[int, int, float]]:
        """Couplings between active sites, as active-space positions."""
        pos = {k: p for p, k in enumerate(self.active_sites)}
        return [(pos[j], pos[k], J) for (j, k), J in self.couplings.items() if j in pos and k in pos]

    def decouple(self, patterns: Iterable[str | int]) -> "Molecule":
        """Return a copy with the matching sites added to the decoupling mask."""
        idx = set(self.decoupled)
        for p in patterns:
            idx.update(_match_sites(self, p))
        return replace(self, decoupled=frozenset(idx))

    def with_reset_rates(self, rates: Mapping[str | int, float]) -> "Molecule":
        sites = list(self.sites)
        for key, rate in rates.items():
            for k in _match_sites(self, key):
                sites[k] = replace(sites[k], reset_rate=float(rate))
        return replace(self, sites=tuple(sites))

    def reset_rates(self) -> np.ndarray:
        return np.array([s.reset_rate for s in self.sites])

    def weak_coupling_violations(self) -> list[tuple[str, str]]:
        """Active heteronuclear pairs where |w_j - w_k| <= 10 |J|."""
        bad = []
        active = set(self.active_sites)
        for (j, k), J in self.couplings.items():
            if j not in active or k not in active:
                continue
            a, b = self.sites[j], self.sites[k]
            if a.species != b.species and abs(a.omega0 - b.omega0) <= WEAK_COUPLING_RATIO * abs(J):
                bad.append((a.label, b.label))
        return bad


def _match_sites(m: Molecule, pattern: str | int) -> list[int]:
    if isinstance(pattern, int):
        return [pattern]
    hits = [k for k, s in enumerate(m.sites) if fnmatch.fnmatchcase(s.label, pattern)]
    if not hits:
        raise IndexError(f"{m.name}: no site matches {pattern!r}")
    return hits


# -- Hamiltonians ------------------------------------------------------------


def z_table(n_sites: int) -> np.ndarray:
    """``z[k, i]`` = eigenvalue (+1/-1) of sigma_z on site k for basis index i."""
    idx = np.arange(2**n_sites)
    shifts = np.arange(n_sites - 1, -1, -1)
    return 1 - 2 * ((idx[None, :] >> shifts[:, None]) & 1)


def _zz_diagonal(n: int, fields: Sequence[float], pairs: Iterable[tuple[int, int, float]]) -> np.ndarray:
    z = z_table(n).astype(float)
    diag = np.zeros(2**n)
    for p, w in enumerate(fields):
        if w:
            diag += 0.5 * w * z[p]
    for p, q, J in pairs:
        diag += 0.25 * J * z[p] * z[q]
    return diag


def weak_diagonal(m: Molecule) -> np.ndarray:
    """Diagonal of the weak-coupling Hamiltonian ``sum J zz/4`` on the active sites."""
    n = len(m.active_sites)
    _check_capacity(n)
    return _zz_diagonal(n, [], m.active_couplings())


def hamiltonian_weak(m: Molecule) -> Operator:
    """Rotating-frame Hamiltonian ``sum_{j<k} J_jk sz_j sz_k / 4``; diagonal."""
    bad = m.weak_coupling_violations()
    if bad:
        warnings.warn(f"{m.name}: weak-coupling limit questionable for {bad}", WeakCouplingWarning, stacklevel=2)
    return Operator(np.diag(weak_diagonal(m)).astype(complex), m.space())


def hamiltonian_lab(m: Molecule) -> Operator:
    """Lab-frame Hamiltonian with Zeeman terms and isotropic couplings."""
    active = m.active_sites
    n = len(active)
    _check_capacity(n)
    pairs = m.active_couplings()
    diag = _zz_diagonal(n, [m.sites[k].omega0 for k in active], pairs)
    h = np.diag(diag).astype(complex)
    idx = np.arange(2**n)
    for p, q, J in pairs:
        bp, bq = 1 << (n - 1 - p), 1 << (n - 1 - q)
        differ = ((idx & bp) > 0) != ((idx & bq) > 0)
        src = idx[differ]
        # (sx sx + sy sy)/4 flips an antiparallel pair with amplitude 1/2
        h[src ^ (bp | bq), src] += 0.5 * J
    return Operator(h, m.space())


# -- states and pulses -------------------------------------------------------


def thermal_state(m: Molecule, polarization: Mapping[str | int, float] | None = None) -> DensityMatrix:
    """High-temperature equilibrium state with renormalized polarizations.

    ``rho = (I/2)^n + sum_j eps_j sz_j / 2^n``. By default only the observed
    site carries ``eps = 1``; other spins' Zeeman terms are invisible in the
    observed FID and stay inert under the weak-coupling Hamiltonian.
    """
    space = m.space()
    n = space.n_sites
    eps = np.zeros(n)
    if polarization is None:
        eps[m.active_system_index] = 1.0
    else:
        for key, value in polarization.items():
            eps[space.index(m.labels[key] if isinstance(key, int) else key)] = value
    diag = (1.0 + (eps[:, None] * z_table(n)).sum(axis=0)) / 2**n
    return DensityMatrix(np.diag(diag).astype(complex), space)


def product_state(space: SpinSpace, factors: Mapping[int | str, np.ndarray]) -> DensityMatrix:
    """Product of the given single-site states, maximally mixed elsewhere."""
    ops = [ID2 / 2] * space.n_sites
    for key, rho in factors.items():
        ops[space.index(key)] = np.asarray(rho, dtype=complex)
    return DensityMatrix(kron_all(ops), space)


def rotation(beta: float, phi: float) -> np.ndarray:
    """``R(beta, phi) = exp(-i beta (cos phi sx + sin phi sy) / 2)``."""
    axis = math.cos(phi) * SX + math.sin(phi) * SY
    return math.cos(beta / 2) * ID2 - 1j * math.sin(beta / 2) * axis


@dataclass(frozen=True)
class PulseSpec:
    """Ideal hard pulse of angle ``beta`` about an in-plane axis at phase ``phi``."""

    beta: float
    phi: float = 0.0
    targets: tuple[str | int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "beta", float(self.beta) % TWO_PI)
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)
        object.__setattr__(self, "targets", tuple(self.targets))

    def matrix(self) -> np.ndarray:
        return rotation(self.beta, self.phi)


def _resolve_targets(space: SpinSpace, targets: Iterable[str | int]) -> list[int]:
    out = []
    for t in targets:
        try:
            out.append(space.index(t))
        except IndexError:
            raise IndexError(f"pulse target {t!r} is not an active site of {space.site_labels}") from None
    return out


def apply_pulse(rho: DensityMatrix, p: PulseSpec) -> DensityMatrix:
    """Conjugate ``rho`` by ``R(beta, phi)`` on every target site."""
    space = rho.space
    ops = [ID2] * space.n_sites
    for k in _resolve_targets(space, p.targets):
        ops[k] = p.matrix()
    r = kron_all(ops)
    out = r @ as_array(rho) @ r.conj().T
    return DensityMatrix(0.5 * (out + out.conj().T), space, check=False)


def selective_pulse(
    rho: DensityMatrix,
    site: str | int,
    p: PulseSpec,
    condition: Mapping[str | int, int] | None = None,
) -> DensityMatrix:
    """Soft pulse on one site.

    Without ``condition`` this is an ideal single-site rotation. With
    ``condition = {spectator: bit}`` the pulse is transition-selective: it
    addresses the target only where the spectators sit in the given
    computational states. The unaddressed component holds target populations
    only, which are invisible in the target FID, so it is dropped and the
    addressed component renormalized.
    """
    space = rho.space
    k = space.index(site)
    arr = as_array(rho)
    if condition:
        proj = [ID2] * space.n_sites
        for s, bit in condition.items():
            j = space.index(s)
            if j == k:
                raise ValueError("the target cannot also be a spectator")
            proj[j] = np.diag([1.0 - bit, float(bit)]).astype(complex)
        P = kron_all(proj)
        arr = P @ arr @ P
        weight = np.trace(arr).real
        if weight <= 0:
            raise ValueError("selected transition carries no population")
        arr = arr / weight
        rho = DensityMatrix(arr, space, check=False)
    return apply_pulse(rho, PulseSpec(p.beta, p.phi, (k,)))


# -- molecule files and registry --------------------------------------------


def _parse_float(text: str) -> float:
    return float(text.strip().lower().replace("infinity", "inf"))


def parse_molecule_text(text: str, source: str = "<string>", lookup=None) -> Molecule:
    """Parse the sectioned molecule format (see ``data/molecules/*.mol``)."""
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ConfigError(f"{source}: content before the first section: {raw!r}")
        sections[current].append(line)

    meta: dict[str, str] = {}
    for line in sections.get("molecule", []):
        if "=" not in line:
            raise ConfigError(f"{source}: expected key = value in [molecule]: {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip().lower()] = value.strip()

    if "base" in meta:
        if lookup is None:
            raise ConfigError(f"{source}: 'base' needs a registry lookup")
        mol = lookup(meta["base"])
        if "sites" in sections or "couplings" in sections:
            raise ConfigError(f"{source}: a derived molecule may not redefine sites or couplings")
    else:
        sites = []
        for line in sections.get("sites", []):
            cols = line.split()
            if len(cols) != 4:
                raise ConfigError(f"{source}: [sites] rows are 'label species omega0_hz t1_s': {line!r}")
            label, species, w_hz, t1 = cols
            try:
                t1_s = _parse_float(t1)
                rate = 0.0 if math.isinf(t1_s) else 1.0 / t1_s
                sites.append(SpinSite(label, species, TWO_PI * _parse_float(w_hz), rate))
            except ValueError as exc:
                raise ConfigError(f"{source}: bad site row {line!r}: {exc}") from None
        if not sites:
            raise ConfigError(f"{source}: no [sites] defined")
        labels = [s.label for s in sites]
        couplings = {}
        for line in sections.get("couplings", []):
            cols = line.split()
            if len(cols) != 3:
                raise ConfigError(f"{source}: [couplings] rows are 'site_a site_b j_hz': {line!r}")
            a, b, j_hz = cols
            try:
                couplings[(labels.index(a), labels.index(b))] = TWO_PI * _parse_float(j_hz)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad coupling row {line!r}: {exc}") from None
        system = meta.get("system", labels[0])
        if system not in labels:
            raise ConfigError(f"{source}: system site {system!r} not defined")
        mol = Molecule(meta.get("name", Path(source).stem), tuple(sites), couplings, labels.index(system))

    if "name" in meta:
        mol = replace(mol, name=meta["name"])
    overrides = {}
    for line in sections.get("t1", []):
        key, value = line.split("=", 1)
        t1_s = _parse_float(value)
        overrides[key.strip()] = 0.0 if math.isinf(t1_s) else 1.0 / t1_s
    if overrides:
        mol = mol.with_reset_rates(overrides)
    patterns = [p.strip() for p in meta.get("decoupled", "").split(",") if p.strip()]
    if patterns:
        try:
            mol = mol.decouple(patterns)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from None
    return mol


def load_molecule(path: str | os.PathLike) -> Molecule:
    path = Path(path)
    return parse_molecule_text(path.read_text(), str(path), lookup=registry_get)


def _builtin_dir():
    return resources.files("spinbath") / "data" / "molecules"


def _search_dirs() -> list:
    dirs = []
    override = os.environ.get(MOLECULE_DIR_ENV)
    if override:
        dirs.append(Path(override))
    dirs.append(_builtin_dir())
    return dirs


def registry_names() -> list[str]:
    names = set()
    for d in _search_dirs():
        if d.is_dir():
            names.update(p.name[:-4] for p in d.iterdir() if p.name.endswith(".mol"))
    return sorted(names)


def registry_get(name: str) -> Molecule:
    """Look up a molecule by name; ``SPINBATH_MOLECULES`` directories take precedence."""
    for d in _search_dirs():
        candidate = d / f"{name}.mol"
        if candidate.is_file():
            return parse_molecule_text(candidate.read_text(), str(candidate), lookup=registry_get)
    raise KeyError(f"unknown molecule {name!r}; known: {', '.join(registry_names())}")
