"""Scenario files: one named experiment from molecule to written observables.

A scenario is an INI file (see ``data/scenarios/*.cfg``). Every physical
quantity sits under a key or section whose name carries its unit
(``t1_s``, ``beta_deg``, ``steps``); nothing is inferred.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from importlib import metadata, resources
from pathlib import Path
from typing import Mapping

import numpy as np

from . import channels
from .dynamics import (
    FIDRecord,
    ResetModel,
    TimeGrid,
    Trajectory,
    evolve_lindblad,
    evolve_reset_mc,
    evolve_unitary,
    fid,
    lightcone,
    molecule_factorized,
    otoc,
    spectrum,
)
from .dynamics.records import FLOAT_FMT, read_table
from .errors import ConfigError, EngineIncompatibleError, GridError, SpinbathError
from .molecule import (
    Molecule,
    WeakCouplingWarning,
    hamiltonian_lab,
    hamiltonian_weak,
    load_molecule,
    registry_get,
    rotation,
    weak_diagonal,
)
from .qcore import ID2, PAULI, DensityMatrix, SpinSpace, embed_array, kron_all

ENGINES = ("unitary", "lindblad", "reset-mc", "factorized")
OUTPUTS = ("fid", "spectrum", "channel", "blp", "otoc", "lightcone")
HAMILTONIANS = ("weak", "lab")
SCENARIO_DIR_ENV = "SPINBATH_SCENARIOS"


@dataclass(frozen=True)
class PulseStep:
    site: str
    beta: float  # rad
    phi: float  # rad
    condition: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    molecule: str
    engine: str
    grid: TimeGrid
    pulses: tuple[PulseStep, ...] = ()
    hamiltonian: str = "weak"
    t1_overrides: tuple[tuple[str, float], ...] = ()
    decouple: tuple[str, ...] = ()
    include_system_reset: bool = False
    outputs: tuple[str, ...] = ("fid",)
    seed: int = 0
    n_traj: int = 10_000
    description: str = ""
    budget_s: float = 120.0
    qualitative: bool = False
    otoc: Mapping[str, str] = field(default_factory=dict)
    lightcone: Mapping[str, str] = field(default_factory=dict)
    source_text: str = ""

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"{self.name}: unknown engine {self.engine!r} (choose from {', '.join(ENGINES)})")
        if self.hamiltonian not in HAMILTONIANS:
            raise ConfigError(f"{self.name}: hamiltonian must be one of {HAMILTONIANS}")
        bad = [o for o in self.outputs if o not in OUTPUTS]
        if bad:
            raise ConfigError(f"{self.name}: unknown outputs {bad} (choose from {', '.join(OUTPUTS)})")
        if self.engine in ("reset-mc", "factorized") and self.hamiltonian != "weak":
            raise EngineIncompatibleError(f"{self.name}: engine {self.engine} needs the weak-coupling Hamiltonian")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["grid"] = {"t0_s": self.grid.t0, "t1_s": self.grid.t1, "steps": self.grid.steps}
        d.pop("source_text")
        d["pulses"] = [asdict(p) for p in self.pulses]
        d["otoc"] = dict(self.otoc)
        d["lightcone"] = dict(self.lightcone)
        return d


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.has_section("scenario"):
        raise ConfigError(f"{source}: missing [scenario] section")
    sc = cp["scenario"]
    try:
        name = sc.get("name", Path(source).stem)
        if not cp.has_section("grid"):
            raise ConfigError(f"{source}: missing [grid] section")
        g = cp["grid"]
        grid = TimeGrid(float(g.get("t0_s", "0")), float(g["t1_s"]), int(g["steps"]))
        pulses = []
        for section in sorted(s for s in cp.sections() if s == "pulse" or s.startswith("pulse.")):
            p = cp[section]
            cond = []
            for item in _list(p.get("select", "")):
                site, bit = item.split("=")
                cond.append((site.strip(), int(bit)))
            pulses.append(
                PulseStep(
                    p["site"],
                    math.radians(float(p.get("beta_deg", "90"))),
                    math.radians(float(p.get("phi_deg", "90"))),
                    tuple(cond),
                )
            )
        t1 = tuple((k, float(v)) for k, v in cp["t1_s"].items()) if cp.has_section("t1_s") else ()
        sampling = cp["sampling"] if cp.has_section("sampling") else {}
        outputs = _list(cp["outputs"].get("products", "fid")) if cp.has_section("outputs") else ("fid",)
        return ScenarioConfig(
            name=name,
            molecule=sc["molecule"],
            engine=sc.get("engine", "unitary"),
            grid=grid,
            pulses=tuple(pulses),
            hamiltonian=sc.get("hamiltonian", "weak"),
            t1_overrides=t1,
            decouple=_list(sc.get("decouple", "")),
            include_system_reset=_bool(sc.get("include_system_reset", "no")),
            outputs=outputs,
            seed=int(sampling.get("seed", "0")),
            n_traj=int(sampling.get("n_traj", "10000")),
            description=sc.get("description", ""),
            budget_s=float(sc.get("budget_s", "120")),
            qualitative=_bool(sc.get("qualitative", "no")),
            otoc=dict(cp["otoc"]) if cp.has_section("otoc") else {},
            lightcone=dict(cp["lightcone"]) if cp.has_section("lightcone") else {},
            source_text=text,
        )
    except KeyError as exc:
        raise ConfigError(f"{source}: missing key {exc}") from None
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SpinbathError):
            raise
        raise ConfigError(f"{source}: {exc}") from None


# -- registry ------------------------------------------------------------------------


def _scenario_dirs() -> list:
    dirs = []
    override = os.environ.get(SCENARIO_DIR_ENV)
    if override:
        dirs.append(Path(override))
    dirs.append(resources.files("spinbath") / "data" / "scenarios")
    return dirs


def scenario_names() -> list[str]:
    names = set()
    for d in _scenario_dirs():
        if d.is_dir():
            names.update(p.name[:-4] for p in d.iterdir() if p.name.endswith(".cfg"))
    return sorted(names)


def load_scenario(ref: str) -> ScenarioConfig:
    """Resolve a built-in scenario name or a path to a ``.cfg`` file."""
    path = Path(ref)
    if path.suffix == ".cfg" and path.is_file():
        return parse_scenario(path.read_text(), str(path))
    for d in _scenario_dirs():
        candidate = d / f"{ref}.cfg"
        if candidate.is_file():
            return parse_scenario(candidate.read_text(), str(candidate))
    raise ConfigError(f"unknown scenario {ref!r}; known: {', '.join(scenario_names())}")


def list_scenarios() -> list[dict]:
    rows = []
    for name in scenario_names():
        cfg = load_scenario(name)
        rows.append(
            {
                "name": cfg.name,
                "engine": cfg.engine,
                "molecule": cfg.molecule,
                "budget_s": cfg.budget_s,
                "qualitative": cfg.qualitative,
                "description": cfg.description,
            }
        )
    return rows


# -- preparation --------------------------------------------------------------------------


def resolve_molecule(cfg: ScenarioConfig) -> Molecule:
    ref = cfg.molecule
    try:
        m = load_molecule(ref) if ref.endswith(".mol") else registry_get(ref)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except FileNotFoundError:
        raise ConfigError(f"molecule file {ref!r} not found") from None
    try:
        if cfg.t1_overrides:
            m = m.with_reset_rates({k: (0.0 if math.isinf(v) else 1.0 / v) for k, v in cfg.t1_overrides})
        if cfg.decouple:
            m = m.decouple(cfg.decouple)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"{cfg.name}: {exc}") from None
    return m


def prepare_factors(m: Molecule, pulses) -> list[np.ndarray]:
    """Single-site states of the prepared product state, in active-site order.

    Starts from the high-temperature thermal state (unit polarization on the
    observed spin, others maximally mixed). A pulse with a selection
    condition projects each named spectator onto the given basis state before
    rotating the target, the product-state form of a transition-selective
    soft pulse.
    """
    labels = [m.labels[k] for k in m.active_sites]

    def index(label):
        if label in labels:
            return labels.index(label)
        raise IndexError(f"{m.name} has no active site {label!r}")

    factors = [ID2 / 2 for _ in labels]
    factors[m.active_system_index] = np.diag([1.0, 0.0]).astype(complex)
    for p in pulses:
        try:
            k = index(p.site)
            for site, bit in p.condition:
                j = index(site)
                proj = np.diag([1.0 - bit, float(bit)]).astype(complex)
                f = proj @ factors[j] @ proj
                w = np.trace(f).real
                if w <= 0:
                    raise ConfigError(f"selected state of {site} carries no population")
                factors[j] = f / w
        except IndexError as exc:
            raise ConfigError(str(exc)) from None
        r = rotation(p.beta, p.phi)
        factors[k] = r @ factors[k] @ r.conj().T
    return factors


# -- engines --------------------------------------------------------------------------


@dataclass
class EngineRun:
    """Reduced system trajectory (and FID) for one system input state."""

    trajectory: Trajectory
    record: FIDRecord


def _hamiltonian(m: Molecule, kind: str):
    if kind == "lab":
        return hamiltonian_lab(m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakCouplingWarning)
        return hamiltonian_weak(m)


def run_engine(cfg: ScenarioConfig, m: Molecule, factors, *, seed=None, n_traj=None) -> EngineRun:
    grid = cfg.grid
    sys_pos = m.active_system_index
    reset = ResetModel.from_molecule(m, include_system=cfg.include_system_reset)
    if cfg.engine == "factorized":
        rec = molecule_factorized(m, grid, reset, factors)
        s_state = factors[sys_pos]
        states = np.empty((grid.steps + 1, 2, 2), dtype=complex)
        states[:, 0, 0] = s_state[0, 0]
        states[:, 1, 1] = s_state[1, 1]
        states[:, 1, 0] = 0.5 * rec.s
        states[:, 0, 1] = 0.5 * rec.s.conj()
        traj = Trajectory(grid, states, SpinSpace(1, (m.system_label,)), {"engine": "factorized"})
        rec.meta.update(scenario=cfg.name)
        return EngineRun(traj, rec)

    space = m.space()
    rho0 = DensityMatrix(kron_all(factors), space, check=False)
    if cfg.engine == "unitary":
        traj = evolve_unitary(rho0, _hamiltonian(m, cfg.hamiltonian), grid, keep=[sys_pos])
    elif cfg.engine == "lindblad":
        traj = evolve_lindblad(
            rho0, _hamiltonian(m, cfg.hamiltonian), reset.lindblad_terms(space.n_sites), grid, keep=[sys_pos]
        )
    else:
        seed = cfg.seed if seed is None else seed
        n_traj = cfg.n_traj if n_traj is None else n_traj
        traj = evolve_reset_mc(rho0, weak_diagonal(m), reset, grid, n_traj, seed, sys_pos)
    rec = fid(traj)
    rec.meta.update(scenario=cfg.name, engine=cfg.engine)
    return EngineRun(traj, rec)


# -- run -------------------------------------------------------------------------------------


@dataclass
class RunManifest:
    scenario: dict
    code_version: str
    seed: int
    n_traj: int
    started: str
    finished: str
    elapsed_s: float
    outputs: dict[str, str]
    summary: dict

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_manifest(path) -> list[str]:
    """Names of outputs whose digest no longer matches (empty when intact)."""
    path = Path(path)
    data = json.loads(path.read_text())
    bad = []
    for name, digest in data["outputs"].items():
        target = path.parent / name
        if not target.is_file() or sha256_file(target) != digest:
            bad.append(name)
    return bad


def _system_maps(cfg, m, factors, seed, n_traj):
    sys_pos = m.active_system_index

    def run_probe(rho_s):
        probe = list(factors)
        probe[sys_pos] = rho_s
        return run_engine(cfg, m, probe, seed=seed, n_traj=n_traj).trajectory.states

    return channels.tomograph_engine(run_probe, cfg.grid)


def _pauli_on(text: str, space) -> np.ndarray:
    op, site = text.split("@")
    return embed_array(PAULI[op.strip().lower()], space.index(site.strip()), space.n_sites)


def run(cfg: ScenarioConfig, outdir, *, outputs=None, seed=None, n_traj=None) -> RunManifest:
    """Execute ``cfg`` and write the requested outputs plus ``manifest.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = tuple(cfg.outputs if outputs is None else outputs)
    cfg = replace(cfg, outputs=outputs)  # validates names
    seed = cfg.seed if seed is None else int(seed)
    n_traj = cfg.n_traj if n_traj is None else int(n_traj)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()

    m = resolve_molecule(cfg)
    written: dict[str, Path] = {}
    summary: dict = {}
    factors = None
    if any(o in outputs for o in ("fid", "spectrum", "channel", "blp")):
        factors = prepare_factors(m, cfg.pulses)
    if "fid" in outputs or "spectrum" in outputs:
        result = run_engine(cfg, m, factors, seed=seed, n_traj=n_traj)
        if "fid" in outputs:
            written["fid.csv"] = result.record.to_csv(outdir / "fid.csv")
        if "spectrum" in outputs:
            written["spectrum.csv"] = spectrum(result.record).to_csv(outdir / "spectrum.csv")
    if "channel" in outputs or "blp" in outputs:
        maps = _system_maps(cfg, m, factors, seed, n_traj)
        if "channel" in outputs:
            written["channel.json"] = channels.write_channels(maps, outdir / "channel.json")
        if "blp" in outputs:
            blp = channels.blp_measure(maps)
            written["blp.csv"] = blp.to_csv(outdir / "blp.csv")
            written["blp.json"] = blp.write_summary(outdir / "blp.json")
            summary["blp_N"] = blp.N
    if "otoc" in outputs:
        space = m.space()
        h = _hamiltonian(m, cfg.hamiltonian)
        w = _pauli_on(cfg.otoc.get("w", f"z@{m.system_label}"), space)
        v = _pauli_on(cfg.otoc.get("v", f"z@{space.site_labels[-1]}"), space)
        res = otoc(h, w, v, cfg.grid.points)
        table = np.column_stack(
            [res.tau, res.F.real, res.F.imag, res.F_split.real, res.F_split.imag, res.commutator_sq]
        )
        path = outdir / "otoc.csv"
        np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", comments="",
                   header="tau_s,re_f,im_f,re_f_split,im_f_split,commutator_sq")
        written["otoc.csv"] = path
        summary["otoc_path_mismatch"] = res.path_mismatch
    if "lightcone" in outputs:
        space = m.space()
        h = _hamiltonian(m, cfg.hamiltonian)
        source = cfg.lightcone.get("source", f"x@{m.system_label}")
        op, site = source.split("@")
        table = lightcone(
            h,
            PAULI[op.strip().lower()],
            site.strip(),
            cfg.grid,
            probe_op=PAULI[cfg.lightcone.get("probe_op", "x").strip().lower()],
            eps=float(cfg.lightcone.get("eps", "0.01")),
        )
        written["lightcone.csv"] = table.to_csv(outdir / "lightcone.csv")
        summary["lightcone_monotone"] = table.is_monotone()

    elapsed = time.perf_counter() - clock
    manifest = RunManifest(
        scenario=cfg.snapshot(),
        code_version=code_version(),
        seed=seed,
        n_traj=n_traj,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        elapsed_s=round(elapsed, 3),
        outputs={name: sha256_file(p) for name, p in written.items()},
        summary=summary,
    )
    manifest.write(outdir / "manifest.json")
    return manifest


# -- compare ---------------------------------------------------------------------------------


@dataclass
class Comparison:
    columns: list[str]
    max_dev: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_dev.values())


def compare(result_path, oracle_path, tol: float) -> Comparison:
    """Column-wise max deviation between two CSVs sharing a header and grid."""
    with open(result_path) as fh:
        header_a = fh.readline().strip().split(",")
    with open(oracle_path) as fh:
        header_b = fh.readline().strip().split(",")
    if header_a != header_b:
        raise GridError(f"column mismatch: {header_a} vs {header_b}")
    a = read_table(result_path)
    b = read_table(oracle_path)
    if a.shape != b.shape:
        raise GridError(f"grid mismatch: {a.shape[0]} vs {b.shape[0]} rows")
    scale = max(1.0, float(np.max(np.abs(a[:, 0]))))
    if np.max(np.abs(a[:, 0] - b[:, 0])) > 1e-12 * scale:
        raise GridError("grid mismatch: first columns differ")
    devs = {col: float(np.max(np.abs(a[:, i] - b[:, i]))) for i, col in enumerate(header_a) if i > 0}
    return Comparison(header_a, devs, float(tol))
