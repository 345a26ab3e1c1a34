"""Time grids, state trajectories and FID records with their CSV forms."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import GridError
from ..qcore import SpinSpace, partial_trace_array

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class TimeGrid:
    """Inclusive uniform grid of ``steps + 1`` points on ``[t0, t1]`` (seconds)."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise GridError(f"grid needs t1 > t0, got [{self.t0}, {self.t1}]")
        if int(self.steps) < 1:
            raise GridError("grid needs at least one step")
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def from_points(cls, times) -> "TimeGrid":
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise GridError("need at least two time points")
        grid = cls(float(times[0]), float(times[-1]), times.size - 1)
        if not np.allclose(times, grid.points, rtol=0, atol=1e-9 * grid.dt):
            raise GridError("time points are not uniformly spaced")
        return grid

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.steps + 1)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    def __len__(self):
        return self.steps + 1


@dataclass
class Trajectory:
    """States ``rho(t_k)`` stacked along the first axis."""

    grid: TimeGrid
    states: np.ndarray
    space: SpinSpace
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def reduced(self, keep) -> "Trajectory":
        keep = sorted({self.space.index(k) for k in keep})
        red = partial_trace_array(self.states, self.space.n_sites, keep)
        return Trajectory(self.grid, red, self.space.subspace(keep), dict(self.meta))

    def trace_drift(self) -> float:
        return float(np.max(np.abs(np.trace(self.states, axis1=1, axis2=2) - 1.0)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.states - self.states.conj().transpose(0, 2, 1))))


@dataclass
class FIDRecord:
    """Complex FID ``S(t) = Tr((sx + i sy) rho_1(t))`` and ``D(rho_1(t), I/2)``."""

    grid: TimeGrid
    s: np.ndarray
    trace_dist: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_signal(cls, grid: TimeGrid, s, nz=0.0, meta=None) -> "FIDRecord":
        """Build from ``S(t)``; ``nz`` is the (constant or per-point) z component."""
        s = np.asarray(s, dtype=complex)
        dist = 0.5 * np.sqrt(np.abs(s) ** 2 + np.asarray(nz, dtype=float) ** 2)
        return cls(grid, s, np.broadcast_to(dist, s.shape).copy(), dict(meta or {}))

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def to_csv(self, path) -> Path:
        path = Path(path)
        table = np.column_stack([self.times, self.s.real, self.s.imag, self.trace_dist])
        np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header="t_s,re_s,im_s,trace_dist", comments="")
        return path

    @classmethod
    def from_csv(cls, path) -> "FIDRecord":
        table = read_table(path, ("t_s", "re_s", "im_s", "trace_dist"))
        grid = TimeGrid.from_points(table[:, 0])
        return cls(grid, table[:, 1] + 1j * table[:, 2], table[:, 3], {"source": str(path)})


def read_table(path, expected=None) -> np.ndarray:
    """Read a headered CSV written by this package; optionally check the header."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if expected is not None and tuple(header) != tuple(expected):
        raise GridError(f"{path}: expected columns {','.join(expected)}, got {','.join(header)}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
