"""Open spin-system dynamics for liquid-state NMR.

Dense operator algebra (``qcore``), molecules and pulses (``molecule``),
evolution engines and observables (``dynamics``), quantum channels and
non-Markovianity measures (``channels``), and the scenario runner behind the
``spinbath`` command (``scenarios``, ``cli``).
"""
from importlib import metadata as _metadata

from . import channels, dynamics, molecule, qcore, scenarios

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = ["channels", "dynamics", "molecule", "qcore", "scenarios", "__version__"]
