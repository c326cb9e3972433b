"""Stability analysis for Hamiltonian and general vector fields on R^n and tori.

Numerical evidence for Lagrange stability (bounded orbits) and completeness
(no finite-time blow-up): conserved-quantity checks, grid probes of level-set
components, trajectory classification and level-set topology of integrable
systems.
"""

__version__ = "0.1.0"

from .expr import parse, render  # noqa: E402
from .system import SystemDef, SymplecticStructure, DefinitionError  # noqa: E402
from .corpus import builtin  # noqa: E402

__all__ = ["__version__", "parse", "render", "SystemDef", "SymplecticStructure", "DefinitionError", "builtin"]
