"""Solver backend discovery and construction.

Resolves a backend name (the ``solver.backend`` config field or the
``backend=`` argument of :func:`estimation.penalized.solve_penalized`) to a
constructed :class:`~solvers.base.BaseSolver`. Unknown names fall back to the
proximal-gradient backend (callers that want to report it compare against
:func:`available_solvers`), so a typo in a config file
degrades to the default instead of aborting a long run.
"""

from __future__ import annotations

import importlib
from typing import Dict, Optional, Type

from .base import BaseSolver

DEFAULT_BACKEND = "proximal"

# Imported lazily in _load_builtin.
_BUILTIN_MODULES = {
    "proximal": ("solvers.proximal", "ProximalGradientSolver"),
    "coordinate": ("solvers.coordinate", "CoordinateDescentSolver"),
}


def _load_builtin(name: str) -> Optional[Type[BaseSolver]]:
    spec = _BUILTIN_MODULES.get(name)
    if not spec:
        return None
    module_name, class_name = spec
    module = importlib.import_module(module_name)
    return getattr(module, class_name)


def get_solver(name: Optional[str] = None) -> BaseSolver:
    """Construct the backend named ``name``; unknown or empty names give ``proximal``."""
    cls = _load_builtin(name) if name else None
    if cls is None:
        cls = _load_builtin(DEFAULT_BACKEND)
    return cls()


def available_solvers() -> Dict[str, str]:
    """Return a ``name -> description`` map of every built-in backend."""
    return {name: _load_builtin(name)().description for name in _BUILTIN_MODULES}
