"""Kernel backend selection.

The per-pixel hot loops exist twice: a numba-jitted module and a
vectorized pure-numpy module with identical call signatures and
semantics. SPLATRANK_BACKEND picks between them:

    auto   use numba when importable, else numpy (default)
    numba  require numba, raise if unavailable
    numpy  force the pure-numpy path

The variable is re-read on every lookup so tests can flip backends
without reloading the package.
"""

from __future__ import annotations

import importlib
import os

from .errors import ConfigError

_CHOICES = ("auto", "numba", "numpy")
_modules = {}


def backend_name():
    """Resolved backend name for the current environment."""
    choice = os.environ.get("SPLATRANK_BACKEND", "auto").strip().lower()
    if choice not in _CHOICES:
        raise ConfigError(
            f"SPLATRANK_BACKEND must be one of {_CHOICES}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if importlib.util.find_spec("numba") is None:
            raise ConfigError("SPLATRANK_BACKEND=numba but numba is not installed")
        return "numba"
    return "numba" if importlib.util.find_spec("numba") is not None else "numpy"


def get_kernels(name=None):
    """Import (once) and return the kernel module for a backend."""
    name = name or backend_name()
    if name not in _modules:
        if name == "numba":
            _modules[name] = importlib.import_module("._kernels_numba", __package__)
        elif name == "numpy":
            _modules[name] = importlib.import_module("._kernels_numpy", __package__)
        else:
            raise ConfigError(f"unknown backend {name!r}")
    return _modules[name]
