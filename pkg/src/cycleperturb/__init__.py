"""Asymptotics of periodic orbits of planar Hamiltonian systems under set-valued perturbations."""

__version__ = "0.1.0"

from .errors import ConfigError, CyclePerturbError  # noqa: E402

__all__ = ["__version__", "ConfigError", "CyclePerturbError"]
