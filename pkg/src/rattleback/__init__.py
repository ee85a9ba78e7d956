"""Numerical toolkit for the conservative rattleback system
``x' = λxz, y' = -yz, z' = y² - λx²``."""
from .errors import *  # noqa: F401,F403
from .model import (ModelParams, RealizationParams, Equilibrium, EquilibriumKind, Verdict,
                    rhs, hamiltonian, casimir, equilibria, classify_equilibrium)
from .integrate import IntegratorConfig, Method, Trajectory, integrate

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "RealizationParams", "Equilibrium", "EquilibriumKind", "Verdict",
    "rhs", "hamiltonian", "casimir", "equilibria", "classify_equilibrium",
    "IntegratorConfig", "Method", "Trajectory", "integrate", "__version__",
]
