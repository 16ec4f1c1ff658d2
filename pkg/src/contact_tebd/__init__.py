"""Tensor-network simulation of classical and quantum contact processes.

Modules:
    mps: open-boundary matrix product states and truncated gate application.
    model: operators, generators and Trotter gate schedules.
    oracle: dense reference solvers for small chains.
    doublespace: TEBD for vectorized density matrices and observables.
    qjmc: quantum-jump trajectories and ensemble stores.
    analysis: power-law fits and exponent error bars.
    cli: the ``contact-tebd`` command.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .model import ModelSpec
from .mps import Mps, TruncationReport, TwoSiteGate

__all__ = ["ModelSpec", "Mps", "TruncationReport", "TwoSiteGate", "__version__"]
