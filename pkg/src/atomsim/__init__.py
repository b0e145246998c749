"""Shared-memory parallel MD, FMM electrostatics, and kinetic Monte Carlo."""

from . import cells, errors, fmm, harness, kmc, lj, oracle, particles

__all__ = ["cells", "errors", "fmm", "harness", "kmc", "lj", "oracle", "particles"]

__version__ = "0.1.0"
