"""Numerical laboratory for Landau damping of the Vlasov-Poisson system near the
Poisson equilibrium ``mu(v) = 1 / (pi^2 (1 + |v|^2)^2)`` in three dimensions.

Modules
-------
foundation       weights, norms, ratio tables, configuration, deterministic parallel map
equilibrium      the equilibrium, its derivatives and Fourier transform
kernels          the linear response kernel and its low/high frequency split
sources          builtin initial data and the free-streaming density
volterra         per-mode Volterra solver, linear density history, singular parts
characteristics  perturbed characteristics by Picard iteration, bound checks
nonlinear        moments, conservation residuals, outer fixed-point loop, scattering
estimates        weighted space-time integrals and their decay bounds
cli              the ``landau-lab`` command
"""
from __future__ import annotations

__version__ = "0.1.0"

from .foundation import (Config, LabError, NumericalFailure, RatioReport, UsageError,  # noqa: F401
                         VerificationFailure, load_config)
