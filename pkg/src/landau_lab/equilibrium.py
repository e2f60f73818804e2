"""The Poisson equilibrium ``mu(v) = 1/(pi^2 (1+|v|^2)^2)`` and its transform."""
from __future__ import annotations

import numpy as np
from scipy import integrate

from .foundation import NumericalFailure

_C = 1.0 / np.pi ** 2


def mu(v) -> np.ndarray:
    """Equilibrium density at velocity ``v`` (shape (..., 3))."""
    v = np.asarray(v, dtype=float)
    q = 1.0 + np.sum(v * v, axis=-1)
    return _C / (q * q)


def mu_radial(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    q = 1.0 + r * r
    return _C / (q * q)


def grad_mu(v) -> np.ndarray:
    """Gradient ``-4 v / (pi^2 (1+|v|^2)^3)``."""
    v = np.asarray(v, dtype=float)
    q = 1.0 + np.sum(v * v, axis=-1, keepdims=True)
    return -4.0 * _C * v / q ** 3


def hess_mu(v) -> np.ndarray:
    """Hessian of ``mu``, shape (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    q = 1.0 + np.sum(v * v, axis=-1)
    eye = np.eye(3)
    outer = v[..., :, None] * v[..., None, :]
    return -4.0 * _C * (eye / q[..., None, None] ** 3 - 6.0 * outer / q[..., None, None] ** 4)


def mu_fourier(eta) -> np.ndarray:
    """Closed-form transform ``exp(-|eta|)``."""
    eta = np.asarray(eta, dtype=float)
    if eta.ndim and eta.shape[-1] == 3:
        return np.exp(-np.linalg.norm(eta, axis=-1))
    return np.exp(-np.abs(eta))


def radial_fourier_quadrature(profile, k: float, epsabs: float = 1e-13) -> float:
    """Transform of a radial function at frequency magnitude ``k`` by quadrature.

    Uses ``int f(|v|) exp(-i eta.v) dv = (4 pi / k) int_0^inf r f(r) sin(r k) dr``
    with QUADPACK's Fourier-weighted routine on the half line.
    """
    if k == 0.0:
        val, err = integrate.quad(lambda r: 4.0 * np.pi * r * r * profile(r), 0.0, np.inf,
                                  epsabs=epsabs, epsrel=1e-12, limit=500)
    else:
        val, err = integrate.quad(lambda r: r * profile(r), 0.0, np.inf, weight="sin", wvar=k,
                                  epsabs=epsabs, limlst=200)
        val, err = 4.0 * np.pi * val / k, 4.0 * np.pi * err / k
    if not np.isfinite(val) or err > 1e-7:
        raise NumericalFailure(f"radial transform did not converge (error estimate {err:.2e})")
    return float(val)


def mu_fourier_quadrature(k: float) -> float:
    """Quadrature oracle for :func:`mu_fourier` at ``|eta| = k``."""
    return radial_fourier_quadrature(mu_radial, float(k))


def mass() -> float:
    """``int mu dv`` by radial quadrature."""
    val, _ = integrate.quad(lambda r: 4.0 * np.pi * r * r * mu_radial(r), 0.0, np.inf,
                            epsabs=1e-14, epsrel=1e-13)
    return float(val)
