"""Green kernel of the linearized problem, its low/high frequency split and decay checks.

``G(s, x) = s / (pi^2 (s^2 + |x|^2)^2)`` has symbol ``exp(-s|xi|)``.  The smooth
cutoff ``chi(xi) = psi(|xi|)`` splits it into ``G_low`` (symbol times ``chi``)
and ``G_high`` (symbol times ``1 - chi``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .foundation import RatioReport, UsageError, ordered_map, spacetime_samples, time_bracket, weight
from .radial import assemble_tensor, plan_orders, radial_profile_quad


_PI2 = np.longdouble("9.86960440108935861883449099987615114")


def _sigma(u):
    u = np.asarray(u, dtype=float)
    pos = u > 0
    return np.where(pos, np.exp(-1.0 / np.where(pos, u, 1.0)), 0.0)


def psi(r) -> np.ndarray:
    """Transition profile: 1 on ``[0, 1]``, 0 on ``[2, inf)``, smooth in between."""
    r = np.asarray(r, dtype=float)
    a = _sigma(2.0 - r)
    b = _sigma(r - 1.0)
    mid = a / np.where(a + b > 0, a + b, 1.0)
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, mid))


def chi(xi) -> np.ndarray:
    """Frequency cutoff ``psi(|xi|)`` for xi of shape (..., 3)."""
    return psi(np.linalg.norm(np.asarray(xi, dtype=float), axis=-1))


def G(s, x) -> np.ndarray:
    """Physical kernel ``s / (pi^2 (s^2 + |x|^2)^2)``; requires ``s > 0``.

    Evaluated in extended precision and rounded once, so the result is within
    about one ulp of the exact value where ``longdouble`` is wider than double.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise UsageError("G requires s > 0")
    x = np.asarray(x, dtype=float)
    sl = s.astype(np.longdouble)
    xl = x.astype(np.longdouble)
    q = sl * sl + np.sum(xl * xl, axis=-1)
    return (sl / (_PI2 * q * q)).astype(float)


def self_similarity_ulp(n: int = 1000, seed: int = 0) -> float:
    """Largest deviation in ulp of ``G(s, x)`` from ``s^-3 mu(x/s)``.

    The right side is evaluated in extended precision at ``n`` random points
    with ``s`` in ``[0.1, 10]`` and Gaussian ``x``.
    """
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.1, 10.0, n)
    x = rng.normal(0.0, 3.0, (n, 3))
    lhs = G(s, x)
    sl = s.astype(np.longdouble)
    y = x.astype(np.longdouble) / sl[:, None]
    q = 1 + np.sum(y * y, axis=-1)
    rhs = sl ** -3 / (_PI2 * q * q)
    return float(np.max(np.abs(lhs.astype(np.longdouble) - rhs) / np.spacing(lhs)))


def G_symbol(s, k) -> np.ndarray:
    return np.exp(-np.asarray(s) * np.asarray(k))


def G_riesz_full(s: float, r) -> np.ndarray:
    """Closed form of ``(-Delta)^{-1} G(s, .)`` at radius ``r``: ``arctan(r/s)/(2 pi^2 r)``."""
    r = np.asarray(r, dtype=float)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, np.arctan(safe / s) / (2 * np.pi ** 2 * safe), 1.0 / (2 * np.pi ** 2 * s))


@dataclass(frozen=True)
class Variant:
    """Derivative variant: ``d_t^{j1} grad^{j2}`` with optional ``grad (-Delta)^{-1}`` prefix."""

    j1: int = 0
    j2: int = 0
    riesz: bool = False

    @property
    def rank(self) -> int:
        return self.j2 + (1 if self.riesz else 0)


def _symbol_factor(s: float, v: Variant, high: bool):
    def h(k):
        val = (-k) ** v.j1 * np.exp(-s * k)
        if v.riesz:
            val = val / (k * k)
        cut = float(psi(k))
        return val * ((1.0 - cut) if high else cut)
    return h


def _kernel_part(s: float, x, variant: Variant, high: bool) -> np.ndarray:
    if s < 0 or (high and s == 0):
        raise UsageError("kernel evaluation requires s > 0 (s >= 0 for the low part)")
    if variant.j1 + variant.j2 > 4:
        raise UsageError("j1 + j2 must not exceed 4")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = _symbol_factor(s, variant, high)
    if high:
        a, b = 1.0, 2.0 + 60.0 / s
        breaks = [2.0, 2.0 + 10.0 / s]
    else:
        a, b = 0.0, 2.0
        breaks = [min(1.0, 5.0 / s) if s > 0 else 1.0, 1.0]
    m = variant.rank
    out = np.zeros((x.shape[0],) + (3,) * m)
    for i, xi in enumerate(x):
        r = float(np.linalg.norm(xi))
        fvals = {n: np.array([radial_profile_quad(h, r, n, a, b, breaks=breaks)]) for n in plan_orders(m)}
        out[i] = assemble_tensor(m, 0, xi[None, :], fvals)[0]
    return out


def G_low(s: float, x, variant: Variant | tuple = Variant()) -> np.ndarray:
    """Low-frequency kernel derivative ``d_s^{j1} grad^{j2} [grad (-Delta)^{-1}] G_low``.

    Evaluated through the radial reduction of the symbol
    ``(-|xi|)^{j1} (i xi)^{j2} [i xi/|xi|^2] exp(-s|xi|) chi(xi)``.  All
    transforms are real because the symbols are radial times monomials.

    Parameters
    ----------
    s : float
        Time, ``s > 0``.
    x : array_like, shape (N, 3) or (3,)
    variant : Variant or (j1, j2[, riesz])

    Returns
    -------
    ndarray, shape (N,) + (3,) * rank
    """
    return _kernel_part(s, x, _as_variant(variant), high=False)


def G_high(s: float, x, variant: Variant | tuple = Variant()) -> np.ndarray:
    """High-frequency counterpart of :func:`G_low` (symbol factor ``1 - chi``)."""
    return _kernel_part(s, x, _as_variant(variant), high=True)


def _as_variant(v) -> Variant:
    return v if isinstance(v, Variant) else Variant(*v)


def _mag(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        return np.abs(a)
    return np.sqrt(np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1))


KINDS = ("glow-riesz", "glow", "ghigh")


def kernel_bound(kind: str, t, x, j1: int, j2: int) -> np.ndarray:
    """Majorant for the kernel decay inequalities (unit constants).

    ``glow-riesz``: ``<x,t>^{-(2+j1+j2)}``;
    ``glow``: ``<t> 1_{j1=0} <x,t>^{-(4+j2)} + 1_{j1>=1} <x,t>^{-(3+j1+j2)}``;
    ``ghigh`` (Riesz form of the high part):
    ``t 1_{j1=0} (t+|x|)^{-(4+j2)} <x,t>^{-7} + 1_{j1>=1} (t+|x|)^{-(3+j1+j2)} <x,t>^{-7}``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    w = weight(t, x)
    if kind == "glow-riesz":
        return w ** (-(2.0 + j1 + j2))
    if kind == "glow":
        if j1 == 0:
            return time_bracket(t) / w ** (4.0 + j2)
        return w ** (-(3.0 + j1 + j2))
    if kind == "ghigh":
        s = t + np.linalg.norm(x, axis=-1)
        with np.errstate(divide="ignore"):
            if j1 == 0:
                return t / (s ** (4.0 + j2) * w ** 7)
            return 1.0 / (s ** (3.0 + j1 + j2) * w ** 7)
    raise UsageError(f"unknown kernel kind {kind!r}")


def kernel_value(kind: str, t: float, x, j1: int, j2: int) -> np.ndarray:
    """Magnitude (Frobenius norm) of the kernel derivative on the left of each bound."""
    if kind == "glow-riesz":
        return _mag(G_low(t, x, Variant(j1, j2, True)))
    if kind == "glow":
        return _mag(G_low(t, x, Variant(j1, j2, False)))
    if kind == "ghigh":
        return _mag(G_high(t, x, Variant(j1, j2, True)))
    raise UsageError(f"unknown kernel kind {kind!r}")


def builtin_kernel_samples(kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Builtin sample set: ``t`` in {1,...,32}, ``|x|`` in {0,1,...,32} along one diagonal.

    Magnitudes are rotation invariant, so a single direction per radius is
    enough.  The low-frequency kinds also include ``(t, x) = (0, 0)``.
    """
    direction = np.ones((1, 3)) / np.sqrt(3.0)
    radii = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    times = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    t, x = spacetime_samples(times, radii[1:], direction, include_origin=True)
    if kind != "ghigh":
        t = np.concatenate([[0.0], t])
        x = np.vstack([np.zeros((1, 3)), x])
    return t, x


def verify_kernel_decay(t, x, j1: int, j2: int, which: str, threads: int = 1) -> RatioReport:
    """Ratio table of kernel magnitude against the decay majorant."""
    if which not in KINDS:
        raise UsageError(f"unknown kernel kind {which!r}")
    if j1 + j2 > 4 or j1 < 0 or j2 < 0:
        raise UsageError("need 0 <= j1, j2 and j1 + j2 <= 4")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    if np.any(t < 0):
        raise UsageError("kernel samples need t >= 0")
    lhs = np.array(ordered_map(lambda i: float(kernel_value(which, t[i], x[i], j1, j2)[0]),
                               range(t.size), threads))
    rhs = kernel_bound(which, t, x, j1, j2)
    return RatioReport(f"kernel_decay_{which}_{j1}{j2}", t, x, lhs, rhs)
