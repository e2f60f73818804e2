"""Radial Fourier machinery.

A radial function ``F(x) = F(|x|)`` with radial symbol ``h(k)`` satisfies::

    F(r) = (1/(2 pi^2)) int_0^inf h(k) k^2 j_0(k r) dk

and its iterated radial derivatives ``f_n = ((1/r) d/dr)^n F`` are::

    f_n(r) = (1/(2 pi^2)) int_0^inf h(k) k^2 (-k^2)^n j_n(k r)/(k r)^n dk.

Cartesian derivative tensors follow from ``d_i f_n = x_i f_{n+1}`` and
``d_i x_j = delta_ij``: ``d^m F`` is a sum over partial pairings of the index
slots with delta factors for pairs, ``x`` factors for singletons and
``f_{m - #pairs}`` as the radial weight.  Axisymmetric densities (symmetry
axis ``e_1``) are handled by expanding the symbol in Legendre polynomials of
``xi_1/|xi|`` and rewriting each term as ``d_1^p`` of a radial function.
"""
from __future__ import annotations

import itertools
import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .foundation import NumericalFailure, double_factorial_odd

_TWO_PI2 = 2.0 * np.pi ** 2


def sph_ratio(n: int, z) -> np.ndarray:
    """``j_n(z) / z^n`` including the ``z = 0`` limit ``1/(2n+1)!!``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    out = special.spherical_jn(n, zs) / zs ** n
    if np.any(small):
        z2 = np.where(small, z * z, 0.0)
        lim = 1.0 / double_factorial_odd(n)
        out = np.where(small, lim * (1.0 - z2 / (2.0 * (2 * n + 3))), out)
    return out


# ---------------------------------------------------------------- derivative plans

def _pairings(slots: tuple[int, ...]):
    """All partial pairings of ``slots`` as (pairs, singletons)."""
    if not slots:
        yield (), ()
        return
    first, rest = slots[0], slots[1:]
    for pairs, singles in _pairings(rest):
        yield pairs, (first,) + singles
    for i, other in enumerate(rest):
        remaining = rest[:i] + rest[i + 1:]
        for pairs, singles in _pairings(remaining):
            yield ((first, other),) + pairs, singles


@lru_cache(maxsize=None)
def derivative_plan(m: int, p: int = 0) -> dict:
    """Symbolic form of ``d_{a_1} ... d_{a_m} d_1^p F`` for radial ``F``.

    Returns a mapping from each free multi-index ``(a_1, ..., a_m)`` to a tuple
    of ``(n, powers, coef)`` terms meaning ``coef * f_n * x^powers``.
    """
    slots = tuple(range(m + p))
    pairings = list(_pairings(slots))
    plan = {}
    for multi in itertools.product(range(3), repeat=m):
        idx = list(multi) + [0] * p
        acc: dict = {}
        for pairs, singles in pairings:
            if any(idx[a] != idx[b] for a, b in pairs):
                continue
            powers = [0, 0, 0]
            for s in singles:
                powers[idx[s]] += 1
            key = (m + p - len(pairs), tuple(powers))
            acc[key] = acc.get(key, 0) + 1
        plan[multi] = tuple((n, pw, c) for (n, pw), c in sorted(acc.items()))
    return plan


def plan_orders(m: int, p: int = 0) -> list[int]:
    """Radial derivative orders ``n`` needed by :func:`derivative_plan`."""
    return sorted({n for terms in derivative_plan(m, p).values() for n, _, _ in terms})


def assemble_tensor(m: int, p: int, x: np.ndarray, fvals: dict) -> np.ndarray:
    """Evaluate the derivative tensor from radial profile values.

    Parameters
    ----------
    x : ndarray, shape (N, 3)
    fvals : dict
        ``n -> array`` broadcastable to ``(..., N)``.

    Returns
    -------
    ndarray, shape (..., N) + (3,) * m
    """
    x = np.asarray(x, dtype=float)
    plan = derivative_plan(m, p)
    some = next(iter(fvals.values()))
    lead = np.broadcast_shapes(np.shape(some), (x.shape[0],))
    out = np.zeros(lead + (3,) * m)
    powcache: dict = {}
    for multi, terms in plan.items():
        acc = np.zeros(lead)
        for n, pw, c in terms:
            mono = powcache.get(pw)
            if mono is None:
                mono = np.ones(x.shape[0])
                for axis in range(3):
                    if pw[axis]:
                        mono = mono * x[:, axis] ** pw[axis]
                powcache[pw] = mono
            acc = acc + c * fvals[n] * mono
        out[(Ellipsis,) + multi] = acc
    return out


# ---------------------------------------------------------------- frequency nodes

def composite_gl_nodes(k_min: float, k_split: float, k_max: float,
                       nodes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on ``[0, k_max]``.

    Panels: ``[0, k_min]``, then doubling widths up to ``k_split``, then
    uniform panels of width ``k_split`` up to ``k_max``.  Small panels near the
    origin resolve the late-time concentration of the density at ``|xi| ~ 1/t``.
    """
    edges = [0.0, k_min]
    while edges[-1] * 2.0 < k_split * (1 - 1e-12):
        edges.append(edges[-1] * 2.0)
    edges.append(k_split)
    n_uniform = int(round((k_max - k_split) / k_split))
    edges.extend(k_split + k_split * np.arange(1, n_uniform + 1))
    edges = np.asarray(edges)
    g, gw = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    k = (0.5 * (b - a) * g + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * gw).ravel()
    return k, w


def radial_kernel_matrix(k: np.ndarray, w: np.ndarray, r: np.ndarray, n: int) -> np.ndarray:
    """Matrix ``B[i, j] = w_j k_j^2 (-k_j^2)^n j_n(k_j r_i)/(k_j r_i)^n / (2 pi^2)``.

    Multiplying a symbol table ``h[t, j]`` by ``B.T`` gives ``f_n(t, r_i)``.
    """
    kr = np.outer(r, k)
    return sph_ratio(n, kr) * (w * k ** 2 * (-(k ** 2)) ** n / _TWO_PI2)[None, :]


def radial_profile_quad(h, r: float, n: int, a: float, b: float,
                        breaks=None, rtol: float = 1e-10) -> float:
    """Adaptive quadrature of ``f_n(r)`` for a symbol supported in ``[a, b]``."""
    def integrand(k):
        return h(k) * k * k * (-(k * k)) ** n * float(sph_ratio(n, k * r))

    pts = None
    if breaks is not None:
        pts = [p for p in breaks if a < p < b] or None
    # the absolute tolerance scales with the integral of |integrand|; a rough value suffices
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        scale, _ = integrate.quad(lambda k: abs(integrand(k)), a, b, points=pts, limit=400)
    val, err = integrate.quad(integrand, a, b, points=pts, limit=2000,
                              epsabs=max(scale * 1e-13, 1e-300), epsrel=rtol)
    if not np.isfinite(val) or err > max(1e-6 * abs(val), scale * 1e-10, 1e-300):
        raise NumericalFailure(f"radial quadrature did not converge (estimate {err:.3e}, value {val:.3e})")
    return val / _TWO_PI2


# ---------------------------------------------------------------- axisymmetric densities

@lru_cache(maxsize=None)
def legendre_monomial(ell: int) -> tuple:
    """Coefficients ``c_j`` with ``k^l P_l(xi_1/k) = sum_j c_j xi_1^{l-2j} k^{2j}``."""
    out = []
    for j in range(ell // 2 + 1):
        c = (-1) ** j * math.factorial(2 * ell - 2 * j) / (
            2 ** ell * math.factorial(j) * math.factorial(ell - j) * math.factorial(ell - 2 * j))
        out.append(c)
    return tuple(out)


def grouped_symbols(coeffs: dict, k: np.ndarray, level: str) -> dict:
    """Group Legendre coefficient tables into ``d_1^p`` radial symbols.

    The density symbol is ``sum_l (-i)^l a_l(k) P_l(xi_1/k)``.  For
    ``level="rho"`` the result ``{p: h_p}`` satisfies
    ``rho = sum_p d_1^p H_p`` with ``H_p`` radial of symbol ``h_p``; for
    ``level="potential"`` the same holds for ``Delta^{-1} rho``.
    """
    out: dict = {}
    for ell, a in coeffs.items():
        for j, c in enumerate(legendre_monomial(ell)):
            p = ell - 2 * j
            if level == "rho":
                sign, power = (-1) ** (ell - j), 2 * j - ell
            elif level == "potential":
                sign, power = (-1) ** (ell - j + 1), 2 * j - ell - 2
            else:
                raise ValueError(level)
            term = sign * c * a * k ** power
            out[p] = out[p] + term if p in out else term
    return out


class AxialDensity:
    """Axisymmetric real density given by Legendre coefficients per time.

    ``rho_hat(t, xi) = sum_l (-i)^l a_l(t, |xi|) P_l(xi_1/|xi|)`` with real
    ``a_l`` (reality of ``rho`` forces real coefficients).

    Parameters
    ----------
    times : ndarray, shape (n_t,)
    k, w : ndarray, shape (n_k,)
        Radial frequency nodes and quadrature weights.
    coeffs : dict
        ``l -> ndarray (n_t, n_k)``.
    """

    def __init__(self, times, k, w, coeffs: dict):
        self.times = np.asarray(times, dtype=float)
        self.k = np.asarray(k, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.coeffs = {int(l): np.asarray(a, dtype=float) for l, a in coeffs.items()}
        self._groups: dict = {}

    @property
    def lmax(self) -> int:
        return max(self.coeffs) if self.coeffs else 0

    def groups(self, level: str) -> dict:
        if level not in self._groups:
            self._groups[level] = grouped_symbols(self.coeffs, self.k, level)
        return self._groups[level]

    def symbol(self, xi, tindex=None) -> np.ndarray:
        """``rho_hat`` at frequency vectors ``xi`` (N, 3) on the stored k nodes only
        through interpolation in ``k``; returns (n_t, N) complex."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        kk = np.linalg.norm(xi, axis=1)
        c = np.where(kk > 0, xi[:, 0] / np.where(kk > 0, kk, 1.0), 0.0)
        sel = slice(None) if tindex is None else np.atleast_1d(tindex)
        out = 0j
        for ell, a in self.coeffs.items():
            tab = a[sel]
            vals = np.stack([np.interp(kk, self.k, row) for row in tab])
            out = out + (-1j) ** ell * vals * special.eval_legendre(ell, c)[None, :]
        return out

    def evaluate(self, x, order: int | str, tindex=None, chunk: int = 256) -> np.ndarray:
        """Physical-space evaluation.

        Parameters
        ----------
        x : array_like, shape (N, 3)
        order : int or "rho"
            ``m`` in ``grad^m Delta^{-1} rho`` (``0`` is the potential) or the
            density itself.
        tindex : int, sequence of int or None
            Time indices (``None`` means all stored times).

        Returns
        -------
        ndarray, shape (n_sel_t, N) + (3,) * m
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if order == "rho":
            level, m = "rho", 0
        else:
            level, m = "potential", int(order)
        groups = self.groups(level)
        idx = np.arange(self.times.size) if tindex is None else np.atleast_1d(tindex)
        out = np.zeros((idx.size, x.shape[0]) + (3,) * m)
        for start in range(0, x.shape[0], chunk):
            xs = x[start:start + chunk]
            r = np.linalg.norm(xs, axis=1)
            for p, h in groups.items():
                hs = h[idx]
                fvals = {}
                for n in plan_orders(m, p):
                    B = radial_kernel_matrix(self.k, self.w, r, n)
                    fvals[n] = hs @ B.T
                out[:, start:start + chunk] += assemble_tensor(m, p, xs, fvals)
        return out


class ProfileTable:
    """Tabulated radial profiles of one derivative order for fast evaluation.

    Stores ``f_n^{(p)}(t_i, r_j)`` on a uniform ``r`` grid and interpolates with
    four-point Lagrange stencils.  Beyond the table radius potential-level
    orders are continued with the dipole decay ``(r_max / r)^(2 + m)`` from the
    table edge (the frequency quadrature itself loses accuracy at large ``r``);
    density-level values fall back to the direct quadrature sum.
    """

    def __init__(self, density: AxialDensity, order: int | str = 1,
                 r_max: float = 40.0, dr: float = 0.05):
        self.density = density
        self.order = order
        self.level, self.m = ("rho", 0) if order == "rho" else ("potential", int(order))
        self.dr = float(dr)
        self.r = np.arange(0.0, r_max + 3 * dr, dr)
        self.r_max = float(r_max)
        self.tables: dict = {}
        for p, h in density.groups(self.level).items():
            for n in plan_orders(self.m, p):
                B = radial_kernel_matrix(density.k, density.w, self.r, n)
                self.tables[(p, n)] = h @ B.T

    def _interp(self, tab_row: np.ndarray, r: np.ndarray) -> np.ndarray:
        u = r / self.dr
        i = np.clip(np.floor(u).astype(int), 1, self.r.size - 3)
        s = u - i
        f0, f1, f2, f3 = tab_row[i - 1], tab_row[i], tab_row[i + 1], tab_row[i + 2]
        # cubic Lagrange through nodes -1, 0, 1, 2
        return (-s * (s - 1) * (s - 2) / 6.0 * f0 + (s + 1) * (s - 1) * (s - 2) / 2.0 * f1
                - (s + 1) * s * (s - 2) / 2.0 * f2 + (s + 1) * s * (s - 1) / 6.0 * f3)

    def __call__(self, tindex: int, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        inside = r <= self.r_max
        out = np.zeros((x.shape[0],) + (3,) * self.m)
        if np.any(inside):
            xi = x[inside]
            ri = r[inside]
            val = 0.0
            for p in self.density.groups(self.level):
                fvals = {n: self._interp(self.tables[(p, n)][tindex], ri) for n in plan_orders(self.m, p)}
                val = val + assemble_tensor(self.m, p, xi, fvals)
            out[inside] = val
        if not np.all(inside):
            xo, ro = x[~inside], r[~inside]
            if self.level == "rho":
                out[~inside] = self.density.evaluate(xo, self.order, tindex=tindex)[0]
            else:
                scale = self.r_max / ro
                edge = self(tindex, xo * (scale * (1.0 - 1e-12))[:, None])
                out[~inside] = edge * (scale ** (2 + self.m)).reshape((-1,) + (1,) * self.m)
        return out
