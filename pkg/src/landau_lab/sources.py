"""Initial perturbations, their weighted norm, free moments and free-streaming density.

Both builtin families are separable, ``f0(x, v) = eps * x_1 a(|x|) b(|v|)``:

* ``gaussian-odd``: ``a = b = exp(-r^2)`` (closed-form transforms);
* ``polyweight``: ``a = b = (1 + r^2)^{-6}`` (numerical radial transforms).

A new family is added by writing a :class:`RadialProfile` for ``a`` and ``b``
and registering it in :data:`FAMILIES`.

Writing ``T_n[a](k) = 4 pi int r^{2+2n} a(r) j_n(kr)/(kr)^n dr`` (so that
``T_0`` is the transform of ``a``), the free-streaming density is::

    rho_free_hat(t, xi) = f0_hat(xi, t xi) = -i xi_1 p(t, |xi|),
    p(t, k) = eps * T_1[a](k) * T_0[b](t k).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from .foundation import NumericalFailure, UsageError, bracket, cube_directions


@dataclass
class RadialProfile:
    """Radial function with its scaled derivatives and transforms.

    Attributes
    ----------
    value, d1, d2 : callables of ``r^2``
        ``phi``, ``phi'(r)/r`` and ``((1/r) d/dr)^2 phi``.
    transform : callable ``(n, k) -> T_n(k)`` or None
        Closed-form radial transforms; ``None`` selects quadrature.
    proposal : (df, scale) or None
        Multivariate-t proposal for importance sampling (``None`` means the
        Gaussian ``N(0, I/2)``).
    """

    name: str
    value: Callable
    d1: Callable
    d2: Callable
    transform: Callable | None = None
    proposal: tuple | None = None
    _rgrid: tuple = field(default=None, repr=False)
    _tables: dict = field(default_factory=dict, repr=False)

    def _nodes(self):
        if self._rgrid is None:
            g, gw = np.polynomial.legendre.leggauss(16)
            edges = np.arange(0.0, 60.0 + 1e-12, 0.25)
            a, b = edges[:-1, None], edges[1:, None]
            r = (0.5 * (b - a) * g + 0.5 * (a + b)).ravel()
            w = (0.5 * (b - a) * gw).ravel()
            self._rgrid = (r, w)
        return self._rgrid

    def T(self, n: int, k) -> np.ndarray:
        """Radial transform ``T_n(k)``."""
        k = np.asarray(k, dtype=float)
        if self.transform is not None:
            return self.transform(n, k)
        if k.size <= 4096:
            return self.T_quadrature(n, k)
        # large requests go through a cubic table; the transforms of the builtin
        # profiles are below 1e-25 beyond the table end
        if n not in self._tables:
            from scipy.interpolate import CubicSpline

            grid = np.linspace(0.0, 80.0, 16001)
            self._tables[n] = CubicSpline(grid, self.T_quadrature(n, grid))
        out = np.zeros(k.shape)
        inside = k <= 80.0
        out[inside] = self._tables[n](k[inside])
        return out

    def T_quadrature(self, n: int, k) -> np.ndarray:
        from .radial import sph_ratio

        k = np.asarray(k, dtype=float)
        r, w = self._nodes()
        base = 4.0 * np.pi * w * r ** (2 + 2 * n) * self.value(r * r)
        flat = k.ravel()
        out = np.empty(flat.size)
        for start in range(0, flat.size, 512):
            kk = flat[start:start + 512]
            out[start:start + 512] = sph_ratio(n, np.outer(kk, r)) @ base
        return out.reshape(k.shape)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` points and return them with the proposal log density."""
        if self.proposal is None:
            y = rng.standard_normal((n, 3)) * np.sqrt(0.5)
            logq = -np.sum(y * y, axis=1) - 1.5 * np.log(np.pi)
            return y, logq
        df, scale = self.proposal
        dist = stats.multivariate_t(loc=np.zeros(3), shape=scale ** 2 * np.eye(3), df=df)
        y = dist.rvs(size=n, random_state=rng).reshape(n, 3)
        return y, dist.logpdf(y).reshape(n)


def _gauss_T(n: int, k):
    # T_0 = pi^{3/2} e^{-k^2/4}; T_n = (1/2)^n T_0 (from d/dk of T_0 repeatedly)
    return np.pi ** 1.5 * np.exp(-np.asarray(k) ** 2 / 4.0) * 0.5 ** n


GAUSSIAN = RadialProfile(
    "gaussian",
    value=lambda q: np.exp(-q),
    d1=lambda q: -2.0 * np.exp(-q),
    d2=lambda q: 4.0 * np.exp(-q),
    transform=_gauss_T,
)

POLY12 = RadialProfile(
    "poly12",
    value=lambda q: (1.0 + q) ** -6,
    d1=lambda q: -12.0 * (1.0 + q) ** -7,
    d2=lambda q: 168.0 * (1.0 + q) ** -8,
    transform=None,
    # multivariate t with 9 degrees of freedom and scale 1/3 is proportional to (1+r^2)^{-6}
    proposal=(9.0, 1.0 / 3.0),
)


def poly_transform_closed(nu: float, k) -> np.ndarray:
    """Closed-form transform of ``(1+r^2)^{-nu}`` (test oracle).

    ``(2 pi)^{3/2} 2^{1-nu} / Gamma(nu) * k^{nu-3/2} K_{nu-3/2}(k)``.
    """
    k = np.asarray(k, dtype=float)
    return (2 * np.pi) ** 1.5 * 2.0 ** (1 - nu) / special.gamma(nu) * k ** (nu - 1.5) * special.kv(nu - 1.5, k)


FAMILIES = {
    "gaussian-odd": (GAUSSIAN, GAUSSIAN),
    "polyweight": (POLY12, POLY12),
}


@dataclass
class InitialData:
    """Separable odd perturbation ``eps * x_1 a(|x|) b(|v|)``.

    The family is mean-zero by oddness in ``x_1``.
    """

    family: str
    epsilon: float
    a: RadialProfile
    b: RadialProfile
    mean_zero: bool = True

    @classmethod
    def builtin(cls, family: str, epsilon: float) -> "InitialData":
        if family not in FAMILIES:
            raise UsageError(f"unknown source family {family!r}")
        a, b = FAMILIES[family]
        return cls(family, float(epsilon), a, b)

    def scaled(self, epsilon: float) -> "InitialData":
        return InitialData(self.family, float(epsilon), self.a, self.b, self.mean_zero)

    # -- pointwise evaluation
    def __call__(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        qx = np.sum(x * x, axis=-1)
        qv = np.sum(v * v, axis=-1)
        return self.epsilon * x[..., 0] * self.a.value(qx) * self.b.value(qv)

    def derivatives(self, x, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value, gradient (6,) and Hessian (6, 6) in the joint variable ``(x, v)``."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        qx = np.sum(x * x, axis=-1)[..., None]
        qv = np.sum(v * v, axis=-1)[..., None]
        e1 = np.zeros(x.shape)
        e1[..., 0] = 1.0
        x1 = x[..., :1]
        a0, a1, a2 = self.a.value(qx), self.a.d1(qx), self.a.d2(qx)
        b0, b1, b2 = self.b.value(qv), self.b.d1(qv), self.b.d2(qv)
        g = x1 * a0
        gg = e1 * a0 + x1 * x * a1
        eye = np.eye(3)
        outer = lambda p, q: p[..., :, None] * q[..., None, :]
        gh = (a1[..., None] * (outer(e1, x) + outer(x, e1))
              + x1[..., None] * (a1[..., None] * eye + outer(x, x) * a2[..., None]))
        h = b0
        hg = v * b1
        hh = b1[..., None] * eye + outer(v, v) * b2[..., None]
        eps = self.epsilon
        val = eps * (g * h)[..., 0]
        grad = eps * np.concatenate([gg * h, g * hg], axis=-1)
        hess = np.empty(x.shape[:-1] + (6, 6))
        hess[..., :3, :3] = gh * h[..., None]
        hess[..., :3, 3:] = outer(gg, hg)
        hess[..., 3:, :3] = outer(hg, gg)
        hess[..., 3:, 3:] = g[..., None] * hh
        return val, grad, eps * hess

    # -- transforms
    def p_symbol(self, t, k) -> np.ndarray:
        """``p(t, k)`` with ``rho_free_hat = -i xi_1 p``; broadcasts ``t`` against ``k``."""
        t = np.asarray(t, dtype=float)
        k = np.asarray(k, dtype=float)
        return self.epsilon * self.a.T(1, k) * self.b.T(0, t * k)

    def p_table(self, times, k) -> np.ndarray:
        """``p`` on a (time, k) tensor grid, shape (n_t, n_k)."""
        times = np.asarray(times, dtype=float)
        k = np.asarray(k, dtype=float)
        ta = self.a.T(1, k)
        tb = self.b.T(0, np.outer(times, k))
        return self.epsilon * ta[None, :] * tb

    def sample(self, rng: np.random.Generator, n: int):
        """Importance samples ``(y, w, weight)`` with ``E[weight * phi(y, w)] = int f0 phi``."""
        y, ly = self.a.sample(rng, n)
        w, lw = self.b.sample(rng, n)
        logf = np.log(self.a.value(np.sum(y * y, axis=1))) + np.log(self.b.value(np.sum(w * w, axis=1)))
        weight = self.epsilon * y[:, 0] * np.exp(logf - ly - lw)
        return y, w, weight


def zero_data(family: str = "gaussian-odd") -> InitialData:
    return InitialData.builtin(family, 0.0)


# ---------------------------------------------------------------- weighted norm

def _norm_samples(n_radii: int = 40):
    radii = np.concatenate([[0.0], np.geomspace(0.05, 60.0, n_radii)])
    dirs = cube_directions()
    xs = np.concatenate([np.zeros((1, 3))] + [r * dirs for r in radii[1:]])
    vs = np.stack([radii, np.zeros_like(radii), np.zeros_like(radii)], axis=1)
    return xs, vs, radii


def f0_norm(data: InitialData, n_radii: int = 40) -> float:
    """Sampled weighted norm ``sum_{j<=2} sup <x,v>^10 |grad^j_{x,v} f0|``.

    Derivative magnitudes are invariant under rotations of ``v``, so ``v`` is
    sampled along one axis while ``x`` runs over 26 directions.

    Raises
    ------
    NumericalFailure
        If a supremum is attained on the outermost radius shell (the weighted
        quantity still grows there).
    """
    if data.epsilon == 0.0:
        return 0.0
    xs, vs, radii = _norm_samples(n_radii)
    X = np.repeat(xs, vs.shape[0], axis=0)
    V = np.tile(vs, (xs.shape[0], 1))
    val, grad, hess = data.derivatives(X, V)
    wt = bracket(X, V) ** 10
    total = 0.0
    rmax = radii[-1]
    for q in (np.abs(val), np.linalg.norm(grad, axis=-1), np.linalg.norm(hess.reshape(-1, 36), axis=-1)):
        wq = wt * q
        i = int(np.argmax(wq))
        if np.isclose(np.linalg.norm(X[i]), rmax) or np.isclose(np.linalg.norm(V[i]), rmax):
            raise NumericalFailure("f0 outside admissible class")
        total += float(wq[i])
    return total


# ---------------------------------------------------------------- moments

def tangent_gl(nodes: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Tangent-mapped Gauss-Legendre rule on the real line: ``v = tan(theta)``."""
    g, gw = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * np.pi * g
    return np.tan(theta), 0.5 * np.pi * gw / np.cos(theta) ** 2


def velocity_rule(nodes: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Tensor product of :func:`tangent_gl` in three dimensions."""
    v1, w1 = tangent_gl(nodes)
    V = np.array(list(itertools.product(v1, v1, v1)))
    W = np.array([a * b * c for a, b, c in itertools.product(w1, w1, w1)])
    return V, W


def free_moment(data: InitialData, j: int, x, nodes: int = 48, closed_form: bool = True) -> np.ndarray:
    """Velocity moment ``int v^{(x) j} f0(x, v) dv``.

    Separable families use the closed structure (the ``b`` factor is radial, so
    odd moments vanish and the second moment is isotropic) unless
    ``closed_form`` is false, in which case tangent-mapped tensor quadrature
    is used.
    """
    if j not in (0, 1, 2):
        raise UsageError("moment order must be 0, 1 or 2")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    qx = np.sum(x * x, axis=1)
    g = data.epsilon * x[:, 0] * data.a.value(qx)
    if closed_form:
        if j == 0:
            return g * float(data.b.T(0, 0.0))
        if j == 1:
            return np.zeros((x.shape[0], 3))
        m2 = _isotropic_second(data.b)
        return g[:, None, None] * (m2 / 3.0) * np.eye(3)[None]
    V, W = velocity_rule(nodes)
    out = []
    for xi in x:
        f = data(np.broadcast_to(xi, V.shape), V) * W
        if j == 0:
            out.append(np.sum(f))
        elif j == 1:
            out.append(f @ V)
        else:
            out.append(np.einsum("n,ni,nj->ij", f, V, V))
    return np.array(out)


def _isotropic_second(b: RadialProfile) -> float:
    """``int |v|^2 b(|v|) dv``."""
    from scipy import integrate

    val, err = integrate.quad(lambda r: 4 * np.pi * r ** 4 * b.value(r * r), 0, np.inf, epsrel=1e-12)
    return float(val)


def rho_free_hat(data: InitialData, t, xi) -> np.ndarray:
    """Free-streaming density transform ``f0_hat(xi, t xi) = -i xi_1 p(t, |xi|)``."""
    xi = np.asarray(xi, dtype=float)
    k = np.linalg.norm(xi, axis=-1)
    return -1j * xi[..., 0] * data.p_symbol(t, k)


def rho_free_hat_mc(data: InitialData, t: float, xi, n: int, rng: np.random.Generator,
                    max_sigma: float | None = None) -> tuple[complex, float]:
    """Monte-Carlo estimate of ``int int f0(x,v) exp(-i (x + t v).xi) dx dv``.

    Returns the estimate and its standard error.
    """
    xi = np.asarray(xi, dtype=float)
    y, w, weight = data.sample(rng, n)
    vals = weight * np.exp(-1j * ((y + t * w) @ xi))
    est = complex(np.mean(vals))
    sig = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    if max_sigma is not None and sig > max_sigma:
        raise NumericalFailure(f"Monte-Carlo error {sig:.3e} above tolerance {max_sigma:.3e}")
    return est, sig
