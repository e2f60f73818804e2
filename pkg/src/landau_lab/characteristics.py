"""Perturbed characteristics, the velocity straightening map and their pointwise bounds.

Backward characteristics from ``(x, v)`` at time ``t`` are written as

    X_{s,t}(x, v) = x - (t - s) v + Y_{s,t}(x - v t, v),
    V_{s,t}(x, v) = v + W_{s,t}(x - v t, v),

where the corrections are evaluated in the shifted chart ``z = x - v t``:

    Y_{s,t}(z, v) =  int_s^t (tau - s) E(tau, z + tau v + Y_{tau,t}(z, v)) dtau,
    W_{s,t}(z, v) = -int_s^t           E(tau, z + tau v + Y_{tau,t}(z, v)) dtau.

:func:`picard_YW` takes chart arguments; :func:`psi_map` takes phase-space
arguments and converts at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .foundation import NumericalFailure, RatioReport, UsageError, bracket, ordered_map, time_bracket


class FieldHandle:
    """Read-only electric field ``E(t, x)`` on ``[0, T] x R^3``.

    Parameters
    ----------
    fn : callable ``(t, x) -> E``
        ``t`` a float, ``x`` of shape (N, 3); returns shape (N, 3).
    grid : ndarray, optional
        Snapshot times.  When given, quadrature in time uses these nodes.
    step : float
        Node spacing for closed-form fields.
    """

    def __init__(self, fn: Callable, grid: np.ndarray | None = None, step: float = 0.02,
                 T: float = np.inf, name: str = "field", zero: bool = False):
        self._fn = fn
        self.grid = None if grid is None else np.asarray(grid, dtype=float)
        self.step = float(step)
        self.T = float(T if grid is None else self.grid[-1])
        self.name = name
        self.is_zero = zero

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if t < 0 or t > self.T * (1 + 1e-12):
            raise UsageError(f"field evaluated outside [0, {self.T}] at t={t}")
        return np.asarray(self._fn(float(t), x), dtype=float).reshape(x.shape)

    def nodes(self, s: float, t: float) -> np.ndarray:
        """Quadrature nodes covering ``[s, t]`` (endpoints included)."""
        if t <= s:
            return np.array([t])
        if self.grid is not None:
            inner = self.grid[(self.grid > s + 1e-12) & (self.grid < t - 1e-12)]
            return np.concatenate([[s], inner, [t]])
        n = max(2, int(np.ceil((t - s) / self.step - 1e-9)))
        return np.linspace(s, t, n + 1)

    def gradient(self, t: float, x, h: float = 1e-4) -> np.ndarray:
        """Central-difference Jacobian ``dE_i/dx_j``, shape (N, 3, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape + (3,))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            out[:, :, j] = (self(t, x + e) - self(t, x - e)) / (2 * h)
        return out

    # constructors
    @classmethod
    def zero(cls, T: float = np.inf) -> "FieldHandle":
        return cls(lambda t, x: np.zeros_like(x), T=T, name="zero", zero=True)

    @classmethod
    def constant(cls, c, T: float = np.inf) -> "FieldHandle":
        c = np.asarray(c, dtype=float).reshape(3)
        return cls(lambda t, x: np.broadcast_to(c, x.shape).copy(), T=T, name="constant")

    @classmethod
    def synthetic(cls, a=(1e-2, 0.0, 0.0), step: float = 0.01, T: float = np.inf) -> "FieldHandle":
        """Decaying test field ``a exp(-t) (1 + |x|^2)^{-2}``."""
        a = np.asarray(a, dtype=float).reshape(3)

        def fn(t, x):
            q = 1.0 + np.sum(x * x, axis=-1)
            return np.exp(-t) * a[None, :] / (q * q)[:, None]
        return cls(fn, step=step, T=T, name="synthetic")

    @classmethod
    def from_grid(cls, times, at_index: Callable) -> "FieldHandle":
        """Field known at snapshot times; linear interpolation in between."""
        times = np.asarray(times, dtype=float)
        dt = times[1] - times[0]

        def fn(t, x):
            u = t / dt
            i = int(np.floor(u + 1e-9))
            if i >= times.size - 1:
                return at_index(times.size - 1, x)
            th = u - i
            if th < 1e-9:
                return at_index(i, x)
            return (1 - th) * at_index(i, x) + th * at_index(i + 1, x)
        return cls(fn, grid=times, name="grid")


@dataclass
class CharacteristicState:
    """Converged corrections at ``(s, t)`` for chart base point ``(x, v)``."""

    s: float
    t: float
    x: np.ndarray
    v: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    iterations: int
    residual: float


def _tail_integrals(tau: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid tails ``int_{tau_i}^{t} F`` and ``int_{tau_i}^{t} sigma F`` on the nodes."""
    d = np.diff(tau)[:, None, None]
    G = tau[:, None, None] * F
    seg_f = 0.5 * d * (F[1:] + F[:-1])
    seg_g = 0.5 * d * (G[1:] + G[:-1])
    B = np.zeros_like(F)
    A = np.zeros_like(F)
    B[:-1] = np.cumsum(seg_f[::-1], axis=0)[::-1]
    A[:-1] = np.cumsum(seg_g[::-1], axis=0)[::-1]
    return A, B


def picard_path(field: FieldHandle, s: float, t: float, x, v, tol: float = 1e-10,
                max_iter: int = 60) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, float]:
    """Picard iteration for the whole correction path ``tau -> Y_{tau,t}`` (batched).

    Parameters
    ----------
    x, v : array_like, shape (N, 3)
        Chart base points.

    Returns
    -------
    tau : ndarray (n_tau,)
    Y, W : ndarray (n_tau, N, 3)
        ``Y_{tau,t}`` and ``W_{tau,t}`` at every node.
    iterations : int
        Number of updates before the iterate stopped moving (by more than ``tol``).
    residual : float
        Last sup-difference between successive iterates.
    """
    if not (0 <= s <= t):
        raise UsageError("need 0 <= s <= t")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    tau = field.nodes(s, t)
    Y = np.zeros((tau.size,) + x.shape)
    if field.is_zero or tau.size == 1:
        return tau, Y, np.zeros_like(Y), 0, 0.0
    base = x[None] + tau[:, None, None] * v[None]
    last = np.inf
    for it in range(max_iter + 1):
        F = np.stack([field(tau[i], base[i] + Y[i]) for i in range(tau.size)])
        A, B = _tail_integrals(tau, F)
        Y_new = A - tau[:, None, None] * B
        res = float(np.max(np.abs(Y_new - Y)))
        Y = Y_new
        if res <= tol:
            return tau, Y, -B, it, res
        if not np.isfinite(res) or (it > 3 and res > 10 * last):
            break
        last = res
    raise NumericalFailure("Picard divergence: field too large")


def picard_YW(field: FieldHandle, s: float, t: float, x, v, tol: float = 1e-10,
              max_iter: int = 60) -> CharacteristicState:
    """``Y_{s,t}(x, v)`` and ``W_{s,t}(x, v)`` in the shifted chart.

    The path ``tau -> Y_{tau,t}`` is iterated on the field's time nodes with
    the composite trapezoid rule until successive iterates differ by at most
    ``tol`` in sup norm.  A constant field converges after one update because
    the trapezoid rule is exact on the linear integrand.

    Raises
    ------
    NumericalFailure
        If the iteration does not converge within ``max_iter`` updates.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    tau, Y, W, it, res = picard_path(field, s, t, x[None], v[None], tol, max_iter)
    return CharacteristicState(s, t, x, v, Y[0, 0].copy(), W[0, 0].copy(), it, res)


def shooting_YW(field: FieldHandle, s: float, t: float, x, v, rtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Independent oracle: integrate ``dX/ds = V, dV/ds = E(s, X)`` backwards from ``t``.

    Takes chart arguments like :func:`picard_YW`.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    if t == s:
        return np.zeros(3), np.zeros(3)

    def rhs(tt, y):
        return np.concatenate([y[3:], field(tt, y[None, :3])[0]])

    y0 = np.concatenate([x + t * v, v])
    sol = integrate.solve_ivp(rhs, (t, s), y0, method="DOP853", rtol=rtol, atol=1e-14)
    if not sol.success:
        raise NumericalFailure(f"shooting oracle failed: {sol.message}")
    X, V = sol.y[:3, -1], sol.y[3:, -1]
    return X - x - s * v, V - v


def backward_characteristic(field: FieldHandle, s: float, t: float, x, v, tol: float = 1e-10,
                            max_iter: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Phase-space ``(X_{s,t}, V_{s,t})(x, v)`` for batches of points, shape (N, 3) each."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    _, Y, W, _, _ = picard_path(field, s, t, x - t * v, v, tol, max_iter)
    return x - (t - s) * v + Y[0], v + W[0]


def psi_map(field: FieldHandle, s: float, t: float, x, v, tol: float = 1e-10,
            max_iter: int = 60) -> tuple[np.ndarray, float]:
    """Velocity ``Psi`` with ``X_{s,t}(x, Psi) = x - (t - s) v`` (phase-space arguments).

    Iterates ``Psi <- v + Y_{s,t}(x - Psi t, Psi) / (t - s)``, which is the
    relation ``Psi - v = -Phi_{s,t}(x, Psi)``.

    Returns
    -------
    psi : ndarray (3,)
    residual : float
        ``|X_{s,t}(x, Psi) - (x - (t - s) v)|``.
    """
    if not s < t:
        raise UsageError("psi_map needs s < t")
    x = np.asarray(x, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    psi = v.copy()
    inner_tol = min(tol * 1e-2, 1e-12)
    for _ in range(max_iter):
        Y = picard_YW(field, s, t, x - psi * t, psi, inner_tol, max_iter).Y
        new = v + Y / (t - s)
        step = float(np.max(np.abs(new - psi)))
        psi = new
        if step * (t - s) <= tol * 1e-2:
            break
    else:
        raise NumericalFailure("Picard divergence: field too large")
    X = x - (t - s) * psi + picard_YW(field, s, t, x - psi * t, psi, inner_tol, max_iter).Y
    res = float(np.linalg.norm(X - (x - (t - s) * v)))
    if res > tol * (t - s):
        raise NumericalFailure(f"psi_map identity residual {res:.3e} above tolerance")
    return psi, res


# ------------------------------------------------------------------ bounds

ALLOWED_ORDERS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1))


def _fd_derivative(fn: Callable, z: np.ndarray, n: int, h: float) -> np.ndarray:
    """Central differences of a vector map ``fn(z)`` (z in R^3) up to order 2."""
    if n == 0:
        return fn(z)
    if n == 1:
        out = []
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            out.append((fn(z + e) - fn(z - e)) / (2 * h))
        return np.stack(out, axis=-1)
    raise UsageError("only first-order differences are supported directly")


def _derivative(Ymap: Callable, x: np.ndarray, v: np.ndarray, n1: int, n2: int,
                h1: float, h2: float) -> np.ndarray:
    """``grad_x^{n1} grad_v^{n2}`` of ``Ymap(x, v)`` by nested central differences."""
    if n2 >= 1:
        return _fd_derivative(lambda vv: _derivative(Ymap, x, vv, n1, n2 - 1, h1, h2), v, 1, h2)
    if n1 >= 1:
        return _fd_derivative(lambda xx: _derivative(Ymap, xx, v, n1 - 1, 0, h1, h2), x, 1, h1)
    return Ymap(x, v)


def _majorant(which: str, s: float, t: float, x, v, n1: int, n2: int, kappa0: float) -> float:
    """Integral majorants with unit constant (multiply by ``M``)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = n1 + n2
    if t <= s:
        return 0.0
    if which in ("a9", "a10"):
        lin = (lambda tau: tau - s) if which == "a9" else (lambda tau: 1.0)
        expo = (3 + n - kappa0) if n <= 1 else 4.0

        def f(tau):
            return lin(tau) * tau ** n2 * float(bracket(tau, x + tau * v)) ** (-expo)
    elif which == "a13":
        def f(tau):
            return (tau - s) / (t - s) * float(bracket(tau, x - (t - tau) * v)) ** (-(3 - kappa0))
    elif which == "a15":
        def f(tau):
            return (tau - s) * (t - tau + 1) / (t - s) * float(bracket(tau, x - (t - tau) * v)) ** (-(4 - kappa0))
    else:
        raise UsageError(f"unknown bound {which!r}")
    val, _ = integrate.quad(f, s, t, limit=200, epsabs=0.0, epsrel=1e-10)
    return float(val)


def field_size(field: FieldHandle, T: float, kappa0: float, radii=(0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
               n_times: int = 21) -> float:
    """Measured stand-in for ``M``: sampled sup of the two leading weighted field norms.

    ``sup <t,x>^{3-kappa0} |E| + sup <t,x>^{4-kappa0} |grad E|`` over radii
    along the coordinate axes and the diagonals.
    """
    if field.is_zero:
        return 0.0
    T = min(T, field.T)
    times = np.linspace(0.0, T, n_times)
    dirs = np.vstack([np.eye(3), -np.eye(3), np.ones((1, 3)) / np.sqrt(3), -np.ones((1, 3)) / np.sqrt(3)])
    pts = np.vstack([r * dirs for r in radii])
    best1 = best2 = 0.0
    for tt in times:
        w = bracket(tt, pts)
        e = np.linalg.norm(field(tt, pts), axis=-1)
        g = np.linalg.norm(field.gradient(tt, pts).reshape(len(pts), -1), axis=-1)
        best1 = max(best1, float(np.max(w ** (3 - kappa0) * e)))
        best2 = max(best2, float(np.max(w ** (4 - kappa0) * g)))
    return best1 + best2


def _frob(a) -> float:
    return float(np.sqrt(np.sum(np.asarray(a) ** 2)))


@dataclass
class CharSample:
    """One sample ``(s, t, x, v)``; ``x`` is a chart point for a9/a10, phase-space for a13/a15."""

    s: float
    t: float
    x: np.ndarray
    v: np.ndarray


def builtin_char_samples(which: str, seed: int = 7, n: int = 40, T: float = 20.0) -> list[CharSample]:
    """Fixed sample set: ``t`` in {5, 10, T}, ``s`` spread over ``[0, t)``, moderate ``(x, v)``."""
    rng = np.random.default_rng(seed)
    out = []
    ts = [5.0, 10.0, T]
    for i in range(n):
        t = ts[i % len(ts)]
        s = float(rng.uniform(0, 0.9 * t))
        if which == "a15" and i < 6:
            s, t = 0.0, 10.0
        x = rng.normal(0, 2.0, 3)
        v = rng.normal(0, 0.6, 3)
        out.append(CharSample(s, t, x, v))
    return out


def verify_char_bounds(field: FieldHandle, samples: list[CharSample], which: str,
                       n1: int = 0, n2: int = 0, M: float | None = None, kappa0: float = 0.05,
                       tol: float = 1e-13, max_iter: int = 80, threads: int = 1) -> RatioReport:
    """Ratio table for one characteristic bound.

    ``a9``/``a10`` compare ``|grad_x^{n1} grad_v^{n2} Y|`` (resp. ``W``) against
    the tau-integral majorant; ``a13`` compares ``|Psi - v|``; ``a15`` compares
    ``|det grad_v Psi - 1|``.  Derivatives are central differences with
    relative steps ``1e-4`` (first order) and ``1e-3`` (second order); a
    Richardson comparison at doubled step is stored in ``extra``.  ``M``
    defaults to :func:`field_size`.  The trend axis is ``<s>``.
    """
    if which not in ("a9", "a10", "a13", "a15"):
        raise UsageError(f"unknown bound {which!r}")
    if which in ("a9", "a10") and (n1, n2) not in ALLOWED_ORDERS:
        raise UsageError("need n1 + n2 <= 2 and n2 in {0, 1}")
    n = n1 + n2
    if M is None:
        M = field_size(field, max(sm.t for sm in samples), kappa0)
    rel = 1e-4 if n <= 1 else 1e-3
    if which in ("a13", "a15"):
        rel = 1e-4
    if n > 0 or which == "a15":
        order = 1 if which == "a15" else n
        if tol >= 1e-2 * rel ** order:
            raise NumericalFailure("finite-difference step too small for the iteration tolerance")

    def one(sm: CharSample):
        x, v = np.asarray(sm.x, float), np.asarray(sm.v, float)
        if field.is_zero:
            return 0.0, 0.0
        if which in ("a9", "a10"):
            pick = 0 if which == "a9" else 1

            def Ymap(xx, vv):
                st = picard_YW(field, sm.s, sm.t, xx, vv, tol, max_iter)
                return st.Y if pick == 0 else st.W

            def value(scale):
                h1 = rel * scale * max(1.0, float(np.linalg.norm(x)))
                h2 = rel * scale * max(1.0, float(np.linalg.norm(v)))
                return _frob(_derivative(Ymap, x, v, n1, n2, h1, h2))
            lhs = value(1.0)
            rich = value(2.0) if n > 0 else lhs
            return lhs, abs(rich - lhs)
        if sm.t <= sm.s:
            return 0.0, 0.0
        pmap = lambda vv: psi_map(field, sm.s, sm.t, x, vv, 1e-12, max_iter)[0]
        if which == "a13":
            return _frob(pmap(v) - v), 0.0

        def det(scale):
            h = rel * scale * max(1.0, float(np.linalg.norm(v)))
            return float(np.linalg.det(_fd_derivative(pmap, v, 1, h))) - 1.0
        d1 = det(1.0)
        return abs(d1), abs(det(2.0) - d1)

    res = ordered_map(one, samples, threads)
    lhs = np.array([r[0] for r in res])
    rich = np.array([r[1] for r in res])
    rhs = np.array([M * _majorant(which, sm.s, sm.t, sm.x, sm.v, n1, n2, kappa0) for sm in samples])
    t = np.array([sm.t for sm in samples])
    xs = np.array([np.asarray(sm.x, float) for sm in samples])
    s = np.array([sm.s for sm in samples])
    name = f"char_{which}" + (f"_{n1}{n2}" if which in ("a9", "a10") else "")
    return RatioReport(name, t, xs, lhs, rhs, extra={"s": s, "richardson": rich},
                       trend_axis=time_bracket(s))


def identity_check(field: FieldHandle, n: int = 100, seed: int = 11, T: float = 20.0,
                   tol: float = 1e-10, threads: int = 1) -> dict:
    """Defining-identity residuals of :func:`psi_map` at ``n`` random ``(s, t, x, v)``."""
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n):
        t = float(rng.uniform(1.0, T))
        s = float(rng.uniform(0.0, t - 0.5))
        pts.append((s, t, rng.normal(0, 2.0, 3), rng.normal(0, 0.6, 3)))

    def one(p):
        s, t, x, v = p
        _, res = psi_map(field, s, t, x, v, tol)
        return res / (t - s)

    scaled = np.array(ordered_map(one, pts, threads))
    return {"samples": n, "max_scaled_residual": float(scaled.max()), "tolerance": tol}
