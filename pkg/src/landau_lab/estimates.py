"""Weighted space-time integrals behind the decay bounds, and the singular-part bound.

``lemma_a8_*``: convolution of two space-time brackets,
``lemma_a3_*``: velocity average of ``<x - t v, v>^{-n-3}``,
``A_integral``: the eight triple integrals ``A_1 .. A_8``,
``singular_decay_check``: derivatives of the potential of the singular
density parts against ``[f0] <t,x>^{-(3+n1+n2)}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .foundation import (NumericalFailure, RatioReport, UsageError, bracket, ordered_map,
                         spacetime_samples, task_rng, time_bracket, weight)
from .radial import composite_gl_nodes
from .sources import InitialData, f0_norm


# ---------------------------------------------------------------- shared reduction

def _c_average(A, B, beta: float):
    """``int_{-1}^{1} (A - B c)^{-beta/2} dc`` for ``A > B >= 0``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    e = 1.0 - beta / 2.0
    small = B < 1e-8 * A
    Bs = np.where(small, 1.0, B)
    # the small-B placeholder can make A - Bs vanish; that branch is discarded below
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(e) < 1e-14:
            gen = (np.log(A + Bs) - np.log(A - Bs)) / Bs
        else:
            gen = ((A - Bs) ** e - (A + Bs) ** e) / (Bs * (beta / 2.0 - 1.0))
    return np.where(small, 2.0 * A ** (-beta / 2.0), gen)


def _quad(f, a, b, points=None, what: str = "integral", epsrel: float = 1e-10):
    val, err = integrate.quad(f, a, b, points=points, limit=400, epsabs=0.0, epsrel=epsrel)
    if not np.isfinite(val) or err > max(1e-8 * abs(val), 1e-300):
        raise NumericalFailure(f"adaptive quadrature failed for {what}: value {val:.6e}, achieved error {err:.3e}")
    return float(val), float(err)


# ---------------------------------------------------------------- convolution bound

def _check_betas(beta1: float, beta2: float):
    if not (beta1 >= max(4.0, beta2) and max(4.0, beta2) >= 3.0 and beta2 >= 3.0):
        raise UsageError("need beta1 >= max(4, beta2) >= 3 with beta2 >= 3")


def lemma_a8_lhs(beta1: float, beta2: float, t: float, x, swapped: bool = False) -> float:
    """``int_0^t int <t-s, x-y>^{-beta1} <s, y>^{-beta2} dy ds``.

    The ``y`` integral uses spherical coordinates about the axis through
    ``x``: the angular integral is analytic and the radial one adaptive.
    With ``swapped`` the same value is computed after the change of variables
    ``s -> t - s``, ``y -> x - y``, which exchanges the roles of the kernels.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if t < 0:
        raise UsageError("t must be non-negative")
    if t == 0:
        return 0.0
    r = float(np.linalg.norm(x))
    # the kernel centered at the origin of the radial variable, and the other one
    b_center, b_other = (beta1, beta2) if swapped else (beta2, beta1)

    def radial(s):
        s_center = (t - s) if swapped else s
        s_other = s if swapped else (t - s)

        def f(rho):
            A = 1.0 + s_other ** 2 + r * r + rho * rho
            B = 2.0 * r * rho
            return 2 * np.pi * rho * rho * (1.0 + s_center ** 2 + rho * rho) ** (-b_center / 2) * _c_average(A, B, b_other)
        edge = r + t + 10.0
        pts = [r] if r > 0 else None
        v1, _ = _quad(f, 0.0, edge, points=pts, what="radial integral")
        v2, _ = _quad(f, edge, np.inf, what="radial tail")
        return v1 + v2

    val, _ = _quad(radial, 0.0, t, what="time integral", epsrel=1e-9)
    return val


def lemma_a8_rhs(beta1: float, beta2: float, t: float, x) -> float:
    w = float(bracket(t, np.asarray(x, dtype=float)))
    r = float(np.linalg.norm(x))
    if beta1 > 4:
        return w ** (-beta2)
    return np.log(2.0 + abs(t) + r) * w ** (-beta2)


def lemma_a8_check(beta1: float, beta2: float, t: float, x) -> tuple[float, float, float]:
    """``(lhs, rhs, ratio)`` for the space-time convolution bound."""
    _check_betas(beta1, beta2)
    lhs = lemma_a8_lhs(beta1, beta2, t, x)
    rhs = lemma_a8_rhs(beta1, beta2, t, x)
    return lhs, rhs, lhs / rhs


def lemma_a8_symmetry(beta1: float, beta2: float, t: float, x) -> float:
    """Relative difference between the direct and the reparametrized evaluation."""
    a = lemma_a8_lhs(beta1, beta2, t, x)
    b = lemma_a8_lhs(beta1, beta2, t, x, swapped=True)
    return abs(a - b) / max(abs(a), 1e-300)


A8_PARAMS = ((5.0, 3.0), (4.0, 4.0), (6.0, 4.0))
A8_POINTS = ((0.0, 20.0), (1.0, 0.0), (4.0, 2.0), (10.0, 0.0), (10.0, 5.0), (5.0, 20.0), (20.0, 20.0))


def lemma_a8_report(params=A8_PARAMS, points=A8_POINTS, threads: int = 1) -> RatioReport:
    """Ratio table over ``(beta1, beta2)`` times ``(t, |x|)`` with ``x`` along ``e_1``."""
    cases = [(b1, b2, t, r) for b1, b2 in params for t, r in points]

    def one(c):
        b1, b2, t, r = c
        lhs, rhs, _ = lemma_a8_check(b1, b2, t, [r, 0.0, 0.0])
        return lhs, rhs
    res = ordered_map(one, cases, threads)
    t = np.array([c[2] for c in cases])
    x = np.array([[c[3], 0.0, 0.0] for c in cases])
    return RatioReport("lemma_a8", t, x, [r[0] for r in res], [r[1] for r in res],
                       extra={"beta1": [c[0] for c in cases], "beta2": [c[1] for c in cases]})


# ---------------------------------------------------------------- velocity average

def lemma_a3_lhs(n: float, t: float, x) -> float:
    """``int <x - t v, v>^{-n-3} dv`` (axial reduction about ``x``)."""
    if not n > 0:
        raise UsageError("need n > 0")
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    beta = n + 3.0

    def f(rho):
        A = 1.0 + r * r + (1.0 + t * t) * rho * rho
        B = 2.0 * t * r * rho
        return 2 * np.pi * rho * rho * _c_average(A, B, beta)
    scale = 1.0 / np.sqrt(1.0 + t * t)
    peak = r * t / (1.0 + t * t)
    edge = peak + 20.0 * scale + 1.0
    pts = [peak] if peak > 0 else None
    v1, _ = _quad(f, 0.0, edge, points=pts, what="velocity average")
    v2, _ = _quad(f, edge, np.inf, what="velocity average tail")
    return v1 + v2


def lemma_a3_rhs(n: float, t: float, x) -> float:
    bt = float(bracket(t))
    return bt ** -3 * float(bracket(np.asarray(x, dtype=float) / bt)) ** (-n)


def lemma_a3_check(n: float, t: float, x) -> tuple[float, float, float]:
    lhs = lemma_a3_lhs(n, t, x)
    rhs = lemma_a3_rhs(n, t, x)
    return lhs, rhs, lhs / rhs


A3_ORDERS = (1.0, 2.0, 4.0)
A3_POINTS = tuple((t, r) for t in (0.0, 1.0, 3.0, 10.0, 30.0, 100.0) for r in (0.0, 5.0, 20.0))


def lemma_a3_report(orders=A3_ORDERS, points=A3_POINTS, threads: int = 1) -> RatioReport:
    cases = [(n, t, r) for n in orders for t, r in points]

    def one(c):
        n, t, r = c
        lhs, rhs, _ = lemma_a3_check(n, t, [r, 0.0, 0.0])
        return lhs, rhs
    res = ordered_map(one, cases, threads)
    t = np.array([c[1] for c in cases])
    x = np.array([[c[2], 0.0, 0.0] for c in cases])
    return RatioReport("lemma_a3", t, x, [r[0] for r in res], [r[1] for r in res],
                       extra={"n": [c[0] for c in cases]})


def lemma_a3_slope(n: float = 2.0, times=None) -> float:
    """Log-log slope of the velocity average at ``x = 0`` over ``t`` in [10, 100]."""
    from .foundation import fit_slope
    times = np.geomspace(10.0, 100.0, 8) if times is None else np.asarray(times, dtype=float)
    return fit_slope(times, [lemma_a3_lhs(n, t, np.zeros(3)) for t in times])


# ---------------------------------------------------------------- A_1 .. A_8

@dataclass(frozen=True)
class WeightedIntegralSpec:
    """Exponents of ``<s, x-(t-s)v>^{-a} <tau, x-(t-tau)v>^{-b} <v>^{-c}`` and the (s, tau) factor."""

    k: int
    a_shift: float   # a = a_shift - kappa0
    b_shift: float   # b = b_shift - kappa0
    c: float
    factor: str

    def exponents(self, kappa0: float) -> tuple[float, float, float]:
        return self.a_shift - kappa0, self.b_shift - kappa0, self.c

    def weight(self, s, tau, t):
        if self.factor == "1":
            return np.ones_like(s * tau)
        if self.factor == "tau-s":
            return tau - s
        if self.factor == "tau":
            return tau * np.ones_like(s)
        if self.factor == "(tau-s)tau":
            return (tau - s) * tau
        if self.factor == "s":
            return s * np.ones_like(tau)
        if self.factor == "s(tau-s)(t-tau+1)/(t-s)":
            return s * (tau - s) * (t - tau + 1) / (t - s)
        raise ValueError(self.factor)


A_SPECS = {
    1: WeightedIntegralSpec(1, 3, 3, 4, "1"),
    2: WeightedIntegralSpec(2, 4, 3, 3, "tau-s"),
    3: WeightedIntegralSpec(3, 3, 4, 4, "tau"),
    4: WeightedIntegralSpec(4, 4, 4, 3, "(tau-s)tau"),
    5: WeightedIntegralSpec(5, 3, 3, 5, "1"),
    6: WeightedIntegralSpec(6, 4, 3, 4, "tau-s"),
    7: WeightedIntegralSpec(7, 4, 3, 4, "s"),
    8: WeightedIntegralSpec(8, 4, 4, 3, "s(tau-s)(t-tau+1)/(t-s)"),
}


def _triangle_nodes(t: float, n: int):
    """Gauss-Legendre nodes on ``0 <= s <= tau <= t`` (Duffy-type map), with weights."""
    g, gw = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (g + 1)
    uw = 0.5 * gw
    S, U = np.meshgrid(u, u, indexing="ij")
    WS, WU = np.meshgrid(uw, uw, indexing="ij")
    s = t * S
    tau = s + (t - s) * U
    w = WS * WU * t * (t - s)
    keep = (t - s) > 0
    return s[keep], tau[keep], w[keep]


def _integrand_v(spec: WeightedIntegralSpec, s, tau, t, x, v, kappa0):
    a, b, c = spec.exponents(kappa0)
    p = bracket(s, x - (t - s) * v) ** (-a)
    q = bracket(tau, x - (t - tau) * v) ** (-b)
    return p * q * bracket(v) ** (-c)


def _mixture(s, tau, t, x):
    """Locations and scales of the three proposal components for one (s, tau) node."""
    locs = [np.zeros(3)]
    scales = [1.0]
    for r in (s, tau):
        d = t - r
        if d > 1e-12:
            locs.append(x / d)
            scales.append(min(float(bracket(r)) / d, 1e4))
    return locs, scales


def _proposal_sample(rng, locs, scales, n):
    comp = rng.integers(0, len(locs), size=n)
    z = stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=1).rvs(size=n, random_state=rng)
    z = np.atleast_2d(z)
    L = np.array(locs)[comp]
    S = np.array(scales)[comp]
    return L + S[:, None] * z


def _proposal_logpdf(v, locs, scales):
    base = stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=1)
    parts = [base.logpdf((v - L) / S) - 3 * np.log(S) for L, S in zip(locs, scales)]
    return np.logaddexp.reduce(np.stack(parts), axis=0) - np.log(len(locs))


@dataclass
class MCValue:
    value: float
    sigma: float


def A_integral(k: int, t: float, x, kappa0: float = 0.05, n_v: int = 512, n_time: int = 12,
               seed: int = 20240517, task: int = 0, max_rel_sigma: float | None = 0.1,
               allow_small_t: bool = False) -> MCValue:
    """Monte-Carlo estimate of ``A_k(t, x)`` with its standard error.

    Velocity integrals use importance sampling from a defensive mixture of
    heavy-tailed components centered at the origin and at the two kernel
    peaks ``x/(t-s)``, ``x/(t-tau)``; the (s, tau) triangle uses a mapped
    Gauss-Legendre tensor rule.

    Raises
    ------
    NumericalFailure
        If the relative standard error exceeds ``max_rel_sigma``.
    """
    if k not in A_SPECS:
        raise UsageError("k must be in 1..8")
    if t < 1 and not allow_small_t:
        raise UsageError("A_k is verified for t >= 1 (pass allow_small_t for the small-time regime)")
    if t <= 0:
        return MCValue(0.0, 0.0)
    spec = A_SPECS[k]
    x = np.asarray(x, dtype=float).reshape(3)
    rng = task_rng(seed, (k, task))
    s_n, tau_n, w_n = _triangle_nodes(t, n_time)
    total = 0.0
    var = 0.0
    for s, tau, w in zip(s_n, tau_n, w_n):
        locs, scales = _mixture(s, tau, t, x)
        v = _proposal_sample(rng, locs, scales, n_v)
        vals = _integrand_v(spec, s, tau, t, x, v, kappa0) * np.exp(-_proposal_logpdf(v, locs, scales))
        fac = float(spec.weight(np.float64(s), np.float64(tau), t)) * w
        total += fac * vals.mean()
        var += fac * fac * vals.var(ddof=1) / n_v
    sigma = float(np.sqrt(var))
    if max_rel_sigma is not None and total > 0 and sigma > max_rel_sigma * total:
        raise NumericalFailure(f"A_{k} relative standard error {sigma / total:.3e} above bound {max_rel_sigma}")
    return MCValue(float(total), sigma)


def A_integral_quadrature(k: int, t: float, x, kappa0: float = 0.05, n_time: int = 12,
                          n_rho: int = 64, n_c: int = 24) -> float:
    """Deterministic oracle for ``A_k``: axial reduction in ``v`` on a fixed grid."""
    spec = A_SPECS[k]
    x = np.asarray(x, dtype=float).reshape(3)
    r = float(np.linalg.norm(x))
    e = x / r if r > 0 else np.array([1.0, 0, 0])
    g, gw = np.polynomial.legendre.leggauss(n_c)
    # rho = tan(theta) map on [0, pi/2)
    h, hw = np.polynomial.legendre.leggauss(n_rho)
    th = 0.25 * np.pi * (h + 1)
    rho = np.tan(th)
    rw = 0.25 * np.pi * hw / np.cos(th) ** 2
    s_n, tau_n, w_n = _triangle_nodes(t, n_time)
    R, C = np.meshgrid(rho, g, indexing="ij")
    W = np.outer(rw, gw) * 2 * np.pi * R * R
    # v = rho (c e + sqrt(1-c^2) e_perp); only |x - a v| and |v| matter
    total = 0.0
    for s, tau, w in zip(s_n, tau_n, w_n):
        a, b, c = spec.exponents(kappa0)

        def br(time, d):
            return np.sqrt(1 + time ** 2 + r * r - 2 * d * r * R * C + d * d * R * R)
        val = br(s, t - s) ** (-a) * br(tau, t - tau) ** (-b) * (1 + R * R) ** (-c / 2)
        total += float(spec.weight(np.float64(s), np.float64(tau), t)) * w * float(np.sum(W * val))
    return total


def builtin_A_samples() -> tuple[np.ndarray, np.ndarray]:
    """``t`` in {1, 2, 4, 8, 16} at ``x = 0`` and ``|x|`` in {2, 4, 8, 16, 32} at ``t = 1``."""
    d = np.ones(3) / np.sqrt(3)
    t = [1.0, 2.0, 4.0, 8.0, 16.0] + [1.0] * 5
    x = [np.zeros(3)] * 5 + [r * d for r in (2.0, 4.0, 8.0, 16.0, 32.0)]
    return np.array(t), np.array(x)


def lemma_42_check(t, x, kappa0: float = 0.05, n_v: int = 512, n_time: int = 12,
                   seed: int = 20240517, threads: int = 1) -> tuple[RatioReport, RatioReport]:
    """Ratio tables for ``A_1 + A_2`` against ``<x,t>^{-3}`` and ``sum_{3..8} A_k`` against ``<t><x,t>^{-4}``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    if np.any(t < 1):
        raise UsageError("the A-integral bounds are checked for t >= 1")

    def one(i):
        return [A_integral(k, t[i], x[i], kappa0, n_v, n_time, seed, task=i) for k in range(1, 9)]

    vals = ordered_map(one, range(t.size), threads)
    A = np.array([[v.value for v in row] for row in vals])
    S = np.array([[v.sigma for v in row] for row in vals])
    w = weight(t, x)
    low = A[:, :2].sum(axis=1)
    high = A[:, 2:].sum(axis=1)
    extra_low = {"sigma": np.sqrt((S[:, :2] ** 2).sum(axis=1))}
    extra_high = {"sigma": np.sqrt((S[:, 2:] ** 2).sum(axis=1))}
    for k in range(8):
        (extra_low if k < 2 else extra_high)[f"A{k + 1}"] = A[:, k]
    r1 = RatioReport("A1_plus_A2", t, x, low, w ** -3.0, extra_low)
    r2 = RatioReport("A3_to_A8", t, x, high, time_bracket(t) * w ** -4.0, extra_high)
    return r1, r2


# ---------------------------------------------------------------- singular parts

def builtin_singular_samples() -> tuple[np.ndarray, np.ndarray]:
    d = np.ones((1, 3)) / np.sqrt(3)
    return spacetime_samples([0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0], [1.0, 2.0, 4.0, 8.0, 16.0, 32.0], d,
                             include_origin=True)


def singular_decay_check(data: InitialData, t, x, n1: int, n2: int, threads: int = 1) -> RatioReport:
    """``sum_j |d_t^{n2} grad^{1+n1} Delta^{-1} rho_sing^j|`` against ``[f0] <t,x>^{-(3+n1+n2)}``."""
    from .volterra import singular_density

    if n1 < 0 or n2 < 0 or n1 + n2 > 4:
        raise UsageError("need n1, n2 >= 0 and n1 + n2 <= 4")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    norm = f0_norm(data)
    if data.epsilon == 0.0:
        return RatioReport(f"singular_decay_{n1}{n2}", t, x, np.zeros(t.size), np.zeros(t.size))
    k, w = composite_gl_nodes(1e-3, 0.125, 2.0, 8)

    def one(i):
        total = 0.0
        for which in (1, 2):
            dens = singular_density(data, [t[i]], k, w, which, dt_order=n2)
            val = dens.evaluate(x[i:i + 1], 1 + n1)[0, 0]
            total += float(np.sqrt(np.sum(val ** 2)))
        return total

    lhs = np.array(ordered_map(one, range(t.size), threads))
    rhs = norm * weight(t, x) ** (-(3.0 + n1 + n2))
    return RatioReport(f"singular_decay_{n1}{n2}", t, x, lhs, rhs)
