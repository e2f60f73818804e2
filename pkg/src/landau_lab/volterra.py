"""Per-mode density equation, physical-space fields and the singular/residual split.

For each frequency ``xi`` with ``lambda = |xi|`` the density satisfies the
second-kind Volterra equation::

    rho(t) = R0(t) - int_0^t (t-s) exp(-(t-s) lambda) rho(s) ds

whose resolvent kernel is ``sin(s) exp(-s lambda)``, so that::

    rho(t) = R0(t) - int_0^t sin(s) exp(-s lambda) R0(t-s) ds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .artifacts import read_f64, write_f64, write_json
from .foundation import Config, UsageError, cube_directions, time_bracket
from .kernels import psi
from .radial import AxialDensity, ProfileTable, composite_gl_nodes
from .sources import InitialData


def time_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise UsageError("T_horizon must be a multiple of dt")
    return dt * np.arange(n + 1)


_GL = np.polynomial.legendre.leggauss(4)
_GL_U = 0.5 * (_GL[0] + 1.0)
_GL_W = 0.5 * _GL[1]


def _cell_moments(kernel, n: int, lam: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Hat-function moments of ``kernel`` on the cells ``[m dt, (m+1) dt]``.

    Returns ``alpha[m] = int K(tau) (1-u) dtau`` and ``beta[m] = int K(tau) u dtau``
    with ``u = tau/dt - m``, shapes (n, n_modes).
    """
    m = np.arange(n)[:, None]
    alpha = np.zeros((n, lam.size))
    beta = np.zeros((n, lam.size))
    for u, wg in zip(_GL_U, _GL_W):
        K = kernel((m + u) * dt, lam[None, :])
        alpha += wg * (1.0 - u) * K
        beta += wg * u * K
    return alpha * dt, beta * dt


def _resolvent_kernel(tau, lam):
    return np.sin(tau) * np.exp(-tau * lam)


def apply_resolvent(source, lam, dt: float) -> np.ndarray:
    """Resolvent form of the density equation by product trapezoid integration.

    The source is interpolated linearly between grid times and integrated
    exactly against ``sin(s) exp(-s lambda)``; the result is ``O(dt^2)``
    accurate and exact for sources linear in time.

    Parameters
    ----------
    source : array_like, shape (n_t,) or (n_t, n_modes)
        ``R0`` on a uniform grid starting at ``t = 0``.
    lam : float or array_like, shape (n_modes,)
        ``|xi|`` per mode, ``>= 0``.
    dt : float

    Returns
    -------
    ndarray
        ``rho`` on the same grid.
    """
    g = np.asarray(source)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[:, None]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), g.shape[1:]).ravel()
    if np.any(lam < 0):
        raise UsageError("lambda must be non-negative")
    n = g.shape[0]
    alpha, beta = _cell_moments(_resolvent_kernel, n, lam, dt)
    c = alpha.copy()
    c[1:] += beta[:-1]
    conv = fftconvolve(c, g, axes=0)[:n]
    rho = g - (conv - alpha * g[0][None, :])
    return rho[:, 0] if squeeze else rho


def volterra_step(source, lam, dt: float) -> np.ndarray:
    """March the density equation directly (independent oracle).

    Product trapezoid integration of ``K(tau) = tau exp(-lambda tau)`` against
    the piecewise-linear unknown.  The hat-function weights factor as
    ``c_m = q^m (m dt C0 + C1)`` with ``q = exp(-lambda dt)``, so the history
    sum is carried by two recursions::

        A_{n+1} = q (A_n + rho_n),  B_{n+1} = q (B_n + A_n + rho_n)
        (1 + alpha_0) rho_n = g_n - dt C0 B_n - C1 A_n + alpha_n rho_0
    """
    g = np.asarray(source)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[:, None]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), g.shape[1:]).ravel()
    h = dt
    # moments of exp(-lam u) against the hat on [-h, h] and the half hat on [0, h]
    C0 = np.zeros(lam.size)
    C1 = np.zeros(lam.size)
    D0 = np.zeros(lam.size)
    D1 = np.zeros(lam.size)
    for u, wg in zip(_GL_U, _GL_W):
        for sgn in (1.0, -1.0):
            uu = sgn * u * h
            e = np.exp(-lam * uu) * (1.0 - u) * wg * h
            C0 += e
            C1 += uu * e
        e = np.exp(-lam * u * h) * (1.0 - u) * wg * h
        D0 += e
        D1 += u * h * e
    q = np.exp(-lam * h)
    n = g.shape[0]
    rho = np.empty(g.shape, dtype=np.result_type(g.dtype, float))
    A = np.zeros(g.shape[1:], dtype=rho.dtype)
    B = np.zeros(g.shape[1:], dtype=rho.dtype)
    qn = np.ones(lam.size)
    denom = 1.0 + D1
    for i in range(n):
        if i == 0:
            rho[0] = g[0]
        else:
            alpha_n = qn * (i * h * D0 + D1)
            rho[i] = (g[i] - h * C0 * B - C1 * A + alpha_n * rho[0]) / denom
        B = q * (B + A + rho[i])
        A = q * (A + rho[i])
        qn = qn * q
    return rho[:, 0] if squeeze else rho


@dataclass
class ModeTrack:
    """Time series of one Fourier mode of the density."""

    xi: np.ndarray
    times: np.ndarray
    rho_hat: np.ndarray
    source_hat: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if not np.linalg.norm(self.xi) > 0:
            raise UsageError("the zero mode is not stored")

    @property
    def E_hat(self) -> np.ndarray:
        k2 = float(self.xi @ self.xi)
        return (-1j * self.rho_hat[:, None] * self.xi[None, :]) / k2

    def conjugate(self) -> "ModeTrack":
        """Track of ``-xi`` (real fields have conjugate-symmetric transforms)."""
        return ModeTrack(-self.xi, self.times, np.conj(self.rho_hat), np.conj(self.source_hat))


def half_directions() -> np.ndarray:
    """One representative of each ``+-`` pair among the 26 cube directions."""
    d = cube_directions()
    keep = []
    for v in d:
        nz = v[np.nonzero(np.abs(v) > 1e-12)[0][0]]
        if nz > 0:
            keep.append(v)
    return np.array(keep)


@dataclass
class FieldHistory:
    """Density history on a time grid, represented by Legendre coefficients.

    Attributes
    ----------
    density : AxialDensity
        ``rho`` itself.
    source : AxialDensity or None
        ``R0`` used to produce ``rho``.
    tracks : list of ModeTrack
        Exported per-mode series on the configured ``xi`` grid.
    """

    times: np.ndarray
    density: AxialDensity
    source: AxialDensity | None = None
    tracks: list = field(default_factory=list)
    data: InitialData | None = None
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def time_index(self, t: float) -> tuple[int, float]:
        """Index ``i`` and fraction ``s`` with ``t = (1-s) t_i + s t_{i+1}``."""
        if t < -1e-12 or t > self.T * (1 + 1e-12) + 1e-12:
            raise UsageError(f"time {t} outside [0, {self.T}]")
        u = t / self.dt
        i = int(np.floor(u + 1e-9))
        i = min(max(i, 0), self.times.size - 1)
        s = u - i
        if abs(s) < 1e-9 or i == self.times.size - 1:
            return i, 0.0
        return i, float(s)

    def table(self, order=1, r_max: float = 40.0, dr: float = 0.05) -> ProfileTable:
        key = (order, r_max, dr)
        if key not in self._tables:
            self._tables[key] = ProfileTable(self.density, order, r_max=r_max, dr=dr)
        return self._tables[key]

    def field_handle(self, fast: bool = True) -> "FieldHandle":
        from .characteristics import FieldHandle

        if fast:
            tab = self.table(1)

            def at_index(i, x):
                return tab(i, x)
        else:
            def at_index(i, x):
                return self.density.evaluate(x, 1, tindex=i)[0]
        return FieldHandle.from_grid(self.times, at_index)


def save_history(history: FieldHistory, directory) -> list[Path]:
    """Store the Legendre coefficient tables of a history as raw f64 arrays."""
    d = Path(directory)
    paths = []
    paths += write_f64(d / "times.f64", history.times)
    paths += write_f64(d / "k.f64", history.density.k)
    paths += write_f64(d / "w.f64", history.density.w)
    index = {"density": sorted(history.density.coeffs), "source": []}
    for ell, a in sorted(history.density.coeffs.items()):
        paths += write_f64(d / f"density_l{ell}.f64", a)
    if history.source is not None:
        index["source"] = sorted(history.source.coeffs)
        for ell, a in sorted(history.source.coeffs.items()):
            paths += write_f64(d / f"source_l{ell}.f64", a)
    paths.append(write_json(d / "history.json", index))
    return paths


def load_history(directory, data: InitialData | None = None) -> FieldHistory:
    """Inverse of :func:`save_history` (tracks are not reloaded)."""
    d = Path(directory)
    try:
        index = json.loads((d / "history.json").read_text())
        times = read_f64(d / "times.f64")
        k = read_f64(d / "k.f64")
        w = read_f64(d / "w.f64")
        dens = {ell: read_f64(d / f"density_l{ell}.f64") for ell in index["density"]}
        src = {ell: read_f64(d / f"source_l{ell}.f64") for ell in index["source"]}
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load field history from {d}: {exc}") from None
    source = AxialDensity(times, k, w, src) if src else None
    return FieldHistory(times, AxialDensity(times, k, w, dens), source, [], data)


def xi_track_levels(cfg: Config) -> np.ndarray:
    g = cfg.grid
    return np.geomspace(g.xi_min, g.xi_max, g.xi_levels)


def solve_linear(data: InitialData, cfg: Config, T: float | None = None,
                 with_tracks: bool = True) -> FieldHistory:
    """Linear density: resolvent applied to the free-streaming source per mode.

    The field representation uses composite Gauss-Legendre radial nodes; the
    exported :class:`ModeTrack` list covers ``xi_levels`` radii times 13
    direction representatives (conjugate partners are implied).
    """
    T = cfg.T_horizon if T is None else T
    times = time_grid(T, cfg.dt)
    g = cfg.grid
    k, w = composite_gl_nodes(g.k_min, g.k_split, g.k_max, g.panel_nodes)
    P = data.p_table(times, k)
    Q = apply_resolvent(P, k, cfg.dt)
    density = AxialDensity(times, k, w, {1: k * Q})
    source = AxialDensity(times, k, w, {1: k * P})
    tracks = []
    if with_tracks:
        levels = xi_track_levels(cfg)
        Pl = data.p_table(times, levels)
        Ql = apply_resolvent(Pl, levels, cfg.dt)
        for d in half_directions():
            for j, lev in enumerate(levels):
                xi = lev * d
                tracks.append(ModeTrack(xi, times, -1j * xi[0] * Ql[:, j], -1j * xi[0] * Pl[:, j]))
    return FieldHistory(times, density, source, tracks, data)


def field_eval(history: FieldHistory, t, x, order=1) -> tuple[np.ndarray, bool]:
    """Evaluate ``grad^m Delta^{-1} rho`` (``order = m``) or ``rho`` (``order = "rho"``).

    Times off the grid are linearly interpolated between neighbouring grid
    times; the returned flag reports whether that happened.

    Returns
    -------
    values : ndarray, shape (n_t, N) + (3,) * m
    interpolated : bool
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = []
    interp = False
    for tt in ts:
        i, s = history.time_index(float(tt))
        v = history.density.evaluate(x, order, tindex=i)[0]
        if s > 0:
            interp = True
            v = (1 - s) * v + s * history.density.evaluate(x, order, tindex=i + 1)[0]
        out.append(v)
    return np.array(out), interp


def langmuir_spacing(track: ModeTrack, t_min: float = 5.0, t_max: float = 40.0) -> np.ndarray:
    """Spacings between consecutive zero crossings of the dominant quadrature of ``rho_hat``.

    The dominant quadrature is the real or imaginary part with the larger
    energy; for data with real transforms it is the real part.
    """
    from .foundation import zero_crossings

    sel = (track.times >= t_min) & (track.times <= t_max)
    z = track.rho_hat[sel]
    part = z.real if np.sum(z.real ** 2) >= np.sum(z.imag ** 2) else z.imag
    zc = zero_crossings(track.times[sel], part)
    return np.diff(zc)


# ---------------------------------------------------------------- decomposition

@dataclass
class RhoDecomposition:
    """Density split ``rho = cos(t) rho_sing1 + sin(t) rho_sing2 + rho_re`` at samples."""

    t: np.ndarray
    x: np.ndarray
    rho: np.ndarray
    sing1: np.ndarray
    sing2: np.ndarray
    re: np.ndarray

    @property
    def recombination_residual(self) -> float:
        back = np.cos(self.t)[:, None] * self.sing1 + np.sin(self.t)[:, None] * self.sing2 + self.re
        return float(np.max(np.abs(back - self.rho))) if self.rho.size else 0.0


def singular_density(data: InitialData, times, k, w, which: int, dt_order: int = 0) -> AxialDensity:
    """Singular parts on the symbol side.

    ``rho_sing1`` has symbol ``exp(-t|xi|) chi(xi) m0_hat`` and ``rho_sing2``
    has symbol ``|xi| exp(-t|xi|) chi(xi) m0_hat`` minus the low-pass of the
    divergence of the first moment, which vanishes for radial velocity
    profiles.  ``m0_hat = -i xi_1 p(0, |xi|)`` is the transform of the zeroth
    free moment.  ``dt_order`` applies ``d_t^n`` (a factor ``(-|xi|)^n``).
    """
    times = np.asarray(times, dtype=float)
    k = np.asarray(k, dtype=float)
    base = k * data.p_symbol(0.0, k) * psi(k)
    decay = np.exp(-np.outer(times, k))
    coef = decay * base[None, :]
    if which == 2:
        coef = coef * k[None, :]
    elif which != 1:
        raise UsageError("which must be 1 or 2")
    coef = coef * (-k[None, :]) ** dt_order
    return AxialDensity(times, k, w, {1: coef})


def decompose_rho(history: FieldHistory, data: InitialData, tindex, x) -> RhoDecomposition:
    """Evaluate ``rho``, both singular parts and the remainder at ``(t_i, x)`` samples.

    ``tindex`` and ``x`` are paired sample-wise (same length).
    """
    tindex = np.atleast_1d(np.asarray(tindex, dtype=int))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tindex.size != x.shape[0]:
        raise UsageError("tindex and x must pair up")
    t = history.times[tindex]
    dens = history.density
    rho = np.empty(t.size)
    s1 = np.empty(t.size)
    s2 = np.empty(t.size)
    for ti in np.unique(tindex):
        sel = tindex == ti
        rho[sel] = dens.evaluate(x[sel], "rho", tindex=ti)[0]
        tt = [history.times[ti]]
        s1[sel] = singular_density(data, tt, dens.k, dens.w, 1).evaluate(x[sel], "rho")[0]
        s2[sel] = singular_density(data, tt, dens.k, dens.w, 2).evaluate(x[sel], "rho")[0]
    re = rho - np.cos(t) * s1 - np.sin(t) * s2
    return RhoDecomposition(t, x, rho[:, None], s1[:, None], s2[:, None], re[:, None])


# ---------------------------------------------------------------- diagnostics

def origin_field(history: FieldHistory) -> np.ndarray:
    """``E(t, 0)`` on the whole time grid, shape (n_t, 3)."""
    return history.density.evaluate(np.zeros((1, 3)), 1)[:, 0]


def linear_diagnostics(history: FieldHistory, kappa0: float, fit_window=(10.0, 60.0),
                       spacing_level: float = 0.05) -> dict:
    """Decay slope of the ``|E(t,0)|`` envelope, Langmuir zero spacing and the weighted sup.

    The spacing uses the first exported track whose radius matches
    ``spacing_level``; the weighted sup is ``<t>^{3-kappa0} |E(t,0)|`` and its
    trend statistic is taken over the envelope peaks.
    """
    from .foundation import envelope_peaks, fit_slope, trend_statistic

    t = history.times
    E = np.linalg.norm(origin_field(history), axis=1)
    lo, hi = fit_window
    hi = min(hi, history.T)
    tp, ep = envelope_peaks(t, E, lo, hi)
    slope = fit_slope(tp, ep) if tp.size >= 2 else float("nan")
    spacing = float("nan")
    spacings = np.array([])
    level = [tr for tr in history.tracks
             if abs(np.linalg.norm(tr.xi) - spacing_level) < 1e-9 * max(1.0, spacing_level)]
    if level:
        # the mode along the symmetry axis carries the strongest signal
        tr = max(level, key=lambda a: abs(a.xi[0]))
        spacings = langmuir_spacing(tr, 5.0, min(40.0, history.T))
        if spacings.size:
            spacing = float(np.mean(spacings))
    weighted = time_bracket(t) ** (3.0 - kappa0) * E
    wp_t, wp = envelope_peaks(t, weighted, 1.0, history.T)
    return {
        "decay_slope": float(slope),
        "fit_window": [float(lo), float(hi)],
        "envelope_peaks": int(tp.size),
        "zero_spacing": spacing,
        "zero_spacing_max_dev": float(np.max(np.abs(spacings - np.pi))) if spacings.size else float("nan"),
        "weighted_sup": float(np.max(weighted)),
        "weighted_trend": float(trend_statistic(wp, time_bracket(wp_t))) if wp.size else 0.0,
    }
