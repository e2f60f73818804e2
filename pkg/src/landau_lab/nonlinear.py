"""Nonlinear moments, conservation residuals, the outer fixed-point loop and scattering.

With the equilibrium ``mu`` and the perturbation ``f``, set

    F(t,x,v) = f(t,x,v) + int_0^t E(s, x - (t-s) v) . grad mu(v) ds = I + R,

where ``I = f0(X_{0,t}, V_{0,t})`` transports the initial data along the
perturbed characteristics and ``R`` collects the field-correction integral.
The zeroth moment ``R0 = int F dv`` drives the density through the per-mode
Volterra equation, so the nonlinear problem is a fixed point
``rho -> E -> characteristics -> R0 -> resolvent -> rho``.

Transforms of ``R0`` are computed in Lagrangian form.  With forward flows
``Phi`` of the current field,

    R0_hat = rho_free_hat
           + int int f0(y,w) [e^{-i Phi_{0->t}(y,w).xi} - e^{-i (y + t w).xi}] dy dw
           + int_0^t ds int int E(s,y).grad mu(w)
                 [e^{-i (y + (t-s) w).xi} - e^{-i Phi_{s->t}(y,w).xi}] dy dw,

estimated by importance sampling with samples held fixed across outer
iterations.  Axial symmetry about ``e_1`` lets every sample be averaged over
rotations exactly, which turns the phase into the real Legendre projection
``(2l+1) j_l(k|X|) P_l(X_1/|X|)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special, stats
from scipy.interpolate import CubicSpline

from .characteristics import FieldHandle, picard_path
from .equilibrium import grad_mu
from .foundation import (Config, NumericalFailure, RatioReport, UsageError, bracket, density_norm,
                         fit_slope, moment_norm, ordered_map, task_rng)
from .radial import AxialDensity, ProfileTable
from .sources import InitialData, f0_norm, tangent_gl
from .volterra import (FieldHistory, ModeTrack, apply_resolvent, half_directions, solve_linear,
                       time_grid, xi_track_levels)


# ---------------------------------------------------------------- pointwise integrands

def _path(data: InitialData, field: FieldHandle, t: float, x, v, tol: float, max_iter: int):
    """Backward path from phase-space points ``(x, v)`` at time ``t`` (batched)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    z = x - t * v
    tau, Y, W, _, _ = picard_path(field, 0.0, t, z, v, tol, max_iter)
    free = z[None] + tau[:, None, None] * v[None]
    X = free + Y
    V = v[None] + W
    return tau, free, X, V


def _integrands(data: InitialData, field: FieldHandle, t: float, x, v, tol: float = 1e-12,
                max_iter: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """``I`` and ``R`` at phase-space points sharing one time ``t``."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), v.shape)
    tau, free, X, V = _path(data, field, t, x, v, tol, max_iter)
    I = data(X[0], V[0])
    if field.is_zero or tau.size == 1:
        return I, np.zeros_like(I)
    gm = grad_mu(v)
    g = np.empty((tau.size, v.shape[0]))
    for i, s in enumerate(tau):
        g[i] = np.sum(field(s, free[i]) * gm, axis=-1) - np.sum(field(s, X[i]) * grad_mu(V[i]), axis=-1)
    R = integrate.trapezoid(g, tau, axis=0)
    return I, R


def moment_integrand_I(data: InitialData, field: FieldHandle, t: float, x, v, tol: float = 1e-12) -> np.ndarray:
    """``f0(X_{0,t}(x,v), V_{0,t}(x,v))`` for phase-space points (batched over ``v``)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), v.shape)
    _, _, X, V = _path(data, field, t, x, v, tol, 60)
    return data(X[0], V[0])


def moment_integrand_R(data: InitialData, field: FieldHandle, t: float, x, v, tol: float = 1e-12) -> np.ndarray:
    """Trapezoid in ``s`` of ``E(s, x-(t-s)v).grad mu(v) - E(s, X_s).grad mu(V_s)``."""
    return _integrands(data, field, t, x, v, tol)[1]


@dataclass
class MomentField:
    """Moments split into the initial-data part ``I_j`` and the correction part ``Rc_j``."""

    t: np.ndarray
    x: np.ndarray
    I0: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    Rc0: np.ndarray
    Rc1: np.ndarray
    Rc2: np.ndarray

    @property
    def R0(self) -> np.ndarray:
        return self.I0 + self.Rc0

    @property
    def R1(self) -> np.ndarray:
        return self.I1 + self.Rc1

    @property
    def R2(self) -> np.ndarray:
        return self.I2 + self.Rc2


def velocity_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tangent-mapped Gauss-Legendre tensor rule with ``n`` nodes per axis."""
    v1, w1 = tangent_gl(n)
    V = np.stack(np.meshgrid(v1, v1, v1, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (w1[:, None, None] * w1[None, :, None] * w1[None, None, :]).reshape(-1)
    return V, W


def compute_moments(data: InitialData, field: FieldHandle, t, x, nodes: int = 16,
                    tol: float = 1e-12, threads: int = 1) -> MomentField:
    """Moments ``int (I, R) v^j dv`` for ``j = 0, 1, 2`` at paired samples ``(t_i, x_i)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    V, Wq = velocity_nodes(nodes)

    def one(i):
        I, R = _integrands(data, field, float(t[i]), x[i], V, tol)
        out = []
        for f in (I, R):
            fw = f * Wq
            out.append((fw.sum(), fw @ V, np.einsum("n,ni,nj->ij", fw, V, V)))
        return out

    res = ordered_map(one, range(t.size), threads)
    pick = lambda a, b: np.array([r[a][b] for r in res])
    return MomentField(t, x, pick(0, 0), pick(0, 1), pick(0, 2), pick(1, 0), pick(1, 1), pick(1, 2))


def stencil_points(t0: float, x0, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered-difference stencil: ``t0 +- delta`` then ``x0 +- delta e_i`` (8 points)."""
    x0 = np.asarray(x0, dtype=float).reshape(3)
    ts = [t0 + delta, t0 - delta]
    xs = [x0, x0]
    for i in range(3):
        e = np.zeros(3)
        e[i] = delta
        ts += [t0, t0]
        xs += [x0 + e, x0 - e]
    return np.array(ts), np.array(xs)


def conservation_residual(moments: MomentField, field: FieldHandle, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the moment conservation laws by centered differences.

    ``moments`` holds consecutive 8-point blocks from :func:`stencil_points`.

    Returns
    -------
    res1 : ndarray (n_blocks,)
        ``d_t R0 + div R1``.
    res2 : ndarray (n_blocks, 3)
        ``d_t R1 + div R2 - (div(E x E) - grad|E|^2 / 2)``.
    """
    n = moments.t.size
    if n == 0 or n % 8:
        raise UsageError("moments do not form complete centered-difference stencils")
    R0, R1, R2 = moments.R0, moments.R1, moments.R2
    res1, res2 = [], []
    for b in range(n // 8):
        o = 8 * b
        t0 = 0.5 * (moments.t[o] + moments.t[o + 1])
        if not delta > 0 or abs(moments.t[o] - moments.t[o + 1] - 2 * delta) > 1e-9:
            raise UsageError("stencil spacing does not match delta")
        d1 = (R0[o] - R0[o + 1]) / (2 * delta)
        d2 = (R1[o] - R1[o + 1]) / (2 * delta)
        src = np.zeros(3)
        for i in range(3):
            p, m = o + 2 + 2 * i, o + 3 + 2 * i
            d1 = d1 + (R1[p, i] - R1[m, i]) / (2 * delta)
            d2 = d2 + (R2[p, i, :] - R2[m, i, :]) / (2 * delta)
            if not field.is_zero:
                Ep = field(t0, moments.x[p])[0]
                Em = field(t0, moments.x[m])[0]
                # div(E x E)_j = sum_i d_i (E_i E_j);  grad|E|^2/2 along i
                src = src + (Ep[i] * Ep - Em[i] * Em) / (2 * delta)
                src[i] -= 0.5 * (Ep @ Ep - Em @ Em) / (2 * delta)
        res1.append(d1)
        res2.append(d2 - src)
    return np.array(res1), np.array(res2)


# ---------------------------------------------------------------- Legendre projection

def sph_jn_block(lmax: int, z) -> np.ndarray:
    """Spherical Bessel ``j_0 .. j_lmax`` at ``z >= 0``, shape (lmax+1,) + z.shape.

    Series below ``z = 1`` and upward recurrence above (stable enough for
    ``lmax <= 6`` at ``z >= 1``).
    """
    z = np.asarray(z, dtype=float)
    out = np.empty((lmax + 1,) + z.shape)
    small = z < 1.0
    zs = np.where(small, z, 0.0)
    zl = np.where(small, 1.0, z)
    q = -0.5 * zs * zs
    for ell in range(lmax + 1):
        term = np.ones_like(zs)
        acc = np.ones_like(zs)
        for m in range(1, 10):
            term = term * q / (m * (2 * ell + 2 * m + 1))
            acc = acc + term
        dfac = np.prod(np.arange(2 * ell + 1, 0, -2, dtype=float))
        out[ell] = np.where(small, zs ** ell / dfac * acc, 0.0)
    s, c = np.sin(zl), np.cos(zl)
    j0 = s / zl
    big = [j0]
    if lmax >= 1:
        big.append(s / zl ** 2 - c / zl)
    for n in range(1, lmax):
        big.append((2 * n + 1) / zl * big[n] - big[n - 1])
    for ell in range(lmax + 1):
        out[ell] = np.where(small, out[ell], big[ell])
    return out


def axial_projection(X: np.ndarray, weights: np.ndarray, k: np.ndarray, lmax: int,
                     chunk: int = 8192) -> np.ndarray:
    """``sum_n weights_n (2l+1) j_l(k |X_n|) P_l(X_n1 / |X_n|)``, shape (lmax+1, n_k).

    The rotation average about ``e_1`` of ``exp(-i X.xi)`` equals
    ``sum_l (-i)^l (2l+1) j_l(k|X|) P_l(X_1/|X|) P_l(xi_1/k)``.
    """
    X = np.atleast_2d(X)
    out = np.zeros((lmax + 1, k.size))
    for a in range(0, X.shape[0], chunk):
        Xs = X[a:a + chunk]
        ws = weights[a:a + chunk]
        r = np.linalg.norm(Xs, axis=1)
        c = np.where(r > 0, Xs[:, 0] / np.where(r > 0, r, 1.0), 0.0)
        J = sph_jn_block(lmax, k[:, None] * r[None, :])
        for ell in range(lmax + 1):
            P = special.eval_legendre(ell, c)
            out[ell] += (2 * ell + 1) * (J[ell] @ (ws * P))
    return out


# ---------------------------------------------------------------- outer loop

@dataclass
class FixedPointTrace:
    """Outer-iteration record; ``differences[n]`` is the weighted norm of ``rho^{n+1} - rho^n``."""

    differences: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    converged: bool = False
    f0: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.differences)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "differences": list(self.differences),
                "ratios": list(self.ratios), "norm_1T": list(self.norms), "theta": list(self.thetas),
                "converged": self.converged, "f0_norm": self.f0,
                "bootstrap_ratio": self.bootstrap_ratio()}

    def bootstrap_ratio(self) -> float:
        """``norm_1T / ([f0] + norm_1T^2)`` of the final iterate."""
        if not self.norms:
            return 0.0
        n = self.norms[-1]
        den = self.f0 + n * n
        return float(n / den) if den > 0 else 0.0


@dataclass
class CorrectionSamples:
    """Importance samples held fixed across outer iterations (common random numbers).

    ``I``-part samples start at time index 0; ``R``-part samples start at the
    grid index ``start`` inside their s-cell.  Arrays are ordered by start index.
    """

    y: np.ndarray
    w: np.ndarray
    start: np.ndarray
    kind: np.ndarray          # 0 for the initial-data part, 1 for the correction part
    base_weight: np.ndarray   # f0/q for kind 0, cell width / (q * n_cell) for kind 1
    cell: np.ndarray          # s-cell index for kind 1, -1 otherwise


def draw_samples(data: InitialData, cfg: Config, times: np.ndarray) -> CorrectionSamples:
    nl = cfg.nonlinear
    dt = times[1] - times[0]
    m = int(round(nl.s_step / dt))
    n_cells = (times.size - 1) // m
    n_I = cfg.mc_samples
    rng = task_rng(cfg.seed, (1,))
    yI, wI, wt = data.sample(rng, n_I)
    ys, ws, st, kinds, bw, cells = [yI], [wI], [np.zeros(n_I, int)], [np.zeros(n_I, int)], [wt / n_I], [np.full(n_I, -1)]
    tw = np.ones(m + 1)
    tw[0] = tw[-1] = 0.5
    prob = tw / tw.sum()
    nc = nl.cell_samples
    for j in range(n_cells):
        r = task_rng(cfg.seed, (2, j))
        node = r.choice(m + 1, size=nc, p=prob)
        idx = j * m + node
        s = times[idx]
        scale = 1.0 + s
        zy = stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=2).rvs(size=nc, random_state=r)
        zw = stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=2).rvs(size=nc, random_state=r)
        y = zy * scale[:, None]
        logq = (stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=2).logpdf(zy) - 3 * np.log(scale)
                + stats.multivariate_t(loc=np.zeros(3), shape=np.eye(3), df=2).logpdf(zw))
        ys.append(y)
        ws.append(zw)
        st.append(idx)
        kinds.append(np.ones(nc, int))
        bw.append(nl.s_step * np.exp(-logq) / nc)
        cells.append(np.full(nc, j))
    start = np.concatenate(st)
    order = np.argsort(start, kind="stable")
    cat = lambda parts: np.concatenate(parts)[order]
    return CorrectionSamples(cat(ys), cat(ws), start[order], cat(kinds), cat(bw), cat(cells))


def coarse_k(cfg: Config) -> np.ndarray:
    """Correction frequency grid: geometric up to 0.5, then uniform to ``k_hi``."""
    nl = cfg.nonlinear
    n_geo = nl.k_levels // 2
    geo = np.geomspace(nl.k_lo, 0.5, n_geo, endpoint=False)
    lin = np.linspace(0.5, nl.k_hi, nl.k_levels - n_geo)
    return np.concatenate([geo, lin])


def flow_corrections(E_at: Callable, times: np.ndarray, S: CorrectionSamples, out_idx: np.ndarray,
                     kc: np.ndarray, lmax: int, s_cell_steps: int, threads: int = 1,
                     chunk: int = 8192) -> np.ndarray:
    """Legendre coefficients of the Lagrangian corrections of ``R0`` at output indices.

    ``E_at(i, x)`` evaluates the field at grid index ``i``.  Flows use
    kick-drift-kick leapfrog on the field's grid.

    Returns
    -------
    ndarray, shape (len(out_idx), lmax+1, len(kc))
    """
    n = S.y.shape[0]
    X = S.y.copy()
    V = S.w.copy()
    A = np.zeros_like(X)
    weight = S.base_weight.copy()
    h = times[1] - times[0]
    out = np.zeros((len(out_idx), lmax + 1, kc.size))
    out_pos = {int(i): j for j, i in enumerate(out_idx)}
    bounds = list(range(0, n, chunk))

    def field_chunks(i, pts):
        parts = ordered_map(lambda a: E_at(i, pts[a:a + chunk]), range(0, pts.shape[0], chunk), threads)
        return np.concatenate(parts) if parts else np.zeros((0, 3))

    active = 0
    last = times.size - 1
    for i in range(times.size):
        new_active = int(np.searchsorted(S.start, i, side="right"))
        if new_active > active:
            sl = slice(active, new_active)
            A[sl] = field_chunks(i, X[sl])
            kind1 = S.kind[sl] == 1
            idx = np.arange(active, new_active)[kind1]
            weight[idx] = S.base_weight[idx] * np.sum(A[idx] * grad_mu(V[idx]), axis=-1)
            active = new_active
        if i in out_pos:
            t = times[i]
            sel = np.arange(active)
            done = (S.kind[sel] == 0) | ((S.cell[sel] + 1) * s_cell_steps <= i)
            sel = sel[done]
            if sel.size:
                s0 = times[S.start[sel]]
                X0 = S.y[sel] + (t - s0)[:, None] * S.w[sel]
                sign = np.where(S.kind[sel] == 0, 1.0, -1.0)
                wts = weight[sel] * sign
                parts = ordered_map(lambda a: axial_projection(X[sel][a:a + chunk], wts[a:a + chunk], kc, lmax)
                                    - axial_projection(X0[a:a + chunk], wts[a:a + chunk], kc, lmax),
                                    range(0, sel.size, chunk), threads)
                acc = np.zeros((lmax + 1, kc.size))
                for p in parts:
                    acc += p
                out[out_pos[i]] = acc
        if i == last:
            break
        sl = slice(0, active)
        V[sl] += 0.5 * h * A[sl]
        X[sl] += h * V[sl]
        A[sl] = field_chunks(i + 1, X[sl])
        V[sl] += 0.5 * h * A[sl]
    return out


def expand_corrections(corr: np.ndarray, t_out: np.ndarray, kc: np.ndarray, times: np.ndarray,
                       k: np.ndarray) -> dict:
    """Interpolate coarse corrections to the full (time, k) grid.

    In ``k`` the smooth quotient ``a_l / k^q`` (``q = 2`` for ``l = 0``, else
    ``l``) is interpolated linearly in ``log k``, held constant below the
    coarse grid and set to zero above it.  In time a cubic spline is used.
    """
    lmax = corr.shape[1] - 1
    out = {}
    logk = np.log(np.maximum(k, 1e-300))
    inside = k <= kc[-1]
    for ell in range(lmax + 1):
        q = 2 if ell == 0 else ell
        quo = corr[:, ell, :] / kc[None, :] ** q
        vals = np.zeros((t_out.size, k.size))
        for j in range(t_out.size):
            vals[j] = np.where(inside, np.interp(logk, np.log(kc), quo[j]), 0.0) * k ** q
        spline = CubicSpline(t_out, vals, axis=0)
        out[ell] = spline(times)
    return out


def norm_samples(T: float, n_times: int = 11) -> tuple[np.ndarray, np.ndarray]:
    """Space-time samples for the outer-loop norms (axial symmetry: two directions suffice)."""
    times = np.linspace(0.0, T, n_times)
    radii = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    dirs = np.array([[1.0, 0, 0], [0, 1.0, 0], np.ones(3) / np.sqrt(3)])
    pts = np.vstack([np.zeros((1, 3))] + [r * dirs for r in radii])
    t = np.repeat(times, pts.shape[0])
    x = np.tile(pts, (times.size, 1))
    return t, x


def _weighted_norm(density: AxialDensity, times: np.ndarray, ts: np.ndarray, xs: np.ndarray,
                   kappa0: float) -> float:
    d1, d2, d3 = [], [], []
    for tt in np.unique(ts):
        i = int(np.argmin(np.abs(times - tt)))
        sel = ts == tt
        d1.append(density.evaluate(xs[sel], 1, tindex=i)[0])
        d2.append(density.evaluate(xs[sel], 2, tindex=i)[0])
        d3.append(density.evaluate(xs[sel], 3, tindex=i)[0])
    return density_norm(ts, xs, np.concatenate(d1), np.concatenate(d2), np.concatenate(d3), kappa0)


@dataclass
class NonlinearResult:
    history: FieldHistory
    trace: FixedPointTrace
    corrections: np.ndarray
    t_out: np.ndarray
    k_coarse: np.ndarray


def _tracks(cfg: Config, data: InitialData, times, lin_levels_q, lin_levels_p, corr, t_out, kc) -> list:
    levels = xi_track_levels(cfg)
    src = expand_corrections(corr, t_out, kc, times, levels)
    rho = {ell: apply_resolvent(a, levels, cfg.dt) for ell, a in src.items()}
    tracks = []
    for d in half_directions():
        c = d[0]
        for j, lev in enumerate(levels):
            xi = lev * d
            r = -1j * xi[0] * lin_levels_q[:, j]
            s = -1j * xi[0] * lin_levels_p[:, j]
            for ell in rho:
                P = special.eval_legendre(ell, c)
                r = r + (-1j) ** ell * rho[ell][:, j] * P
                s = s + (-1j) ** ell * src[ell][:, j] * P
            tracks.append(ModeTrack(xi, times, r, s))
    return tracks


def solve_nonlinear(data: InitialData, cfg: Config, threads: int = 1,
                    log: Callable | None = None, with_tracks: bool = True) -> NonlinearResult:
    """Outer fixed-point iteration for the self-consistent density.

    Iterate 0 is the linear solution.  Each sweep flows the fixed sample set
    through the current field, projects the Lagrangian corrections of ``R0``,
    passes them through the resolvent and relaxes
    ``rho <- (1 - theta) rho + theta rho_new`` (``theta = 1``, or ``0.5``
    after a non-contracting step).

    Raises
    ------
    NumericalFailure
        "outside perturbative regime" after two consecutive difference
        ratios at or above one, or if ``max_outer`` sweeps do not converge.
    """
    nl = cfg.nonlinear
    T = nl.T_horizon
    lmax = nl.legendre_max
    lin = solve_linear(data, cfg, T=T, with_tracks=False)
    times = lin.times
    k, w = lin.density.k, lin.density.w
    base = lin.density.coeffs[1]
    base_src = lin.source.coeffs[1]
    kc = coarse_k(cfg)
    m = int(round(nl.s_step / cfg.dt))
    out_stride = int(round(nl.out_step / cfg.dt))
    out_idx = np.arange(0, times.size, out_stride)
    t_out = times[out_idx]
    S = draw_samples(data, cfg, times)
    ts, xs = norm_samples(T)
    trace = FixedPointTrace(f0=f0_norm(data))

    current = {1: base.copy()}
    corr = np.zeros((t_out.size, lmax + 1, kc.size))
    theta = 1.0
    bad = 0
    trace.norms.append(_weighted_norm(AxialDensity(times, k, w, current), times, ts, xs, cfg.kappa0))
    for n in range(nl.max_outer):
        dens = AxialDensity(times, k, w, current)
        if data.epsilon == 0.0:
            corr_new = np.zeros_like(corr)
        else:
            table = ProfileTable(dens, 1)
            corr_new = flow_corrections(lambda i, x: table(i, x), times, S, out_idx, kc, lmax, m, threads)
        src = expand_corrections(corr_new, t_out, kc, times, k)
        proposal = {ell: apply_resolvent(a, k, cfg.dt) for ell, a in src.items()}
        proposal[1] = proposal[1] + base
        new = {ell: (1 - theta) * current.get(ell, 0.0) + theta * proposal[ell] for ell in proposal}
        corr = (1 - theta) * corr + theta * corr_new
        delta = {ell: new[ell] - current.get(ell, 0.0) for ell in new}
        diff = _weighted_norm(AxialDensity(times, k, w, delta), times, ts, xs, cfg.kappa0)
        prev = trace.differences[-1] if trace.differences else None
        ratio = diff / prev if prev else 0.0
        trace.differences.append(diff)
        trace.ratios.append(ratio)
        trace.thetas.append(theta)
        current = new
        trace.norms.append(_weighted_norm(AxialDensity(times, k, w, current), times, ts, xs, cfg.kappa0))
        if log:
            log(f"outer {n}: difference {diff:.3e} ratio {ratio:.3e}")
        if diff <= nl.tol:
            trace.converged = True
            break
        if prev is not None and ratio >= 1.0:
            bad += 1
            if bad >= 2:
                raise NumericalFailure("outside perturbative regime")
            theta = 0.5
        else:
            bad = 0
    if not trace.converged:
        raise NumericalFailure(f"outer iteration did not converge in {nl.max_outer} sweeps")
    src_full = expand_corrections(corr, t_out, kc, times, k)
    src_full[1] = src_full[1] + base_src
    density = AxialDensity(times, k, w, current)
    source = AxialDensity(times, k, w, src_full)
    tracks = []
    if with_tracks:
        levels = xi_track_levels(cfg)
        Pl = data.p_table(times, levels)
        Ql = apply_resolvent(Pl, levels, cfg.dt)
        tracks = _tracks(cfg, data, times, Ql, Pl, corr, t_out, kc)
    history = FieldHistory(times, density, source, tracks, data)
    return NonlinearResult(history, trace, corr, t_out, kc)


def moment_norm_witness(result: NonlinearResult, cfg: Config, nodes: int | None = None,
                        threads: int = 1) -> RatioReport:
    """Ratio of the sampled moment norm of ``R0`` against ``[f0] + norm_1T^2``.

    ``R0`` and its gradient come from the source representation.
    """
    hist = result.history
    ts, xs = norm_samples(hist.T, 6)
    g, gg = [], []
    for tt in np.unique(ts):
        i = int(np.argmin(np.abs(hist.times - tt)))
        sel = ts == tt
        g.append(hist.source.evaluate(xs[sel], "rho", tindex=i)[0])
        # grad R0 = grad (Delta Delta^{-1} R0): trace of the third derivative tensor
        d3 = hist.source.evaluate(xs[sel], 3, tindex=i)[0]
        gg.append(np.einsum("nijj->ni", d3))
    lhs = moment_norm(ts, xs, np.concatenate(g), np.concatenate(gg))
    n1 = result.trace.norms[-1]
    rhs = result.trace.f0 + n1 * n1
    return RatioReport("moment_norm_witness", [0.0], [[0.0, 0.0, 0.0]], [lhs], [rhs])


# ---------------------------------------------------------------- scattering

def g_profile(data: InitialData, field: FieldHandle, t: float, x, v, tol: float = 1e-12,
              max_iter: int = 60) -> np.ndarray:
    """``g(t; x, v) = f(t, x + t v, v)`` from the characteristic representation.

    ``f(t) = f0(X_{0,t}, V_{0,t}) - int_0^t E(s, X_{s,t}) . grad mu(V_{s,t}) ds``;
    at phase-space point ``x + t v`` the shifted chart point is ``x`` itself.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if t == 0.0:
        return data(x, v)
    tau, Y, W, _, _ = picard_path(field, 0.0, t, x, v, tol, max_iter)
    X = x[None] + tau[:, None, None] * v[None] + Y
    V = v[None] + W
    val = data(X[0], V[0])
    if field.is_zero:
        return val
    g = np.stack([np.sum(field(s, X[i]) * grad_mu(V[i]), axis=-1) for i, s in enumerate(tau)])
    return val - integrate.trapezoid(g, tau, axis=0)


def scattering_samples() -> tuple[np.ndarray, np.ndarray]:
    """Builtin ``(x, v)`` set confined to ``|x| <= 8`` and ``|v| <= 8``."""
    xs = [np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 2.0, 0]), np.array([2.0, 2.0, 0]) / np.sqrt(2) * 2,
          np.array([-3.0, 1.0, 0.5]), np.array([8.0, 0, 0])]
    vs = [np.zeros(3), np.array([0.5, 0, 0]), np.array([0, 1.0, 0]), np.array([1.0, 1.0, 1.0]),
          np.array([-2.0, 0, 0]), np.array([0, 0, 4.0]), np.array([8.0, 0, 0])]
    X = np.array([a for a in xs for _ in vs])
    V = np.array([b for _ in xs for b in vs])
    return X, V


@dataclass
class ScatterResult:
    t: np.ndarray
    sup_diff: np.ndarray
    exponent: float
    f_inf: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def rows(self) -> list[dict]:
        return [{"t": float(a), "sup_diff": float(b), "fitted_exponent": self.exponent}
                for a, b in zip(self.t, self.sup_diff)]


def scattering_profile(data: InitialData, field: FieldHandle, t_list, x=None, v=None,
                       tol: float = 1e-12, threads: int = 1) -> ScatterResult:
    """Sup over samples of ``<v>^5 |g(t) - g(2t)|`` for ``t`` in ``t_list`` and its fitted exponent.

    ``f_inf`` is estimated by ``g`` at the largest available time.  The
    exponent is 0 when all differences vanish (no field).
    """
    if x is None:
        x, v = scattering_samples()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    t_list = np.asarray(sorted(t_list), dtype=float)
    if 2 * t_list[-1] > field.T * (1 + 1e-12):
        raise UsageError(f"field horizon {field.T} too short for t = {t_list[-1]}")
    needed = sorted(set(t_list.tolist()) | set((2 * t_list).tolist()))
    vals = dict(zip(needed, ordered_map(lambda tt: g_profile(data, field, tt, x, v, tol), needed, threads)))
    wv = bracket(v) ** 5
    sup = np.array([float(np.max(wv * np.abs(vals[t] - vals[2 * t]))) for t in t_list])
    if np.all(sup > 0):
        expo = fit_slope(t_list, sup)
    else:
        expo = 0.0
    T_end = field.T if np.isfinite(field.T) else needed[-1]
    f_inf = vals[needed[-1]] if T_end == needed[-1] else g_profile(data, field, T_end, x, v, tol)
    return ScatterResult(t_list, sup, float(expo), f_inf, x, v)
