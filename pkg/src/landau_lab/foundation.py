"""Shared conventions: weights, norms, configuration, sample sets, randomness.

Fourier convention used throughout the package::

    g_hat(xi) = int g(x) exp(-i x.xi) dx

so that ``(grad g)^ = i xi g_hat``, ``(Delta^{-1} g)^ = -g_hat/|xi|^2`` and the
electric field of a density has symbol ``-i xi rho_hat / |xi|^2``.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import stats

try:  # python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml


class LabError(Exception):
    """Base class for errors raised by the laboratory."""


class NumericalFailure(LabError):
    """Quadrature, Picard or Monte-Carlo failure (maps to exit code 3)."""


class VerificationFailure(LabError):
    """A ratio or tolerance breach (maps to exit code 1)."""


class UsageError(LabError):
    """Invalid input or configuration (maps to exit code 2)."""


# ---------------------------------------------------------------- weights

def weight(t, x) -> np.ndarray:
    """Space-time weight ``sqrt(1 + t^2 + |x|^2)``.

    Parameters
    ----------
    t : float or array_like
        Time(s), broadcast against the leading axes of ``x``.
    x : array_like, shape (..., 3)
        Spatial point(s).

    Returns
    -------
    ndarray
        Weight values, always ``>= 1``.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.sqrt(1.0 + t * t + np.sum(x * x, axis=-1))


def time_bracket(t) -> np.ndarray:
    """Elementwise ``sqrt(1 + t^2)`` for scalars or arrays of times."""
    t = np.asarray(t, dtype=float)
    return np.sqrt(1.0 + t * t)


def bracket(*parts) -> np.ndarray:
    """Japanese bracket ``sqrt(1 + sum |part|^2)`` of scalars or 3-vectors.

    A part whose last axis has length 3 counts as a vector, so arrays of
    times must go through :func:`time_bracket` or :func:`weight` instead.
    """
    total = 1.0
    for p in parts:
        p = np.asarray(p, dtype=float)
        if p.ndim and p.shape[-1] == 3:
            total = total + np.sum(p * p, axis=-1)
        else:
            total = total + p * p
    return np.sqrt(total)


def _magnitude(a: np.ndarray, nlead: int) -> np.ndarray:
    """Euclidean (Frobenius) magnitude over all trailing tensor axes."""
    a = np.asarray(a, dtype=float)
    if a.ndim == nlead:
        return np.abs(a)
    return np.sqrt(np.sum(a.reshape(a.shape[:nlead] + (-1,)) ** 2, axis=-1))


def _max_abs_entry(a: np.ndarray, nlead: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == nlead:
        return np.abs(a)
    return np.max(np.abs(a.reshape(a.shape[:nlead] + (-1,))), axis=-1)


def density_norm(t, x, d1, d2, d3, kappa0: float) -> float:
    """Sampled version of the density norm built on ``grad^m Delta^{-1} rho``.

    The three weighted quantities are ``<t,x>^{3-kappa0}|d1|``,
    ``<t,x>^{4-kappa0}|d2|`` and ``<t,x>^4|d3|``; the supremum over the
    samples of their sum is returned.  This is a sampled lower bound of the
    true supremum over space-time.

    Parameters
    ----------
    t : array_like, shape (n,)
    x : array_like, shape (n, 3)
    d1, d2, d3 : array_like
        ``grad Delta^{-1} rho`` (n, 3), ``grad^2`` (n, 3, 3) and ``grad^3``
        (n, 3, 3, 3) at the samples.  Pass ``None`` for an absent order,
        which then counts as zero.
    kappa0 : float
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size == 0:
        raise UsageError("no samples")
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    w = weight(t, x)
    total = np.zeros(t.size)
    for d, p in ((d1, 3.0 - kappa0), (d2, 4.0 - kappa0), (d3, 4.0)):
        if d is None:
            continue
        total = total + w ** p * _magnitude(np.asarray(d).reshape((t.size,) + np.shape(d)[1:]), 1)
    return float(np.max(total))


def moment_norm(t, x, g, grad_g) -> float:
    """Sampled moment norm ``sup <t,x>^4 |grad g| + sup <t,x>^3 |g|``.

    Tensor-valued fields are reduced through their maximum absolute entry.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size == 0:
        raise UsageError("no samples")
    x = np.asarray(x, dtype=float).reshape(t.size, 3)
    w = weight(t, x)
    out = 0.0
    if grad_g is not None:
        out += float(np.max(w ** 4 * _max_abs_entry(np.asarray(grad_g).reshape((t.size,) + np.shape(grad_g)[1:]), 1)))
    if g is not None:
        out += float(np.max(w ** 3 * _max_abs_entry(np.asarray(g).reshape((t.size,) + np.shape(g)[1:]), 1)))
    return out


@dataclass
class NormMonitor:
    """Norm values tracked across a run.

    ``bootstrap`` is the density norm plus the initial-data norm.
    """

    density: float
    moments: dict = field(default_factory=dict)
    f0: float = 0.0

    @property
    def bootstrap(self) -> float:
        return self.density + self.f0


# ---------------------------------------------------------------- ratio tables

def trend_statistic(ratio, w) -> float:
    """Spearman rank correlation of ``ratio`` against ``log w``.

    Non-finite or zero ratios are dropped; fewer than three usable samples
    give 0.
    """
    ratio = np.asarray(ratio, dtype=float)
    w = np.asarray(w, dtype=float)
    keep = np.isfinite(ratio) & (ratio > 0)
    if keep.sum() < 3 or np.ptp(ratio[keep]) == 0.0:
        return 0.0
    rho = stats.spearmanr(ratio[keep], np.log(w[keep])).statistic
    return float(0.0 if not np.isfinite(rho) else rho)


@dataclass
class RatioReport:
    """Ratio table ``lhs/rhs`` for one inequality over a sample set."""

    name: str
    t: np.ndarray
    x: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    extra: dict = field(default_factory=dict)
    trend_axis: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        self.x = np.asarray(self.x, dtype=float).reshape(self.t.size, 3)
        self.lhs = np.atleast_1d(np.asarray(self.lhs, dtype=float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.rhs > 0, self.lhs / np.where(self.rhs > 0, self.rhs, 1.0), np.where(self.lhs == 0, 0.0, np.inf))
        return r

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio)) if self.ratio.size else 0.0

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.ratio))

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratio)))

    @property
    def trend(self) -> float:
        axis = self.trend_axis if self.trend_axis is not None else weight(self.t, self.x)
        return trend_statistic(self.ratio, axis)

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.t.size):
            row = {"t": self.t[i], "x1": self.x[i, 0], "x2": self.x[i, 1], "x3": self.x[i, 2],
                   "lhs": self.lhs[i], "rhs": self.rhs[i], "ratio": self.ratio[i]}
            for k, v in self.extra.items():
                row[k] = np.asarray(v)[i]
            out.append(row)
        return out

    def summary(self) -> dict:
        i = self.argmax if self.t.size else 0
        return {
            "name": self.name,
            "samples": int(self.t.size),
            "max_ratio": self.max_ratio,
            "argmax": {"t": float(self.t[i]), "x": [float(v) for v in self.x[i]]} if self.t.size else None,
            "finite": self.finite,
            "trend": self.trend,
        }


# ---------------------------------------------------------------- sample sets

def cube_directions() -> np.ndarray:
    """The 26 unit directions through vertices, face and edge midpoints of a cube."""
    dirs = [d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)]
    d = np.array(dirs, dtype=float)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def spacetime_samples(times: Sequence[float], radii: Sequence[float],
                      directions: np.ndarray | None = None,
                      include_origin: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Tensor sample set ``times x (radii x directions)``.

    Returns ``(t, x)`` with ``t`` of shape (n,) and ``x`` of shape (n, 3).
    """
    if directions is None:
        directions = cube_directions()
    pts = [r * d for r in radii if r > 0 for d in directions]
    if include_origin or not pts:
        pts = [np.zeros(3)] + pts
    pts = np.array(pts)
    t = np.repeat(np.asarray(times, dtype=float), len(pts))
    x = np.tile(pts, (len(times), 1))
    return t, x


def log_radii(r_max: float, n: int, r_min: float = 0.5) -> np.ndarray:
    """Log-spaced radii in ``[r_min, r_max]``."""
    return np.geomspace(r_min, r_max, n)


# ---------------------------------------------------------------- randomness

def task_rng(seed: int, task_id: int | Sequence[int]) -> np.random.Generator:
    """Independent generator for one task, derived from ``(seed, task_id)``."""
    ids = [int(task_id)] if np.isscalar(task_id) else [int(i) for i in task_id]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1)] + ids)))


def ordered_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
    """Map ``fn`` over ``items`` preserving order; threads only change wall time."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- configuration

@dataclass
class RunSection:
    kappa0: float = 0.05
    T_horizon: float = 60.0
    dt: float = 0.02
    seed: int = 20240517
    out_dir: str = "out"
    threads: int = 1


@dataclass
class SourceSection:
    family: str = "gaussian-odd"
    epsilon: float = 1e-3


@dataclass
class GridSection:
    # composite Gauss-Legendre radial frequency nodes
    k_min: float = 1e-3
    k_split: float = 0.125
    k_max: float = 10.0
    panel_nodes: int = 8
    # exported per-mode tracks (radial levels x cube directions)
    xi_levels: int = 24
    xi_min: float = 0.05
    xi_max: float = 6.0


@dataclass
class MCSection:
    samples: int = 4000


@dataclass
class NonlinearSection:
    T_horizon: float = 20.0
    max_outer: int = 10
    tol: float = 1e-9
    legendre_max: int = 4
    k_levels: int = 20
    k_lo: float = 1e-3
    k_hi: float = 1.0
    out_step: float = 0.5
    s_step: float = 0.5
    # importance samples per s-cell for the field-correction part
    cell_samples: int = 1000
    # velocity tensor-quadrature nodes per axis for pointwise moments
    v_nodes: int = 16


@dataclass
class CharSection:
    tol: float = 1e-10
    max_iter: int = 60


@dataclass
class Config:
    """Resolved run configuration.

    Sections mirror the TOML file layout: ``run``, ``source``, ``grid``,
    ``mc``, ``nonlinear`` and ``characteristics``.
    """

    run: RunSection = field(default_factory=RunSection)
    source: SourceSection = field(default_factory=SourceSection)
    grid: GridSection = field(default_factory=GridSection)
    mc: MCSection = field(default_factory=MCSection)
    nonlinear: NonlinearSection = field(default_factory=NonlinearSection)
    characteristics: CharSection = field(default_factory=CharSection)

    # convenience accessors for the most used values
    @property
    def kappa0(self) -> float:
        return self.run.kappa0

    @property
    def epsilon(self) -> float:
        return self.source.epsilon

    @property
    def T_horizon(self) -> float:
        return self.run.T_horizon

    @property
    def dt(self) -> float:
        return self.run.dt

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def mc_samples(self) -> int:
        return self.mc.samples

    def validate(self) -> "Config":
        r = self.run
        if not 0.0 < r.kappa0 < 1.0:
            raise UsageError("kappa0 must lie in (0, 1)")
        if not r.dt > 0.0:
            raise UsageError("dt must be positive")
        if r.T_horizon < r.dt:
            raise UsageError("T_horizon must be at least dt")
        if self.mc.samples < 1:
            raise UsageError("mc.samples must be at least 1")
        if self.source.family not in ("gaussian-odd", "polyweight"):
            raise UsageError(f"unknown source family {self.source.family!r}")
        if r.threads < 1:
            raise UsageError("threads must be at least 1")
        g = self.grid
        if not 0 < g.k_min < g.k_split < g.k_max:
            raise UsageError("grid requires 0 < k_min < k_split < k_max")
        n = self.nonlinear
        if not _is_multiple(n.s_step, r.dt) or not _is_multiple(n.out_step, n.s_step):
            raise UsageError("nonlinear.s_step must be a multiple of dt and out_step a multiple of s_step")
        if not 0 < n.k_lo < n.k_hi or n.k_levels < 4:
            raise UsageError("nonlinear k grid needs 0 < k_lo < k_hi and at least 4 levels")
        if n.legendre_max < 1 or n.cell_samples < 2 or n.v_nodes < 4 or n.max_outer < 1:
            raise UsageError("invalid nonlinear section")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        for section, values in (data or {}).items():
            if not hasattr(cfg, section) or not isinstance(values, dict):
                raise UsageError(f"unknown config section {section!r}")
            sec = getattr(cfg, section)
            for key, value in values.items():
                _set_field(sec, section, key, value)
        return cfg.validate()


def _is_multiple(a: float, b: float) -> bool:
    q = a / b
    return q >= 1 - 1e-9 and abs(q - round(q)) < 1e-6


def _set_field(sec, section: str, key: str, value) -> None:
    names = {f.name: f for f in dataclasses.fields(sec)}
    if key not in names:
        raise UsageError(f"unknown config key {section}.{key}")
    current = getattr(sec, key)
    try:
        if isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        else:
            value = str(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {section}.{key}: {value!r}") from None
    setattr(sec, key, value)


def _parse_scalar(text: str) -> Any:
    try:
        return _toml.loads(f"v = {text}")["v"]
    except _toml.TOMLDecodeError:
        return text


def load_config(path: str | os.PathLike | None = None,
                overrides: Sequence[str] = ()) -> Config:
    """Load a TOML config (``None`` or ``"default"`` gives the defaults) and apply
    ``section.key=value`` overrides."""
    data: dict = {}
    if path is not None and str(path) != "default":
        try:
            with open(path, "rb") as fh:
                data = _toml.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except _toml.TOMLDecodeError as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from None
    cfg = Config.from_dict(data)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value, got {item!r}")
        lhs, rhs = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not hasattr(cfg, section):
            raise UsageError(f"unknown config section {section!r}")
        _set_field(getattr(cfg, section), section, key, _parse_scalar(rhs.strip()))
    return cfg.validate()


def out_dir_path(cfg: Config, override: str | None = None) -> Path:
    """Resolve the output directory: flag, then env ``LANDAU_LAB_OUT``, then config."""
    raw = override or os.environ.get("LANDAU_LAB_OUT") or cfg.run.out_dir
    return Path(raw)


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def double_factorial_odd(n: int) -> float:
    """``(2n+1)!!``."""
    return float(math.prod(range(1, 2 * n + 2, 2)))


def envelope_peaks(t, y, t_min: float = -np.inf, t_max: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Local maxima of ``|y|`` with times in ``[t_min, t_max]``."""
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(y, dtype=float))
    i = np.arange(1, a.size - 1)
    peak = i[(a[i] >= a[i - 1]) & (a[i] > a[i + 1])]
    peak = peak[(t[peak] >= t_min) & (t[peak] <= t_max)]
    return t[peak], a[peak]


def zero_crossings(t, y) -> np.ndarray:
    """Linearly interpolated sign changes of ``y``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.signbit(y)
    i = np.nonzero(s[:-1] != s[1:])[0]
    i = i[(y[i] != 0) | (y[i + 1] != 0)]
    return t[i] - y[i] * (t[i + 1] - t[i]) / (y[i + 1] - y[i])
