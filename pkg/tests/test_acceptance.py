"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary (see
``conftest.py``).  Tolerances are the stated ones; runtime limits are part
of each verdict.
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from landau_lab import estimates as es
from landau_lab.characteristics import (FieldHandle, builtin_char_samples, identity_check, picard_YW, psi_map,
                                        shooting_YW, verify_char_bounds)
from landau_lab.cli import main
from landau_lab.equilibrium import mass, mu_fourier, mu_fourier_quadrature
from landau_lab.foundation import fit_slope, load_config
from landau_lab.kernels import KINDS, builtin_kernel_samples, self_similarity_ulp, verify_kernel_decay
from landau_lab.nonlinear import (compute_moments, conservation_residual, scattering_profile, solve_nonlinear,
                                  stencil_points)
from landau_lab.sources import InitialData
from landau_lab.volterra import apply_resolvent, linear_diagnostics, solve_linear, time_grid, volterra_step

pytestmark = pytest.mark.slow

VERDICTS: list[str] = []

KERNEL_CASES = [(j1, j2) for j1 in range(3) for j2 in range(3) if j1 + j2 <= 2]
CHAR_CASES = [("a9", 0, 0), ("a9", 1, 0), ("a9", 0, 1), ("a10", 0, 0), ("a13", 0, 0), ("a15", 0, 0)]


def verdict(number: int, title: str, checks: dict, elapsed: float, limit: float) -> None:
    """Print and record one line; fail the test when any check (or the time limit) fails."""
    checks = dict(checks)
    checks[f"runtime {elapsed:.1f}s < {limit:.0f}s"] = elapsed < limit
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if failed:
        line += "  [failed: " + "; ".join(failed) + "]"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def gaussian(eps: float = 1e-3) -> InitialData:
    return InitialData.builtin("gaussian-odd", eps)


# ---------------------------------------------------------------- 1

def test_criterion_01_equilibrium():
    t0 = time.perf_counter()
    m_err = abs(mass() - 1.0)
    f_err = max(abs(mu_fourier_quadrature(e) - float(mu_fourier(e))) for e in (0.5, 1.0, 2.0))
    ulp = self_similarity_ulp(1000, 0)
    verdict(1, f"equilibrium: mass err {m_err:.1e}, transform err {f_err:.1e}, scaling {ulp:.2f} ulp",
            {"mass within 1e-8": m_err <= 1e-8, "transform within 1e-6": f_err <= 1e-6,
             "scaling within 4 ulp": ulp <= 4.0},
            time.perf_counter() - t0, 10)


# ---------------------------------------------------------------- 2

def band_limited_sources(t: np.ndarray, n: int = 100, modes: int = 8, band: float = 2.0, seed: int = 42):
    """``n`` random trigonometric polynomials with frequencies in ``[0, band]`` and unit variance."""
    rng = np.random.default_rng(seed)
    om = rng.uniform(0.0, band, (n, modes))
    amp = rng.normal(0.0, 1.0 / np.sqrt(modes), (n, modes))
    ph = rng.uniform(0.0, 2 * np.pi, (n, modes))
    return np.einsum("nm,tnm->tn", amp, np.cos(t[:, None, None] * om[None] + ph[None]))


def test_criterion_02_resolvent_identity():
    t0 = time.perf_counter()
    worst = {}
    orders = {}
    for lam in (0.0, 0.5, 2.0):
        diffs = []
        for dt in (4e-3, 2e-3, 1e-3):
            t = time_grid(20.0, dt)
            g = band_limited_sources(t)
            diffs.append(float(np.max(np.abs(apply_resolvent(g, lam, dt) - volterra_step(g, lam, dt)))))
        worst[lam] = diffs[-1]
        orders[lam] = float(np.log2(diffs[-2] / diffs[-1]))
    checks = {}
    for lam in worst:
        checks[f"lambda={lam}: max diff {worst[lam]:.2e} <= 1e-6"] = worst[lam] <= 1e-6
        checks[f"lambda={lam}: order {orders[lam]:.2f} in 2.0+-0.2"] = abs(orders[lam] - 2.0) <= 0.2
    detail = ", ".join(f"lam {k}: {worst[k]:.1e} (order {orders[k]:.2f})" for k in worst)
    verdict(2, f"resolvent vs direct march: {detail}", checks, time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 3

def test_criterion_03_closed_form_anchor():
    t0 = time.perf_counter()
    dt = 1e-3
    t = time_grid(20.0, dt)
    err = float(np.max(np.abs(apply_resolvent(t, 0.0, dt) - np.sin(t))))
    verdict(3, f"source t -> sin t: max error {err:.2e} (bound {5 * dt * dt:.1e})",
            {"error <= 5 dt^2": err <= 5 * dt * dt}, time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 4

def test_criterion_04_linear_damping():
    t0 = time.perf_counter()
    cfg = load_config("default")
    hist = solve_linear(gaussian(), cfg, T=60.0)
    d = linear_diagnostics(hist, cfg.kappa0, fit_window=(10.0, 60.0), spacing_level=0.05)
    checks = {
        f"slope {d['decay_slope']:.3f} in -3+-0.4": abs(d["decay_slope"] + 3.0) <= 0.4,
        f"spacing {d['zero_spacing']:.4f} (max dev {d['zero_spacing_max_dev']:.4f}) in pi+-0.05":
            d["zero_spacing_max_dev"] <= 0.05,
        f"weighted sup {d['weighted_sup']:.3e} finite": bool(np.isfinite(d["weighted_sup"])),
        f"weighted trend {d['weighted_trend']:.2f} <= 0.2": d["weighted_trend"] <= 0.2,
    }
    verdict(4, f"linear damping: slope {d['decay_slope']:.3f}, spacing {d['zero_spacing']:.4f}, "
               f"weighted trend {d['weighted_trend']:.2f}", checks, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------- 5

def test_criterion_05_kernel_decay(goldens):
    t0 = time.perf_counter()
    checks = {}
    for kind in KINDS:
        t, x = builtin_kernel_samples(kind)
        for j1, j2 in KERNEL_CASES:
            s = verify_kernel_decay(t, x, j1, j2, kind).summary()
            gold = goldens["kernel"][f"{kind}_{j1}{j2}"]
            checks[f"{kind} ({j1},{j2}) finite"] = s["finite"]
            checks[f"{kind} ({j1},{j2}) trend {s['trend']:.3f} <= 0.2"] = s["trend"] <= 0.2
            checks[f"{kind} ({j1},{j2}) max {s['max_ratio']:.4g} <= 1.05 golden"] = s["max_ratio"] <= 1.05 * gold
    n_ok = sum(checks.values())
    verdict(5, f"kernel decay tables: {n_ok}/{len(checks)} checks hold", checks, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------- 6

def test_criterion_06_characteristics(goldens):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checks = {}
    zero = FieldHandle.zero()
    z_ok = True
    for _ in range(20):
        s, t = sorted(rng.uniform(0, 10, 2))
        x, v = rng.normal(size=3), rng.normal(size=3)
        st = picard_YW(zero, s, t, x, v)
        psi, _ = psi_map(zero, s, t, x, v)
        z_ok &= bool(np.all(st.Y == 0) and np.all(st.W == 0) and np.array_equal(psi, v))
    checks["zero field exact"] = z_ok
    c_err = 0.0
    for _ in range(20):
        c = rng.normal(0, 0.1, 3)
        s, t = sorted(rng.uniform(0, 10, 2))
        st = picard_YW(FieldHandle.constant(c), s, t, rng.normal(size=3), rng.normal(size=3))
        c_err = max(c_err, float(np.max(np.abs(st.Y - 0.5 * c * (t - s) ** 2))),
                    float(np.max(np.abs(st.W + c * (t - s)))))
    checks[f"constant field error {c_err:.1e} <= 1e-12"] = c_err <= 1e-12
    syn = FieldHandle.synthetic()
    o_err = 0.0
    for _ in range(10):
        s, t = sorted(rng.uniform(0, 20, 2))
        x, v = rng.normal(0, 2, 3), rng.normal(0, 0.6, 3)
        st = picard_YW(syn, s, t, x, v, tol=1e-13)
        Y, W = shooting_YW(syn, s, t, x, v)
        o_err = max(o_err, float(np.max(np.abs(st.Y - Y))), float(np.max(np.abs(st.W - W))))
    checks[f"Picard vs shooting {o_err:.1e} <= 1e-6"] = o_err <= 1e-6
    ident = identity_check(syn, n=100)["max_scaled_residual"]
    checks[f"straightening residual {ident:.1e} <= 1e-6 (t-s)"] = ident <= 1e-6
    for which, n1, n2 in CHAR_CASES:
        s = verify_char_bounds(syn, builtin_char_samples(which), which, n1, n2).summary()
        label = f"{which} ({n1},{n2})"
        checks[f"{label} finite"] = s["finite"]
        checks[f"{label} s-trend {s['trend']:.2f} <= 0.2"] = s["trend"] <= 0.2
    verdict(6, f"characteristics: oracle {o_err:.1e}, identity {ident:.1e}, bound tables for "
               f"{len(CHAR_CASES)} cases", checks, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------- 7

def _residual(data, field, delta, t0=2.0, x0=(0.5, 0.3, -0.2)) -> float:
    ts, xs = stencil_points(t0, x0, delta)
    r1, r2 = conservation_residual(compute_moments(data, field, ts, xs, nodes=16), field, delta)
    return float(max(abs(r1[0]), np.max(np.abs(r2[0]))))


def test_criterion_07_conservation():
    t0 = time.perf_counter()
    data = gaussian()
    zero = FieldHandle.zero()
    deltas = (0.2, 0.1, 0.05)
    free = [_residual(data, zero, d) for d in deltas]
    order = fit_slope(deltas, free)
    cfg = load_config("default", ["nonlinear.T_horizon=6"])
    field = solve_nonlinear(data, cfg, with_tracks=False).history.field_handle(True)
    nl = _residual(data, field, deltas[-1])
    ratio = nl / free[-1]
    verdict(7, f"conservation: free order {order:.3f}, nonlinear/free residual {ratio:.3f}",
            {f"order {order:.2f} in 2.0+-0.3": abs(order - 2.0) <= 0.3,
             f"nonlinear residual ratio {ratio:.2f} <= 10": ratio <= 10.0},
            time.perf_counter() - t0, 600)


# ---------------------------------------------------------------- 8

def test_criterion_08_nonlinear_contraction():
    t0 = time.perf_counter()
    cfg = load_config("default")
    ts = np.array([2.0, 5.0, 10.0])
    xs = np.array([[0.5, 0.0, 0.0], [1.0, 0.5, 0.0], [0.0, 1.0, 0.0]])
    runs, parts = {}, {}
    for eps in (1e-3, 5e-4):
        data = gaussian(eps)
        res = solve_nonlinear(data, cfg, with_tracks=False)
        runs[eps] = res.trace
        m = compute_moments(data, res.history.field_handle(True), ts, xs, nodes=16)
        parts[eps] = (m.Rc0, m.Rc1, m.Rc2)
    tr = runs[1e-3]
    ratios = tr.ratios[1:]
    norm_ratio = runs[1e-3].norms[-1] / runs[5e-4].norms[-1]
    scal = [float(np.max(np.abs(parts[1e-3][j])) / np.max(np.abs(parts[5e-4][j]))) for j in range(3)]
    checks = {
        f"converged in {tr.iterations} <= 10": tr.converged and tr.iterations <= 10,
        f"max difference ratio {max(ratios, default=0.0):.1e} <= 0.5": all(r <= 0.5 for r in ratios),
        f"norm ratio {norm_ratio:.4f} in 2+-10%": abs(norm_ratio - 2.0) <= 0.2,
    }
    for j, s in enumerate(scal):
        checks[f"R_{j} scaling {s:.3f} in 4+-0.5"] = abs(s - 4.0) <= 0.5
    verdict(8, f"nonlinear contraction: {tr.iterations} sweeps, norm ratio {norm_ratio:.4f}, "
               f"moment scaling {', '.join(f'{s:.3f}' for s in scal)}", checks, time.perf_counter() - t0, 1800)


# ---------------------------------------------------------------- 9

def test_criterion_09_scattering():
    t0 = time.perf_counter()
    data = gaussian()
    cfg = load_config("default", ["nonlinear.T_horizon=40"])
    field = solve_nonlinear(data, cfg, with_tracks=False).history.field_handle(True)
    res = scattering_profile(data, field, [5.0, 10.0, 20.0])
    ctrl = scattering_profile(data, FieldHandle.zero(), [5.0, 10.0, 20.0])
    verdict(9, f"scattering: exponent {res.exponent:.3f}, sup diffs "
               f"{', '.join(f'{v:.2e}' for v in res.sup_diff)}",
            {f"exponent {res.exponent:.2f} in [-1.3, -0.7]": -1.3 <= res.exponent <= -0.7,
             "zero field gives identically 0": bool(np.all(ctrl.sup_diff == 0.0))},
            time.perf_counter() - t0, 600)


# ---------------------------------------------------------------- 10

def test_criterion_10_appendix(goldens):
    t0 = time.perf_counter()
    sym = max(es.lemma_a8_symmetry(b1, b2, t, [r, 0, 0]) for b1, b2 in es.A8_PARAMS[:2]
              for t, r in ((10.0, 0.0), (5.0, 20.0)))
    slope = es.lemma_a3_slope()
    t, x = es.builtin_A_samples()
    checks = {f"a8 symmetry {sym:.1e} <= 1e-6": sym <= 1e-6,
              f"a3 slope {slope:.4f} in -3+-0.05": abs(slope + 3.0) <= 0.05}
    tables = {}
    for seed in (20240517, 1, 2):
        tables[seed] = es.lemma_42_check(t, x, seed=seed)
    for rep in tables[20240517]:
        s = rep.summary()
        checks[f"{rep.name} finite"] = s["finite"]
        checks[f"{rep.name} trend {s['trend']:.2f} <= 0.2"] = s["trend"] <= 0.2
        checks[f"{rep.name} max {s['max_ratio']:.4g} <= 1.05 golden"] = s["max_ratio"] <= 1.05 * goldens["A"][rep.name]
    worst = 0.0
    seeds = list(tables)
    for i in range(3):
        for j in range(i + 1, 3):
            for a, b in zip(tables[seeds[i]], tables[seeds[j]]):
                z = np.abs(a.lhs - b.lhs) / np.sqrt(a.extra["sigma"] ** 2 + b.extra["sigma"] ** 2)
                worst = max(worst, float(np.max(z)))
    checks[f"seed agreement {worst:.2f} sigma <= 3"] = worst <= 3.0
    verdict(10, f"appendix integrals: symmetry {sym:.1e}, slope {slope:.4f}, seed spread {worst:.2f} sigma",
            checks, time.perf_counter() - t0, 900)


# ---------------------------------------------------------------- 11

SMALL_NONLINEAR = ["--set", "nonlinear.T_horizon=4", "--set", "nonlinear.cell_samples=100",
                   "--set", "mc.samples=500"]
RUNS = [
    ["kernel-decay", "--which", "glow-riesz", "--j1", "1"],
    ["lemmas", "--which", "a3", "A"],
    ["characteristics-check", "--which", "a13", "identity"],
    ["solve-linear", "--set", "run.T_horizon=20"],
    ["solve-nonlinear", *SMALL_NONLINEAR],
    ["scatter", "--field", "zero"],
]


def _outputs(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.suffix in (".csv", ".json") and not p.name.startswith("manifest_")}


def test_criterion_11_reproducibility(tmp_path):
    t0 = time.perf_counter()
    codes = {}
    for threads in (1, 8):
        for argv in RUNS:
            out = tmp_path / f"threads{threads}" / argv[0]
            codes[(threads, argv[0])] = main([*argv, "--out", str(out), "--threads", str(threads)])
    a, b = _outputs(tmp_path / "threads1"), _outputs(tmp_path / "threads8")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    same_codes = all(codes[(1, r[0])] == codes[(8, r[0])] for r in RUNS)
    verdict(11, f"reproducibility: {len(a)} CSV/JSON files compared between serial and 8 threads",
            {"all files byte-identical" + (f" (differ: {', '.join(differing[:5])})" if differing else ""):
                not differing and len(a) > 0,
             "same exit codes": same_codes},
            time.perf_counter() - t0, 1800)
