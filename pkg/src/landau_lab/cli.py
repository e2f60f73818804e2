"""Command-line entry point ``landau-lab``.

Every subcommand writes its artifacts under the output directory together
with one ``manifest_<subcommand>.json`` listing the resolved config and the
sha256 digest of each emitted file.  Exit codes: 0 success, 1 a ratio or
tolerance breach, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .artifacts import artifact_list, digest, dumps_json, read_csv, write_csv, write_f64, write_json
from .foundation import (Config, LabError, NumericalFailure, RatioReport, UsageError, VerificationFailure,
                         load_config, out_dir_path)

TREND_LIMIT = 0.2

# human-readable labels for report entries, keyed by summary field
LABELS = {
    "equilibrium.mass_error": "equilibrium mass normalization error",
    "equilibrium.fourier_max_error": "equilibrium transform quadrature error",
    "equilibrium.scaling_max_ulp": "kernel self-similarity error (ulp)",
    "linear.decay_slope": "linear field decay slope at the origin",
    "linear.zero_spacing": "Langmuir zero-crossing spacing",
    "linear.weighted_sup": "time-weighted field sup",
    "linear.weighted_trend": "time-weighted field sup trend",
    "nonlinear.iterations": "outer fixed-point iterations",
    "nonlinear.max_ratio": "outer successive-difference ratio",
    "nonlinear.bootstrap_ratio": "bootstrap norm ratio",
    "scatter.exponent": "scattering difference decay exponent",
    "characteristics.identity": "straightening identity residual",
    "lemmas.a3_slope": "velocity-average slope at the origin",
    "lemmas.a8_symmetry": "space-time convolution symmetry defect",
}


# ---------------------------------------------------------------- helpers

class Run:
    """Collects emitted files and summary values for one subcommand."""

    def __init__(self, name: str, cfg: Config, out: Path):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.paths: list[Path] = []
        self.summary: dict = {}
        self.breaches: list[str] = []

    def csv(self, filename: str, rows, columns=None) -> Path:
        p = write_csv(self.out / filename, rows, columns)
        self.paths.append(p)
        return p

    def json(self, filename: str, obj) -> Path:
        p = write_json(self.out / filename, obj)
        self.paths.append(p)
        return p

    def report(self, rep: RatioReport, filename: str | None = None, trend: bool = True) -> dict:
        self.csv(filename or f"{rep.name}.csv", rep.rows())
        summ = rep.summary()
        self.summary.setdefault("ratio_tables", {})[rep.name] = summ
        if not summ["finite"]:
            self.breaches.append(f"{rep.name}: non-finite ratio")
        if trend and summ["trend"] > TREND_LIMIT:
            self.breaches.append(f"{rep.name}: trend {summ['trend']:.3f} > {TREND_LIMIT}")
        return summ

    def check(self, ok: bool, message: str) -> None:
        if not ok:
            self.breaches.append(message)

    def manifest(self, wall: float) -> Path:
        root = self.out
        man = {
            "subcommand": self.name,
            "config": self.cfg.to_dict(),
            "code_version": __version__,
            "wall_clock_seconds": round(wall, 3),
            "summary": self.summary,
            "breaches": self.breaches,
            "artifacts": artifact_list(self.paths, root),
        }
        return write_json(root / f"manifest_{self.name}.json", man)


def _data(cfg: Config, epsilon: float | None = None):
    from .sources import InitialData
    return InitialData.builtin(cfg.source.family, cfg.epsilon if epsilon is None else epsilon)


def _samples_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        rows = read_csv(path)
        t = np.array([float(r["t"]) for r in rows])
        x = np.array([[float(r["x1"]), float(r["x2"]), float(r["x3"])] for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read samples from {path}: {exc}") from None
    if t.size == 0:
        raise UsageError(f"no samples in {path}")
    return t, x


def _load_field(spec: list[str] | None, cfg: Config, default: str = "synthetic"):
    from .characteristics import FieldHandle
    from .volterra import load_history

    spec = spec or [default]
    kind = spec[0]
    if kind == "synthetic":
        return FieldHandle.synthetic()
    if kind == "zero":
        return FieldHandle.zero()
    if kind in ("linear-run", "run"):
        if len(spec) < 2:
            raise UsageError("--field linear-run needs a directory")
        hist = load_history(Path(spec[1]) / "history", _data(cfg))
        return hist.field_handle(True)
    raise UsageError(f"unknown field {kind!r}")


def _tracks(run: Run, tracks, directory: Path) -> None:
    if not tracks:
        return
    xi = np.array([tr.xi for tr in tracks])
    rho = np.array([tr.rho_hat for tr in tracks])
    src = np.array([tr.source_hat for tr in tracks])
    run.paths += write_f64(directory / "xi.f64", xi)
    run.paths += write_f64(directory / "times.f64", tracks[0].times)
    run.paths += write_f64(directory / "rho_hat.f64", rho, {"axes": ["mode", "time", "re_im"]})
    run.paths += write_f64(directory / "source_hat.f64", src, {"axes": ["mode", "time", "re_im"]})


def _field_rows(history, step: float = 1.0) -> list[dict]:
    """Plot-ready field samples: origin plus radii 1..8 along three directions."""
    dirs = np.array([[1.0, 0, 0], [0, 1.0, 0], np.ones(3) / np.sqrt(3)])
    pts = np.vstack([np.zeros((1, 3))] + [r * dirs for r in (1.0, 2.0, 4.0, 8.0)])
    stride = max(1, int(round(step / history.dt)))
    idx = np.arange(0, history.times.size, stride)
    rho = history.density.evaluate(pts, "rho")
    E = history.density.evaluate(pts, 1)
    H = history.density.evaluate(pts, 2)
    rows = []
    for i in idx:
        for j, p in enumerate(pts):
            rows.append({"t": history.times[i], "x1": p[0], "x2": p[1], "x3": p[2], "rho": rho[i, j],
                         "E1": E[i, j, 0], "E2": E[i, j, 1], "E3": E[i, j, 2],
                         "gradE_norm": float(np.sqrt(np.sum(H[i, j] ** 2)))})
    return rows


# ---------------------------------------------------------------- subcommands

def cmd_equilibrium_check(args, run: Run) -> None:
    from .equilibrium import mass, mu_fourier, mu_fourier_quadrature
    from .kernels import self_similarity_ulp

    m = mass()
    fourier = []
    for eta in (0.5, 1.0, 2.0):
        q = mu_fourier_quadrature(eta)
        fourier.append({"eta": eta, "quadrature": q, "exact": float(mu_fourier(eta)), "error": abs(q - float(mu_fourier(eta)))})
    ulp = self_similarity_ulp(1000, run.cfg.seed)
    out = {"mass": m, "mass_error": abs(m - 1.0), "fourier": fourier,
           "fourier_max_error": max(f["error"] for f in fourier), "scaling_max_ulp": ulp}
    run.json("equilibrium.json", out)
    run.summary["equilibrium"] = {k: out[k] for k in ("mass_error", "fourier_max_error", "scaling_max_ulp")}
    run.check(out["mass_error"] <= 1e-8, "mass normalization")
    run.check(out["fourier_max_error"] <= 1e-6, "transform quadrature")
    run.check(out["scaling_max_ulp"] <= 4, "kernel scaling")


def cmd_kernel_decay(args, run: Run) -> None:
    from .kernels import builtin_kernel_samples, verify_kernel_decay

    if args.samples == "builtin":
        t, x = builtin_kernel_samples(args.which)
    else:
        t, x = _samples_file(args.samples)
    rep = verify_kernel_decay(t, x, args.j1, args.j2, args.which, threads=run.cfg.run.threads)
    run.csv(f"kernel_decay_{args.which}_{args.j1}{args.j2}.csv",
            [{k: r[k] for k in ("t", "x1", "x2", "x3", "lhs", "rhs", "ratio")} for r in rep.rows()])
    summ = rep.summary()
    run.summary.setdefault("ratio_tables", {})[rep.name] = summ
    run.check(summ["finite"], f"{rep.name}: non-finite ratio")
    run.check(summ["trend"] <= TREND_LIMIT, f"{rep.name}: trend {summ['trend']:.3f} > {TREND_LIMIT}")


def cmd_solve_linear(args, run: Run) -> None:
    from .volterra import linear_diagnostics, save_history, solve_linear

    data = _data(run.cfg)
    hist = solve_linear(data, run.cfg)
    tracks_dir = Path(args.emit_tracks) if args.emit_tracks else run.out / "tracks"
    _tracks(run, hist.tracks, tracks_dir)
    fields = Path(args.emit_fields) if args.emit_fields else run.out / "fields.csv"
    run.paths.append(write_csv(fields, _field_rows(hist)))
    run.paths += save_history(hist, run.out / "history")
    diag = linear_diagnostics(hist, run.cfg.kappa0)
    run.json("linear_summary.json", diag)
    run.summary["linear"] = diag
    if data.epsilon != 0.0:
        run.check(np.isfinite(diag["weighted_sup"]), "weighted field sup is not finite")


def cmd_solve_nonlinear(args, run: Run) -> None:
    from .nonlinear import moment_norm_witness, solve_nonlinear
    from .volterra import save_history

    data = _data(run.cfg)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    res = solve_nonlinear(data, run.cfg, threads=run.cfg.run.threads, log=log)
    trace = res.trace.to_dict()
    run.json("trace.json", trace)
    _tracks(run, res.history.tracks, run.out / "tracks")
    run.paths += save_history(res.history, run.out / "history")
    ratios = trace["ratios"][1:]
    run.summary["nonlinear"] = {"iterations": trace["iterations"], "converged": trace["converged"],
                                "max_ratio": max(ratios) if ratios else 0.0,
                                "bootstrap_ratio": trace["bootstrap_ratio"]}
    if data.epsilon != 0.0:
        run.report(moment_norm_witness(res, run.cfg), trend=False)


def cmd_characteristics_check(args, run: Run) -> None:
    from .characteristics import builtin_char_samples, identity_check, verify_char_bounds

    field = _load_field(args.field, run.cfg)
    threads = run.cfg.run.threads
    T = min(20.0, field.T)
    for which in args.which:
        if which == "identity":
            res = identity_check(field, T=T, tol=run.cfg.characteristics.tol, threads=threads)
            run.json("char_identity.json", res)
            run.summary.setdefault("characteristics", {})["identity"] = res["max_scaled_residual"]
            run.check(res["max_scaled_residual"] <= 1e-6, "straightening identity residual")
            continue
        samples = builtin_char_samples(which, T=T)
        orders = [(args.n1, args.n2)] if which in ("a9", "a10") else [(0, 0)]
        for n1, n2 in orders:
            rep = verify_char_bounds(field, samples, which, n1, n2, kappa0=run.cfg.kappa0, threads=threads)
            run.report(rep)


def cmd_lemmas(args, run: Run) -> None:
    from . import estimates as es

    which = set(args.which)
    if "all" in which:
        which = {"a8", "a3", "a1", "A"}
    threads = run.cfg.run.threads
    out = {}
    if "a8" in which:
        rep = es.lemma_a8_report(threads=threads)
        run.report(rep, "lemma_a8.csv", trend=False)
        sym = max(es.lemma_a8_symmetry(b1, b2, t, [r, 0, 0]) for b1, b2 in es.A8_PARAMS[:2]
                  for t, r in ((10.0, 0.0), (5.0, 20.0)))
        out["a8_symmetry"] = sym
        run.check(sym <= 1e-6, "convolution symmetry")
    if "a3" in which:
        rep = es.lemma_a3_report(threads=threads)
        run.report(rep, "lemma_a3.csv", trend=False)
        out["a3_slope"] = es.lemma_a3_slope()
        run.check(abs(out["a3_slope"] + 3.0) <= 0.05, "velocity-average slope")
    if "a1" in which:
        data = _data(run.cfg)
        if args.samples == "builtin":
            t, x = es.builtin_singular_samples()
        else:
            t, x = _samples_file(args.samples)
        for n1, n2 in ((0, 0), (1, 1)):
            run.report(es.singular_decay_check(data, t, x, n1, n2, threads), trend=False)
    if "A" in which:
        if args.samples == "builtin":
            t, x = es.builtin_A_samples()
        else:
            t, x = _samples_file(args.samples)
        r1, r2 = es.lemma_42_check(t, x, run.cfg.kappa0, seed=run.cfg.seed, threads=threads)
        run.report(r1)
        run.report(r2)
    tables = run.summary.get("ratio_tables", {})
    summary = {"tables": tables, **out}
    run.json("lemmas_summary.json", summary)
    run.summary["lemmas"] = out


def cmd_scatter(args, run: Run) -> None:
    from .nonlinear import scattering_profile

    data = _data(run.cfg)
    field = _load_field(args.field, run.cfg, default="zero")
    t_list = [float(v) for v in args.times.split(",")]
    res = scattering_profile(data, field, t_list, threads=run.cfg.run.threads)
    run.csv("scatter.csv", res.rows(), ["t", "sup_diff", "fitted_exponent"])
    run.summary["scatter"] = {"exponent": res.exponent, "sup_diff": res.sup_diff.tolist()}
    if not field.is_zero:
        run.check(-1.3 <= res.exponent <= -0.7, f"scattering exponent {res.exponent:.3f} outside [-1.3, -0.7]")
    else:
        run.check(bool(np.all(res.sup_diff == 0.0)), "free transport must not scatter")


# ---------------------------------------------------------------- report

def _flatten(prefix: str, obj, out: dict) -> None:
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, (int, float, bool, str)) or obj is None:
        out[prefix] = obj


def report(in_dir) -> tuple[Path, Path]:
    """Merge all manifests in ``in_dir`` into ``report.json`` and ``report.txt``.

    Digests are recomputed and must match.  Output depends only on the
    manifests and artifacts, so re-running is idempotent.
    """
    d = Path(in_dir)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    manifests = sorted(d.glob("manifest_*.json"))
    if not manifests:
        raise UsageError(f"no manifests in {d}")
    entries = {}
    tables = {}
    runs = []
    for m in manifests:
        try:
            man = json.loads(m.read_text())
            name = man["subcommand"]
            arts = man["artifacts"]
            summ = man.get("summary", {})
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"corrupt manifest {m.name}: {exc}") from None
        for a in arts:
            p = d / a["path"]
            if not p.exists() or digest(p) != a["sha256"]:
                raise UsageError(f"artifact {a['path']} does not match manifest {m.name}")
        runs.append({"subcommand": name, "artifacts": len(arts), "breaches": man.get("breaches", [])})
        for tname, tsum in summ.get("ratio_tables", {}).items():
            tables[tname] = tsum
        flat: dict = {}
        _flatten("", {k: v for k, v in summ.items() if k != "ratio_tables"}, flat)
        for key, value in flat.items():
            entries[key] = {"label": LABELS.get(key, key), "value": value}
    doc = {"runs": runs, "results": entries, "ratio_tables": tables}
    jpath = d / "report.json"
    jpath.write_text(dumps_json(doc))
    lines = ["landau-lab report", ""]
    for r in runs:
        status = "ok" if not r["breaches"] else "; ".join(r["breaches"])
        lines.append(f"[{r['subcommand']}] {r['artifacts']} artifacts: {status}")
    lines.append("")
    for key in sorted(entries):
        e = entries[key]
        v = e["value"]
        vs = f"{v:.6g}" if isinstance(v, float) else str(v)
        lines.append(f"{e['label']}: {vs}")
    lines.append("")
    for name in sorted(tables):
        t = tables[name]
        lines.append(f"ratio table {name}: max {t['max_ratio']:.4g}, trend {t['trend']:.3f}, "
                     f"finite {t['finite']}, samples {t['samples']}")
    tpath = d / "report.txt"
    tpath.write_text("\n".join(lines) + "\n")
    return jpath, tpath


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="TOML config path or 'default'")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--out", default=None, help="output directory (else $LANDAU_LAB_OUT, else run.out_dir)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)

    p = argparse.ArgumentParser(prog="landau-lab", description="Numerical laboratory for Landau damping "
                                "near the Poisson equilibrium.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    sub.add_parser("equilibrium-check", parents=[common], help="equilibrium normalization and transform checks")

    k = sub.add_parser("kernel-decay", parents=[common], help="kernel decay ratio table")
    k.add_argument("--j1", type=int, default=0)
    k.add_argument("--j2", type=int, default=0)
    k.add_argument("--which", choices=["glow-riesz", "glow", "ghigh"], default="glow")
    k.add_argument("--samples", default="builtin", help="'builtin' or CSV with columns t,x1,x2,x3")

    s = sub.add_parser("solve-linear", parents=[common], help="linear density, tracks and field samples")
    s.add_argument("--emit-tracks", default=None, metavar="DIR")
    s.add_argument("--emit-fields", default=None, metavar="CSV")

    n = sub.add_parser("solve-nonlinear", parents=[common], help="outer fixed-point iteration")
    n.add_argument("--verbose", action="store_true", help="log outer iterations to stderr")

    c = sub.add_parser("characteristics-check", parents=[common], help="characteristic bound tables")
    c.add_argument("--field", nargs="+", default=None, metavar="SPEC",
                   help="'synthetic', 'zero' or 'linear-run DIR'")
    c.add_argument("--which", nargs="+", choices=["a9", "a10", "a13", "a15", "identity"], default=["identity"])
    c.add_argument("--n1", type=int, default=0)
    c.add_argument("--n2", type=int, default=0)

    lm = sub.add_parser("lemmas", parents=[common], help="weighted-integral ratio tables")
    lm.add_argument("--which", nargs="+", choices=["a8", "a3", "a1", "A", "all"], default=["all"])
    lm.add_argument("--samples", default="builtin")

    sc = sub.add_parser("scatter", parents=[common], help="scattering profile along characteristics")
    sc.add_argument("--field", nargs="+", default=None, metavar="SPEC", help="'zero' or 'linear-run DIR'")
    sc.add_argument("--times", default="5,10,20")

    r = sub.add_parser("report", help="merge manifests into one summary")
    r.add_argument("in_dir")
    return p


COMMANDS: dict[str, Callable] = {
    "equilibrium-check": cmd_equilibrium_check,
    "kernel-decay": cmd_kernel_decay,
    "solve-linear": cmd_solve_linear,
    "solve-nonlinear": cmd_solve_nonlinear,
    "characteristics-check": cmd_characteristics_check,
    "lemmas": cmd_lemmas,
    "scatter": cmd_scatter,
}


def _config(args) -> Config:
    sets = list(args.set)
    if args.seed is not None:
        sets.append(f"run.seed={args.seed}")
    if args.threads is not None:
        sets.append(f"run.threads={args.threads}")
    return load_config(args.config, sets)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "report":
            jpath, tpath = report(args.in_dir)
            print(tpath.read_text(), end="")
            return 0
        cfg = _config(args)
        out = out_dir_path(cfg, args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command.replace("-", "_"), cfg, out)
        start = time.perf_counter()
        COMMANDS[args.command](args, run)
        run.manifest(time.perf_counter() - start)
        if run.breaches:
            raise VerificationFailure("; ".join(run.breaches))
        return 0
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
