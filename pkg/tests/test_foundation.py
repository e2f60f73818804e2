from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landau_lab.foundation import (Config, NumericalFailure, RatioReport, UsageError, bracket,
                                   cube_directions, density_norm, double_factorial_odd, envelope_peaks,
                                   fit_slope, load_config, moment_norm, ordered_map, out_dir_path,
                                   spacetime_samples, task_rng, trend_statistic, weight, zero_crossings)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


def test_weight_at_origin_is_one():
    assert weight(0.0, np.zeros(3)) == 1.0


@given(finite, finite, finite, finite)
def test_weight_is_at_least_one_and_even(t, a, b, c):
    x = np.array([a, b, c])
    w = weight(t, x)
    assert w >= 1.0
    assert weight(-t, -x) == w


@given(finite, finite, finite, finite)
def test_bracket_matches_weight(t, a, b, c):
    x = np.array([a, b, c])
    assert bracket(t, x) == pytest.approx(weight(t, x), rel=1e-14)


def test_density_norm_picks_weighted_sup():
    t = np.array([0.0, 3.0])
    x = np.zeros((2, 3))
    d1 = np.array([[1.0, 0, 0], [0.0, 0, 0.1]])
    val = density_norm(t, x, d1, None, None, 0.05)
    assert val == pytest.approx(max(1.0, 0.1 * np.sqrt(10.0) ** 2.95))


def test_density_norm_requires_samples():
    with pytest.raises(UsageError):
        density_norm([], np.zeros((0, 3)), None, None, None, 0.05)


def test_moment_norm_sums_two_suprema():
    t = np.array([1.0])
    x = np.zeros((1, 3))
    g = np.array([2.0])
    gg = np.array([[0.0, -3.0, 1.0]])
    w = np.sqrt(2.0)
    assert moment_norm(t, x, g, gg) == pytest.approx(w ** 4 * 3.0 + w ** 3 * 2.0)


def test_trend_statistic_signs():
    w = np.arange(1.0, 11.0)
    assert trend_statistic(w, w) == pytest.approx(1.0)
    assert trend_statistic(1.0 / w, w) == pytest.approx(-1.0)
    assert trend_statistic(np.ones(10), w) == 0.0


@given(st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=4, max_size=30))
def test_trend_statistic_is_bounded(values):
    r = np.array(values)
    w = np.linspace(1.0, 50.0, r.size)
    assert -1.0 <= trend_statistic(r, w) <= 1.0


def test_ratio_report_handles_zero_rhs():
    rep = RatioReport("demo", [0.0, 1.0, 2.0], np.zeros((3, 3)), [0.0, 1.0, 1.0], [0.0, 2.0, 0.0])
    assert rep.ratio[0] == 0.0
    assert rep.ratio[1] == 0.5
    assert np.isinf(rep.ratio[2])
    assert not rep.finite
    rows = rep.rows()
    assert set(rows[0]) == {"t", "x1", "x2", "x3", "lhs", "rhs", "ratio"}


def test_ratio_report_summary():
    rep = RatioReport("demo", [1.0, 2.0], [[0, 0, 0], [1, 0, 0]], [1.0, 3.0], [1.0, 1.0], extra={"n": [5, 6]})
    s = rep.summary()
    assert s["max_ratio"] == 3.0
    assert s["argmax"]["x"] == [1.0, 0.0, 0.0]
    assert rep.rows()[1]["n"] == 6


def test_cube_directions():
    d = cube_directions()
    assert d.shape == (26, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert len({tuple(np.round(v, 12)) for v in d}) == 26


def test_spacetime_samples_layout():
    t, x = spacetime_samples([0.0, 1.0], [1.0, 2.0], np.eye(3))
    assert t.shape == (14,)
    assert x.shape == (14, 3)
    assert np.all(x[0] == 0)


def test_task_rng_is_deterministic_and_independent():
    a = task_rng(5, (1, 2)).standard_normal(4)
    b = task_rng(5, (1, 2)).standard_normal(4)
    c = task_rng(5, (1, 3)).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=20)
@given(st.integers(min_value=1, max_value=8), st.lists(st.integers(), max_size=40))
def test_ordered_map_preserves_order(threads, items):
    assert ordered_map(lambda v: v * 2, items, threads) == [v * 2 for v in items]


def test_load_config_defaults_and_overrides():
    cfg = load_config("default", ["run.dt=0.01", "source.family=polyweight", "nonlinear.cell_samples=10"])
    assert isinstance(cfg, Config)
    assert cfg.dt == 0.01
    assert cfg.source.family == "polyweight"
    assert cfg.nonlinear.cell_samples == 10


@pytest.mark.parametrize("bad", ["run.dt=-1", "run.nope=1", "nosection.x=1", "run.dt", "source.family=other",
                                 "run.kappa0=1.5", "nonlinear.s_step=0.03", "mc.samples=1.5"])
def test_load_config_rejects(bad):
    with pytest.raises(UsageError):
        load_config("default", [bad])


def test_load_config_from_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[run]\ndt = 0.05\nseed = 3\n[mc]\nsamples = 10\n")
    cfg = load_config(p)
    assert (cfg.dt, cfg.seed, cfg.mc_samples) == (0.05, 3, 10)
    with pytest.raises(UsageError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\n")
    with pytest.raises(UsageError):
        load_config(bad)


def test_config_roundtrip():
    cfg = load_config("default", ["run.seed=9"])
    assert Config.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_out_dir_resolution(monkeypatch):
    cfg = load_config("default")
    monkeypatch.delenv("LANDAU_LAB_OUT", raising=False)
    assert str(out_dir_path(cfg)) == "out"
    monkeypatch.setenv("LANDAU_LAB_OUT", "/tmp/elsewhere")
    assert str(out_dir_path(cfg)) == "/tmp/elsewhere"
    assert str(out_dir_path(cfg, "flag")) == "flag"


def test_fit_slope_power_law():
    t = np.geomspace(1, 100, 20)
    assert fit_slope(t, 3.0 * t ** -2.5) == pytest.approx(-2.5)


def test_double_factorial():
    assert [double_factorial_odd(n) for n in range(4)] == [1.0, 3.0, 15.0, 105.0]


def test_envelope_and_zero_crossings():
    t = np.linspace(0, 20, 4001)
    y = np.exp(-0.1 * t) * np.cos(t)
    zc = zero_crossings(t, y)
    assert np.allclose(np.diff(zc), np.pi, atol=1e-4)
    tp, yp = envelope_peaks(t, y, 2.0, 18.0)
    assert np.all(np.diff(yp) < 0)
    assert np.allclose(np.diff(tp), np.pi, atol=1e-2)


def test_error_hierarchy():
    from landau_lab.foundation import LabError, VerificationFailure
    for cls in (NumericalFailure, UsageError, VerificationFailure):
        assert issubclass(cls, LabError)


def test_time_bracket_keeps_three_times_apart():
    from landau_lab.foundation import time_bracket
    t = np.array([0.0, 1.0, 2.0])
    assert np.allclose(time_bracket(t), np.sqrt(1 + t * t))
    assert np.allclose(weight(t, np.zeros((3, 3))), time_bracket(t))
