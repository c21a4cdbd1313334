import json
import math

import numpy as np
import pytest
from scipy.stats import kstest

from haffsim import ensemble as ens
from haffsim.averaging import haff_line, solve_averaged
from haffsim.dynamics import run_trajectory
from haffsim.ensemble import (InitialDistribution, SlowPath, compare_to_averaged, ensemble_driver,
                              haff_fit, parse_config, path_deviation, run_slow_path,
                              sample_initial, sample_invariant, slow_steps, splitmix64,
                              trajectory_rng)
from haffsim.errors import (ConfigError, CurveSpecError, GridMismatchError,
                            InsufficientDataError)
from haffsim.models import RestitutionModel

from conftest import cos_cdf

FLAGSHIP = {"scatterers": [{"center": [0, 0], "radius": 0.4}, {"center": [0.5, 0.5], "radius": 0.3}]}


def _config(tmp_path, **over):
    data = {"table": FLAGSHIP, "model": {"kind": "constant", "epsilon": 1e-2}, "c0": 1.0,
            "T_bar": 1.0, "trajectories": 12, "master_seed": 3, "outputs": str(tmp_path / "out")}
    data.update(over)
    return data


def _paths(flagship, model, n, T_bar=1.0, seed=0):
    dist = InitialDistribution(c0=1.0)
    return [run_slow_path(flagship, model, sample_initial(dist, flagship, trajectory_rng(seed, i)), T_bar)
            for i in range(n)]


# -- seeding and sampling ---------------------------------------------------------
def test_splitmix_reference_value():
    # first output of the reference splitmix64 generator started from state 0
    assert splitmix64(0, 0) == 0xE220A8397B1DCDAF
    assert splitmix64(0, 1) != splitmix64(1, 0)
    assert len({splitmix64(7, i) for i in range(10_000)}) == 10_000


def test_invariant_sampling_distribution(flagship):
    rng = np.random.default_rng(123)
    s, phi = sample_invariant(flagship, rng, 1_000_000)
    assert kstest(phi, np.vectorize(cos_cdf)).statistic < 0.002
    assert kstest(s / flagship.perimeter, "uniform").statistic < 0.002


def test_inverse_cdf_median():
    assert math.asin(2 * 0.5 - 1) == 0.0


def test_sampling_is_deterministic(flagship):
    dist = InitialDistribution(c0=2.0)
    a = [sample_initial(dist, flagship, trajectory_rng(5, i)) for i in range(100)]
    b = [sample_initial(dist, flagship, trajectory_rng(5, i)) for i in range(100)]
    assert a == b
    assert all(x.c == 2.0 for x in a)
    assert sample_initial(dist, flagship, 42) == sample_initial(dist, flagship, 42)


def test_boundary_curve_sampling(flagship):
    curve = {"scatterer": 1, "s_interval": [0.1, 0.3], "phi0": -0.2, "slope": 3.0}
    dist = InitialDistribution("boundary_curve", 1.0, curve)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = sample_initial(dist, flagship, rng)
        u = x.s - flagship.arc_offsets[1]
        assert 0.1 <= u <= 0.3
        assert x.phi == pytest.approx(-0.2 + 3.0 * (u - 0.1), abs=1e-12)


@pytest.mark.parametrize("curve,match", [
    ({"s_interval": [0.1, 0.3], "phi0": 0.0, "slope": 3.0}, "scatterer"),
    ({"scatterer": 5, "s_interval": [0.1, 0.3], "phi0": 0.0, "slope": 3.0}, "out of range"),
    ({"scatterer": 0, "s_interval": [0.1, 9.0], "phi0": 0.0, "slope": 3.0}, "s_interval"),
    ({"scatterer": 0, "s_interval": [0.1, 0.3], "phi0": 0.0, "slope": 1.0}, "slope"),
    ({"scatterer": 0, "s_interval": [0.0, 2.0], "phi0": 0.0, "slope": 3.0}, "leaves"),
])
def test_curve_spec_errors(flagship, curve, match):
    dist = InitialDistribution("boundary_curve", 1.0, curve)
    with pytest.raises(CurveSpecError, match=match):
        sample_initial(dist, flagship, 0)


def test_initial_distribution_errors():
    with pytest.raises(ConfigError):
        InitialDistribution("uniform", 1.0)
    with pytest.raises(ConfigError):
        InitialDistribution(c0=0.0)
    with pytest.raises(CurveSpecError):
        InitialDistribution("boundary_curve", 1.0, None)


# -- slow paths ------------------------------------------------------------------
def test_slow_steps_guard():
    assert slow_steps(1e-3, 1.0) == 1000
    assert slow_steps(0.3, 1.0) == 3
    assert slow_steps(2.5e-3, 1.0) == 400


def test_elastic_slow_path_is_frozen(flagship):
    p = run_slow_path(flagship, RestitutionModel.constant(0.0), sample_initial(InitialDistribution(c0=1.7), flagship, 1), 1.0)
    assert np.all(p.c == 1.7) and np.all(p.t == 0.0)
    assert p.c_at(0.37) == 1.7


def test_slow_path_structure(flagship):
    eps = 1e-3
    model = RestitutionModel.constant(eps)
    p = _paths(flagship, model, 1)[0]
    assert p.tbar.size == 1001 and p.complete
    assert np.array_equal(p.tbar, np.arange(1001) * eps)
    assert p.t[0] == 0.0 and np.all(np.diff(p.t) > 0)
    assert np.all(p.c[1:] <= p.c[:-1])
    assert np.all(p.c[1:] >= (1 - eps) * p.c[:-1])


def test_time_increments(flagship):
    eps = 1e-3
    model = RestitutionModel.constant(eps)
    x0 = sample_initial(InitialDistribution(c0=1.0), flagship, 9)
    rec = run_trajectory(flagship, model, x0, 2000)
    c_before = np.concatenate([[1.0], rec.c[:-1]])
    inc = np.diff(np.concatenate([[0.0], rec.t]))
    assert np.all(inc > 0)
    assert np.allclose(inc, eps * rec.tau / c_before, rtol=0, atol=4 * np.spacing(rec.t[-1]))


def test_path_endpoint_matches_averaged(flagship):
    model = RestitutionModel.constant(1e-3)
    paths = _paths(flagship, model, 200)
    sol = solve_averaged(1.0, model, 1.0, table=flagship)
    mean_end = np.mean([p.c[-1] for p in paths])
    assert abs(mean_end - sol.cbar[-1]) / sol.cbar[-1] < 0.02


# -- comparison ----------------------------------------------------------------
def test_zero_profile_has_no_deviation(flagship):
    model = RestitutionModel.power_law(1e-2, "zero")
    paths = _paths(flagship, model, 5)
    sol = solve_averaged(1.0, model, 1.0, table=flagship)
    rep = compare_to_averaged(paths, sol)
    assert rep.c_deviation["max"] < 1e-12


def test_deviation_on_union_grid():
    # a path that is exactly linear against an ODE solution that is exactly linear
    sol = solve_averaged(1.0, RestitutionModel.power_law(0.1, "zero"), 1.0, 0.25, mean_free_path=0.1)
    p = SlowPath(0.3, 1.0, np.array([0.0, 0.3, 0.6, 0.9]), np.array([1.0, 1.0, 1.0, 1.1]),
                 np.array([0.0, 0.03, 0.06, 0.09]))
    dc, dt = path_deviation(p, sol)
    assert dc == pytest.approx(0.1, abs=1e-14)
    assert dt == pytest.approx(0.0, abs=1e-14)


def test_grid_mismatch(flagship):
    sol = solve_averaged(1.0, RestitutionModel.constant(1e-2), 1.0, table=flagship)
    p = SlowPath(1e-2, 2.0, np.array([0.0, 2.0]), np.ones(2), np.zeros(2))
    with pytest.raises(GridMismatchError):
        path_deviation(p, sol)
    q = SlowPath(2e-2, 1.0, np.array([0.0, 1.0]), np.ones(2), np.zeros(2))
    r = SlowPath(1e-2, 1.0, np.array([0.0, 1.0]), np.ones(2), np.zeros(2))
    with pytest.raises(GridMismatchError):
        compare_to_averaged([q, r], sol)


def test_report_counts_grazing(flagship):
    sol = solve_averaged(1.0, RestitutionModel.constant(1e-2), 1.0, table=flagship)
    good = _paths(flagship, RestitutionModel.constant(1e-2), 3)
    bad = SlowPath(1e-2, 1.0, good[0].tbar[:5], good[0].c[:5], good[0].t[:5], "grazing")
    rep = compare_to_averaged(good + [bad], sol)
    assert (rep.trajectories, rep.used, rep.discarded_grazing) == (4, 3, 1)
    assert rep.to_dict()["grazing_flagged"]


def test_haff_fit_coarse_epsilon(flagship):
    paths = _paths(flagship, RestitutionModel.constant(1e-2), 200)
    fit = haff_fit(paths)
    slope = haff_line(1.0, flagship)["slope"]
    assert abs(fit["fitted_slope"] - slope) / slope < 0.05
    assert fit["r_squared"] > 0.99


def test_haff_fit_degenerate(flagship):
    fit = haff_fit(_paths(flagship, RestitutionModel.power_law(1e-2, "zero"), 3))
    assert fit["degenerate"] and fit["r_squared"] is None
    assert fit["fitted_slope"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InsufficientDataError):
        haff_fit(_paths(flagship, RestitutionModel.constant(0.0), 3))
    with pytest.raises(InsufficientDataError):
        haff_fit([])


# -- configuration and driver -------------------------------------------------------
@pytest.mark.parametrize("change,match", [
    ({"trajectories": 0}, "trajectories"),
    ({"trajectories": 2.5}, "trajectories"),
    ({"T_bar": -1}, "T_bar"),
    ({"master_seed": -4}, "master_seed"),
    ({"model": {"kind": "constant", "epsilon": 0.0}}, "epsilon"),
    ({"table": "no/such/table.json"}, "not found"),
    ({"workers": 0}, "workers"),
])
def test_config_errors(tmp_path, change, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(_config(tmp_path, **change))


def test_config_missing_field(tmp_path):
    data = _config(tmp_path)
    del data["c0"]
    with pytest.raises(ConfigError, match="c0"):
        parse_config(data)


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("HAFFSIM_WORKERS", "3")
    assert ens.default_workers() == 3
    monkeypatch.setenv("HAFFSIM_WORKERS", "many")
    with pytest.raises(ConfigError):
        ens.default_workers()


def _read_all(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_driver_artifacts_and_determinism(tmp_path):
    a = ensemble_driver(parse_config(_config(tmp_path, outputs=str(tmp_path / "a")), workers=1))
    b = ensemble_driver(parse_config(_config(tmp_path, outputs=str(tmp_path / "b")), workers=3))
    fa, fb = _read_all(tmp_path / "a"), _read_all(tmp_path / "b")
    assert set(fa) == {"paths_eps0.01.csv", "averaged.csv", "averaged.json", "haff_fit.json", "report.json"}
    assert fa == fb
    rep = json.loads(fa["report.json"])
    assert rep["convergence"][0]["trajectories"] == 12
    assert rep["convergence"][0]["discarded_grazing"] == 0
    assert not rep["convergence"][0]["grazing_flagged"]
    assert a.report == b.report
    lines = fa["paths_eps0.01.csv"].decode().splitlines()
    assert lines[0] == "traj,n,tbar,c,t" and len(lines) == 1 + 12 * 101


def test_driver_sweep_and_power_law(tmp_path):
    cfg = parse_config(_config(tmp_path, model={"kind": "power_law", "epsilon": 1e-2, "q_profile": "rational"},
                               eps_sweep=[2e-2, 1e-2]), workers=1)
    res = ensemble_driver(cfg)
    assert res.haff is None
    assert [r["epsilon"] for r in res.rows] == [2e-2, 1e-2]
    names = set(_read_all(tmp_path / "out"))
    assert "haff_fit.json" not in names
    assert {"paths_eps0.02.csv", "paths_eps0.01.csv"} <= names


def test_driver_rolls_back_on_failure(tmp_path, monkeypatch):
    import haffsim.plotting

    def boom(*a, **k):
        raise RuntimeError("figure failure")

    monkeypatch.setattr(haffsim.plotting, "ensemble_figures", boom)
    cfg = parse_config(_config(tmp_path, figures=True), workers=1)
    with pytest.raises(RuntimeError):
        ensemble_driver(cfg)
    assert _read_all(tmp_path / "out") == {}


def test_driver_figures(tmp_path):
    pytest.importorskip("matplotlib")
    res = ensemble_driver(parse_config(_config(tmp_path, figures=True), workers=1))
    files = _read_all(tmp_path / "out")
    pngs = [k for k in files if k.endswith(".png")]
    assert sorted(pngs) == ["figures/haff_eps0.01.png", "figures/slow_paths_eps0.01.png"]
    assert all(files[k][:8] == b"\x89PNG\r\n\x1a\n" for k in pngs)
    assert "figures/haff_eps0.01.png" in res.report["artifacts"]


def test_elastic_mean_free_path_within_standard_errors(flagship):
    dist = InitialDistribution(c0=1.0)
    means = []
    for i in range(100):
        x0 = sample_initial(dist, flagship, trajectory_rng(11, i))
        means.append(np.mean(run_trajectory(flagship, RestitutionModel.constant(0.0), x0, 10_000).tau))
    se = np.std(means, ddof=1) / math.sqrt(len(means))
    assert abs(np.mean(means) - flagship.mean_free_path) < 3 * se
