"""Monte Carlo ensembles of the inelastic map and their comparison with the averaged ODE.

Trajectory i draws its initial condition from a generator seeded with
splitmix64(master_seed, i), so results do not depend on how trajectories are
spread over worker processes.  The same initial conditions are reused at
every epsilon of a sweep.
"""
from __future__ import annotations

import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .artifacts import ArtifactSet
from .averaging import AveragedSolution, DEFAULT_ORDER, haff_line, solve_averaged
from .dynamics import HALF_PI, ExtPhasePoint, _raise_for_status, run_raw
from .errors import ConfigError, CurveSpecError, GridMismatchError, InsufficientDataError
from .geometry import TableGeometry, load_table, table_from_dict
from .models import RestitutionModel, load_model

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
GRAZING_FLAG_FRACTION = 1e-4


def splitmix64(master: int, index: int) -> int:
    """Seed for trajectory ``index``: one splitmix64 output at state master + (index+1)*golden."""
    z = (int(master) + (int(index) + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trajectory_rng(master: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(splitmix64(master, index)))


# -- initial conditions -----------------------------------------------------
@dataclass(frozen=True)
class InitialDistribution:
    kind: str = "invariant_measure"
    c0: float = 1.0
    curve: dict | None = None

    def __post_init__(self):
        if self.kind not in ("invariant_measure", "boundary_curve"):
            raise ConfigError(f"initial.kind must be invariant_measure or boundary_curve, got {self.kind!r}")
        if not (isinstance(self.c0, (int, float)) and self.c0 > 0 and math.isfinite(self.c0)):
            raise ConfigError(f"c0 must be a positive number, got {self.c0!r}")
        if self.kind == "boundary_curve" and not isinstance(self.curve, dict):
            raise CurveSpecError("boundary_curve needs {scatterer, s_interval, phi0, slope}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "c0": self.c0}
        if self.curve is not None:
            out["curve"] = dict(self.curve)
        return out


def _curve_geometry(dist: InitialDistribution, table: TableGeometry):
    cv = dist.curve
    for key in ("scatterer", "s_interval", "phi0", "slope"):
        if key not in cv:
            raise CurveSpecError(f"boundary curve: missing field {key!r}")
    i = cv["scatterer"]
    if not (isinstance(i, int) and 0 <= i < len(table.scatterers)):
        raise CurveSpecError(f"boundary curve: scatterer index {i!r} out of range")
    try:
        a, b = (float(v) for v in cv["s_interval"])
        phi0, slope = float(cv["phi0"]), float(cv["slope"])
    except (TypeError, ValueError):
        raise CurveSpecError("boundary curve: s_interval must be [a, b]; phi0 and slope numbers") from None
    if not (0.0 <= a < b <= table.circumference(i)):
        raise CurveSpecError(f"boundary curve: s_interval {[a, b]} not inside [0, {table.circumference(i):.6g}]")
    lo, hi = table.curvature_min, table.curvature_max + 1.0 / table.tau_min
    if not (lo <= slope <= hi):
        raise CurveSpecError(f"boundary curve: slope {slope!r} outside the unstable range [{lo:.6g}, {hi:.6g}]")
    end = phi0 + slope * (b - a)
    if not (abs(phi0) < HALF_PI and abs(end) < HALF_PI):
        raise CurveSpecError("boundary curve: phi leaves (-pi/2, pi/2) on the interval")
    return i, a, b, phi0, slope


def sample_invariant(table: TableGeometry, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n draws of (s, phi) from cos(phi) ds dphi / (2 |dQ|)."""
    s = rng.uniform(0.0, table.perimeter, n)
    phi = np.arcsin(2.0 * rng.uniform(size=n) - 1.0)
    return s, phi


def sample_initial(dist: InitialDistribution, table: TableGeometry, rng) -> ExtPhasePoint:
    """One draw from the initial distribution; ``rng`` is a Generator or an int seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(int(rng)))
    if dist.kind == "invariant_measure":
        s = rng.uniform(0.0, table.perimeter)
        phi = math.asin(2.0 * rng.uniform() - 1.0)
        return ExtPhasePoint(s, phi, float(dist.c0))
    i, a, b, phi0, slope = _curve_geometry(dist, table)
    u = rng.uniform(a, b)
    return ExtPhasePoint(float(table.arc_offsets[i]) + u, phi0 + slope * (u - a), float(dist.c0))


# -- slow paths -------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SlowPath:
    epsilon: float
    T_bar: float
    tbar: np.ndarray
    c: np.ndarray
    t: np.ndarray
    status: str = "ok"

    @property
    def complete(self) -> bool:
        return self.status == "ok"

    def c_at(self, tb):
        return np.interp(tb, self.tbar, self.c)

    def t_at(self, tb):
        return np.interp(tb, self.tbar, self.t)


def slow_steps(epsilon: float, T_bar: float) -> int:
    # the guard keeps T_bar / eps = 1000 from rounding down to 999
    return int(math.floor(T_bar / epsilon + 1e-9))


def _path_from_raw(epsilon, T_bar, c0, raw) -> SlowPath:
    status, done, _s, _phi, c, _tau, t, *_ = raw
    n = np.arange(done + 1)
    cs = np.concatenate(([c0], c[:done]))
    ts = np.concatenate(([0.0], t[:done]))
    name = "ok" if status == K.OK else ("grazing" if status == K.GRAZING else "error")
    return SlowPath(epsilon, T_bar, n * epsilon, cs, ts, name)


def run_slow_path(table: TableGeometry, model: RestitutionModel, x0: ExtPhasePoint,
                  T_bar: float) -> SlowPath:
    """floor(T_bar/eps) steps of the joint dynamics, indexed by tbar = eps * n.

    A grazing collision ends the path early with status ``grazing``; the
    caller discards it.  Other kernel failures raise.
    """
    eps = model.epsilon
    if eps == 0.0:
        # the slow clock never advances, so the path is the frozen initial state
        tb = np.array([0.0, T_bar])
        return SlowPath(0.0, T_bar, tb, np.full(2, x0.c), np.zeros(2))
    raw = run_raw(table, model, x0, slow_steps(eps, T_bar))
    if raw[0] not in (K.OK, K.GRAZING):
        _raise_for_status(raw[0], table, f"at collision {raw[1] + 1}")
    return _path_from_raw(eps, T_bar, x0.c, raw)


# -- comparison with the averaged solution ----------------------------------
def path_deviation(path: SlowPath, averaged: AveragedSolution) -> tuple[float, float]:
    """Sup of |c_path - cbar| and |t_path - t| over the union of both node sets."""
    if abs(path.T_bar - averaged.T_bar) > 1e-12 * max(1.0, averaged.T_bar):
        raise GridMismatchError(f"path T_bar {path.T_bar!r} differs from averaged {averaged.T_bar!r}")
    end = path.tbar[-1]
    ode_nodes = averaged.tbar[averaged.tbar <= end]
    grid = np.union1d(path.tbar, ode_nodes)
    dc = np.max(np.abs(path.c_at(grid) - averaged.c_at(grid)))
    dt = np.max(np.abs(path.t_at(grid) - averaged.t_at(grid)))
    return float(dc), float(dt)


def _stats(x: np.ndarray) -> dict:
    if x.size == 0:
        return {"mean": None, "median": None, "max": None}
    return {"mean": float(np.mean(x)), "median": float(np.median(x)), "max": float(np.max(x))}


@dataclass(frozen=True)
class ConvergenceReport:
    epsilon: float
    trajectories: int
    used: int
    discarded_grazing: int
    c_deviation: dict
    t_deviation: dict
    mean_path_c_deviation: float | None
    t_physical: float

    @property
    def mean_c_deviation(self) -> float:
        return self.c_deviation["mean"]

    @property
    def mean_t_deviation(self) -> float:
        return self.t_deviation["mean"]

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "trajectories": self.trajectories, "used": self.used,
                "discarded_grazing": self.discarded_grazing,
                "grazing_flagged": self.discarded_grazing > GRAZING_FLAG_FRACTION * self.trajectories,
                "c_deviation": self.c_deviation, "t_deviation": self.t_deviation,
                "mean_path_c_deviation": self.mean_path_c_deviation,
                "t_physical": self.t_physical,
                "t_deviation_relative": (self.t_deviation["mean"] / self.t_physical
                                         if self.t_deviation["mean"] is not None else None)}


def compare_to_averaged(paths, averaged: AveragedSolution) -> ConvergenceReport:
    """Per-path sup deviations aggregated over the ensemble.

    ``mean_path_c_deviation`` is the sup deviation of the ensemble-mean path,
    reported for information.
    """
    paths = list(paths)
    eps_set = {p.epsilon for p in paths}
    if len(eps_set) > 1:
        raise GridMismatchError(f"paths mix several epsilon values: {sorted(eps_set)}")
    good = [p for p in paths if p.complete]
    devs = np.array([path_deviation(p, averaged) for p in good]).reshape(-1, 2)
    mean_dev = None
    if good and all(p.tbar.size == good[0].tbar.size for p in good):
        mean_c = np.mean([p.c for p in good], axis=0)
        grid = good[0].tbar
        mean_dev = float(np.max(np.abs(mean_c - averaged.c_at(grid))))
    eps = eps_set.pop() if eps_set else math.nan
    return ConvergenceReport(eps, len(paths), len(good), len(paths) - len(good),
                             _stats(devs[:, 0]), _stats(devs[:, 1]), mean_dev,
                             float(averaged.t[-1]))


def haff_fit(paths, window: tuple[float, float] | None = None, points: int = 256) -> dict:
    """Least-squares line through the ensemble mean of 1/c against physical time.

    Each path's (t_n, 1/c_n) polyline is resampled on a common time grid over
    ``window`` (default: up to the earliest path end).
    """
    good = [p for p in paths if p.complete and p.tbar.size >= 2]
    if not good:
        raise InsufficientDataError("no complete paths to fit")
    t_end = min(float(p.t[-1]) for p in good)
    lo, hi = (0.0, t_end) if window is None else (float(window[0]), float(window[1]))
    if not (0.0 <= lo < hi <= t_end):
        if t_end == 0.0:
            raise InsufficientDataError("physical time does not advance; nothing to fit")
        raise InsufficientDataError(f"fit window {[lo, hi]} not inside [0, {t_end!r}]")
    grid = np.linspace(lo, hi, points)
    inv = np.mean([np.interp(grid, p.t, 1.0 / p.c) for p in good], axis=0)
    A = np.vstack([grid, np.ones_like(grid)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, inv, rcond=None)
    resid = inv - (slope * grid + intercept)
    ss_tot = float(np.sum((inv - inv.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    degenerate = ss_tot <= 1e-300 * max(1.0, float(inv.mean()) ** 2) * points
    r2 = None if degenerate else 1.0 - ss_res / ss_tot
    return {"fitted_slope": float(slope), "intercept": float(intercept), "r_squared": r2,
            "degenerate": bool(degenerate), "window": [lo, hi], "points": points,
            "paths_used": len(good)}


# -- experiment driver ------------------------------------------------------
@dataclass
class ExperimentConfig:
    table: TableGeometry
    model: RestitutionModel
    c0: float
    T_bar: float
    trajectories: int
    master_seed: int
    workers: int
    initial: InitialDistribution
    outputs: Path
    eps_list: tuple = ()
    ode_step: float | None = None
    quadrature_order: int = DEFAULT_ORDER
    figures: bool = False
    raw: dict = field(default_factory=dict)

    def epsilons(self) -> tuple:
        return self.eps_list if self.eps_list else (self.model.epsilon,)


def default_workers() -> int:
    env = os.environ.get("HAFFSIM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"HAFFSIM_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("HAFFSIM_WORKERS must be at least 1")
        return n
    return os.cpu_count() or 1


def _resolve(path, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None and not p.exists():
        p = base / p
    return p


def parse_config(data: dict, base: Path | None = None, *, workers: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    for key in ("table", "model", "c0", "T_bar", "trajectories", "outputs"):
        if key not in data:
            raise ConfigError(f"experiment config: missing field {key!r}")
    tbl = data["table"]
    if isinstance(tbl, dict):
        table = table_from_dict(tbl)
    else:
        p = _resolve(tbl, base)
        if not p.exists():
            raise ConfigError(f"experiment config: table file not found: {tbl}")
        table = load_table(p)
    mdl = data["model"]
    if isinstance(mdl, str) and not mdl.lstrip().startswith("{"):
        p = _resolve(mdl, base)
        if not p.exists():
            raise ConfigError(f"experiment config: model file not found: {mdl}")
        mdl = str(p)
    model = load_model(mdl)
    try:
        c0 = float(data["c0"])
        T_bar = float(data["T_bar"])
    except (TypeError, ValueError):
        raise ConfigError("experiment config: c0 and T_bar must be numbers") from None
    n = data["trajectories"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError(f"experiment config: trajectories must be a positive integer, got {n!r}")
    if not (T_bar > 0 and math.isfinite(T_bar)):
        raise ConfigError(f"experiment config: T_bar must be positive, got {T_bar!r}")
    seed = data.get("master_seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("experiment config: master_seed must be a nonnegative integer")
    init = data.get("initial", {"kind": "invariant_measure"})
    if not isinstance(init, dict):
        raise ConfigError("experiment config: initial must be an object")
    curve = {k: v for k, v in init.items() if k != "kind"} or None
    initial = InitialDistribution(init.get("kind", "invariant_measure"), c0, curve)
    if initial.kind == "boundary_curve":
        _curve_geometry(initial, table)
    eps_list = tuple(float(e) for e in data.get("eps_sweep", ()))
    for eps in eps_list or (model.epsilon,):
        if not eps > 0.0:
            raise ConfigError(f"ensemble runs need epsilon > 0, got {eps!r}")
        model.with_epsilon(eps)
    if workers is None:
        workers = data["workers"] if data.get("workers") is not None else default_workers()
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {workers!r}")
    order = data.get("quadrature_order", DEFAULT_ORDER)
    return ExperimentConfig(table, model, c0, T_bar, n, seed, workers, initial,
                            _resolve(data["outputs"], None), eps_list, data.get("ode_step"),
                            int(order), bool(data.get("figures", False)), dict(data))


def load_config(path, *, workers: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: malformed JSON ({exc})") from None
    return parse_config(data, path.parent, workers=workers)


_WORKER_STATE: dict = {}


def _worker_init(table, model, initial, master_seed, T_bar):
    _WORKER_STATE.update(table=table, model=model, initial=initial, seed=master_seed,
                         T_bar=T_bar, models={})


def _run_task(task):
    index, eps = task
    st = _WORKER_STATE
    model = st["models"].get(eps)
    if model is None:
        model = st["model"].with_epsilon(eps)
        st["models"][eps] = model
    x0 = sample_initial(st["initial"], st["table"], trajectory_rng(st["seed"], index))
    return run_slow_path(st["table"], model, x0, st["T_bar"])


def run_ensemble(cfg: ExperimentConfig, eps: float) -> list[SlowPath]:
    """All trajectories at one epsilon, in trajectory-index order."""
    init_args = (cfg.table, cfg.model, cfg.initial, cfg.master_seed, cfg.T_bar)
    tasks = [(i, eps) for i in range(cfg.trajectories)]
    if cfg.workers == 1:
        _worker_init(*init_args)
        return [_run_task(t) for t in tasks]
    chunk = max(1, cfg.trajectories // (4 * cfg.workers))
    with ProcessPoolExecutor(cfg.workers, initializer=_worker_init, initargs=init_args) as pool:
        return list(pool.map(_run_task, tasks, chunksize=chunk))


def eps_tag(eps: float) -> str:
    return f"{eps:g}"


def paths_csv(paths: list[SlowPath], precision: int = 17) -> str:
    buf = io.StringIO()
    buf.write("traj,n,tbar,c,t\n")
    fmt = f"%.{precision}g"
    for i, p in enumerate(paths):
        for n in range(p.tbar.size):
            buf.write(f"{i},{n},{fmt % p.tbar[n]},{fmt % p.c[n]},{fmt % p.t[n]}\n")
    return buf.getvalue()


@dataclass
class EnsembleResult:
    report: dict
    haff: dict | None
    rows: list
    paths: dict
    averaged: AveragedSolution
    artifacts: list
    timing: dict


def ensemble_driver(cfg: ExperimentConfig, *, write: bool = True, keep_paths: bool = False) -> EnsembleResult:
    """Sample, simulate, compare and fit; writes every artifact or none."""
    if cfg.trajectories < 1:
        raise ConfigError("trajectory count must be positive")
    out = ArtifactSet(cfg.outputs)
    timing = {"workers": cfg.workers, "per_epsilon": []}
    t_start = time.perf_counter()
    try:
        averaged = solve_averaged(cfg.c0, cfg.model, cfg.T_bar, cfg.ode_step, table=cfg.table,
                                  order=cfg.quadrature_order)
        line = haff_line(cfg.c0, cfg.table) if cfg.model.kind == "constant" else None
        rows, fits, kept = [], [], {}
        for eps in cfg.epsilons():
            t0 = time.perf_counter()
            paths = run_ensemble(cfg, eps)
            conv = compare_to_averaged(paths, averaged)
            row = conv.to_dict()
            row["steps_per_trajectory"] = slow_steps(eps, cfg.T_bar)
            rows.append(row)
            if line is not None:
                try:
                    fit = haff_fit(paths)
                except InsufficientDataError as exc:
                    fit = {"fitted_slope": None, "r_squared": None, "degenerate": True, "reason": str(exc)}
                fit["epsilon"] = eps
                fit["theoretical_slope"] = line["slope"]
                fit["relative_error"] = (abs(fit["fitted_slope"] - line["slope"]) / line["slope"]
                                         if fit["fitted_slope"] is not None else None)
                fits.append(fit)
            if write:
                out.write(f"paths_eps{eps_tag(eps)}.csv", paths_csv(paths))
            if keep_paths or cfg.figures:
                kept[eps] = paths
            timing["per_epsilon"].append({"epsilon": eps, "seconds": time.perf_counter() - t0})
        haff = None
        if line is not None:
            haff = {"theoretical_slope": line["slope"], "theoretical_intercept": line["intercept"],
                    "mean_free_path": cfg.table.mean_free_path, "fits": fits}
            haff.update({k: fits[0][k] for k in ("fitted_slope", "r_squared", "relative_error")})
        devs = [r["c_deviation"]["mean"] for r in rows]
        report = {
            "table": cfg.table.summary(),
            "model": cfg.model.to_dict(),
            "initial": cfg.initial.to_dict(),
            "initial_note": "invariant measure times {c0} stands in for a flat standard family"
                            if cfg.initial.kind == "invariant_measure" else "boundary curve graph",
            "c0": cfg.c0, "T_bar": cfg.T_bar, "trajectories": cfg.trajectories,
            "master_seed": cfg.master_seed,
            "seed_derivation": "splitmix64(master_seed + (index + 1) * 0x9E3779B97F4A7C15) seeds PCG64",
            "averaged": averaged.metadata(),
            "convergence": rows,
            "monotone_decrease": all(b < a for a, b in zip(devs, devs[1:])) if len(devs) > 1 else None,
            "measured_rate": _rate(rows),
            # where and how widely the run executed is not part of its identity
            "config": _jsonable({k: v for k, v in cfg.raw.items() if k not in ("outputs", "workers")}),
        }
        if haff is not None:
            report["relative_slope_error"] = haff["relative_error"]
            report["fitted_slope"] = haff["fitted_slope"]
            report["theoretical_slope"] = haff["theoretical_slope"]
        timing["total_seconds"] = time.perf_counter() - t_start
        if write:
            out.write("averaged.csv", averaged.to_csv())
            out.write_json("averaged.json", averaged.metadata())
            if haff is not None:
                out.write_json("haff_fit.json", haff)
            if cfg.figures:
                from .plotting import ensemble_figures
                for name, data in ensemble_figures(kept, averaged, haff).items():
                    out.write(f"figures/{name}", data)
            report["artifacts"] = out.names() + ["report.json"]
            out.write_json("report.json", report)
    except BaseException:
        out.rollback()
        raise
    return EnsembleResult(report, haff, rows, kept if keep_paths else {}, averaged, out.names(), timing)


def _rate(rows) -> float | None:
    pts = [(r["epsilon"], r["c_deviation"]["mean"]) for r in rows if r["c_deviation"]["mean"]]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))
