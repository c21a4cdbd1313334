"""Command-line front end.

Exit codes: 0 success, 2 configuration, 3 geometry, 4 restitution model,
5 numerics, 6 internal consistency.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import atomic_write, dumps
from .averaging import DEFAULT_ORDER, drift_h, gbar, solve_averaged
from .cones import check_condition_C, cone_params, cone_sweep
from .dynamics import ExtPhasePoint, run_trajectory
from .ensemble import InitialDistribution, ensemble_driver, load_config, sample_initial, trajectory_rng
from .errors import ConditionCError, ConfigError, HaffsimError, ModelKindError
from .geometry import load_table
from .models import load_model


class _Out:
    """Formats floats at the requested precision for delimited text."""

    def __init__(self, precision: int):
        self.precision = precision

    def f(self, x) -> str:
        if x is None:
            return "null"
        return f"%.{self.precision}g" % x


def _emit_json(obj) -> None:
    sys.stdout.write(dumps(obj))


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return p


def _model_arg(text: str, epsilon: float | None):
    if not text.lstrip().startswith("{"):
        _require_file(text, "model")
    model = load_model(text)
    return model.with_epsilon(epsilon) if epsilon is not None else model


# -- subcommands ------------------------------------------------------------
def cmd_table_info(args, out: _Out) -> int:
    table = load_table(_require_file(args.table, "table"), certify=not args.no_certify)
    info = table.summary()
    if args.json:
        _emit_json(info)
        return 0
    for key in ("scatterers", "perimeter", "area", "curvature_min", "curvature_max",
                "tau_min", "tau_max", "horizon", "mean_free_path", "table_hash"):
        val = info[key]
        print(f"{key},{out.f(val) if isinstance(val, float) else val}")
    return 0


def cmd_certify(args, out: _Out) -> int:
    from .geometry import build_table
    table = load_table(_require_file(args.table, "table"), certify=False)
    table = build_table(table.scatterers, certify=True, direction_bound=args.direction_bound)
    cert = table.horizon_certificate.to_dict()
    cert["tau_min"] = table.tau_min
    if args.json:
        _emit_json(cert)
        return 0
    print("horizon,finite")
    for key in ("direction_bound", "directions_scanned", "tau_max_raw", "safety_factor", "tau_max", "tau_min"):
        val = cert[key]
        print(f"{key},{out.f(val) if isinstance(val, float) else val}")
    return 0


def cmd_simulate(args, out: _Out) -> int:
    table = load_table(_require_file(args.table, "table"))
    model = _model_arg(args.model, 0.0 if args.elastic else args.epsilon)
    if args.steps < 0:
        raise ConfigError("--steps must be nonnegative")
    if args.random_start is not None:
        x0 = sample_initial(InitialDistribution("invariant_measure", args.c), table,
                            trajectory_rng(args.random_start, 0))
    else:
        if args.s is None or args.phi is None:
            raise ConfigError("simulate needs --s and --phi, or --random-start SEED")
        if not abs(args.phi) < 0.5 * math.pi:
            raise ConfigError("--phi must lie strictly inside (-pi/2, pi/2)")
        if not args.c > 0:
            raise ConfigError("--c must be positive")
        x0 = ExtPhasePoint(args.s, args.phi, args.c)
    rec = run_trajectory(table, model, x0, args.steps)
    csv = rec.to_csv(out.precision)
    summary = rec.summary()
    summary.update({"epsilon": model.epsilon, "initial": [x0.s, x0.phi, x0.c],
                    "mean_free_path": table.mean_free_path})
    if args.out:
        atomic_write(args.out, csv)
        footer = sys.stdout
    else:
        sys.stdout.write(csv)
        footer = sys.stderr
    if args.json:
        footer.write(dumps(summary))
    else:
        mt = summary["mean_tau"]
        footer.write(f"# collisions {summary['collisions']}  mean_tau {out.f(mt)}  "
                     f"mean_free_path {out.f(table.mean_free_path)}  final_c {out.f(summary['final_c'])}\n")
    return 0


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{flag} is empty")
    return vals


def cmd_drift(args, out: _Out) -> int:
    model = _model_arg(args.model, args.epsilon)
    if not (0 < args.c_min <= args.c_max) or args.points < 1:
        raise ConfigError("need 0 < --c-min <= --c-max and --points >= 1")
    grid = np.linspace(args.c_min, args.c_max, args.points) if args.points > 1 else np.array([args.c_min])
    h = drift_h(grid, model, args.order)
    cols = {"c": grid, "h": h, "h_over_c": h / grid}
    footer = {}
    if args.check_gbar:
        eps = model.epsilon
        if not eps > 0:
            raise ConfigError("--check-gbar needs a model with epsilon > 0")
        gb = np.array([gbar(c, model, args.order) for c in grid]) / eps
        cols["gbar_over_eps"] = gb
        cols["deviation"] = gb - h
        footer["max_deviation"] = float(np.max(np.abs(gb - h)))
        footer["epsilon"] = eps
    lines = [",".join(cols)]
    for k in range(grid.size):
        lines.append(",".join(out.f(v[k]) for v in cols.values()))
    csv = "\n".join(lines) + "\n"
    if args.out:
        atomic_write(args.out, csv)
    elif not args.json:
        sys.stdout.write(csv)
    if args.json:
        payload = {"model": model.to_dict(), "quadrature_order": args.order,
                   "rows": [{k: float(v[i]) for k, v in cols.items()} for i in range(grid.size)]}
        payload.update(footer)
        _emit_json(payload)
    elif footer:
        print(f"# max_deviation {out.f(footer['max_deviation'])}  epsilon {out.f(footer['epsilon'])}")
    return 0


def cmd_solve(args, out: _Out) -> int:
    table = load_table(_require_file(args.table, "table"))
    model = _model_arg(args.model, args.epsilon)
    sol = solve_averaged(args.c0, model, args.T_bar, args.step, table=table, order=args.order)
    csv = sol.to_csv(out.precision)
    if args.out:
        atomic_write(args.out, csv)
        meta_path = args.meta or str(Path(args.out).with_suffix(".json"))
        atomic_write(meta_path, sol.metadata_json() + "\n")
    elif not args.json:
        sys.stdout.write(csv)
    if args.json:
        meta = sol.metadata()
        meta["cbar_final"] = float(sol.cbar[-1])
        meta["t_final"] = float(sol.t[-1])
        _emit_json(meta)
    return 0


def _ensemble_cfg(args):
    cfg = load_config(_require_file(args.config, "config"), workers=args.workers)
    if args.eps_sweep:
        cfg.eps_list = tuple(_parse_floats(args.eps_sweep, "--eps-sweep"))
        for eps in cfg.eps_list:
            if not eps > 0:
                raise ConfigError("--eps-sweep values must be positive")
        cfg.raw["eps_sweep"] = list(cfg.eps_list)
    if args.outputs:
        cfg.outputs = Path(args.outputs)
    if args.figures:
        cfg.figures = True
    return cfg


def _print_rows(rows, out: _Out) -> None:
    print("epsilon,trajectories,used,discarded_grazing,mean_c_dev,median_c_dev,max_c_dev,"
          "mean_t_dev,t_dev_relative")
    for r in rows:
        cd, td = r["c_deviation"], r["t_deviation"]
        print(",".join([out.f(r["epsilon"]), str(r["trajectories"]), str(r["used"]),
                        str(r["discarded_grazing"]), out.f(cd["mean"]), out.f(cd["median"]),
                        out.f(cd["max"]), out.f(td["mean"]), out.f(r["t_deviation_relative"])]))


def _footer(res, cfg) -> None:
    # wall time stays out of the artifacts so they remain bitwise reproducible
    print(f"# artifacts in {cfg.outputs}; {cfg.workers} workers; "
          f"wall time {res.timing['total_seconds']:.2f} s")


def cmd_ensemble(args, out: _Out) -> int:
    cfg = _ensemble_cfg(args)
    res = ensemble_driver(cfg)
    if args.json:
        _emit_json({"outputs": str(cfg.outputs), "convergence": res.rows,
                    "monotone_decrease": res.report["monotone_decrease"],
                    "measured_rate": res.report["measured_rate"], "artifacts": res.report["artifacts"]})
    else:
        _print_rows(res.rows, out)
        _footer(res, cfg)
    return 0


def cmd_haff(args, out: _Out) -> int:
    cfg = _ensemble_cfg(args)
    if cfg.model.kind != "constant":
        raise ModelKindError(f"haff needs a constant-restitution model, got {cfg.model.kind!r}")
    res = ensemble_driver(cfg)
    haff = res.haff
    if args.json:
        _emit_json({"outputs": str(cfg.outputs), "theoretical_slope": haff["theoretical_slope"],
                    "fitted_slope": haff["fitted_slope"], "r_squared": haff["r_squared"],
                    "relative_error": haff["relative_error"], "fits": haff["fits"]})
    else:
        print("epsilon,fitted_slope,theoretical_slope,relative_error,r_squared")
        for fit in haff["fits"]:
            print(",".join(out.f(fit[k]) for k in ("epsilon", "fitted_slope", "theoretical_slope",
                                                    "relative_error", "r_squared")))
        _footer(res, cfg)
    return 0


def cmd_cone_check(args, out: _Out) -> int:
    table = load_table(_require_file(args.table, "table"))
    model = _model_arg(args.model, args.epsilon)
    cond = check_condition_C(table, model)
    payload = {"model": model.to_dict(), "bounds": model.bounds(), "condition": cond.to_dict(),
               "geometry": {"tau_min": table.tau_min, "curvature_min": table.curvature_min,
                            "curvature_max": table.curvature_max}}
    if not cond.holds:
        payload["cone"] = None
        if args.json:
            _emit_json(payload)
        else:
            _print_condition(cond, out)
        err = ConditionCError("cone condition fails; no cone parameters")
        print(f"haffsim: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    params = cone_params(table, model)
    if args.lambda_only:
        if args.json:
            _emit_json({"lambda": params.lam})
        else:
            print(out.f(params.lam))
        return 0
    sweep = cone_sweep(table, model, params, samples=args.samples, seed=args.seed)
    payload["cone"] = params.to_dict()
    payload["sweep"] = sweep.to_dict()
    if args.json:
        _emit_json(payload)
    else:
        _print_condition(cond, out)
        for key, val in params.to_dict().items():
            print(f"{key},{out.f(val) if isinstance(val, float) else val}")
        for key, val in sweep.to_dict().items():
            print(f"sweep_{key},{out.f(val) if isinstance(val, float) else val}")
    return 0


def _print_condition(cond, out: _Out) -> None:
    print(f"condition_holds,{cond.holds}")
    print(f"first_lhs,{out.f(cond.first_lhs)}")
    print(f"first_rhs,{out.f(cond.first_rhs)}")
    print(f"first_margin,{out.f(cond.first_margin)}")
    print(f"second_lhs,{out.f(cond.second_lhs)}")
    print(f"second_rhs,{out.f(cond.second_rhs)}")
    print(f"second_margin,{out.f(cond.second_margin)}")


# -- parser -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--precision", type=int, default=17, help="significant digits in delimited output")

    p = argparse.ArgumentParser(prog="haffsim", description="Inelastic dispersing billiards and Haff's law.")
    p.add_argument("--version", action="version", version=f"haffsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("table-info", parents=[common], help="geometry summary of a table file")
    q.add_argument("table")
    q.add_argument("--no-certify", action="store_true", help="skip the finite-horizon scan")
    q.set_defaults(func=cmd_table_info)

    q = sub.add_parser("certify", parents=[common], help="finite-horizon certificate")
    q.add_argument("table")
    q.add_argument("--direction-bound", type=int, default=100)
    q.set_defaults(func=cmd_certify)

    q = sub.add_parser("simulate", parents=[common], help="single trajectory as CSV")
    q.add_argument("table")
    q.add_argument("--model", default='{"kind": "constant", "epsilon": 0}')
    q.add_argument("--epsilon", type=float)
    q.add_argument("--elastic", action="store_true", help="force epsilon = 0")
    q.add_argument("--s", type=float)
    q.add_argument("--phi", type=float)
    q.add_argument("--c", type=float, default=1.0)
    q.add_argument("--random-start", type=int, metavar="SEED", help="draw the start from the invariant measure")
    q.add_argument("--steps", type=int, required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("drift", parents=[common], help="tabulate h(c)")
    q.add_argument("--model", required=True)
    q.add_argument("--epsilon", type=float)
    q.add_argument("--c-min", type=float, default=0.1)
    q.add_argument("--c-max", type=float, default=10.0)
    q.add_argument("--points", type=int, default=100)
    q.add_argument("--order", type=int, default=DEFAULT_ORDER)
    q.add_argument("--check-gbar", action="store_true", help="add gbar/eps columns")
    q.add_argument("--out")
    q.set_defaults(func=cmd_drift)

    q = sub.add_parser("solve", parents=[common], help="averaged ODE as CSV plus JSON sidecar")
    q.add_argument("table")
    q.add_argument("--model", required=True)
    q.add_argument("--epsilon", type=float)
    q.add_argument("--c0", type=float, default=1.0)
    q.add_argument("--T-bar", dest="T_bar", type=float, default=1.0)
    q.add_argument("--step", type=float)
    q.add_argument("--order", type=int, default=DEFAULT_ORDER)
    q.add_argument("--out")
    q.add_argument("--meta")
    q.set_defaults(func=cmd_solve)

    for name, func, text in (("ensemble", cmd_ensemble, "ensemble experiment"),
                             ("haff", cmd_haff, "ensemble experiment with Haff fit")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("config")
        q.add_argument("--workers", type=int)
        q.add_argument("--eps-sweep", metavar="EPS,EPS,...")
        q.add_argument("--outputs")
        q.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
        q.set_defaults(func=func)

    q = sub.add_parser("cone-check", parents=[common], help="cone condition, parameters and sweep")
    q.add_argument("table")
    q.add_argument("--model", required=True)
    q.add_argument("--epsilon", type=float)
    q.add_argument("--samples", type=int, default=10_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--lambda-only", action="store_true")
    q.set_defaults(func=cmd_cone_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.precision < 1 or args.precision > 17:
        parser.error("--precision must be between 1 and 17")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be positive")
    try:
        return args.func(args, _Out(args.precision))
    except HaffsimError as exc:
        if args.json:
            _emit_json({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code})
        print(f"haffsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
