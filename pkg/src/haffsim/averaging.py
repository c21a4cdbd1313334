"""One-step speed loss g, its invariant average, the drift h and the averaged ODE.

For small restitution loss eps * q the speed obeys, on the slow time
tbar = eps * n,

    dcbar/dtbar = h(cbar),     h(c) = -c * int_0^{pi/2} q(c cos phi) cos^3 phi dphi,
    dt/dtbar    = mfp / cbar,

where mfp = pi |Q| / |dQ| is the mean free path.  For constant restitution
1/c grows linearly in physical time (Haff's law).
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import ModelKindError, ModelRangeError, QuadratureError, SpeedFloorError, StepSizeError
from .geometry import TableGeometry
from .models import RestitutionModel

DEFAULT_ORDER = 64
DEFAULT_SUBDIVISIONS = 4096
DEFAULT_FLOOR = 1e-6


@lru_cache(maxsize=32)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _nodes(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    if order < 2:
        raise QuadratureError(f"quadrature order must be at least 2, got {order}")
    x, w = _legendre(int(order))
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def g_increment(phi_pre, c, model: RestitutionModel):
    """c1 - c0 for a collision at incidence phi_pre and speed c; vectorized."""
    phi_pre = np.asarray(phi_pre, dtype=np.float64)
    cp = np.cos(phi_pre)
    eta = model.epsilon * model.q(c * cp) if model.epsilon > 0 else np.zeros_like(cp)
    if np.any(eta >= 1.0):
        raise ModelRangeError(f"restitution loss reaches {float(np.max(eta))!r} >= 1")
    a = 1.0 - eta
    root = np.sqrt(a * a * cp * cp + np.sin(phi_pre) ** 2)
    out = -c * (2.0 - eta) * eta * cp * cp / (1.0 + root)
    return float(out) if out.ndim == 0 else out


def gbar(c: float, model: RestitutionModel, order: int = DEFAULT_ORDER, *, half: bool = False) -> float:
    """Invariant-measure average of g at speed c.

    With ``half`` the even integrand is integrated over [0, pi/2] and doubled.
    """
    if half:
        phi, w = _nodes(order, 0.0, 0.5 * math.pi)
        return float(np.sum(w * g_increment(phi, c, model) * np.cos(phi)))
    phi, w = _nodes(order, -0.5 * math.pi, 0.5 * math.pi)
    return 0.5 * float(np.sum(w * g_increment(phi, c, model) * np.cos(phi)))


def drift_h(c, model: RestitutionModel, order: int = DEFAULT_ORDER):
    """h(c) by Gauss-Legendre quadrature; c may be an array."""
    phi, w = _nodes(order, 0.0, 0.5 * math.pi)
    c_arr = np.asarray(c, dtype=np.float64)
    cp = np.cos(phi)
    q = model.q(np.multiply.outer(c_arr, cp))
    out = -c_arr * ((q * cp**3) @ w)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ConsistencyReport:
    c_grid: tuple
    eps_list: tuple
    max_error: tuple
    ratios: tuple
    orders: tuple
    extrapolated_error: float | None

    def to_dict(self) -> dict:
        return {"c_grid": list(self.c_grid), "eps": list(self.eps_list),
                "max_error": list(self.max_error), "ratios": list(self.ratios),
                "orders": list(self.orders), "extrapolated_error": self.extrapolated_error}


def consistency_h_vs_gbar(model: RestitutionModel, c_grid, eps_list,
                          order: int = DEFAULT_ORDER) -> ConsistencyReport:
    """max_c |gbar_eps(c)/eps - h(c)| for each eps, with observed orders.

    The Richardson combination of the last two levels is compared to h as a
    check that the error is first order with no constant offset.
    """
    c_grid = tuple(float(c) for c in c_grid)
    eps_list = tuple(float(e) for e in eps_list)
    h = np.array([drift_h(c, model, order) for c in c_grid])
    scaled = []
    for eps in eps_list:
        m = model.with_epsilon(eps)
        scaled.append(np.array([gbar(c, m, order) / eps for c in c_grid]))
    errs = tuple(float(np.max(np.abs(s - h))) for s in scaled)
    ratios, orders = [], []
    for k in range(1, len(eps_list)):
        r = errs[k - 1] / errs[k] if errs[k] > 0 else math.inf
        ratios.append(r)
        orders.append(math.log(r) / math.log(eps_list[k - 1] / eps_list[k]) if errs[k] > 0 else math.inf)
    extrap = None
    if len(eps_list) >= 2:
        e1, e2 = eps_list[-2], eps_list[-1]
        rich = (e1 * scaled[-1] - e2 * scaled[-2]) / (e1 - e2)
        extrap = float(np.max(np.abs(rich - h)))
    return ConsistencyReport(c_grid, eps_list, errs, tuple(ratios), tuple(orders), extrap)


# -- averaged IVP -----------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AveragedSolution:
    tbar: np.ndarray
    cbar: np.ndarray
    t: np.ndarray
    dcbar: np.ndarray
    dt: np.ndarray
    step: float
    c0: float
    T_bar: float
    mean_free_path: float
    order: int
    method: str = "rk4-fixed"
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_c_spline", CubicHermiteSpline(self.tbar, self.cbar, self.dcbar))
        object.__setattr__(self, "_t_spline", CubicHermiteSpline(self.tbar, self.t, self.dt))

    def c_at(self, tbar):
        return self._c_spline(tbar)

    def t_at(self, tbar):
        return self._t_spline(tbar)

    def to_csv(self, precision: int = 17) -> str:
        buf = io.StringIO()
        buf.write("tbar,cbar,t\n")
        fmt = f"%.{precision}g"
        for row in zip(self.tbar, self.cbar, self.t):
            buf.write(",".join(fmt % v for v in row) + "\n")
        return buf.getvalue()

    def metadata(self) -> dict:
        out = {"c0": self.c0, "T_bar": self.T_bar, "step": self.step, "method": self.method,
               "quadrature_order": self.order, "mean_free_path": self.mean_free_path,
               "nodes": int(self.tbar.size), "status": self.status}
        out.update(self.meta)
        return out

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True)


def solve_averaged(c0: float, model: RestitutionModel, T_bar: float, step: float | None = None, *,
                   table: TableGeometry | None = None, mean_free_path: float | None = None,
                   order: int = DEFAULT_ORDER, floor: float | None = None) -> AveragedSolution:
    """Classical RK4 on (cbar, t) in slow time with a fixed step.

    The mean free path comes from ``table`` unless given directly.  The run
    stops with SpeedFloorError once cbar falls below ``floor`` (default
    1e-6 * c0); the partial solution rides on the exception.
    """
    if not (c0 > 0.0 and math.isfinite(c0)):
        raise StepSizeError(f"initial speed must be positive, got {c0!r}")
    if not (T_bar > 0.0 and math.isfinite(T_bar)):
        raise StepSizeError(f"T_bar must be positive, got {T_bar!r}")
    if step is None:
        step = T_bar / DEFAULT_SUBDIVISIONS
    if not (step > 0.0 and math.isfinite(step)) or step > T_bar:
        raise StepSizeError(f"step must lie in (0, T_bar], got {step!r}")
    if mean_free_path is None:
        if table is None:
            raise StepSizeError("solve_averaged needs a table or a mean free path")
        mean_free_path = table.mean_free_path
    floor = DEFAULT_FLOOR * c0 if floor is None else floor
    meta = {"model": model.to_dict()}
    if table is not None:
        meta["table_hash"] = table.content_hash()

    n = int(math.ceil(T_bar / step - 1e-9))
    grid = np.minimum(np.arange(n + 1) * step, T_bar)
    grid[-1] = T_bar
    mfp = float(mean_free_path)

    def rhs(c):
        return drift_h(c, model, order), mfp / c

    cs = np.empty(n + 1)
    ts = np.empty(n + 1)
    dcs = np.empty(n + 1)
    dts = np.empty(n + 1)
    cs[0], ts[0] = c0, 0.0
    dcs[0], dts[0] = rhs(c0)
    for k in range(n):
        hk = grid[k + 1] - grid[k]
        c, t = cs[k], ts[k]
        k1c, k1t = dcs[k], dts[k]
        k2c, k2t = rhs(c + 0.5 * hk * k1c)
        k3c, k3t = rhs(c + 0.5 * hk * k2c)
        k4c, k4t = rhs(c + hk * k3c)
        cn = c + hk / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
        tn = t + hk / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        if not cn >= floor:
            m = k + 1
            partial = AveragedSolution(grid[:m], cs[:m], ts[:m], dcs[:m], dts[:m], step, c0,
                                       T_bar, mfp, order, status="speed_floor", meta=meta) if m > 1 else None
            raise SpeedFloorError(
                f"averaged speed fell below the floor {floor:.3g} at tbar={grid[k + 1]:.6g}", partial)
        cs[k + 1], ts[k + 1] = cn, tn
        dcs[k + 1], dts[k + 1] = rhs(cn)
    return AveragedSolution(grid, cs, ts, dcs, dts, step, c0, T_bar, mfp, order, meta=meta)


def haff_line(c0: float, table: TableGeometry, model: RestitutionModel | None = None) -> dict:
    """Reciprocal speed vs physical time for constant restitution."""
    if model is not None and model.kind != "constant":
        raise ModelKindError(f"the Haff line needs constant restitution, got {model.kind!r}")
    return {"slope": (2.0 / 3.0) / table.mean_free_path, "intercept": 1.0 / c0}
