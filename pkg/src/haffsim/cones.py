"""Unstable-cone diagnostics for the extended map.

The cone at (s, phi, c) holds tangent vectors (ds, dphi, dc) with
v_min <= dphi/ds <= v_max and |dc / (c cos(phi) ds)| <= kappa.  The
parameters come from the smallness condition on the restitution bounds and
are taken at the edge of what that condition allows.  Vectors in the cone
expand by at least Lambda in the adapted norm cos(phi) |ds|.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import ExtPhasePoint, jacobian_Fhat, step_map
from .errors import ConditionCError, GrazingError, InfeasibleError
from .geometry import TableGeometry
from .models import RestitutionModel

DEFAULT_K0 = 5


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    first_lhs: float
    first_rhs: float
    second_lhs: float
    second_rhs: float

    @property
    def first_margin(self) -> float:
        return self.first_rhs - self.first_lhs

    @property
    def second_margin(self) -> float:
        return self.second_rhs - self.second_lhs

    def to_dict(self) -> dict:
        out = asdict(self)
        out["first_margin"] = self.first_margin
        out["second_margin"] = self.second_margin
        return out


@dataclass(frozen=True)
class ConeParams:
    kappa: float
    v_min: float
    v_max: float
    lam: float
    assumption_holds: bool

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "v_min": self.v_min, "v_max": self.v_max,
                "lambda": self.lam, "assumption_holds": self.assumption_holds}


@dataclass(frozen=True)
class TangentVector3:
    ds: float
    dphi: float
    dc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ds, self.dphi, self.dc])


def _geometry_bounds(table: TableGeometry):
    if table.tau_min is None or not table.tau_min > 0.0:
        raise InfeasibleError("cone diagnostics need a positive tau_min")
    return table.tau_min, table.curvature_min, table.curvature_max


def check_condition_C(table: TableGeometry, model: RestitutionModel) -> ConditionReport:
    """Evaluate both smallness inequalities on (eta_max, eta1_max)."""
    tau, kmin, kmax = _geometry_bounds(table)
    e, e1 = model.eta_max, model.eta1_max
    a = 1.0 - e
    tk = tau * kmin
    first_lhs, first_rhs = e + e1, a * tk
    if not (a > 0.0 and math.isfinite(e1)):
        return ConditionReport(False, first_lhs, first_rhs, math.inf, 0.0)
    denom = tk - (e + e1) / a
    num = (2.0 - e) / a * e + e1
    if e1 == 0.0:
        second_lhs = 0.0
    elif denom > 0.0:
        second_lhs = e1 / a**2.5 * num / denom
    else:
        second_lhs = math.inf
    second_rhs = (1.0 - e - e1) * tk / (1.0 + tau * kmax)
    holds = first_lhs < first_rhs and second_lhs < second_rhs
    return ConditionReport(holds, first_lhs, first_rhs, second_lhs, second_rhs)


def cone_params(table: TableGeometry, model: RestitutionModel) -> ConeParams:
    """kappa, v_min, v_max at equality in the invariance bounds, and Lambda."""
    rep = check_condition_C(table, model)
    if not rep.holds:
        raise ConditionCError(
            f"smallness condition fails: margins {rep.first_margin:.6g}, {rep.second_margin:.6g}")
    tau, kmin, kmax = _geometry_bounds(table)
    e, e1 = model.eta_max, model.eta1_max
    a = 1.0 - e
    tk = tau * kmin
    top = kmax + 1.0 / tau
    kappa = (1.0 + tk) / math.sqrt(a) * ((2.0 - e) / a * e + e1) / (tk - (e + e1) / a) * top
    tilt = e1 / a**2 * kappa / (1.0 + tk)
    v_min = (1.0 - e - e1) * kmin - tilt
    v_max = (1.0 / a + e1) * top + tilt
    if not v_min > 0.0:
        raise InfeasibleError(f"cone lower slope v_min = {v_min:.6g} is not positive")
    lam = a * (1.0 + tau * (kmin + v_min))
    return ConeParams(kappa, v_min, v_max, lam, lam > 1.0 + tk)


def elastic_limit(table: TableGeometry) -> ConeParams:
    tau, kmin, kmax = _geometry_bounds(table)
    return ConeParams(0.0, kmin, kmax + 1.0 / tau, 1.0 + 2.0 * tau * kmin, True)


def in_cone(params: ConeParams, v: TangentVector3, base: ExtPhasePoint) -> bool:
    if v.ds == 0.0:
        return False
    slope = v.dphi / v.ds
    if not (params.v_min <= slope <= params.v_max):
        return False
    return abs(v.dc / (base.c * math.cos(base.phi) * v.ds)) <= params.kappa


def adapted_norm(v: TangentVector3, base: ExtPhasePoint) -> float:
    return math.cos(base.phi) * abs(v.ds)


def norm_bounds(params: ConeParams, v: TangentVector3, base: ExtPhasePoint) -> tuple[float, float, float]:
    """(lower, euclidean, upper) for the norm-equivalence sandwich."""
    star = adapted_norm(v, base)
    cp = math.cos(base.phi)
    lower = math.sqrt(1.0 + params.v_min**2) / cp * star
    upper = math.sqrt(1.0 + params.v_max**2 + (params.kappa * base.c * cp) ** 2) / cp * star
    return lower, float(np.linalg.norm(v.as_array())), upper


@dataclass(frozen=True)
class ConeStepReport:
    image_in_cone: bool
    expansion_factor: float
    image: TangentVector3
    image_base: ExtPhasePoint


def verify_cone_step(table: TableGeometry, model: RestitutionModel, params: ConeParams,
                     x: ExtPhasePoint, v: TangentVector3) -> ConeStepReport:
    J = jacobian_Fhat(table, x, model)
    w = J @ v.as_array()
    img = TangentVector3(*map(float, w))
    nxt = step_map(table, x, model).next
    ratio = adapted_norm(img, nxt) / adapted_norm(v, x)
    return ConeStepReport(in_cone(params, img, nxt), ratio, img, nxt)


def random_cone_vector(params: ConeParams, x: ExtPhasePoint, rng) -> TangentVector3:
    slope = rng.uniform(params.v_min, params.v_max)
    tilt = rng.uniform(-1.0, 1.0) * params.kappa * x.c * math.cos(x.phi)
    return TangentVector3(1.0, slope, tilt)


@dataclass(frozen=True)
class ConeSweepReport:
    samples: int
    grazing_skipped: int
    in_cone: int
    min_expansion: float
    lam: float

    @property
    def pass_rate(self) -> float:
        return self.in_cone / self.samples if self.samples else math.nan

    @property
    def passed(self) -> bool:
        return self.samples > 0 and self.in_cone == self.samples and self.min_expansion >= self.lam

    def to_dict(self) -> dict:
        return {"samples": self.samples, "grazing_skipped": self.grazing_skipped,
                "in_cone": self.in_cone, "pass_rate": self.pass_rate,
                "min_expansion": self.min_expansion, "lambda": self.lam, "passed": self.passed}


def cone_sweep(table: TableGeometry, model: RestitutionModel, params: ConeParams | None = None,
               samples: int = 10_000, seed: int = 0, c_range=(0.1, 10.0)) -> ConeSweepReport:
    """Map random cone vectors at random base points one step forward."""
    if params is None:
        params = cone_params(table, model)
    rng = np.random.default_rng(seed)
    done = skipped = inside = 0
    min_exp = math.inf
    while done < samples:
        s = rng.uniform(0.0, table.perimeter)
        phi = math.asin(rng.uniform(-1.0, 1.0))
        c = math.exp(rng.uniform(math.log(c_range[0]), math.log(c_range[1])))
        x = ExtPhasePoint(s, phi, c)
        v = random_cone_vector(params, x, rng)
        try:
            rep = verify_cone_step(table, model, params, x, v)
        except GrazingError:
            skipped += 1
            continue
        done += 1
        inside += rep.image_in_cone
        min_exp = min(min_exp, rep.expansion_factor)
    return ConeSweepReport(done, skipped, inside, min_exp, params.lam)


def strip_index(phi: float, k0: int = DEFAULT_K0) -> int:
    """Homogeneity strip containing phi; 0 for the central strip."""
    if k0 < 1:
        raise ValueError("k0 must be at least 1")
    delta = 0.5 * math.pi - abs(phi)
    if delta >= 1.0 / (k0 * k0):
        return 0
    k = max(math.ceil(1.0 / math.sqrt(delta)) - 1, k0)
    # guard the band edges against rounding in the square root
    while k > k0 and delta >= 1.0 / (k * k):
        k -= 1
    while delta < 1.0 / ((k + 1) * (k + 1)):
        k += 1
    return k if phi > 0 else -k


def speed_variation_bound(table: TableGeometry, params: ConeParams) -> float:
    return math.exp(params.kappa * min(table.perimeter, math.pi / params.v_min))
