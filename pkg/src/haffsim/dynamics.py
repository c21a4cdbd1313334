"""Elastic billiard map F, inelastic extended map F-hat and their Jacobians.

Phase points are (s, phi): global arc length and the angle of the outgoing
velocity from the normal pointing into the table, positive counterclockwise.
Extended points add the speed c.  A step of F-hat is a free flight to the next
scatterer followed by the collision rule P acting on (phi, c).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import GrazingError, HorizonViolation, ModelRangeError
from .geometry import TableGeometry
from .models import RestitutionModel

HALF_PI = 0.5 * math.pi
SMALL_SINE = 1e-6
CSV_HEADER = "n,s,phi,c,tau,t,eta"


@dataclass(frozen=True)
class PhasePoint:
    s: float
    phi: float


@dataclass(frozen=True)
class ExtPhasePoint:
    s: float
    phi: float
    c: float

    @property
    def base(self) -> PhasePoint:
        return PhasePoint(self.s, self.phi)


@dataclass(frozen=True)
class FlightResult:
    s1: float
    phi_pre: float
    tau: float
    index: int


@dataclass(frozen=True)
class CollisionStep:
    next: ExtPhasePoint
    tau: float
    phi_pre: float
    eta_used: float


def _kernel_table(table: TableGeometry) -> tuple:
    tau_max = table.tau_max if table.tau_max is not None else np.inf
    return (table.centers[:, 0].copy(), table.centers[:, 1].copy(), table.radii,
            table.arc_offsets, table.search_cells, tau_max)


def _raise_for_status(status: int, table: TableGeometry, where: str, tau: float = math.nan):
    if status == K.GRAZING:
        raise GrazingError(f"grazing collision {where}")
    if status == K.HORIZON:
        raise HorizonViolation(
            f"free flight {tau!r} exceeds certified tau_max {table.tau_max!r} {where}")
    if status == K.NO_HIT:
        raise HorizonViolation(f"no scatterer within the lattice search range {where}")
    if status == K.ETA_RANGE:
        raise ModelRangeError(f"restitution loss outside [0, 1) {where}")


def free_flight(table: TableGeometry, point: PhasePoint) -> FlightResult:
    """Trace the outgoing ray to the next scatterer."""
    table.locate(point.s)
    status, j, s1, phi_pre, tau = K.flight(*_kernel_table(table), float(point.s), float(point.phi))
    _raise_for_status(status, table, f"from s={point.s!r}, phi={point.phi!r}", tau)
    return FlightResult(s1, phi_pre, tau, j)


def reflect_elastic(phi_pre: float) -> float:
    # in these coordinates the mirror reflection is the identity
    return phi_pre


def apply_P(phi_pre: float, c0: float, model: RestitutionModel) -> tuple[float, float, float]:
    """Collision rule: returns (phi1, c1, eta) with eta taken at w = c0 cos(phi_pre)."""
    eta, _, _ = model.eta(c0 * math.cos(phi_pre))
    phi1, c1 = K.collide(float(phi_pre), float(c0), eta)
    return phi1, c1, eta


def elastic_map(table: TableGeometry, point: PhasePoint) -> PhasePoint:
    fl = free_flight(table, point)
    return PhasePoint(fl.s1, reflect_elastic(fl.phi_pre))


def step_map(table: TableGeometry, x: ExtPhasePoint, model: RestitutionModel) -> CollisionStep:
    """One application of the extended map."""
    fl = free_flight(table, x.base)
    phi1, c1, eta = apply_P(fl.phi_pre, x.c, model)
    return CollisionStep(ExtPhasePoint(fl.s1, phi1, c1), fl.tau, fl.phi_pre, eta)


def advance_time(t_n: float, tau: float, c_n: float, epsilon: float) -> float:
    return t_n + epsilon * tau / c_n


# -- derivatives ------------------------------------------------------------
def _flight_with_curvatures(table, point):
    fl = free_flight(table, point)
    i0, _ = table.locate(point.s)
    return fl, table.curvature(i0), table.curvature(fl.index)


def jacobian_F_parts(tau, k0, k1, cos0, cos1) -> np.ndarray:
    return -np.array([
        [tau * k0 + cos0, tau],
        [tau * k0 * k1 + k0 * cos1 + k1 * cos0, tau * k1 + cos1],
    ]) / cos1


def jacobian_F(table: TableGeometry, x: PhasePoint) -> np.ndarray:
    """2x2 derivative of the elastic map at (s, phi)."""
    fl, k0, k1 = _flight_with_curvatures(table, x)
    return jacobian_F_parts(fl.tau, k0, k1, math.cos(x.phi), math.cos(fl.phi_pre))


def jacobian_P(phi_pre: float, c0: float, model: RestitutionModel) -> np.ndarray:
    """d(phi1, c1) / d(phi_pre, c0) of the collision rule."""
    sp, cp = math.sin(phi_pre), math.cos(phi_pre)
    eta, eta1, _ = model.eta(c0 * cp)
    phi1, c1 = K.collide(float(phi_pre), float(c0), eta)
    s1, c1s = math.sin(phi1), math.cos(phi1)
    a = 1.0 - eta
    S = a * a * cp * cp + sp * sp
    if abs(sp) < SMALL_SINE:
        dphi_dphi = a / S - s1 * s1 * eta1
    else:
        dphi_dphi = s1 * c1s / (sp * cp) - s1 * s1 * eta1
    dphi_dc = sp * cp * eta1 / (c0 * S)
    dc_dphi = c0 * sp * c1s * ((2.0 - eta) * eta / a + eta1)
    dc_dc = c1 / c0 - c1s * cp * eta1
    return np.array([[dphi_dphi, dphi_dc], [dc_dphi, dc_dc]])


def dphi_dphi_forms(phi_pre: float, c0: float, model: RestitutionModel) -> tuple[float, float]:
    """Rational and sine-product expressions for d phi1 / d phi_pre."""
    sp, cp = math.sin(phi_pre), math.cos(phi_pre)
    eta, eta1, _ = model.eta(c0 * cp)
    phi1, _ = K.collide(float(phi_pre), float(c0), eta)
    s1, c1s = math.sin(phi1), math.cos(phi1)
    a = 1.0 - eta
    S = a * a * cp * cp + sp * sp
    return a / S - s1 * s1 * eta1, s1 * c1s / (sp * cp) - s1 * s1 * eta1


def jacobian_Fhat(table: TableGeometry, x: ExtPhasePoint, model: RestitutionModel) -> np.ndarray:
    """3x3 derivative of the extended map in (s, phi, c)."""
    fl, k0, k1 = _flight_with_curvatures(table, x.base)
    dF = jacobian_F_parts(fl.tau, k0, k1, math.cos(x.phi), math.cos(fl.phi_pre))
    dP = jacobian_P(fl.phi_pre, x.c, model)
    left = np.eye(3)
    left[1:, 1:] = dP
    right = np.eye(3)
    right[:2, :2] = dF
    return left @ right


# -- trajectories -----------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Collision history; row k is the state after collision k+1."""
    initial: ExtPhasePoint
    epsilon: float
    s: np.ndarray
    phi: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    t: np.ndarray
    eta: np.ndarray
    phi_pre: np.ndarray
    index: np.ndarray
    status: str = "ok"

    def __len__(self) -> int:
        return self.s.shape[0]

    def to_csv(self, precision: int = 17) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        fmt = f"%.{precision}g"
        cols = (self.s, self.phi, self.c, self.tau, self.t, self.eta)
        for k in range(len(self)):
            buf.write(str(k + 1))
            for col in cols:
                buf.write("," + fmt % col[k])
            buf.write("\n")
        return buf.getvalue()

    def summary(self) -> dict:
        n = len(self)
        return {
            "collisions": n,
            "status": self.status,
            "mean_tau": float(np.mean(self.tau)) if n else None,
            "final_c": float(self.c[-1]) if n else self.initial.c,
            "final_t": float(self.t[-1]) if n else 0.0,
        }


_STATUS_NAMES = {K.OK: "ok", K.GRAZING: "grazing", K.HORIZON: "horizon",
                 K.NO_HIT: "no_hit", K.ETA_RANGE: "eta_range"}


def run_raw(table: TableGeometry, model: RestitutionModel, x0: ExtPhasePoint,
            steps: int, time_scale: float | None = None):
    """Kernel call without error translation; returns the raw tuple."""
    scale = model.epsilon if time_scale is None else time_scale
    return K.run(*_kernel_table(table), *model.kernel_args,
                 float(x0.s), float(x0.phi), float(x0.c), float(scale), int(steps))


def run_trajectory(table: TableGeometry, model: RestitutionModel, x0: ExtPhasePoint,
                   steps: int, *, allow_grazing: bool = False,
                   time_scale: float | None = None) -> TrajectoryRecord:
    """Iterate the extended map with the joint time update t += eps * tau / c.

    A grazing collision raises unless ``allow_grazing`` is set, in which case
    the record is truncated and its status says why.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    table.locate(x0.s)
    if not (abs(x0.phi) < HALF_PI and x0.c > 0.0):
        raise ValueError(f"invalid initial state {x0}")
    status, done, s, phi, c, tau, t, eta, pre, idx = run_raw(table, model, x0, steps, time_scale)
    if status != K.OK and not (status == K.GRAZING and allow_grazing):
        _raise_for_status(status, table, f"at collision {done + 1}", math.nan)
    return TrajectoryRecord(x0, model.epsilon, s[:done], phi[:done], c[:done], tau[:done],
                            t[:done], eta[:done], pre[:done], idx[:done],
                            _STATUS_NAMES[status])
