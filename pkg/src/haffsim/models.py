"""Restitution-coefficient families eta^(eps)(w) = eps * q(w).

Three kinds are supported:

* ``constant``   q == 1, the classical constant-restitution model;
* ``power_law``  q(w) = q0(w**p) for a named profile q0 with q0(0) = 0;
* ``tabulated``  q given at knots and interpolated by a monotone cubic.

``w`` is the normal component of the incoming velocity.  Besides eta the
model supplies eta_1 = w eta' and eta_2 = w^2 eta'' together with sound
upper bounds on eta, |eta_1| and |eta_2| over w >= 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from . import _kernels as K
from .errors import ConfigError, ModelKindError, ModelRangeError

PROFILES = {
    "zero": K.PROFILE_ZERO,
    "linear": K.PROFILE_LINEAR,
    "rational": K.PROFILE_RATIONAL,
    "tanh": K.PROFILE_TANH,
    "exp": K.PROFILE_EXP,
}

KINDS = {"constant": K.KIND_CONSTANT, "power_law": K.KIND_POWER_LAW, "tabulated": K.KIND_TABULATED}

TAB_SCAN_POINTS = 2**14
TAB_SAFETY = 1.05


def _numeric_sup(f, hi: float) -> float:
    grid = np.linspace(0.0, hi, 4001)
    vals = np.array([f(u) for u in grid])
    k = int(np.argmax(vals))
    lo_b, hi_b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda u: -f(u), bounds=(lo_b, hi_b), method="bounded",
                          options={"xatol": 1e-12})
    return max(float(vals[k]), -float(res.fun))


def _profile_sups(name: str) -> tuple[float, float, float]:
    """sup q0, sup |u q0'|, sup |u^2 q0''| over u >= 0."""
    if name == "zero":
        return 0.0, 0.0, 0.0
    if name == "linear":
        return math.inf, math.inf, 0.0
    if name == "rational":
        return 1.0, 0.25, 8.0 / 27.0
    if name == "exp":
        return 1.0, math.exp(-1.0), 4.0 * math.exp(-2.0)
    if name == "tanh":
        s1 = _numeric_sup(lambda u: u / math.cosh(u) ** 2, 6.0)
        s2 = _numeric_sup(lambda u: 2.0 * u * u * math.tanh(u) / math.cosh(u) ** 2, 8.0)
        # small inflation absorbs the optimizer tolerance
        return 1.0, s1 * (1.0 + 1e-9), s2 * (1.0 + 1e-9)
    raise ConfigError(f"unknown q profile {name!r}; choose from {sorted(PROFILES)}")


def q0_profile(name: str, u):
    u = np.asarray(u, dtype=np.float64)
    if name == "zero":
        return np.zeros_like(u)
    if name == "linear":
        return u.copy()
    if name == "rational":
        return u / (1.0 + u)
    if name == "tanh":
        return np.tanh(u)
    if name == "exp":
        return -np.expm1(-u)
    raise ConfigError(f"unknown q profile {name!r}")


@dataclass(frozen=True, eq=False)
class RestitutionModel:
    kind: str
    epsilon: float
    p: float = 1.0
    profile: str | None = None
    table: tuple[tuple[float, float], ...] | None = None
    eta_max: float = field(init=False)
    eta1_max: float = field(init=False)
    eta2_max: float = field(init=False)
    _knots: np.ndarray = field(init=False, repr=False)
    _coef: np.ndarray = field(init=False, repr=False)
    _unit_sups: tuple = field(init=False, repr=False)

    def __post_init__(self):
        kind = "tabulated" if self.kind == "custom_tabulated" else self.kind
        if kind not in KINDS:
            raise ConfigError(f"model kind must be one of {sorted(KINDS)}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        eps = float(self.epsilon)
        if not (math.isfinite(eps) and eps >= 0.0):
            raise ConfigError(f"model epsilon must be a finite nonnegative number, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

        knots = np.zeros(2)
        coef = np.zeros((4, 1))
        if kind == "constant":
            sups = (1.0, 0.0, 0.0)
        elif kind == "power_law":
            if self.profile not in PROFILES:
                raise ConfigError(f"power_law model needs q_profile in {sorted(PROFILES)}, got {self.profile!r}")
            p = float(self.p)
            if not p > 0.0:
                raise ConfigError(f"power_law exponent p must be positive, got {self.p!r}")
            object.__setattr__(self, "p", p)
            s0, s1, s2 = _profile_sups(self.profile)
            mixed = 0.0 if p == 1.0 else abs(p * (p - 1.0)) * s1
            sups = (s0, p * s1, p * p * s2 + mixed)
        else:
            knots, coef, sups = _tabulate(self.table)
            object.__setattr__(self, "table", tuple((float(a), float(b)) for a, b in self.table))
        object.__setattr__(self, "_knots", knots)
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_unit_sups", sups)
        object.__setattr__(self, "eta_max", eps * sups[0] if eps > 0 else 0.0)
        object.__setattr__(self, "eta1_max", eps * sups[1] if eps > 0 else 0.0)
        object.__setattr__(self, "eta2_max", eps * sups[2] if eps > 0 else 0.0)

    # -- construction helpers ------------------------------------------------
    @classmethod
    def constant(cls, epsilon: float) -> "RestitutionModel":
        return cls("constant", epsilon)

    @classmethod
    def power_law(cls, epsilon: float, profile: str = "rational", p: float = 1.0) -> "RestitutionModel":
        return cls("power_law", epsilon, p=p, profile=profile)

    @classmethod
    def tabulated(cls, epsilon: float, points) -> "RestitutionModel":
        return cls("tabulated", epsilon, table=tuple(tuple(pt) for pt in points))

    def with_epsilon(self, epsilon: float) -> "RestitutionModel":
        return RestitutionModel(self.kind, epsilon, p=self.p, profile=self.profile, table=self.table)

    # -- evaluation ----------------------------------------------------------
    @property
    def kernel_args(self) -> tuple:
        return (KINDS[self.kind], self.epsilon, float(self.p),
                PROFILES.get(self.profile, 0), self._knots, self._coef)

    @property
    def is_elastic(self) -> bool:
        return self.epsilon == 0.0 or self.q_is_zero

    @property
    def q_is_zero(self) -> bool:
        if self.kind == "power_law":
            return self.profile == "zero"
        if self.kind == "tabulated":
            return all(q == 0.0 for _, q in self.table)
        return False

    def eta(self, w: float) -> tuple[float, float, float]:
        """(eta, eta_1, eta_2) at normal speed w >= 0."""
        if w < 0.0:
            raise ModelRangeError(f"normal speed must be nonnegative, got {w!r}")
        e, e1, e2 = K.eta_eval(*self.kernel_args, float(w))
        if not (0.0 <= e < 1.0):
            raise ModelRangeError(f"eta({w!r}) = {e!r} outside [0, 1)")
        return e, e1, e2

    def q(self, c):
        """The epsilon-independent profile c -> q(c), vectorized."""
        c = np.asarray(c, dtype=np.float64)
        if self.kind == "constant":
            return np.ones_like(c)
        if self.kind == "power_law":
            return q0_profile(self.profile, np.power(np.maximum(c, 0.0), self.p))
        interp = PchipInterpolator(self._knots, [pt[1] for pt in self.table])
        return interp(np.clip(c, 0.0, self._knots[-1]))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "epsilon": self.epsilon}
        if self.kind == "power_law":
            out["p"] = self.p
            out["q_profile"] = self.profile
        elif self.kind == "tabulated":
            out["q_profile"] = [list(pt) for pt in self.table]
        return out

    def bounds(self) -> dict:
        return {"eta_max": self.eta_max, "eta1_max": self.eta1_max, "eta2_max": self.eta2_max}


def _tabulate(points):
    if points is None:
        raise ConfigError("tabulated model needs q_profile as [[c, q(c)], ...]")
    try:
        arr = np.array(points, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError("tabulated q_profile must be a list of [c, q] pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ConfigError("tabulated q_profile must hold at least two [c, q] pairs")
    x, y = arr[:, 0], arr[:, 1]
    if x[0] != 0.0 or np.any(np.diff(x) <= 0.0):
        raise ConfigError("tabulated q_profile knots must start at 0 and increase strictly")
    if np.any(y < 0.0) or not np.all(np.isfinite(y)):
        raise ConfigError("tabulated q_profile values must be finite and nonnegative")
    interp = PchipInterpolator(x, y, extrapolate=False)
    knots = np.ascontiguousarray(interp.x, dtype=np.float64)
    coef = np.ascontiguousarray(interp.c, dtype=np.float64)
    grid = np.union1d(np.linspace(0.0, x[-1], TAB_SCAN_POINTS), x)
    vals = np.array([K.tab_eval(knots, coef, w) for w in grid])
    s0 = float(np.max(vals[:, 0]))
    s1 = float(np.max(np.abs(grid * vals[:, 1])))
    s2 = float(np.max(np.abs(grid**2 * vals[:, 2])))
    return knots, coef, (s0 * TAB_SAFETY, s1 * TAB_SAFETY, s2 * TAB_SAFETY)


def eval_eta(model: RestitutionModel, w: float) -> tuple[float, float, float]:
    return model.eta(w)


def model_from_dict(data: dict) -> RestitutionModel:
    if not isinstance(data, dict):
        raise ConfigError("model description must be a JSON object")
    if "kind" not in data:
        raise ConfigError("model description: missing field 'kind'")
    if "epsilon" not in data:
        raise ConfigError("model description: missing field 'epsilon'")
    kind = data["kind"]
    try:
        eps = float(data["epsilon"])
    except (TypeError, ValueError):
        raise ConfigError("model description: field 'epsilon' must be a number") from None
    if kind == "constant":
        return RestitutionModel.constant(eps)
    if kind == "power_law":
        if "q_profile" not in data:
            raise ConfigError("model description: power_law needs field 'q_profile'")
        return RestitutionModel.power_law(eps, data["q_profile"], data.get("p", 1.0))
    if kind in ("tabulated", "custom_tabulated"):
        if "q_profile" not in data or not isinstance(data["q_profile"], list):
            raise ConfigError("model description: tabulated needs field 'q_profile' as [[c, q], ...]")
        return RestitutionModel.tabulated(eps, data["q_profile"])
    raise ModelKindError(f"model description: unknown kind {kind!r}")


def load_model(source) -> RestitutionModel:
    """Build a model from a dict, a JSON string, or a path to a JSON file."""
    if isinstance(source, RestitutionModel):
        return source
    if isinstance(source, dict):
        return model_from_dict(source)
    text = str(source)
    if text.lstrip().startswith("{"):
        try:
            return model_from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"inline model: malformed JSON ({exc})") from None
    try:
        with open(text) as fh:
            return model_from_dict(json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {text}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {text}: malformed JSON ({exc})") from None
