"""Dispersing tables on the unit torus built from circular scatterers.

Boundary parametrization: scatterers are concatenated in list order; on each
circle the local arc length starts at the point of largest x-coordinate
(angle 0 from the center) and increases counterclockwise.  The normal at a
boundary point points away from the scatterer center, i.e. into the table.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyTableError,
    InfiniteHorizonError,
    OverlapError,
    RangeError,
)

TWO_PI = 2.0 * math.pi
DEFAULT_DIRECTION_BOUND = 100
TAU_MAX_SAFETY = 1.01


@dataclass(frozen=True)
class Scatterer:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        r = float(self.radius)
        if not (0.0 < r < 0.5):
            raise ConfigError(f"scatterer radius must lie in (0, 1/2), got {self.radius!r}")
        x, y = (float(v) for v in self.center)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ConfigError(f"scatterer center must be finite, got {self.center!r}")
        object.__setattr__(self, "center", (x % 1.0, y % 1.0))
        object.__setattr__(self, "radius", r)


@dataclass(frozen=True)
class HorizonCertificate:
    direction_bound: int
    directions_scanned: int
    tau_max_raw: float
    safety_factor: float
    tau_max: float
    tangent_lines: int

    def to_dict(self) -> dict:
        return {
            "direction_bound": self.direction_bound,
            "directions_scanned": self.directions_scanned,
            "tau_max_raw": self.tau_max_raw,
            "safety_factor": self.safety_factor,
            "tau_max": self.tau_max,
            "tangent_lines": self.tangent_lines,
        }


@dataclass(frozen=True, eq=False)
class TableGeometry:
    scatterers: tuple[Scatterer, ...]
    perimeter: float
    area: float
    curvature_min: float
    curvature_max: float
    tau_min: float
    tau_max: float | None = None
    horizon_certificate: HorizonCertificate | None = None
    centers: np.ndarray = field(repr=False, default=None)
    radii: np.ndarray = field(repr=False, default=None)
    arc_offsets: np.ndarray = field(repr=False, default=None)

    @property
    def certified(self) -> bool:
        return self.horizon_certificate is not None

    @property
    def mean_free_path(self) -> float:
        """Invariant-measure mean of the free path, pi |Q| / |dQ|."""
        return math.pi * self.area / self.perimeter

    @property
    def search_cells(self) -> int:
        """Lattice cells searched on each side of the ray origin."""
        if self.tau_max is None:
            return 4
        return int(math.ceil(self.tau_max)) + 1

    def circumference(self, index: int) -> float:
        return TWO_PI * self.scatterers[index].radius

    def curvature(self, index: int) -> float:
        return 1.0 / self.scatterers[index].radius

    def locate(self, s_global: float) -> tuple[int, float]:
        """Split a global arc length into (scatterer index, local arc length)."""
        if not (0.0 <= s_global < self.perimeter):
            raise RangeError(f"s={s_global!r} outside [0, {self.perimeter!r})")
        i = int(np.searchsorted(self.arc_offsets, s_global, side="right")) - 1
        i = min(max(i, 0), len(self.scatterers) - 1)
        return i, s_global - float(self.arc_offsets[i])

    def to_dict(self) -> dict:
        out = {
            "scatterers": [
                {"center": list(sc.center), "radius": sc.radius} for sc in self.scatterers
            ],
        }
        if self.horizon_certificate is not None:
            out["horizon_scan_bound"] = self.horizon_certificate.direction_bound
        return out

    def content_hash(self) -> str:
        payload = json.dumps(
            [[sc.center[0], sc.center[1], sc.radius] for sc in self.scatterers]
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def summary(self) -> dict:
        cert = self.horizon_certificate
        return {
            "scatterers": len(self.scatterers),
            "perimeter": self.perimeter,
            "area": self.area,
            "curvature_min": self.curvature_min,
            "curvature_max": self.curvature_max,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "horizon": "finite" if cert is not None else "unchecked",
            "horizon_certificate": cert.to_dict() if cert is not None else None,
            "mean_free_path": self.mean_free_path,
            "table_hash": self.content_hash(),
        }


@dataclass(frozen=True)
class BoundaryPoint:
    scatterer_index: int
    s_local: float
    s_global: float
    position: tuple[float, float]
    normal: tuple[float, float]


def _min_image(d: np.ndarray) -> np.ndarray:
    return d - np.floor(d + 0.5)


def build_table(
    scatterers: Iterable[Scatterer],
    *,
    certify: bool = True,
    direction_bound: int = DEFAULT_DIRECTION_BOUND,
) -> TableGeometry:
    """Validate scatterers and derive the geometric constants of the table.

    With ``certify=False`` the horizon scan is skipped; such tables are meant
    for hand-built test geometries and carry no free-path upper bound.
    """
    scs = tuple(scatterers)
    if not scs:
        raise EmptyTableError("a table needs at least one scatterer")
    centers = np.array([sc.center for sc in scs], dtype=np.float64)
    radii = np.array([sc.radius for sc in scs], dtype=np.float64)

    for i in range(len(scs)):
        for j in range(i + 1, len(scs)):
            gap = float(np.hypot(*_min_image(centers[j] - centers[i]))) - radii[i] - radii[j]
            if gap <= 0.0:
                raise OverlapError(
                    f"scatterers {i} and {j} overlap or touch (gap {gap:.6g})"
                )

    circumferences = TWO_PI * radii
    offsets = np.concatenate(([0.0], np.cumsum(circumferences)[:-1]))
    perimeter = TWO_PI * float(radii.sum())
    area = 1.0 - math.pi * float(np.sum(radii**2))

    table = TableGeometry(
        scatterers=scs,
        perimeter=perimeter,
        area=area,
        curvature_min=float(1.0 / radii.max()),
        curvature_max=float(1.0 / radii.min()),
        tau_min=_tau_min(centers, radii),
        centers=centers,
        radii=radii,
        arc_offsets=offsets,
    )
    if certify:
        cert = certify_finite_horizon(table, direction_bound)
        table = TableGeometry(
            scatterers=scs,
            perimeter=perimeter,
            area=area,
            curvature_min=table.curvature_min,
            curvature_max=table.curvature_max,
            tau_min=table.tau_min,
            tau_max=cert.tau_max,
            horizon_certificate=cert,
            centers=centers,
            radii=radii,
            arc_offsets=offsets,
        )
    return table


def _tau_min(centers: np.ndarray, radii: np.ndarray) -> float:
    # nearest translate of the same disk sits one lattice unit away
    best = float(np.min(1.0 - 2.0 * radii))
    m = len(radii)
    for i in range(m):
        for j in range(i + 1, m):
            d = float(np.hypot(*_min_image(centers[j] - centers[i])))
            best = min(best, d - radii[i] - radii[j])
    return float(best)


def estimate_tau_min(table: TableGeometry) -> float:
    """Certified lower bound on the free path: the smallest scatterer gap."""
    return _tau_min(table.centers, table.radii)


def primitive_directions(bound: int) -> list[tuple[int, int]]:
    """Primitive lattice directions with p^2 + q^2 <= bound^2, one per line.

    Ordered by norm, then by angle in [0, pi).
    """
    out = []
    b2 = bound * bound
    for p in range(-bound, bound + 1):
        for q in range(0, bound + 1):
            if q == 0 and p <= 0:
                continue
            if p * p + q * q > b2 or math.gcd(abs(p), q) != 1:
                continue
            out.append((p, q))
    out.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, math.atan2(d[1], d[0])))
    return out


def _corridor_gap(table: TableGeometry, p: int, q: int) -> float | None:
    """Return the normal offset of an open corridor along (p, q), if any."""
    norm = math.hypot(p, q)
    period = 1.0 / norm
    nx, ny = -q / norm, p / norm
    intervals = []
    for (cx, cy), r in zip(table.centers, table.radii):
        if 2.0 * r >= period:
            return None
        o = (cx * nx + cy * ny) % period
        intervals.append((o - r, o + r))
    intervals.sort()
    # sweep one period starting from the first interval's left end
    start = intervals[0][0]
    reach = intervals[0][1]
    for lo, hi in intervals[1:]:
        if lo > reach:
            return 0.5 * (reach + lo) % period
        reach = max(reach, hi)
    if reach < start + period:
        return 0.5 * (reach + start + period) % period
    return None


def _common_tangents(a: np.ndarray, ra: float, b: np.ndarray, rb: float):
    """Yield (touch point on a, unit normal) for every common tangent line."""
    d = b - a
    dist = float(np.hypot(*d))
    dhat = d / dist
    dperp = np.array([-dhat[1], dhat[0]])
    for sa in (1.0, -1.0):
        for sb in (1.0, -1.0):
            k = (sb * rb - sa * ra) / dist
            if abs(k) > 1.0:
                continue
            w = math.sqrt(max(0.0, 1.0 - k * k))
            for sgn in (1.0, -1.0):
                n = k * dhat + sgn * w * dperp
                yield a - sa * ra * n, n


def _free_gap_through(point, n, centers, radii, reach) -> float:
    """Length of the unobstructed segment of the line through ``point``.

    Disks tangent to the line do not block it.  Returns inf when no chord is
    found within ``reach`` on one side.
    """
    u = np.array([-n[1], n[0]])
    cells = int(math.ceil(reach)) + 1
    shifts = np.arange(-cells, cells + 1, dtype=np.float64)
    gx, gy = np.meshgrid(shifts, shifts, indexing="ij")
    lo_best, hi_best = -math.inf, math.inf
    for (cx, cy), r in zip(centers, radii):
        rel = _min_image(np.array([cx, cy]) - point)
        px = rel[0] + gx.ravel()
        py = rel[1] + gy.ravel()
        along = px * u[0] + py * u[1]
        off = px * n[0] + py * n[1]
        hit = (np.abs(off) < r * (1.0 - 1e-12)) & (np.abs(along) <= reach + r)
        if not np.any(hit):
            continue
        half = np.sqrt(r * r - off[hit] ** 2)
        a = along[hit]
        ends = a + half
        starts = a - half
        left = ends[ends <= 0.0]
        right = starts[starts >= 0.0]
        if left.size:
            lo_best = max(lo_best, float(left.max()))
        if right.size:
            hi_best = min(hi_best, float(right.min()))
    return hi_best - lo_best


def _tau_max_tangent_scan(table: TableGeometry) -> tuple[float, int]:
    """Supremum of free-flight lengths over lines tangent to two scatterers.

    The free length between two obstacles is maximized in the grazing limit,
    so the supremum is attained on a common tangent of two disks.
    """
    centers, radii = table.centers, table.radii
    rmax = float(radii.max())
    pair_reach = 1.5
    while True:
        best = 0.0
        lines = 0
        cells = int(math.ceil(pair_reach)) + 1
        for i, ci in enumerate(centers):
            for j, cj in enumerate(centers):
                base = ci + _min_image(cj - ci)
                for a in range(-cells, cells + 1):
                    for b in range(-cells, cells + 1):
                        if i == j and a == 0 and b == 0:
                            continue
                        other = base + (a, b)
                        if np.hypot(*(other - ci)) > pair_reach:
                            continue
                        for touch, n in _common_tangents(ci, radii[i], other, radii[j]):
                            lines += 1
                            reach = 2.0 * pair_reach
                            gap = _free_gap_through(touch, n, centers, radii, reach)
                            while not math.isfinite(gap) and reach < 64.0:
                                reach *= 2.0
                                gap = _free_gap_through(touch, n, centers, radii, reach)
                            if not math.isfinite(gap):
                                angle = math.atan2(n[0], -n[1])
                                raise InfiniteHorizonError((math.cos(angle), math.sin(angle)), float("nan"))
                            best = max(best, gap)
        if best + 2.0 * rmax <= pair_reach:
            return best, lines
        pair_reach = best + 2.0 * rmax + 0.25


def certify_finite_horizon(
    table: TableGeometry, direction_bound: int = DEFAULT_DIRECTION_BOUND
) -> HorizonCertificate:
    """Scan primitive lattice directions for open corridors and bound tau_max.

    Raises InfiniteHorizonError with the first corridor found.
    """
    dirs = primitive_directions(direction_bound)
    for p, q in dirs:
        gap = _corridor_gap(table, p, q)
        if gap is not None:
            raise InfiniteHorizonError((p, q), gap)
    raw, lines = _tau_max_tangent_scan(table)
    return HorizonCertificate(
        direction_bound=direction_bound,
        directions_scanned=len(dirs),
        tau_max_raw=raw,
        safety_factor=TAU_MAX_SAFETY,
        tau_max=raw * TAU_MAX_SAFETY,
        tangent_lines=lines,
    )


def boundary_point(table: TableGeometry, s_global: float) -> BoundaryPoint:
    i, s_local = table.locate(s_global)
    sc = table.scatterers[i]
    theta = s_local / sc.radius
    nx, ny = math.cos(theta), math.sin(theta)
    pos = ((sc.center[0] + sc.radius * nx) % 1.0, (sc.center[1] + sc.radius * ny) % 1.0)
    return BoundaryPoint(i, s_local, s_global, pos, (nx, ny))


def arc_length_of(table: TableGeometry, index: int, normal: Sequence[float]) -> float:
    """Global arc length of the point on scatterer ``index`` with the given normal."""
    theta = math.atan2(normal[1], normal[0])
    if theta < 0.0:
        theta += TWO_PI
    r = table.scatterers[index].radius
    s_local = r * theta
    if s_local >= TWO_PI * r:
        s_local = 0.0
    return float(table.arc_offsets[index]) + s_local


def table_from_dict(data: dict, *, certify: bool = True) -> TableGeometry:
    if not isinstance(data, dict) or "scatterers" not in data:
        raise ConfigError("table description: missing field 'scatterers'")
    raw = data["scatterers"]
    if not isinstance(raw, list):
        raise ConfigError("table description: field 'scatterers' must be a list")
    scs = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"table description: scatterers[{k}] must be an object")
        for key in ("center", "radius"):
            if key not in entry:
                raise ConfigError(f"table description: scatterers[{k}] missing field '{key}'")
        center = entry["center"]
        if not (isinstance(center, list) and len(center) == 2):
            raise ConfigError(f"table description: scatterers[{k}].center must be [x, y]")
        try:
            cx, cy = float(center[0]), float(center[1])
        except (TypeError, ValueError):
            raise ConfigError(f"table description: scatterers[{k}].center must be numeric") from None
        try:
            radius = float(entry["radius"])
        except (TypeError, ValueError):
            raise ConfigError(f"table description: scatterers[{k}].radius must be numeric") from None
        scs.append(Scatterer((cx, cy), radius))
    bound = data.get("horizon_scan_bound", DEFAULT_DIRECTION_BOUND)
    if not isinstance(bound, int) or bound < 1:
        raise ConfigError("table description: field 'horizon_scan_bound' must be a positive integer")
    return build_table(scs, certify=certify, direction_bound=bound)


def load_table(path, *, certify: bool = True) -> TableGeometry:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"table file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"table file {path}: malformed JSON ({exc})") from None
    return table_from_dict(data, certify=certify)


def flagship_table() -> TableGeometry:
    """Two disks per unit cell: r=0.4 at the origin and r=0.3 at the cell center."""
    return build_table([Scatterer((0.0, 0.0), 0.4), Scatterer((0.5, 0.5), 0.3)])
