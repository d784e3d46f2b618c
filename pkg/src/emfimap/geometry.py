"""Probe coordinates, uniform scan grids and coarse-to-fine refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Tuple

if TYPE_CHECKING:
    from .susceptibility import SusceptibilityMap

TOL_MM = 1e-9

DEFAULT_COARSE_PITCH_MM = 1.0
DEFAULT_REFINEMENT_FACTOR = 2
DEFAULT_MAX_LEVELS = 3


class GeometryError(ValueError):
    """Invalid grid or region; ``field`` names the offending attribute."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True, order=True)
class ProbeCoordinate:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite planar position ({self.x}, {self.y})", "x")
        if not math.isfinite(self.z) or self.z < 0:
            raise GeometryError(f"probe height must be >= 0, got {self.z}", "z")

    def sort_key(self) -> Tuple[float, float, float]:
        return (self.y, self.x, self.z)

    def close_to(self, other: "ProbeCoordinate", tol: float = TOL_MM) -> bool:
        return (abs(self.x - other.x) <= tol and abs(self.y - other.y) <= tol
                and abs(self.z - other.z) <= tol)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeCoordinate":
        return cls(float(d["x"]), float(d["y"]), float(d.get("z", 0.0)))


@dataclass(frozen=True)
class GridSpec:
    origin: Tuple[float, float]
    pitch: float
    nx: int
    ny: int
    z: float = 0.0

    def __post_init__(self):
        ox, oy = self.origin
        if not (math.isfinite(ox) and math.isfinite(oy)):
            raise GeometryError(f"origin must be finite, got {self.origin}", "origin")
        if not (self.pitch > 0 and math.isfinite(self.pitch)):
            raise GeometryError(f"pitch must be > 0, got {self.pitch}", "pitch")
        if int(self.nx) != self.nx or self.nx < 1:
            raise GeometryError(f"nx must be an integer >= 1, got {self.nx}", "nx")
        if int(self.ny) != self.ny or self.ny < 1:
            raise GeometryError(f"ny must be an integer >= 1, got {self.ny}", "ny")
        if not math.isfinite(self.z) or self.z < 0:
            raise GeometryError(f"z must be >= 0, got {self.z}", "z")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) covered by grid points."""
        ox, oy = self.origin
        return (ox, ox + (self.nx - 1) * self.pitch, oy, oy + (self.ny - 1) * self.pitch)

    def coordinate(self, i: int, j: int) -> ProbeCoordinate:
        ox, oy = self.origin
        return ProbeCoordinate(ox + i * self.pitch, oy + j * self.pitch, self.z)

    def index_of(self, c: ProbeCoordinate, tol: float = TOL_MM) -> Tuple[int, int] | None:
        """Grid index (i, j) of ``c`` or None when it is off-grid."""
        if abs(c.z - self.z) > tol:
            return None
        ox, oy = self.origin
        fi = (c.x - ox) / self.pitch
        fj = (c.y - oy) / self.pitch
        i, j = round(fi), round(fj)
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            return None
        if abs(ox + i * self.pitch - c.x) > tol or abs(oy + j * self.pitch - c.y) > tol:
            return None
        return i, j

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "pitch": self.pitch,
                "nx": self.nx, "ny": self.ny, "z": self.z}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        origin = d.get("origin", (0.0, 0.0))
        return cls(origin=(float(origin[0]), float(origin[1])),
                   pitch=float(d.get("pitch", DEFAULT_COARSE_PITCH_MM)),
                   nx=int(d["nx"]), ny=int(d["ny"]), z=float(d.get("z", 0.0)))


@dataclass(frozen=True)
class RefinementRegion:
    center: Tuple[float, float]
    half_extent: float
    refinement_factor: int = DEFAULT_REFINEMENT_FACTOR

    def __post_init__(self):
        if not self.half_extent > 0:
            raise GeometryError(f"half_extent must be > 0, got {self.half_extent}",
                                "half_extent")
        if int(self.refinement_factor) != self.refinement_factor or self.refinement_factor < 2:
            raise GeometryError(
                f"refinement_factor must be an integer >= 2, got {self.refinement_factor}",
                "refinement_factor")

    def contains(self, c: ProbeCoordinate, tol: float = TOL_MM) -> bool:
        cx, cy = self.center
        return (abs(c.x - cx) <= self.half_extent + tol
                and abs(c.y - cy) <= self.half_extent + tol)


def generate_grid(spec: GridSpec) -> List[ProbeCoordinate]:
    """Row-major coordinates, y outer and x inner."""
    return [spec.coordinate(i, j) for j in range(spec.ny) for i in range(spec.nx)]


def refine_region(parent: GridSpec, region: RefinementRegion) -> GridSpec:
    """Finer sub-grid covering ``region`` clipped to the parent extent.

    The sub-grid is snapped to the parent lattice divided by the refinement
    factor, so every parent point inside the region stays a grid point.
    """
    k = int(region.refinement_factor)
    fine = parent.pitch / k
    ox, oy = parent.origin
    cx, cy = region.center
    h = region.half_extent

    xmin, xmax, ymin, ymax = parent.extent
    if (cx + h < xmin - TOL_MM or cx - h > xmax + TOL_MM
            or cy + h < ymin - TOL_MM or cy - h > ymax + TOL_MM):
        raise GeometryError(
            f"region centred at {region.center} with half extent {h} lies outside the "
            f"parent grid extent {parent.extent}", "center")

    def span(center, origin, n):
        top = (n - 1) * k
        lo = max(math.ceil((center - h - origin) / fine - 1e-9), 0)
        hi = min(math.floor((center + h - origin) / fine + 1e-9), top)
        if hi < lo:
            # region narrower than one fine pitch: keep the nearest lattice point
            lo = hi = min(max(round((center - origin) / fine), 0), top)
        return lo, hi

    i0, i1 = span(cx, ox, parent.nx)
    j0, j1 = span(cy, oy, parent.ny)
    return GridSpec(origin=(ox + i0 * fine, oy + j0 * fine), pitch=fine,
                    nx=i1 - i0 + 1, ny=j1 - j0 + 1, z=parent.z)


def _components(hot: set) -> List[List[Tuple[int, int]]]:
    seen = set()
    comps = []
    for start in sorted(hot, key=lambda ij: (ij[1], ij[0])):
        if start in seen:
            continue
        seen.add(start)
        stack, comp = [start], []
        while stack:
            i, j = stack.pop()
            comp.append((i, j))
            for nb in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if nb in hot and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        comps.append(comp)
    return comps


def select_regions_of_interest(smap: "SusceptibilityMap", threshold: float,
                               refinement_factor: int = DEFAULT_REFINEMENT_FACTOR
                               ) -> List[RefinementRegion]:
    """One region per 4-connected component of cells with rate >= threshold.

    Regions come back sorted by descending peak rate, then ascending (y, x)
    of the peak cell.
    """
    grid = smap.grid
    rates = {ij: cell.fault_rate for ij, cell in smap.cells.items()}
    hot = {ij for ij, r in rates.items() if r >= threshold}
    ranked = []
    for comp in _components(hot):
        coords = [grid.coordinate(i, j) for i, j in comp]
        xs = [c.x for c in coords]
        ys = [c.y for c in coords]
        center = (math.fsum(xs) / len(xs), math.fsum(ys) / len(ys))
        half_diag = 0.5 * math.hypot(max(xs) - min(xs), max(ys) - min(ys))
        peak = min(comp, key=lambda ij: (-rates[ij], ij[1], ij[0]))
        region = RefinementRegion(center, half_diag + grid.pitch, refinement_factor)
        ranked.append(((-rates[peak], peak[1], peak[0]), region))
    ranked.sort(key=lambda t: t[0])
    return [r for _, r in ranked]
