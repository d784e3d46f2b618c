"""Spatial susceptibility maps and their CSV / PGM exports.

Heatmap CSV::

    # origin_x=<x>,origin_y=<y>,pitch=<p>,nx=<nx>,ny=<ny>,z=<z>
    <ny rows of nx comma-separated integer error counts, "NA" for no data>

Row 0 is the smallest y, column 0 the smallest x. The PGM raster uses the
same orientation (first raster row = smallest y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .classify import CoordinateStats
from .geometry import GridSpec

SCATTER_HEADER = "x,y,trial_index,error_count,fault_class"


class MapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SusceptibilityMap:
    grid: GridSpec
    cells: Dict[Tuple[int, int], CoordinateStats] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)

    def cell(self, i: int, j: int) -> Optional[CoordinateStats]:
        return self.cells.get((i, j))

    def count_grid(self) -> List[List[Optional[int]]]:
        return [[self.cells[(i, j)].error_count if (i, j) in self.cells else None
                 for i in range(self.grid.nx)] for j in range(self.grid.ny)]

    def rate_grid(self) -> List[List[Optional[float]]]:
        return [[self.cells[(i, j)].fault_rate if (i, j) in self.cells else None
                 for i in range(self.grid.nx)] for j in range(self.grid.ny)]

    def peak(self) -> Optional[CoordinateStats]:
        """Highest fault rate; ties go to the smallest (y, x)."""
        if not self.cells:
            return None
        ij = min(self.cells, key=lambda k: (-self.cells[k].fault_rate, k[1], k[0]))
        return self.cells[ij]

    def same_cells(self, other: "SusceptibilityMap") -> bool:
        return self.grid == other.grid and self.cells == other.cells


def build_map(grid: GridSpec, stats: Iterable[CoordinateStats],
              metadata: Optional[dict] = None) -> SusceptibilityMap:
    cells = {}
    for s in stats:
        ij = grid.index_of(s.coordinate)
        if ij is None:
            raise MapError(f"coordinate {s.coordinate} is not on grid {grid}")
        if ij in cells:
            raise MapError(f"duplicate statistics for coordinate {s.coordinate}")
        cells[ij] = s
    return SusceptibilityMap(grid, cells, dict(metadata or {}))


def merge_maps(a: SusceptibilityMap, b: SusceptibilityMap) -> SusceptibilityMap:
    """Union of two maps over the same grid with disjoint populated cells."""
    if a.grid != b.grid:
        raise MapError("cannot merge maps over different grids")
    overlap = a.cells.keys() & b.cells.keys()
    if overlap:
        raise MapError(f"maps overlap at grid cells {sorted(overlap)}")
    cells = dict(a.cells)
    cells.update(b.cells)
    return SusceptibilityMap(a.grid, dict(sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0]))),
                             {**b.metadata, **a.metadata})


def _header(grid: GridSpec) -> str:
    ox, oy = grid.origin
    return (f"# origin_x={ox!r},origin_y={oy!r},pitch={grid.pitch!r},"
            f"nx={grid.nx},ny={grid.ny},z={grid.z!r}")


def export_heatmap_csv(smap: SusceptibilityMap) -> str:
    rows = [_header(smap.grid)]
    for row in smap.count_grid():
        rows.append(",".join("NA" if v is None else str(v) for v in row))
    return "\n".join(rows) + "\n"


def read_heatmap_csv(text: str) -> Tuple[GridSpec, List[List[Optional[int]]]]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise MapError("heatmap CSV lacks its grid header line")
    meta = dict(kv.split("=", 1) for kv in lines[0][1:].strip().split(","))
    grid = GridSpec((float(meta["origin_x"]), float(meta["origin_y"])), float(meta["pitch"]),
                    int(meta["nx"]), int(meta["ny"]), float(meta["z"]))
    rows = [[None if v == "NA" else int(v) for v in ln.split(",")] for ln in lines[1:]]
    if len(rows) != grid.ny or any(len(r) != grid.nx for r in rows):
        raise MapError("heatmap CSV body does not match its header dimensions")
    return grid, rows


def export_scatter_csv(records: Sequence) -> str:
    """One row per trial record, in log order."""
    out = [SCATTER_HEADER]
    for r in records:
        c = r.coordinate
        out.append(f"{c.x!r},{c.y!r},{r.trial_index},{r.error_count},"
                   f"{r.classification.fault_class.value}")
    return "\n".join(out) + "\n"


def export_pgm(smap: SusceptibilityMap, scale: int) -> bytes:
    """Binary P5 graymap; pixel = round-half-up(255 * min(count, scale) / scale)."""
    scale = int(scale)
    if scale < 1:
        raise MapError("PGM scale must be >= 1")
    raster = bytearray()
    for row in smap.count_grid():
        for v in row:
            if v is None:
                raster.append(0)
            else:
                m = min(v, scale)
                raster.append((510 * m + scale) // (2 * scale))
    header = f"P5\n{smap.grid.nx} {smap.grid.ny}\n255\n".encode("ascii")
    return header + bytes(raster)
