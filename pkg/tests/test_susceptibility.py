import random

import pytest

from emfimap.classify import make_stats
from emfimap.geometry import GridSpec, ProbeCoordinate
from emfimap.susceptibility import (SCATTER_HEADER, MapError, build_map, export_heatmap_csv,
                                    export_pgm, export_scatter_csv, merge_maps, read_heatmap_csv)
from emfimap.taxonomy import FaultClass

G22 = GridSpec((0.0, 0.0), 1.0, 2, 2)


def stat(x, y, faults=1, trials=2, errors=None):
    return make_stats(ProbeCoordinate(x, y, 0.0),
                      {FaultClass.NONE: trials - faults, FaultClass.CONTROL_FLOW: faults},
                      errors=faults if errors is None else errors)


def test_empty_map():
    m = build_map(G22, [])
    assert m.cells == {} and m.count_grid() == [[None, None], [None, None]]


def test_single_cell():
    m = build_map(G22, [stat(1.0, 0.0)])
    assert m.cell(1, 0).fault_rate == 0.5
    assert m.cell(0, 0) is None


def test_duplicate_rejected():
    with pytest.raises(MapError):
        build_map(G22, [stat(0.0, 0.0), stat(0.0, 0.0)])


def test_off_grid_rejected():
    with pytest.raises(MapError, match="0.5"):
        build_map(G22, [stat(0.5, 0.0)])


def test_snap_tolerance():
    m = build_map(G22, [stat(1.0 + 1e-12, 1.0 - 1e-12)])
    assert (1, 1) in m.cells


def test_heatmap_all_na():
    text = export_heatmap_csv(build_map(G22, []))
    assert text.splitlines()[1:] == ["NA,NA", "NA,NA"]
    assert text.startswith("# origin_x=0.0,origin_y=0.0,pitch=1.0,nx=2,ny=2")


def test_heatmap_single_count():
    text = export_heatmap_csv(build_map(G22, [stat(0.0, 0.0, faults=7, trials=10)]))
    assert text.splitlines()[1] == "7,NA"


def test_heatmap_round_trip():
    rnd = random.Random(2)
    grid = GridSpec((1.5, -2.0), 0.25, 7, 5, 0.5)
    stats = [make_stats(grid.coordinate(i, j), {FaultClass.NONE: 3}, errors=rnd.randrange(100))
             for i in range(7) for j in range(5) if rnd.random() < 0.7]
    m = build_map(grid, stats)
    grid2, rows = read_heatmap_csv(export_heatmap_csv(m))
    assert grid2 == grid
    assert rows == m.count_grid()


def test_pgm_no_data_is_black():
    data = export_pgm(build_map(G22, []), 10)
    assert data == b"P5\n2 2\n255\n" + bytes(4)


def test_pgm_scaling():
    m = build_map(G22, [stat(0.0, 0.0, errors=10), stat(1.0, 0.0, errors=5),
                        stat(0.0, 1.0, errors=50), stat(1.0, 1.0, errors=0)])
    data = export_pgm(m, 10)
    assert data[len(b"P5\n2 2\n255\n"):] == bytes([255, 128, 255, 0])


def test_pgm_bad_scale():
    with pytest.raises(MapError):
        export_pgm(build_map(G22, []), 0)


def test_merge_commutes():
    a = build_map(G22, [stat(0.0, 0.0), stat(1.0, 1.0)])
    b = build_map(G22, [stat(1.0, 0.0)])
    assert merge_maps(a, b).cells == merge_maps(b, a).cells
    with pytest.raises(MapError):
        merge_maps(a, a)


class _Rec:
    def __init__(self, x, y, t, e, cls):
        from emfimap.classify import FaultObservation
        from emfimap.taxonomy import FaultDetail
        self.coordinate = ProbeCoordinate(x, y, 0.0)
        self.trial_index = t
        self.error_count = e
        d = FaultDetail.NONE if cls is FaultClass.NONE else FaultDetail.BIT_FLIPS
        self.classification = FaultObservation(cls, d, () if cls is FaultClass.NONE else (2,))


def test_scatter_empty():
    assert export_scatter_csv([]) == SCATTER_HEADER + "\n"


def test_scatter_rows_in_order():
    recs = [_Rec(1.0, 0.0, 0, 3, FaultClass.DATA_CORRUPTION), _Rec(0.0, 0.0, 0, 0, FaultClass.NONE),
            _Rec(1.0, 0.0, 1, 2, FaultClass.DATA_CORRUPTION)]
    assert export_scatter_csv(recs).splitlines() == [
        SCATTER_HEADER, "1.0,0.0,0,3,DataCorruption", "0.0,0.0,0,0,None",
        "1.0,0.0,1,2,DataCorruption"]
