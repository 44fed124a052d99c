import numpy as np
import pytest

from jitteradj.errors import FormatError, InvalidInputError
from jitteradj.geometry import Polygon, densify_ring, format_polygon, parse_polygon, read_polygon, write_polygon


def test_rectangle_area_and_orientation():
    p = Polygon.rectangle(0, 0, 4, 3)
    assert p.area == pytest.approx(12.0)
    assert p.bounds == (0, 0, 4, 3)


def test_clockwise_input_is_normalized():
    cw = Polygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert cw.area == pytest.approx(1.0)


def test_degenerate_polygon_rejected():
    with pytest.raises(InvalidInputError):
        Polygon([(0, 0), (1, 1), (2, 2)])


def test_self_intersecting_rejected():
    with pytest.raises(InvalidInputError):
        Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_contains_interior_edge_and_outside():
    p = Polygon.rectangle(0, 0, 2, 2)
    pts = np.array([[1, 1], [0, 1], [2, 2], [3, 1], [-1e-6, 1]])
    assert p.contains(pts).tolist() == [True, True, True, False, False]


def test_holes_exclude_interior_but_keep_edges():
    p = Polygon([(0, 0), (10, 0), (10, 10), (0, 10)], holes=[[(4, 4), (6, 4), (6, 6), (4, 6)]])
    assert p.area == pytest.approx(96.0)
    assert p.contains([[5, 5], [4, 5], [2, 2]]).tolist() == [False, True, True]


def test_polygon_file_round_trip(tmp_path):
    p = Polygon([(0, 0), (10, 0), (10, 10), (0, 10)], holes=[[(4, 4), (6, 4), (6, 6), (4, 6)]])
    write_polygon(p, tmp_path / "p.poly")
    q = read_polygon(tmp_path / "p.poly")
    assert np.array_equal(p.exterior, q.exterior)
    assert np.array_equal(p.holes[0], q.holes[0])
    assert format_polygon(q) == format_polygon(p)


def test_parse_error_reports_line():
    with pytest.raises(FormatError, match="f.poly:3"):
        parse_polygon(["0 0", "1 0", "1 x", "0 1"], path="f.poly")


def test_densify_spacing():
    ring = np.array([[0, 0], [10, 0], [10, 10], [0, 10.0]])
    d = densify_ring(ring, 1.0)
    gaps = np.hypot(*np.diff(np.vstack([d, d[:1]]), axis=0).T)
    assert gaps.max() <= 1.0 + 1e-12
