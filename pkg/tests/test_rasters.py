import numpy as np
import pytest
from hypothesis import given, strategies as st

from jitteradj.errors import FormatError, InvalidInputError
from jitteradj.rasters import (
    CovariateSet,
    Raster,
    extract,
    format_raster,
    read_raster,
    transform,
    window_average,
    write_raster,
)


def grid(vals, cell=1.0, xll=0.0, yll=0.0, nodata=-9999.0):
    vals = np.asarray(vals, float)
    return Raster(vals.shape[1], vals.shape[0], xll, yll, cell, vals, nodata)


def test_file_round_trip(tmp_path):
    r = grid([[1.5, -9999.0, 3.0], [4.0, 5.0, 6.25]], cell=2.5, xll=-3.0, yll=7.0)
    write_raster(r, tmp_path / "r.asc")
    back = read_raster(tmp_path / "r.asc")
    assert back == r
    assert back.mask.tolist() == [[True, False, True], [True, True, True]]


def test_header_is_esri_ascii():
    head = format_raster(grid([[1.0]])).splitlines()[:6]
    assert [h.split()[0].lower() for h in head] == ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"]


def test_value_count_mismatch(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3 4 5 6 7 8\n")
    with pytest.raises(FormatError, match="8"):
        read_raster(p)


def test_missing_header_key(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 1\nnrows 1\nxllcorner 0\ncellsize 1\n1\n")
    with pytest.raises(FormatError):
        read_raster(p)


def test_nonpositive_cellsize():
    with pytest.raises(InvalidInputError):
        Raster(1, 1, 0, 0, 0.0, np.array([1.0]))


def test_log1p_standardize_example():
    out = transform(grid([[0.0, np.e - 1.0]]), "log1p-standardize")
    np.testing.assert_allclose(out.values.ravel(), [-1.0, 1.0], atol=1e-12)


def test_unit_scale_example():
    out = transform(grid([[2.0, 4.0, 6.0]]), "unit-scale")
    np.testing.assert_allclose(out.values.ravel(), [0.0, 0.5, 1.0], atol=1e-12)


def test_transform_keeps_nodata():
    out = transform(grid([[2.0, -9999.0, 6.0]]), "unit-scale")
    assert out.values[0, 1] == -9999.0 and not out.mask[0, 1]


def test_zero_variance_rejected():
    with pytest.raises(InvalidInputError):
        transform(grid([[3.0, 3.0, 3.0]]), "log1p-standardize")
    with pytest.raises(InvalidInputError):
        transform(grid([[3.0, 3.0]]), "unit-scale")


def test_unknown_transform():
    with pytest.raises(InvalidInputError):
        transform(grid([[1.0, 2.0]]), "sqrt")


@given(st.lists(st.floats(0, 1e6), min_size=3, max_size=60).filter(lambda v: np.log1p(v).std() > 1e-6))
def test_standardized_mean_zero_sd_one(vals):
    out = transform(grid([vals]), "log1p-standardize").values
    assert abs(out.mean()) < 1e-9
    assert out.std() == pytest.approx(1.0, abs=1e-9)


def test_extract_centre_outside_and_edges():
    # rows given top first: the cell (col 0, south row 0) holds 3.0
    r = grid([[1.0, 2.0], [3.0, -9999.0]])
    out = extract(r, [[0.5, 0.5], [1.5, 1.5], [1.5, 0.5], [5.0, 5.0], [-0.1, 0.5]])
    np.testing.assert_array_equal(out, [3.0, 2.0, np.nan, np.nan, np.nan])
    # a point on a shared edge belongs to the cell with the higher index
    assert extract(r, [[1.0, 1.5]])[0] == 2.0
    assert extract(r, [[0.5, 1.0]])[0] == 1.0


def brute_window(r, p, w):
    xc, yc = r.cell_centers()
    X, Y = np.meshgrid(xc, yc)
    inside = (np.abs(X - p[0]) <= w / 2) & (np.abs(Y - p[1]) <= w / 2) & r.mask
    return r.values[inside].mean() if inside.any() else np.nan


def test_window_average_brute_force(rng):
    vals = rng.normal(size=(20, 25))
    vals[rng.random(vals.shape) < 0.1] = -9999.0
    r = grid(vals, cell=1.0)
    pts = rng.uniform(-1, 26, (300, 2))
    got = window_average(r, pts, 5.0)
    want = np.array([brute_window(r, p, 5.0) for p in pts])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_window_covers_exact_block():
    vals = np.arange(100.0).reshape(10, 10)
    r = grid(vals)
    # centred on a cell centre, a 5x5 window averages the 25 surrounding cells
    assert window_average(r, [[5.5, 4.5]], 5.0)[0] == pytest.approx(vals[3:8, 3:8].mean())


def test_window_shrinks_to_extract(rng):
    r = grid(rng.normal(size=(8, 8)))
    pts = rng.uniform(0.01, 7.99, (100, 2))
    np.testing.assert_allclose(window_average(r, pts, 1e-6), extract(r, pts))


def test_window_nonpositive():
    with pytest.raises(InvalidInputError):
        window_average(grid([[1.0]]), [[0.5, 0.5]], 0.0)


@given(st.integers(-400, 400), st.integers(-400, 400))
def test_translation_consistency(dx, dy):
    # shifts by multiples of 1/8 keep the arithmetic exact
    dx, dy = dx / 8, dy / 8
    vals = np.arange(30.0).reshape(5, 6)
    a = grid(vals)
    b = grid(vals, xll=dx, yll=dy)
    pts = np.array([[0.25, 0.75], [2.5, 4.125], [5.875, 0.125], [6.5, 1.0]])
    shifted = pts + [dx, dy]
    np.testing.assert_array_equal(extract(a, pts), extract(b, shifted))
    np.testing.assert_allclose(window_average(a, pts, 3.0), window_average(b, shifted, 3.0))


def test_covariate_design():
    r1 = grid([[0.0, np.e - 1.0]])
    r2 = grid([[2.0, 6.0]])
    cov = CovariateSet.from_raw([("a", r1, "log1p-standardize"), ("b", r2, "unit-scale")])
    X = cov.design([[0.5, 0.5], [1.5, 0.5], [9, 9]])
    np.testing.assert_allclose(X[:2], [[1, -1, 0], [1, 1, 1]], atol=1e-12)
    assert np.isnan(X[2, 1:]).all() and X[2, 0] == 1
    assert cov.n_fixed == 3
    with pytest.raises(InvalidInputError):
        CovariateSet.from_raw([("a", r1, "none"), ("a", r2, "none")])
