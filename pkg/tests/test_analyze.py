import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from elseg import analyze as A

from conftest import flood_fill_count, random_plane


def test_diagonal_pair():
    plane = np.array([[1, 0], [0, 1]], np.uint8)
    assert len(A.connected_components(plane, 8)[1]) == 1
    assert len(A.connected_components(plane, 4)[1]) == 2


def test_empty_and_full():
    assert A.connected_components(np.zeros((5, 5), np.uint8))[1] == []
    comps = A.connected_components(np.ones((4, 6), np.uint8))[1]
    assert len(comps) == 1 and comps[0].area == 24 and comps[0].perimeter == 20


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("conn", [4, 8])
def test_counts_match_flood_fill(seed, conn):
    plane = random_plane(seed)
    labels, comps = A.connected_components(plane, conn)
    assert len(comps) == flood_fill_count(plane, conn)
    assert sum(c.area for c in comps) == plane.sum()
    assert labels.max() == len(comps)


def test_labels_follow_raster_order():
    plane = np.array([[0, 0, 1], [1, 0, 1], [1, 0, 0]], np.uint8)
    labels, comps = A.connected_components(plane, 4)
    assert labels[0, 2] == 1 and labels[1, 0] == 2
    assert [c.label for c in comps] == [1, 2]


def test_single_pixel_geometry():
    c = A.component_geometry([3], [4])
    assert (c.area, c.perimeter, c.slope) == (1, 4, 0.0)
    assert c.bbox == (3, 4, 3, 4) and c.centroid == (3.0, 4.0)


def test_horizontal_run():
    c = A.component_geometry([0] * 5, range(5))
    assert (c.area, c.perimeter, c.slope) == (5, 12, 0.0)


def test_vertical_run_is_minus_half_pi():
    c = A.component_geometry(range(5), [0] * 5)
    assert c.slope == pytest.approx(-math.pi / 2)


def test_diagonal_run():
    assert abs(A.component_geometry(range(5), range(5)).slope - math.pi / 4) < 1e-6
    assert abs(A.component_geometry(range(5), range(4, -1, -1)).slope + math.pi / 4) < 1e-6


def test_isotropic_square_has_zero_slope():
    assert A.component_geometry([0, 0, 1, 1], [0, 1, 0, 1]).slope == 0.0


def _brute_perimeter(plane):
    h, w = plane.shape
    p = 0
    for y in range(h):
        for x in range(w):
            if plane[y, x]:
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    p += not (0 <= ny < h and 0 <= nx < w and plane[ny, nx])
    return p


@pytest.mark.parametrize("seed", range(20))
def test_perimeter_and_bbox_against_loops(seed):
    plane = random_plane(seed, 16)
    labels, comps = A.connected_components(plane, 8)
    for c in comps:
        member = labels == c.label
        assert c.perimeter == _brute_perimeter(member)
        assert c.perimeter >= 4
        rows, cols = np.nonzero(member)
        assert c.bbox == (rows.min(), cols.min(), rows.max(), cols.max())


@given(arrays(np.uint8, (9, 11), elements=st.integers(0, 1)))
@settings(max_examples=60)
def test_flip_equivariance(plane):
    _, a = A.connected_components(plane)
    _, b = A.connected_components(plane[:, ::-1].copy())
    key = lambda c: (c.area, c.perimeter)
    assert sorted(map(key, a)) == sorted(map(key, b))
    sa = sorted(round(math.cos(2 * c.slope), 9) for c in a)
    sb = sorted(round(math.cos(2 * c.slope), 9) for c in b)
    assert sa == sb
    # sin(2θ) changes sign under a mirror
    assert sorted(round(math.sin(2 * c.slope), 9) for c in a) == sorted(
        round(-math.sin(2 * c.slope), 9) + 0.0 for c in b)


@given(arrays(np.uint8, (12, 12), elements=st.integers(0, 1)))
def test_slope_range(plane):
    for c in A.connected_components(plane)[1]:
        assert -math.pi / 2 <= c.slope < math.pi / 2


def test_non_binary_rejected():
    with pytest.raises(ValueError):
        A.connected_components(np.array([[2]]))
    with pytest.raises(ValueError):
        A.connected_components(np.zeros((2, 2)), connectivity=6)


def _three_cracks():
    p = np.zeros((10, 10), np.uint8)
    p[1, 1:8] = 1
    p[4, 2:9] = 1
    p[7:9, 5] = 1
    return p


def test_summary_perfect_predictions():
    gt = {f"im{i}": _three_cracks() for i in range(4)}
    s = A.crack_count_summary(gt, {"model": dict(gt)})
    assert s.stats["gt"]["mean"] == 3.0 == s.stats["model"]["mean"]
    assert len(s.rows) == 8


def test_splitting_a_component_adds_one():
    p = _three_cracks()
    q = p.copy()
    q[1, 4] = 0
    s = A.crack_count_summary({"a": p}, {"m": {"a": q}})
    assert s.counts["m"]["a"] == s.counts["gt"]["a"] + 1


def test_min_area_filter():
    p = _three_cracks()
    p[9, 9] = 1
    s1 = A.crack_count_summary({"a": p}, {})
    s2 = A.crack_count_summary({"a": p}, {}, min_area=2)
    assert s1.counts["gt"]["a"] == 4 and s2.counts["gt"]["a"] == 3


def test_misaligned_ids():
    with pytest.raises(ValueError, match="misaligned"):
        A.crack_count_summary({"a": _three_cracks()}, {"m": {"b": _three_cracks()}})


def test_distribution_stats():
    s = A.distribution_stats([1, 2, 3, 4])
    assert s["mean"] == 2.5 and s["median"] == 2.5
    assert s["sd"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert s["q1"] == 1.75 and s["q3"] == 3.25


def test_export_rows(tmp_path):
    gt = {f"im{i}": _three_cracks() for i in range(3)}
    s = A.crack_count_summary(gt, {"x": gt, "y": gt})
    A.write_rows(s.rows, tmp_path / "rows.csv")
    lines = (tmp_path / "rows.csv").read_text().splitlines()
    assert lines[0] == ",".join(A.EXPORT_FIELDS)
    assert len(lines) == 1 + 3 * 3
    assert lines[1].split(",")[3] == "7;7;2"
