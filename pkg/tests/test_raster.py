import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from instaflow.raster import convex_hull, draw_segment, fill_convex, polygon_area

from oracles import covered_by_points, pixel_centers

coord = st.floats(-10, 40, allow_nan=False)
point_sets = st.lists(st.tuples(coord, coord), min_size=1, max_size=8)


def test_hull_of_square_with_interior_point():
    pts = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1], [1, 0]], dtype=float)
    hull = convex_hull(pts)
    assert len(hull) == 4
    assert polygon_area(hull) == 4.0


def test_degenerate_hulls():
    assert len(convex_hull(np.array([[1.0, 1.0], [1.0, 1.0]]))) == 1
    assert len(convex_hull(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))) == 2


@settings(max_examples=200)
@given(point_sets)
def test_fill_matches_triangle_oracle(points):
    pts = np.array(points)
    img = np.zeros((24, 32), dtype=np.uint8)
    fill_convex(img, pts, 1)
    uu, vv = pixel_centers(24, 32)
    np.testing.assert_array_equal(img.astype(bool), covered_by_points(pts, uu, vv))


def test_pixel_center_on_edge_is_covered():
    img = np.zeros((4, 4), dtype=np.uint8)
    fill_convex(img, np.array([[0.5, 0.5], [2.5, 0.5], [2.5, 2.5], [0.5, 2.5]]), 1)
    assert img.sum() == 9 and img[0, 0] == 1 and img[2, 2] == 1 and img[3, 3] == 0


def test_collinear_points_cover_nothing():
    img = np.zeros((8, 8), dtype=np.uint8)
    fill_convex(img, np.array([[0.5, 0.5], [4.5, 4.5], [7.5, 7.5]]), 1)
    assert not img.any()


def test_segment_endpoints_are_drawn():
    img = np.zeros((10, 10), dtype=np.uint8)
    draw_segment(img, (1.2, 1.7), (8.9, 6.1), 1)
    assert img[1, 1] and img[6, 8]
    # 8-connected: consecutive columns differ by at most one row
    rows, cols = np.nonzero(img)
    for c in range(1, 9):
        assert img[:, c].any()


def test_segment_far_outside_is_clipped():
    img = np.zeros((10, 10), dtype=np.uint8)
    draw_segment(img, (-1e9, 5.5), (1e9, 5.5), 1)
    assert img[5].all() and img.sum() == 10
    draw_segment(img, (-5, -5), (-1, 20), 2)
    assert (img == 2).sum() == 0
    draw_segment(img, (np.nan, 0), (3, 3), 3)
    assert (img == 3).sum() == 0
