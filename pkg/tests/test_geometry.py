import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from foramkit.exceptions import EmptyMaskError, MalformedMaskError
from foramkit.geometry import (BBox, BinaryMask, bbox_iou, mask_iou, mask_to_bbox,
                               rasterize_polygon, rle_decode, rle_encode, rle_from_string,
                               rle_to_string)

from oracles import box_iou, naive_decode, pixel_iou, raster_oracle


def grids(max_side=16):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: arrays(np.bool_, hw))


class TestRasterize:
    def test_square_area_matches_point_in_polygon_oracle(self):
        square = [(1, 1), (5, 1), (5, 5), (1, 5)]
        expected = raster_oracle(square, 8, 8)
        assert expected.sum() == 16
        mask = rasterize_polygon(square, 8, 8)
        assert mask.area == 16
        np.testing.assert_array_equal(rle_decode(mask), expected)

    def test_triangle_outside_canvas_is_empty(self):
        assert rasterize_polygon([(20, 20), (30, 20), (25, 28)], 8, 8).area == 0

    def test_full_canvas(self):
        assert rasterize_polygon([(0, 0), (8, 0), (8, 8), (0, 8)], 8, 8).area == 64

    def test_partially_clipped(self):
        poly = [(-3, -3), (4, -3), (4, 4), (-3, 4)]
        np.testing.assert_array_equal(rle_decode(rasterize_polygon(poly, 8, 8)),
                                      raster_oracle(poly, 8, 8))

    def test_concave_and_self_intersecting(self):
        bowtie = [(0.5, 0.5), (7.5, 7.5), (7.5, 0.5), (0.5, 7.5)]
        star = [(4, 0), (5, 3), (8, 3), (5.5, 5), (6.5, 8), (4, 6), (1.5, 8), (2.5, 5), (0, 3), (3, 3)]
        for poly in (bowtie, star):
            np.testing.assert_array_equal(rle_decode(rasterize_polygon(poly, 9, 9)),
                                          raster_oracle(poly, 9, 9))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-4, 20, allow_nan=False), st.floats(-4, 20, allow_nan=False)),
                    min_size=3, max_size=7),
           st.integers(1, 16), st.integers(1, 16))
    def test_matches_oracle_on_random_polygons(self, poly, w, h):
        np.testing.assert_array_equal(rle_decode(rasterize_polygon(poly, w, h)),
                                      raster_oracle(poly, w, h))

    def test_rejects_short_polygon(self):
        with pytest.raises(ValueError):
            rasterize_polygon([(0, 0), (1, 1)], 4, 4)


class TestRLE:
    def test_all_zero(self):
        assert rle_encode(np.zeros((4, 4), bool)).counts == (16,)

    def test_all_one(self):
        assert rle_encode(np.ones((4, 4), bool)).counts == (0, 16)

    def test_checkerboard_column_major(self):
        # Column-major traversal of [[0,1],[1,0]] is 0,1,1,0.
        grid = np.array([[0, 1], [1, 0]], bool)
        assert rle_encode(grid).counts == (1, 2, 1)
        assert rle_encode(~grid).counts == (0, 1, 2, 1)
        assert sum(rle_encode(grid).counts) == 4

    def test_column_major_order(self):
        grid = np.zeros((3, 2), bool)
        grid[0, 1] = True  # flat F index 3
        assert rle_encode(grid).counts == (3, 1, 2)

    def test_round_trip_1000_random_grids(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            h, w = rng.integers(1, 65, size=2)
            grid = rng.random((h, w)) < rng.random()
            m = rle_encode(grid)
            assert sum(m.counts) == h * w
            assert m.area == grid.sum()
            np.testing.assert_array_equal(rle_decode(m), grid)
            np.testing.assert_array_equal(naive_decode(m.counts, w, h), grid)

    def test_malformed_counts(self):
        with pytest.raises(MalformedMaskError):
            BinaryMask(4, 4, (3, 2))
        bad = object.__new__(BinaryMask)
        object.__setattr__(bad, "width", 2)
        object.__setattr__(bad, "height", 2)
        object.__setattr__(bad, "counts", (1, 1))
        with pytest.raises(MalformedMaskError):
            rle_decode(bad)

    @settings(max_examples=200, deadline=None)
    @given(grids(24))
    def test_string_codec_round_trip(self, grid):
        m = rle_encode(grid)
        assert tuple(rle_from_string(rle_to_string(m.counts))) == m.counts
        assert BinaryMask.from_coco(m.to_coco()) == m

    def test_string_codec_matches_pycocotools(self):
        cocomask = pytest.importorskip("pycocotools.mask")
        rng = np.random.default_rng(3)
        for _ in range(200):
            h, w = rng.integers(1, 40, size=2)
            grid = rng.random((h, w)) < rng.random()
            ref = cocomask.encode(np.asfortranarray(grid.astype(np.uint8)))
            assert rle_encode(grid).to_string() == ref["counts"].decode("ascii")

    def test_truncated_string(self):
        with pytest.raises(MalformedMaskError):
            rle_from_string("1\x60")


def _square(size, x, y, side):
    g = np.zeros((size, size), bool)
    g[y:y + side, x:x + side] = True
    return g


class TestIoU:
    def test_identical(self):
        m = rle_encode(_square(8, 1, 1, 4))
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        assert mask_iou(rle_encode(_square(8, 0, 0, 2)), rle_encode(_square(8, 4, 4, 2))) == 0.0

    def test_shifted_squares(self):
        a, b = _square(10, 0, 0, 4), _square(10, 2, 0, 4)
        assert pixel_iou(a, b) == pytest.approx(8 / 24)
        assert mask_iou(rle_encode(a), rle_encode(b)) == 8 / 24

    def test_crowd_normalizes_by_detection(self):
        det, crowd = _square(10, 0, 0, 4), _square(10, 2, 0, 6)
        assert mask_iou(rle_encode(det), rle_encode(crowd), crowd=True) == 8 / 16

    def test_empty_pair_is_zero(self):
        e = BinaryMask.empty(4, 4)
        assert mask_iou(e, e) == 0.0
        assert mask_iou(e, e, crowd=True) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mask_iou(BinaryMask.empty(4, 4), BinaryMask.empty(5, 4))

    def test_box_examples(self):
        a = BBox(0, 0, 2, 2)
        assert bbox_iou(a, a) == 1.0
        assert bbox_iou(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == 0.0
        assert bbox_iou(a, BBox(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)
        z = BBox(1, 1, 1, 1)
        assert bbox_iou(z, z) == 0.0

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            BBox(2, 0, 1, 1)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.data())
    def test_mask_iou_symmetric_in_range_and_exact(self, h, w, data):
        a = data.draw(arrays(np.bool_, (h, w)))
        b = data.draw(arrays(np.bool_, (h, w)))
        ma, mb = rle_encode(a), rle_encode(b)
        v = mask_iou(ma, mb)
        assert v == mask_iou(mb, ma)
        assert 0.0 <= v <= 1.0
        assert v == pixel_iou(a, b)
        assert mask_iou(ma, mb, crowd=True) == pixel_iou(a, b, crowd=True)
        assert 0.0 <= mask_iou(ma, mb, crowd=True) <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 50, allow_nan=False), min_size=8, max_size=8))
    def test_box_iou_symmetric_in_range(self, v):
        a = BBox(min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]), max(v[2], v[3]))
        b = BBox(min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]), max(v[6], v[7]))
        assert bbox_iou(a, b) == bbox_iou(b, a)
        assert 0.0 <= bbox_iou(a, b) <= 1.0
        assert bbox_iou(a, b) == box_iou((a.x_min, a.y_min, a.x_max, a.y_max),
                                         (b.x_min, b.y_min, b.x_max, b.y_max))


class TestMaskToBBox:
    def test_single_pixel(self):
        g = np.zeros((8, 8), bool)
        g[3, 5] = True
        assert mask_to_bbox(rle_encode(g)) == BBox(5, 3, 6, 4)

    def test_full(self):
        assert mask_to_bbox(rle_encode(np.ones((8, 8), bool))) == BBox(0, 0, 8, 8)

    def test_l_shape(self):
        g = np.zeros((8, 8), bool)
        g[1:5, 2] = True
        g[4, 2:7] = True
        rows, cols = np.nonzero(g)
        oracle = BBox(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)
        assert oracle == BBox(2, 1, 7, 5)
        assert mask_to_bbox(rle_encode(g)) == oracle

    def test_empty_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_to_bbox(BinaryMask.empty(3, 3))

    @settings(max_examples=150, deadline=None)
    @given(grids(16).filter(lambda g: g.any()))
    def test_tight(self, grid):
        box = mask_to_bbox(rle_encode(grid))
        rows, cols = np.nonzero(grid)
        assert (cols >= box.x_min).all() and (cols + 1 <= box.x_max).all()
        assert (rows >= box.y_min).all() and (rows + 1 <= box.y_max).all()
        # Shrinking any side by a pixel drops a set pixel.
        assert cols.min() == box.x_min and cols.max() + 1 == box.x_max
        assert rows.min() == box.y_min and rows.max() + 1 == box.y_max
