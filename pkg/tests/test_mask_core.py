import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import block, brute_boundary, brute_components, brute_edt, exhaustive_edt, random_mask
from pvseval.mask_core import (
    Box2D,
    DimensionMismatchError,
    MalformedEncodingError,
    RleMask,
    boundary,
    bounding_box,
    connected_components,
    distance_transform,
    fill_small_holes,
    iou,
    remove_small_components,
    rle_decode,
    rle_encode,
    rle_iou,
)

masks = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda hw: arrays(np.bool_, hw)
)


class TestRle:
    def test_single_pixel(self):
        m = np.zeros((3, 3), bool)
        m[1, 1] = True
        assert rle_encode(m).counts == (4, 1, 4)

    def test_empty_and_full(self):
        assert rle_encode(np.zeros((2, 2), bool)).counts == (4,)
        assert rle_encode(np.ones((2, 2), bool)).counts == (0, 4)

    def test_decode_examples(self):
        m = rle_decode(RleMask(3, 3, (4, 1, 4)))
        assert m.sum() == 1 and m[1, 1]
        assert not rle_decode(RleMask(2, 2, (4,))).any()
        m = rle_decode(RleMask(2, 2, (3, 1)))
        assert m.sum() == 1 and m[1, 1]

    def test_column_major(self):
        m = np.zeros((2, 3), bool)
        m[0, 1] = True  # column-major index 2
        assert rle_encode(m).counts == (2, 1, 3)

    @pytest.mark.parametrize(
        "counts",
        [(3,), (5,), (1, 0, 3), (2, -1, 3)],
    )
    def test_malformed(self, counts):
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, counts)

    @given(masks)
    def test_roundtrip(self, m):
        r = rle_encode(m)
        assert sum(r.counts) == m.size
        assert all(c > 0 for c in r.counts[1:])
        assert np.array_equal(rle_decode(r), m)
        assert r.area == m.sum()

    def test_json_roundtrip(self):
        m = block(4, 5, 1, 1, 3, 4)
        r = rle_encode(m)
        text = json.dumps(r.to_json())
        assert json.loads(text) == {"size": [4, 5], "counts": list(r.counts)}
        assert RleMask.from_json(json.loads(text)) == r

    def test_json_rejects_bad_types(self):
        with pytest.raises(MalformedEncodingError):
            RleMask.from_json({"size": [2, 2], "counts": [4.0]})
        with pytest.raises(MalformedEncodingError):
            RleMask.from_json({"counts": [4]})


class TestIou:
    def test_examples(self):
        a = block(4, 4, 0, 0, 2, 2)
        assert iou(a, a) == 1.0
        assert iou(a, block(4, 4, 2, 2, 4, 4)) == 0.0
        b = block(4, 4, 0, 1, 2, 3)
        assert iou(a, b) == pytest.approx(2 / 6)

    def test_both_empty_is_one(self):
        z = np.zeros((3, 3), bool)
        assert iou(z, z) == 1.0
        assert iou(z, block(3, 3, 0, 0, 1, 1)) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            iou(np.zeros((2, 2)), np.zeros((2, 3)))

    @given(masks, st.data())
    def test_symmetry_and_monotonicity(self, a, data):
        b = data.draw(arrays(np.bool_, a.shape))
        assert iou(a, b) == iou(b, a)
        if a.any():
            assert iou(a, a) == 1.0
        only_b = np.argwhere(b & ~a)
        if len(only_b):
            r, c = only_b[data.draw(st.integers(0, len(only_b) - 1))]
            a2 = a.copy()
            a2[r, c] = True
            assert iou(a2, b) >= iou(a, b)

    @given(masks, st.data())
    def test_rle_iou_matches_bitmap(self, a, data):
        b = data.draw(arrays(np.bool_, a.shape))
        assert rle_iou(rle_encode(a), rle_encode(b)) == iou(a, b)


class TestDistanceTransform:
    def test_examples(self):
        assert not distance_transform(np.zeros((4, 4), bool)).any()
        d = distance_transform(block(5, 5, 1, 1, 4, 4))
        ring = block(5, 5, 1, 1, 4, 4) & ~block(5, 5, 2, 2, 3, 3)
        assert np.all(d[ring] == 1.0)
        assert d[2, 2] == 2.0
        single = np.zeros((5, 5), bool)
        single[2, 3] = True
        assert distance_transform(single)[2, 3] == 1.0

    def test_border_counts_as_background(self):
        d = distance_transform(np.ones((1, 5), bool))
        assert np.all(d == 1.0)
        d = distance_transform(np.ones((5, 5), bool))
        assert d[2, 2] == 3.0

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        m = random_mask(rng, 32, 32)
        assert np.array_equal(distance_transform(m), brute_edt(m))

    @pytest.mark.parametrize("seed", range(10))
    def test_vectorised_oracle_agrees(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = random_mask(rng, int(rng.integers(5, 30)), int(rng.integers(5, 30)))
        assert np.array_equal(exhaustive_edt(m), brute_edt(m))


class TestComponents:
    def test_diagonal(self):
        m = np.zeros((3, 3), bool)
        m[0, 0] = m[1, 1] = True
        assert len(connected_components(m, 4)[1]) == 2
        assert len(connected_components(m, 8)[1]) == 1

    def test_empty_and_full(self):
        assert connected_components(np.zeros((3, 4), bool))[1] == []
        labels, areas = connected_components(np.ones((3, 4), bool))
        assert areas == [12] and labels.max() == 1

    @pytest.mark.parametrize("connectivity", [4, 8])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_flood_fill(self, seed, connectivity):
        m = np.random.default_rng(seed).random((20, 20)) < 0.4
        labels, areas = connected_components(m, connectivity)
        expected = brute_components(m, connectivity)
        assert len(areas) == len(expected)
        for lab, comp in enumerate(expected, start=1):
            got = {tuple(p) for p in np.argwhere(labels == lab)}
            assert got == comp
            assert areas[lab - 1] == len(comp)


class TestPostprocessPrimitives:
    def test_remove_small(self):
        # area 199 = 10x19 + 9 ; area 300 = 15x20
        a = block(40, 60, 0, 0, 10, 19)
        a[10, 0:9] = True
        b = block(40, 60, 20, 30, 35, 50)
        m = a | b
        assert a.sum() == 199 and b.sum() == 300
        out = remove_small_components(m, 200)
        assert np.array_equal(out, b)
        assert np.array_equal(remove_small_components(m, 0), m)
        assert not remove_small_components(np.zeros((5, 5), bool), 200).any()

    def test_fill_holes(self):
        donut = block(9, 9, 2, 2, 7, 7)
        donut[4, 4] = False
        assert np.array_equal(fill_small_holes(donut, 200), block(9, 9, 2, 2, 7, 7))
        big = block(30, 30, 2, 2, 28, 28)
        hole = block(30, 30, 3, 3, 13, 28)  # 10 x 25 = 250
        assert hole.sum() == 250
        ring = big & ~hole
        assert np.array_equal(fill_small_holes(ring, 200), ring)

    def test_border_background_never_filled(self):
        m = block(6, 6, 0, 1, 6, 6)  # leaves a 6-pixel strip on the border
        assert np.array_equal(fill_small_holes(m, 200), m)

    @given(masks)
    @settings(max_examples=50)
    def test_idempotent(self, m):
        once = remove_small_components(m, 5)
        assert np.array_equal(remove_small_components(once, 5), once)
        once = fill_small_holes(m, 5)
        assert np.array_equal(fill_small_holes(once, 5), once)


class TestBoundary:
    def test_examples(self):
        single = np.zeros((3, 3), bool)
        single[1, 1] = True
        assert np.array_equal(boundary(single), single)
        b = boundary(block(5, 5, 1, 1, 4, 4))
        assert b.sum() == 8 and not b[2, 2]
        assert not boundary(np.zeros((3, 3), bool)).any()

    @given(masks)
    def test_matches_brute_force(self, m):
        expected = np.zeros_like(m)
        for r, c in brute_boundary(m):
            expected[r, c] = True
        assert np.array_equal(boundary(m), expected)


def test_bounding_box():
    assert bounding_box(block(6, 6, 1, 2, 4, 5)) == Box2D(1, 2, 4, 5)
    assert bounding_box(np.zeros((3, 3), bool)) is None
    with pytest.raises(ValueError):
        Box2D(2, 0, 2, 3).validate(5, 5)
