import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satground.domain import TaskAnswer, byte_size, partition_image
from satground.preprocess import (DISCARD, DOWNSAMPLE, PRESERVE, WIRE_HEADER_BYTES,
                                  MultiScaleFilter, apply_filter, attention_mask,
                                  build_attention_map, classify_region, decode_filtered,
                                  downsample, encode_filtered, ideal_mask, random_mask,
                                  reconstruct, retained_mass, scaling_factor)


def test_classify_examples():
    assert classify_region(0.30, 0.35, 0.55).kind == DISCARD
    d = classify_region(0.45, 0.35, 0.55)
    assert d.kind == DOWNSAMPLE and d.factor == pytest.approx(2.0)
    assert classify_region(0.55, 0.35, 0.55).kind == PRESERVE
    assert classify_region(0.35, 0.35, 0.55).kind == DOWNSAMPLE


def test_factor_cap():
    d = classify_region(0.35 + 1e-9, 0.35, 0.55, max_factor=16)
    assert d.factor == 16


def test_alpha_must_be_below_beta():
    with pytest.raises(ValueError):
        classify_region(0.5, 0.6, 0.6)


def test_downsample_examples():
    block = np.random.default_rng(0).random((5, 7))
    np.testing.assert_array_equal(downsample(block, 1), block)
    np.testing.assert_array_equal(downsample(np.full((4, 4), 0.3), 2), np.full((2, 2), 0.3))
    np.testing.assert_array_equal(downsample(np.array([[0.0, 1.0], [0.0, 1.0]]), 2), [[0.5]])
    with pytest.raises(ValueError):
        downsample(block, 0.5)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), c=st.floats(1, 30), seed=st.integers(0, 999))
def test_downsample_shape_and_mean(h, w, c, seed):
    block = np.random.default_rng(seed).random((h, w))
    out = downsample(block, c)
    assert out.shape == (math.ceil(h / c), math.ceil(w / c))
    assert out.min() >= block.min() - 1e-12 and out.max() <= block.max() + 1e-12


def _grid3():
    img = np.random.default_rng(2).random((16, 48))
    return partition_image(img, 16, 16)


def test_three_region_example():
    grid = _grid3()
    fi = apply_filter(grid, build_attention_map([0.30, 0.45, 0.60]))
    assert [d.kind for d in fi.decisions] == [DISCARD, DOWNSAMPLE, PRESERVE]
    assert fi.regions[1].shape == (8, 8)
    assert fi.total_bytes.bytes == 4 + (8 * 8 + 4) + (16 * 16 + 4)
    assert fi.retained_attention_mass == pytest.approx((0.45 + 0.60) / 1.35)


def test_all_preserved_and_all_discarded():
    grid = _grid3()
    keep = apply_filter(grid, build_attention_map([0.9] * 3))
    assert keep.total_bytes == byte_size(grid)
    assert all(a is b for a, b in zip(keep.regions, grid.regions))
    drop = apply_filter(grid, build_attention_map([0.1] * 3))
    assert drop.total_bytes.bytes == 3 * 4


def test_count_mismatch():
    with pytest.raises(ValueError):
        apply_filter(_grid3(), build_attention_map([0.5, 0.5]))


def test_scaling_factor_properties():
    a, b = 0.35, 0.55
    assert scaling_factor(b, a, b) == 1.0
    ks = np.linspace(a + 1e-6, b, 500)
    cs = [scaling_factor(k, a, b) for k in ks]
    assert all(x > y for x, y in zip(cs, cs[1:]))


@settings(max_examples=60, deadline=None)
@given(scores=st.lists(st.floats(-1, 1), min_size=6, max_size=6), bump=st.floats(0, 1),
       idx=st.integers(0, 5))
def test_bytes_never_grow_and_fall_with_score(scores, bump, idx):
    grid = partition_image(np.random.default_rng(1).random((32, 48)), 16, 16)
    filt = MultiScaleFilter()
    a = filt.filter(grid, scores)
    assert a.total_bytes.bytes <= a.original_bytes.bytes
    higher = list(scores)
    higher[idx] += bump
    assert filt.filter(grid, higher).total_bytes.bytes >= a.total_bytes.bytes


def test_ideal_mask_examples():
    grid = partition_image(np.zeros((100, 100)), 10, 10)
    one = ideal_mask(grid, TaskAnswer.box(11, 11, 19, 19))
    assert sum(d.kept for d in one.decisions) == 1
    whole = ideal_mask(grid, TaskAnswer.box(0, 0, 100, 100))
    assert whole.discarded == 0
    four = ideal_mask(grid, TaskAnswer.box(15, 15, 25, 25))
    assert four.discarded == 96
    with pytest.raises(ValueError):
        ideal_mask(grid, TaskAnswer.label(3))


def test_ideal_mask_with_fraction_spares_target():
    grid = partition_image(np.zeros((100, 100)), 10, 10)
    box = TaskAnswer.box(15, 15, 25, 25)
    fi = ideal_mask(grid, box, 0.8, seed=3)
    assert fi.discarded == 80
    assert all(fi.decisions[i].kept for i in (11, 12, 21, 22))


def test_random_mask_counts():
    grid = partition_image(np.zeros((100, 100)), 10, 10)
    assert random_mask(grid, 0.0).discarded == 0
    assert random_mask(grid, 1.0).discarded == 100
    assert random_mask(grid, 0.4, seed=9).discarded == 40
    a = random_mask(grid, 0.4, seed=9)
    assert a.decisions == random_mask(grid, 0.4, seed=9).decisions


def test_attention_mask_drops_lowest():
    grid = _grid3()
    fi = attention_mask(grid, [0.5, 0.1, 0.3], 2 / 3)
    assert [d.kept for d in fi.decisions] == [True, False, False]


def test_retained_mass_ignores_negative_scores():
    assert retained_mass([0.5, -0.2, 0.5], [True, True, False]) == pytest.approx(0.5)
    assert retained_mass([0.0, 0.0], [True, False]) == 0.5


def test_estimator_transform():
    filt = MultiScaleFilter(0.35, 0.55, max_downsample_factor=8)
    out = filt.fit().transform([[0.1, 0.45, 0.9]])
    np.testing.assert_allclose(out, [[0.0, 2.0, 1.0]])
    assert filt.get_params()["alpha"] == 0.35
    with pytest.raises(ValueError):
        MultiScaleFilter(0.6, 0.5).fit()


def test_default_cap_keeps_one_pixel():
    grid = _grid3()
    fi = MultiScaleFilter().filter(grid, [0.3500001, 0.9, 0.9])
    assert fi.regions[0].shape == (1, 1)


def test_wire_format_round_trip():
    grid = _grid3()
    fi = apply_filter(grid, build_attention_map([0.30, 0.45, 0.60]))
    blob = encode_filtered(fi)
    assert len(blob) == byte_size(list(fi.regions), header_bytes=WIRE_HEADER_BYTES).bytes
    regions = decode_filtered(blob, (16, 16, 3))
    assert regions[0] is None
    assert regions[1].shape == (8, 8)
    np.testing.assert_allclose(regions[2], grid.regions[2], atol=0.5 / 255 + 1e-12)
    image = reconstruct(grid, regions)
    assert image.shape == (16, 48)
    assert np.all(image[:, :16] == 0)
