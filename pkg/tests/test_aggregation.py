import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview import (
    AggregationSpec,
    DataValidationError,
    NumericalError,
    PoolingKind,
    PoolingSpec,
    aggregate,
    sweep_alpha,
)
from crossview.aggregation import grid_boundaries

from conftest import load_golden, make_map

AVG = PoolingSpec(kind=PoolingKind.AVG)


def random_map(seed, min_side=3, max_side=8, min_channels=1):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(min_channels, 5))
    h = int(rng.integers(min_side, max_side + 1))
    w = int(rng.integers(min_side, max_side + 1))
    return make_map(rng.uniform(0.0, 5.0, size=(c, h, w)))


def test_single_scale_equals_normalized_global_pool():
    fmap = random_map(3)
    spec = AggregationSpec(pooling=AVG, scales=(1,), alpha=4.2)
    desc = aggregate(fmap, spec)
    pooled = fmap.data.astype(np.float64).mean(axis=(1, 2))
    np.testing.assert_allclose(desc.values, pooled / np.linalg.norm(pooled), rtol=1e-12)


def test_constant_map_alpha_independent():
    fmap = make_map(np.full((3, 4, 4), 2.0))
    spec_a = AggregationSpec(pooling=AVG, scales=(1, 2), alpha=1.0)
    spec_b = AggregationSpec(pooling=AVG, scales=(1, 2), alpha=6.0)
    np.testing.assert_allclose(
        aggregate(fmap, spec_a).values, aggregate(fmap, spec_b).values, rtol=1e-12
    )
    expected = np.full(3, 1.0 / np.sqrt(3.0))
    np.testing.assert_allclose(aggregate(fmap, spec_a).values, expected, rtol=1e-12)


def test_hand_computed_single_channel():
    # 2x2 map [[1,2],[3,4]], scales [1,2], alpha=1, avg pooling.
    # scale 1: normalize([2.5]) = [1]; scale 2: regions each normalize to
    # [1], sum [4], weight 1/2 -> [2]; total [3] -> normalized [1].
    fmap = make_map([[[1.0, 2.0], [3.0, 4.0]]])
    spec = AggregationSpec(pooling=AVG, scales=(1, 2), alpha=1.0)
    desc, sums = aggregate(fmap, spec, debug=True)
    np.testing.assert_allclose(sums[1], [1.0], rtol=1e-12)
    np.testing.assert_allclose(sums[2], [4.0], rtol=1e-12)
    np.testing.assert_allclose(desc.values, [1.0], rtol=1e-12)


def test_multichannel_golden_fixture():
    golden = load_golden("aggregation_golden.json")
    fmap = make_map(np.asarray(golden["grid"], dtype=np.float32))
    for case in golden["cases"]:
        kind = PoolingKind(case["pooling"])
        spec = AggregationSpec(
            pooling=PoolingSpec(kind=kind, p=case["p"]),
            scales=tuple(case["scales"]),
            alpha=case["alpha"],
            region_norm=case["region_norm"],
        )
        desc = aggregate(fmap, spec)
        np.testing.assert_allclose(
            desc.values, case["expected"], atol=1e-7, err_msg=case["name"]
        )


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_output_unit_norm(seed):
    fmap = random_map(seed)
    desc = aggregate(fmap, AggregationSpec())
    assert abs(np.linalg.norm(desc.values) - 1.0) < 1e-6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_alpha_limit_matches_single_scale(seed):
    # 1/n^1000 suppresses every n >= 2 below float noise.
    fmap = random_map(seed)
    wide = AggregationSpec(pooling=AVG, scales=(1, 2, 3), alpha=1000.0)
    narrow = AggregationSpec(pooling=AVG, scales=(1,), alpha=0.0)
    np.testing.assert_allclose(
        aggregate(fmap, wide).values, aggregate(fmap, narrow).values, atol=1e-6
    )


@settings(max_examples=60, deadline=None)
@given(
    extent=st.integers(1, 32),
    n=st.integers(1, 8),
)
def test_partition_covers_every_patch_once(extent, n):
    if n > extent:
        return
    bounds = grid_boundaries(extent, n)
    assert bounds[0] == 0 and bounds[-1] == extent
    sizes = np.diff(bounds)
    assert np.all(sizes >= 1)
    assert sizes.sum() == extent


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_channel_permutation_equivariance(seed):
    fmap = random_map(seed)
    rng = np.random.default_rng(seed + 7)
    perm = rng.permutation(fmap.channels)
    permuted = make_map(fmap.data[perm])
    spec = AggregationSpec()
    base = aggregate(fmap, spec).values
    out = aggregate(permuted, spec).values
    np.testing.assert_allclose(out, base[perm], rtol=1e-10, atol=1e-12)


def test_scale_exceeding_dims_rejected():
    fmap = make_map(np.ones((1, 2, 2)))
    with pytest.raises(DataValidationError, match="exceeds spatial dims"):
        aggregate(fmap, AggregationSpec(scales=(1, 3)))


def test_zero_map_cannot_normalize():
    fmap = make_map(np.zeros((2, 3, 3)))
    with pytest.raises(NumericalError, match="all-zero aggregate"):
        aggregate(fmap, AggregationSpec(pooling=AVG))


def test_region_norm_flag_changes_result():
    fmap = random_map(11, min_channels=2)
    on = AggregationSpec(pooling=AVG, region_norm=True)
    off = AggregationSpec(pooling=AVG, region_norm=False)
    assert not np.allclose(aggregate(fmap, on).values, aggregate(fmap, off).values)


def test_cls_pooling_requires_1x1():
    spec = AggregationSpec(pooling=PoolingSpec(kind=PoolingKind.CLS), scales=(1,))
    vec = np.array([3.0, 4.0], dtype=np.float32)
    desc = aggregate(make_map(vec.reshape(2, 1, 1)), spec)
    np.testing.assert_allclose(desc.values, [0.6, 0.8], rtol=1e-12)
    with pytest.raises(DataValidationError, match="H=W=1"):
        aggregate(make_map(np.ones((2, 2, 2))), spec)


def test_invalid_specs():
    with pytest.raises(DataValidationError):
        AggregationSpec(scales=())
    with pytest.raises(DataValidationError):
        AggregationSpec(scales=(2, 1))
    with pytest.raises(DataValidationError):
        AggregationSpec(scales=(1, 1))
    with pytest.raises(DataValidationError):
        AggregationSpec(alpha=-1.0)


def test_sweep_alpha_matches_single_aggregates():
    maps = [random_map(s) for s in range(5)]
    spec = AggregationSpec(pooling=AVG)
    swept = sweep_alpha(maps, spec, [6.0])
    for got, fmap in zip(swept[6.0], maps):
        want = aggregate(fmap, AggregationSpec(pooling=AVG, alpha=6.0))
        np.testing.assert_allclose(got.values, want.values, rtol=1e-12)
        assert got.image_id == want.image_id


def test_sweep_alpha_constant_map_identical_across_alphas():
    maps = [make_map(np.full((2, 3, 3), 1.5))]
    swept = sweep_alpha(maps, AggregationSpec(pooling=AVG), [1.0, 6.0])
    np.testing.assert_allclose(swept[1.0][0].values, swept[6.0][0].values, rtol=1e-12)


def test_sweep_alpha_limit_suppresses_fine_scales():
    fmap = random_map(23, min_channels=2)
    swept = sweep_alpha([fmap], AggregationSpec(pooling=AVG), [0.0, 1000.0])
    only_global = aggregate(fmap, AggregationSpec(pooling=AVG, scales=(1,)))
    np.testing.assert_allclose(swept[1000.0][0].values, only_global.values, atol=1e-6)
    assert not np.allclose(swept[0.0][0].values, only_global.values, atol=1e-6)


def test_sweep_alpha_empty_rejected():
    with pytest.raises(DataValidationError):
        sweep_alpha([], AggregationSpec(), [])
