import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepslice.errors import (
    BadSparsity,
    EvenSlabWidth,
    InconsistentDims,
    IndexOutOfRange,
    MissingIndex,
    NonDivisibleExtent,
    TooFewSlices,
)
from deepslice.volgeom import (
    Axis,
    SliceRef,
    Volume,
    assemble_from_slices,
    downsample_axial,
    extract_slab,
    extract_slice,
    insert_slice,
    linear_interp_axial,
    slab_indices,
)

from conftest import random_volume


def ramp_z(shape, denom):
    z = np.arange(shape[2], dtype=np.float32) / denom
    return Volume(np.broadcast_to(z, shape).copy())


def test_volume_rejects_out_of_range():
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), 1.5, np.float32))
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), np.nan, np.float32))
    with pytest.raises(InconsistentDims):
        Volume(np.zeros((2, 2), np.float32))


def test_volume_does_not_freeze_caller_array():
    arr = np.zeros((2, 2, 2), np.float32)
    v = Volume(arr)
    arr[0, 0, 0] = 0.5
    assert not v.data.flags.writeable


def test_linear_storage_is_x_fastest(rng):
    v = random_volume(rng, (3, 4, 5))
    lin = v.linear()
    assert lin[1] == v.data[1, 0, 0]
    assert lin[3] == v.data[0, 1, 0]
    assert lin[12] == v.data[0, 0, 1]
    assert Volume.from_linear(lin, v.dims) == v


def test_axis_parse():
    assert Axis.parse("sagittal") is Axis.SAGITTAL
    assert Axis.parse("y") is Axis.CORONAL
    assert Axis.parse(2) is Axis.AXIAL


def test_downsample_ramp():
    v = ramp_z((2, 2, 8), 7)
    d = downsample_axial(v, 4)
    assert d.dims == (2, 2, 2)
    np.testing.assert_array_equal(d.data[..., 0], 0.0)
    np.testing.assert_array_equal(d.data[..., 1], np.float32(4 / 7))


def test_downsample_errors():
    v = ramp_z((2, 2, 8), 7)
    with pytest.raises(BadSparsity):
        downsample_axial(v, 1)
    with pytest.raises(NonDivisibleExtent):
        downsample_axial(v, 3)


def test_downsample_matches_loop_oracle(rng):
    v = random_volume(rng)
    d = downsample_axial(v, 2)
    for x in range(8):
        for y in range(8):
            for z in range(4):
                assert d.data[x, y, z] == v.data[x, y, 2 * z]
    np.testing.assert_array_equal(d.data[:, :, 1], v.data[:, :, 2])


def test_downsample_allow_tail(rng):
    v = random_volume(rng, (4, 4, 13))
    d = downsample_axial(v, 4, allow_tail=True)
    np.testing.assert_array_equal(d.data, v.data[:, :, [0, 4, 8, 12]])


def test_extract_slice_shapes_and_values(rng):
    v = random_volume(rng, (3, 4, 5))
    assert extract_slice(v, Axis.SAGITTAL, 2).data.shape == (4, 5)
    assert extract_slice(v, Axis.CORONAL, 0).data.shape == (3, 5)
    assert extract_slice(v, Axis.AXIAL, 4).data.shape == (3, 4)
    np.testing.assert_array_equal(extract_slice(v, "coronal", 3).data, v.data[:, 3, :])
    with pytest.raises(IndexOutOfRange):
        extract_slice(v, Axis.AXIAL, 5)


def test_extract_slice_constant_plane():
    data = np.full((4, 4, 3), 0.5, np.float32)
    data[:, :, 0] = 0.25
    sl = extract_slice(Volume(data), Axis.AXIAL, 0)
    np.testing.assert_array_equal(sl.data, 0.25)


@pytest.mark.parametrize("axis", list(Axis))
def test_extract_insert_roundtrip(rng, axis):
    v = random_volume(rng, (3, 4, 5))
    for i in range(v.extent(axis)):
        assert insert_slice(v, extract_slice(v, axis, i)) == v


def test_slab_indices_border_rules():
    assert slab_indices(0, 3, 10) == [0, 0, 1]
    assert slab_indices(5, 3, 10) == [4, 5, 6]
    assert slab_indices(9, 5, 10) == [7, 8, 9, 9, 9]
    with pytest.raises(EvenSlabWidth):
        slab_indices(3, 4, 10)
    with pytest.raises(IndexOutOfRange):
        slab_indices(10, 3, 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 5), st.data())
def test_slab_clamp_property(extent, h, data):
    s = 2 * h + 1
    c = data.draw(st.integers(0, extent - 1))
    idx = slab_indices(c, s, extent)
    assert len(idx) == s
    assert all(0 <= i < extent for i in idx)
    assert idx == [min(max(c + l, 0), extent - 1) for l in range(-h, h + 1)]


def test_extract_slab_planes(rng):
    v = random_volume(rng, (6, 5, 4))
    slab = extract_slab(v, Axis.SAGITTAL, 0, 3)
    assert slab.indices == (0, 0, 1)
    np.testing.assert_array_equal(slab.stack()[2], v.data[1])
    assert slab.stack().shape == (3, 5, 4)


@pytest.mark.parametrize("axis", list(Axis))
def test_assemble_inverse_of_extract(rng, axis):
    v = random_volume(rng, (3, 4, 5))
    slices = [extract_slice(v, axis, i) for i in range(v.extent(axis))]
    assert assemble_from_slices(slices[::-1], axis) == v


def test_assemble_errors(rng):
    v = random_volume(rng, (3, 4, 5))
    sl = [extract_slice(v, Axis.AXIAL, i) for i in range(5)]
    with pytest.raises(MissingIndex):
        assemble_from_slices(sl[:-1] + [sl[0]], Axis.AXIAL)
    bad = SliceRef(Axis.AXIAL, 4, np.zeros((2, 2), np.float32))
    with pytest.raises(InconsistentDims):
        assemble_from_slices(sl[:-1] + [bad], Axis.AXIAL)
    with pytest.raises(InconsistentDims):
        assemble_from_slices([extract_slice(v, Axis.SAGITTAL, 0)], Axis.AXIAL)


def test_assemble_constant_planes_linear_in_z():
    planes = [SliceRef(Axis.AXIAL, i, np.full((2, 3), 0.25 * i, np.float32)) for i in range(4)]
    v = assemble_from_slices(planes, Axis.AXIAL)
    assert v.dims == (2, 3, 4)
    np.testing.assert_array_equal(v.data[1, 2], [0.0, 0.25, 0.5, 0.75])


def test_linear_interp_endpoints():
    data = np.zeros((2, 2, 2), np.float32)
    data[..., 1] = 1.0
    out = linear_interp_axial(Volume(data), 4)
    assert out.nz == 5
    np.testing.assert_allclose(out.data[0, 0], [0, 0.25, 0.5, 0.75, 1.0])


@pytest.mark.parametrize("k", [2, 3, 4, 8])
def test_linear_interp_exact_on_linear_field(k):
    n = 4
    full = ramp_z((3, 3, (n - 1) * k + 1), (n - 1) * k)
    down = downsample_axial(full, k, allow_tail=True)
    out = linear_interp_axial(down, k)
    assert np.max(np.abs(out.data - full.data)) < 1e-6


def test_linear_interp_convex_oracle(rng):
    a = rng.random((4, 4)).astype(np.float32)
    b = rng.random((4, 4)).astype(np.float32)
    out = linear_interp_axial(Volume(np.stack([a, b], -1)), 8)
    expect = (5 * a.astype(np.float64) + 3 * b) / 8
    np.testing.assert_allclose(out.data[:, :, 3], expect, atol=1e-7)


def test_linear_interp_consistency_and_purity(rng):
    d = random_volume(rng, (4, 4, 5))
    before = d.data.copy()
    out = linear_interp_axial(d, 4)
    np.testing.assert_array_equal(downsample_axial(out, 4, allow_tail=True).data, d.data)
    np.testing.assert_array_equal(d.data, before)


def test_linear_interp_too_few():
    with pytest.raises(TooFewSlices):
        linear_interp_axial(Volume(np.zeros((2, 2, 1), np.float32)), 4)
