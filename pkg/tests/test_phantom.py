import numpy as np
import pytest

from deepslice.errors import InvalidSpec
from deepslice.phantom import (
    LabelVolume,
    PhantomSpec,
    generate,
    make_dataset,
    noiseless,
    segment_by_bands,
    split_seeds,
)
from deepslice.volgeom import Volume

SMALL = (32, 32, 32)


def test_generate_deterministic():
    spec = PhantomSpec(seed=4, dims=SMALL)
    v1, l1 = generate(spec)
    v2, l2 = generate(spec)
    assert v1 == v2 and l1 == l2


def test_noiseless_values_are_band_centres():
    spec = noiseless(PhantomSpec(seed=2, dims=SMALL))
    vol, lab = generate(spec)
    centres = spec.centers.astype(np.float32)
    np.testing.assert_array_equal(vol.data, centres[lab.labels])


def test_segmentation_inverts_noiseless_construction():
    for seed in range(3):
        spec = noiseless(PhantomSpec(seed=seed, dims=SMALL))
        vol, lab = generate(spec)
        assert segment_by_bands(vol, spec) == lab


def test_tie_goes_to_lower_class():
    spec = PhantomSpec(bands=((0.0, 0.25), (0.5, 0.75), (0.875, 1.0)))
    # centres 0.125 and 0.625; 0.375 is exactly between them and inside no band
    vol = Volume(np.full((1, 1, 1), 0.375, np.float32))
    assert segment_by_bands(vol, spec).labels[0, 0, 0] == 0


def test_in_band_value_beats_nearest_centre():
    spec = PhantomSpec(bands=((0.0, 0.1), (0.15, 0.9), (0.95, 1.0)), noise_sigma=0.01)
    # 0.16 is nearer centre 0.05 than centre 0.525 but lies inside band 1
    vol = Volume(np.full((1, 1, 1), 0.16, np.float32))
    assert segment_by_bands(vol, spec).labels[0, 0, 0] == 1


def test_noisy_segmentation_agreement():
    vol, lab = generate(PhantomSpec(seed=9))
    agree = np.mean(segment_by_bands(vol, PhantomSpec(seed=9)).labels == lab.labels)
    assert agree > 0.95


def test_class_two_fraction_over_seeds():
    fracs = [np.mean(generate(PhantomSpec(seed=s))[1].labels == 2) for s in range(20)]
    assert all(0.02 < f < 0.40 for f in fracs), fracs


def test_all_classes_present_and_values_in_range():
    vol, lab = generate(PhantomSpec(seed=1, dims=SMALL))
    assert set(np.unique(lab.labels)) == {0, 1, 2}
    assert vol.data.min() >= 0 and vol.data.max() <= 1


def test_analytic_consistency_across_resolutions():
    fine_spec = noiseless(PhantomSpec(seed=5, dims=(64, 64, 64)))
    coarse_spec = noiseless(PhantomSpec(seed=5, dims=(32, 32, 32)))
    fine, fl = generate(fine_spec)
    coarse, cl = generate(coarse_spec)
    assert np.max(np.abs(fine.data[::2, ::2, ::2] - coarse.data)) < 1e-6
    np.testing.assert_array_equal(fl.labels[::2, ::2, ::2], cl.labels)


def test_dataset_distinct_and_seeded():
    data = make_dataset(3, 20, SMALL)
    assert len(data) == 3
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.mean(data[i][0].data != data[j][0].data) > 0.01
    assert generate(PhantomSpec(seed=21, dims=SMALL))[0] == data[1][0]


def test_split_seeds_disjoint():
    s = split_seeds(100, 16, 2, 6)
    assert list(s["train"]) == list(range(100, 116))
    sets = [set(r) for r in s.values()]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])


@pytest.mark.parametrize(
    "kw",
    [
        {"bands": ((0.0, 0.1), (0.12, 0.5), (0.7, 0.9))},
        {"noise_sigma": 0.2},
        {"shells": 4},
        {"dims": (0, 4, 4)},
        {"deformation": 0.7},
    ],
)
def test_invalid_specs(kw):
    with pytest.raises(InvalidSpec):
        PhantomSpec(**kw)


def test_spec_dict_roundtrip():
    spec = PhantomSpec(seed=3, dims=(16, 24, 32), noise_sigma=0.01)
    assert PhantomSpec.from_dict(spec.to_dict()) == spec


def test_label_volume_validation():
    with pytest.raises(InvalidSpec):
        LabelVolume(np.full((2, 2, 2), 3, np.uint8))
