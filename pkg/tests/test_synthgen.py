from collections import Counter

import numpy as np
import pytest
from scipy import ndimage

from deal_lab.synthgen import (
    ConfigError,
    DatasetManifest,
    ImageClass,
    fold_ids,
    generate_dataset,
    generate_sample,
    load_dataset,
    regenerate,
    save_dataset,
    split_folds,
)


@pytest.fixture(scope="module")
def default_counts_manifest():
    # fold splitting only needs the manifest; skip rendering 1812 images
    return DatasetManifest(seed=7, image_size=64, counts={"NORMAL": 600, "VASCULAR": 605, "INFLAMMATORY": 607})


def test_default_class_counts():
    ds = generate_dataset(64, (600, 605, 607), seed=7)
    assert len(ds) == 1812
    assert sum(s.oracle_mask.any() for s in ds.samples) == 605


def test_single_normal_sample_has_empty_mask():
    ds = generate_dataset(64, (1, 0, 0), seed=0)
    assert len(ds) == 1
    assert not ds[0].oracle_mask.any()


def test_same_seed_and_id_is_bit_identical():
    a = generate_sample(11, ImageClass.VASCULAR, 64, seed=5)
    b = generate_sample(11, ImageClass.VASCULAR, 64, seed=5)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.oracle_mask.tobytes() == b.oracle_mask.tobytes()
    c = generate_sample(11, ImageClass.VASCULAR, 64, seed=6)
    assert a.image.tobytes() != c.image.tobytes()


@pytest.fixture(scope="module")
def small():
    return generate_dataset(64, (20, 40, 20), seed=3)


def test_sample_invariants(small):
    for s in small.samples:
        assert s.image.shape == (64, 64, 3)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.oracle_mask.any() == (s.class_label == ImageClass.VASCULAR)


def test_blob_area_and_connectivity(small):
    for s in small.samples:
        if s.class_label != ImageClass.VASCULAR:
            continue
        frac = s.oracle_mask.mean()
        assert 0.01 <= frac <= 0.40
        # at most 3 blobs x 2 ellipses; each ellipse is convex so components <= ellipses
        _, n = ndimage.label(s.oracle_mask)
        assert 1 <= n <= 6


def test_blobs_are_darker_red_than_mucosa(small):
    for s in small.samples:
        if s.class_label != ImageClass.VASCULAR:
            continue
        inside = s.image[s.oracle_mask].mean(axis=0)
        outside = s.image[~s.oracle_mask].mean(axis=0)
        assert inside[1] < outside[1]


def test_regenerate_from_manifest_is_bit_exact(small):
    again = regenerate(DatasetManifest.from_json(small.manifest.to_json()))
    for a, b in zip(small.samples, again.samples):
        assert a.image.tobytes() == b.image.tobytes()
        assert a.oracle_mask.tobytes() == b.oracle_mask.tobytes()


def test_disk_round_trip_is_lossless(small, tmp_path):
    save_dataset(small, tmp_path)
    back = load_dataset(tmp_path)
    assert back.manifest.folds == small.manifest.folds
    for a, b in zip(small.samples, back.samples):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.oracle_mask, b.oracle_mask)
        assert a.class_label == b.class_label
    assert (tmp_path / "images" / "00000.ppm").read_bytes()[:2] == b"P6"
    assert (tmp_path / "masks" / "00000.pgm").read_bytes()[:2] == b"P5"


@pytest.mark.parametrize("size,counts", [(16, (1, 1, 1)), (64, (-1, 2, 2)), (64, (0, 0, 0))])
def test_invalid_config(size, counts):
    with pytest.raises(ConfigError):
        generate_dataset(size, counts, seed=0)


def test_fold_sizes_1812_k5(default_counts_manifest):
    folds = split_folds(default_counts_manifest, 5, seed=1)
    # integer-division oracle: 1812 = 5*362 + 2
    q, r = divmod(1812, 5)
    want = sorted([q + 1] * r + [q] * (5 - r))
    assert sorted(Counter(folds.values()).values()) == want == [362, 362, 362, 363, 363]


def test_fold_stratification(default_counts_manifest):
    m = default_counts_manifest
    folds = split_folds(m, 5, seed=1)
    for cls in ImageClass:
        n = m.counts[cls.name]
        per_fold = Counter(folds[i] for i in folds if m.class_of(i) == cls)
        for f in range(5):
            assert abs(per_fold[f] - n / 5) <= 1


def test_folds_partition_and_determinism(default_counts_manifest):
    a = split_folds(default_counts_manifest, 5, seed=9)
    assert sorted(a) == list(range(1812))
    assert a == split_folds(default_counts_manifest, 5, seed=9)
    train, test = fold_ids(DatasetManifest(7, 64, default_counts_manifest.counts, a), 2)
    assert len(set(train) & set(test)) == 0 and len(train) + len(test) == 1812


def test_leave_one_out():
    m = DatasetManifest(seed=0, image_size=64, counts={"NORMAL": 2, "VASCULAR": 3, "INFLAMMATORY": 2})
    folds = split_folds(m, 7, seed=0)
    assert sorted(folds.values()) == list(range(7))


def test_bad_k():
    m = DatasetManifest(seed=0, image_size=64, counts={"NORMAL": 2, "VASCULAR": 1, "INFLAMMATORY": 0})
    with pytest.raises(ConfigError):
        split_folds(m, 4, seed=0)
    with pytest.raises(ConfigError):
        split_folds(m, 1, seed=0)
