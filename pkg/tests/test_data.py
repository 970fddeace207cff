import warnings

import numpy as np
import pytest
from PIL import Image

from postdae.data import (
    JSRT_MAX,
    DatasetManifest,
    ManifestEntry,
    SplitSpec,
    decode_jsrt_raw,
    encode_jsrt_raw,
    generate_synthetic_dataset,
    import_jsrt,
    load_jsrt_image,
    resize_to,
    split,
    synthetic_masks,
    synthetic_samples,
)
from postdae.errors import (
    BadFileSize,
    EmptyManifest,
    InvalidConfig,
    InvalidSpec,
    NotSquare,
    ValueOutOfRange,
)
from postdae.masks import count_components

JSRT_BYTES = 2048 * 2048 * 2


def test_jsrt_full_size_zero_image_inverts_to_white(tmp_path):
    f = tmp_path / "JPCLN001.IMG"
    f.write_bytes(bytes(JSRT_BYTES))
    assert f.stat().st_size == 8_388_608
    img = load_jsrt_image(f)
    assert img.shape == (2048, 2048) and img.dtype == np.float64
    assert np.all(img == 1.0)
    assert np.all(load_jsrt_image(f, invert=False) == 0.0)


def test_jsrt_big_endian_decoding():
    values = np.arange(16, dtype=np.uint16).reshape(4, 4) * 200
    raw = encode_jsrt_raw(values)
    assert raw[:4] == b"\x00\x00\x00\xc8"
    np.testing.assert_array_equal(decode_jsrt_raw(raw, size=4), values)


def test_jsrt_truncated_file_rejected(tmp_path):
    f = tmp_path / "short.IMG"
    f.write_bytes(bytes(JSRT_BYTES - 2))
    with pytest.raises(BadFileSize):
        load_jsrt_image(f)


def test_jsrt_out_of_range_values():
    values = np.zeros((4, 4), np.uint16)
    values[1, 2] = 5000
    raw = encode_jsrt_raw(values)
    with pytest.raises(ValueOutOfRange):
        decode_jsrt_raw(raw, size=4)
    with pytest.warns(UserWarning):
        out = decode_jsrt_raw(raw, size=4, clamp=True)
    assert out.max() == JSRT_MAX


def test_resize_halving_doubles_spacing():
    img = np.random.default_rng(0).random((64, 64))
    out, spacing = resize_to(img, 32, 0.175)
    assert out.shape == (32, 32) and spacing == pytest.approx(0.35)
    assert out[0, 0] == pytest.approx(img[:2, :2].mean())
    mask = img > 0.5
    mout, mspacing = resize_to(mask, 32, 0.175)
    assert mout.dtype == bool and mspacing == pytest.approx(0.35)
    up, _ = resize_to(mask, 96)
    assert up.dtype == bool and set(np.unique(up)) <= {False, True}
    with pytest.raises(NotSquare):
        resize_to(np.zeros((4, 5)), 2)


def test_split_sizes_and_partition():
    entries = [ManifestEntry(f"id{i:03d}", f"i{i}.png", f"m{i}.png") for i in range(247)]
    manifest = DatasetManifest(entries, 0.35)
    train, val, test = split(manifest, SplitSpec(0.7, 0.1, 0.2, seed=0))
    assert (len(train), len(val), len(test)) == (174, 24, 49)
    ids = train.ids + val.ids + test.ids
    assert sorted(ids) == manifest.ids and len(set(ids)) == 247
    again = split(manifest, SplitSpec(seed=0))
    assert again[2].ids == test.ids
    assert split(manifest, SplitSpec(seed=1))[2].ids != test.ids


def test_split_errors():
    with pytest.raises(EmptyManifest):
        split(DatasetManifest([], 1.0))
    with pytest.raises(InvalidConfig):
        SplitSpec(0.5, 0.5, 0.5)
    with pytest.raises(InvalidConfig):
        DatasetManifest([ManifestEntry("a", "x", "y"), ManifestEntry("a", "x", "y")], 1.0)
    with pytest.raises(InvalidConfig):
        DatasetManifest([], 0.0)


def test_synthetic_masks_have_two_lungs():
    for m in synthetic_masks(500, 128, seed=0):
        assert m.shape == (128, 128)
        assert count_components(m) == 2
        assert 0.05 <= m.mean() <= 0.6


def test_synthetic_samples_deterministic():
    a = list(synthetic_samples(3, 64, seed=5))
    b = list(synthetic_samples(3, 64, seed=5))
    for (ia, xa, ma), (ib, xb, mb) in zip(a, b):
        assert ia == ib
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ma, mb)
    assert a[0][0] == "syn00000"
    assert 0 <= a[0][1].min() and a[0][1].max() <= 1
    np.testing.assert_array_equal(a[1][2], synthetic_masks(2, 64, seed=5)[1])
    with pytest.raises(InvalidSpec):
        next(synthetic_samples(1, 100))


def test_generated_dataset_manifest_round_trip(tmp_path):
    manifest = generate_synthetic_dataset(tmp_path / "ds", 4, 32, seed=2, spacing=0.5)
    back = DatasetManifest.load(tmp_path / "ds" / "manifest.json")
    assert back == manifest and back.source == "synthetic"
    entry = back.entries[1]
    _, image, mask = list(synthetic_samples(2, 32, seed=2))[1]
    np.testing.assert_array_equal(back.load_mask(entry), mask)
    np.testing.assert_allclose(back.load_image(entry), image, atol=0.5 / 255 + 1e-12)
    (tmp_path / "ds" / entry.mask_path).unlink()
    with pytest.raises(FileNotFoundError):
        DatasetManifest.load(tmp_path / "ds" / "manifest.json")


def test_import_jsrt_merges_lungs(tmp_path):
    images = tmp_path / "img"
    masks = tmp_path / "msk"
    images.mkdir()
    (masks / "left").mkdir(parents=True)
    (masks / "right").mkdir()
    (images / "JPCLN001.IMG").write_bytes(bytes(JSRT_BYTES))
    (images / "JPCLN002.IMG").write_bytes(bytes(JSRT_BYTES))  # no mask: skipped
    left = np.zeros((1024, 1024), np.uint8)
    left[200:800, 100:400] = 255
    right = np.zeros((1024, 1024), np.uint8)
    right[200:800, 600:900] = 255
    Image.fromarray(left).save(masks / "left" / "JPCLN001.gif")
    Image.fromarray(right).save(masks / "right" / "JPCLN001.gif")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        manifest = import_jsrt(images, masks, tmp_path / "out", size=256)
    assert manifest.ids == ["JPCLN001"]
    assert manifest.spacing == pytest.approx(0.175 * 2048 / 256)
    back = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    m = back.load_mask(back.entries[0])
    assert m.shape == (256, 256) and count_components(m) == 2
    assert back.load_image(back.entries[0]).shape == (2048, 2048)
