import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from PIL import Image

from mtx import data, mdan, synthetic
from mtx.data import CorpusSpec


def _write(path, h, w, seed=0):
    arr = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)


def test_ingest_resizes_long_side(tmp_path):
    _write(tmp_path / "a.png", 512, 768)
    _write(tmp_path / "b.png", 50, 100)
    imgs = data.ingest(CorpusSpec(photo_dir=str(tmp_path)))
    assert [tuple(i.shape) for i in imgs] == [(3, 256, 384), (3, 192, 384)]
    assert all(0 <= float(i.min()) and float(i.max()) <= 255 for i in imgs)


def test_ingest_skips_garbage(tmp_path, caplog):
    _write(tmp_path / "a.png", 40, 40)
    (tmp_path / "notes.txt").write_text("not an image")
    assert len(data.ingest(CorpusSpec(photo_dir=str(tmp_path), max_dim=128))) == 1
    assert "skipping" in caplog.text


def test_ingest_errors(tmp_path):
    with pytest.raises(ValueError):
        data.ingest(CorpusSpec(photo_dir=str(tmp_path)))
    (tmp_path / "x.jpg").write_bytes(b"\x00" * 10)
    with pytest.raises(ValueError):
        data.ingest(CorpusSpec(photo_dir=str(tmp_path)))
    with pytest.raises(NotADirectoryError):
        data.ingest(CorpusSpec(photo_dir=str(tmp_path / "missing")))


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(crop_size=512, max_dim=384)
    with pytest.raises(ValueError):
        CorpusSpec(augment_copies=0)


def test_augment_default_grid():
    img = synthetic.blobs(96, 128)
    copies = data.augment(img, 9, seed=0)
    assert len(copies) == 9
    assert any(torch.equal(c, img) for c in copies)
    assert sorted(data.augment_params(9)) == sorted((r, s) for r in (-15.0, 0.0, 15.0) for s in (0.85, 1.0, 1.15))
    # rotated copies crop to the fill-free interior, so nothing is near black along the border
    rotated = data.transform(torch.full((3, 96, 128), 200.0), 15.0, 1.0)
    assert float(rotated.min()) > 190


def test_augment_single_copy_is_original():
    img = synthetic.blobs(64, 64)
    (only,) = data.augment(img, 1)
    assert torch.equal(only, img)
    assert torch.equal(data.transform(img, 0.0, 1.0), img)


def test_augment_more_copies_are_seeded():
    img = synthetic.blobs(64, 64)
    a, b = data.augment(img, 11, seed=4), data.augment(img, 11, seed=4)
    assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_inscribed_rectangle_contains_no_corners():
    # brute force: every pixel of the inscribed rectangle maps back inside the source
    import math

    h, w, deg = 90, 140, 15.0
    ih, iw = data.inscribed_size(h, w, deg)
    a = math.radians(deg)
    ys, xs = np.meshgrid(np.arange(ih) - (ih - 1) / 2, np.arange(iw) - (iw - 1) / 2, indexing="ij")
    sy = ys * math.cos(a) - xs * math.sin(a)
    sx = ys * math.sin(a) + xs * math.cos(a)
    assert np.all(np.abs(sy) <= (h - 1) / 2) and np.all(np.abs(sx) <= (w - 1) / 2)


def test_crop_examples():
    assert len(data.crop_regular(torch.zeros(3, 128, 128))) == 1
    img = torch.arange(384 * 256, dtype=torch.float32).reshape(1, 384, 256).expand(3, -1, -1)
    crops = data.crop_regular(img, 128, 128)
    assert len(crops) == 6
    assert torch.equal(crops[1], img[:, 0:128, 128:256])  # row-major
    with pytest.raises(ValueError):
        data.crop_regular(torch.zeros(3, 100, 100), 128)


@given(h=st.integers(1, 60), w=st.integers(1, 60), size=st.integers(1, 20), stride=st.integers(1, 12))
@settings(max_examples=200, deadline=None)
def test_crop_count_matches_enumeration(h, w, size, stride):
    if size > h or size > w:
        with pytest.raises(ValueError):
            data.crop_origins(h, w, size, stride)
        return
    brute = [(r, c) for r in range(h) for c in range(w)
             if r % stride == 0 and c % stride == 0 and r + size <= h and c + size <= w]
    assert data.crop_origins(h, w, size, stride) == brute
    assert data.crop_count(h, w, size, stride) == len(brute)


FAST_MDAN = mdan.MDANConfig(iterations=2, patch_k=4, stride=4, d_channels=8, content_layer="relu4_1")


def test_single_photo_single_pair(enc):
    pairs = data.build_style_corpus(enc, [synthetic.blobs(128, 128)], synthetic.stripes(32, 32), FAST_MDAN,
                                    CorpusSpec(augment_copies=1, crop_size=128))
    assert len(pairs) == 1
    assert pairs[0].photo.shape == pairs[0].target.shape == (3, 128, 128)


def test_pairs_are_colocated(enc):
    photo = synthetic.blobs(96, 128, seed=2)
    records = []
    spec = CorpusSpec(max_dim=128, augment_copies=1, crop_size=64, crop_stride=32)
    cfg = mdan.MDANConfig(iterations=0, patch_k=4, stride=4)
    pairs = data.build_style_corpus(enc, [photo], synthetic.stripes(32, 32), cfg, spec, records=records)
    assert len(pairs) == data.crop_count(96, 128, 64, 32) == len(records)
    # with zero iterations the target is the photo itself, so aligned crops must agree exactly
    for pair, rec in zip(pairs, records):
        r, c = rec["origin"]
        assert torch.equal(pair.photo, photo[:, r:r + 64, c:c + 64])
        assert torch.equal(pair.target, pair.photo)


def test_corpus_count_is_sum_over_copies(enc):
    spec = CorpusSpec(max_dim=160, augment_copies=3, crop_size=64, crop_stride=48)
    photo = synthetic.blobs(120, 160)
    cfg = mdan.MDANConfig(iterations=0, patch_k=4, stride=4)
    pairs = data.build_style_corpus(enc, [photo], synthetic.stripes(32, 32), cfg, spec)
    expected = sum(data.crop_count(*c.shape[-2:], 64, 48) for c in data.augment(photo, 3, spec.seed))
    assert len(pairs) == expected


def test_empty_photo_list(enc):
    with pytest.raises(ValueError):
        data.build_style_corpus(enc, [], synthetic.stripes(32, 32), FAST_MDAN, CorpusSpec())


def test_manifest_deterministic(enc, tmp_path):
    spec = CorpusSpec(augment_copies=1, crop_size=64, crop_stride=64, max_dim=128)
    photos = [synthetic.blobs(64, 128, seed=s) for s in range(2)]
    manifests = []
    for run in ("a", "b"):
        records = []
        pairs = data.build_style_corpus(enc, photos, synthetic.stripes(32, 32), FAST_MDAN, spec, records=records)
        manifests.append(data.save_corpus(pairs, tmp_path / run, spec, {"iterations": 2}, records))
    assert manifests[0] == manifests[1]
    on_disk = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert on_disk["spec"]["seed"] == 0 and len(on_disk["pairs"]) == 4
    assert (tmp_path / "a" / "pairs" / "00003_target.png").is_file()

    loaded = data.load_corpus(tmp_path / "a")
    assert len(loaded) == 4
    assert torch.equal(loaded[0].photo, data.load_image(tmp_path / "a" / "pairs" / "00000_photo.png"))


def test_load_corpus_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_corpus(tmp_path)
