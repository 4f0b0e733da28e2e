import os

import numpy as np
import pytest
from PIL import Image

from sdinet.data import (
    DataError,
    StereoSample,
    SynthConfig,
    load_dataset,
    random_crop_pair,
    read_image,
    synth_dataset,
    synth_generate,
    write_image,
    write_sample,
)


# ---------------------------------------------------------------------------
# I/O


def test_image_roundtrip_exact(tmp_path, rng):
    arr = (rng.integers(0, 256, size=(3, 8, 8)) / 255.0).astype(np.float32)
    path = tmp_path / "a.png"
    write_image(arr, path)
    back = read_image(path)
    assert back.dtype == np.float32 and back.shape == (3, 8, 8)
    assert np.array_equal(back, arr)


def test_write_quantization_half_up(tmp_path):
    # 0.5/255 rounds up to 1
    arr = np.full((3, 4, 4), 0.5 / 255.0, dtype=np.float32)
    path = tmp_path / "q.png"
    write_image(arr, path)
    assert np.all(read_image(path) == np.float32(1 / 255.0))


def test_read_rejects_non_rgb(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(path)
    with pytest.raises(DataError):
        read_image(path)


def test_read_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_image(tmp_path / "nope.png")


def test_load_dataset_empty_and_missing(tmp_path):
    assert load_dataset(tmp_path) == []
    sample = synth_generate(SynthConfig(seed=1, height=16, width=16, disparity_max=1))
    write_sample(sample, tmp_path)
    os.remove(tmp_path / "gt_right" / f"{sample.id}.png")
    with pytest.raises(DataError, match=sample.id):
        load_dataset(tmp_path)


def test_dataset_roundtrip_and_order(tmp_path):
    samples = synth_dataset(SynthConfig(seed=3, height=16, width=16, disparity_max=1), 3, out_dir=tmp_path)
    assert (tmp_path / "manifest.txt").exists()
    loaded = load_dataset(tmp_path)
    assert [s.id for s in loaded] == sorted(s.id for s in samples)
    for orig, back in zip(samples, loaded):
        for a, b in zip(orig.images(), back.images()):
            assert np.abs(a - b).max() <= 0.5 / 255.0 + 1e-7  # 8-bit quantization only


# ---------------------------------------------------------------------------
# synthesis


def test_synth_deterministic():
    a = synth_generate(SynthConfig(seed=5))
    b = synth_generate(SynthConfig(seed=5))
    for x, y in zip(a.images(), b.images()):
        assert x.tobytes() == y.tobytes()
    c = synth_generate(SynthConfig(seed=6))
    assert a.gt_left.tobytes() != c.gt_left.tobytes()


def test_synth_shapes_and_range():
    s = synth_generate(SynthConfig(seed=0, height=32, width=48, disparity_max=4))
    for img in s.images():
        assert img.shape == (3, 32, 48) and img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0
    assert s.height == 32 and s.width == 48


def test_degradation_monotonic_in_alpha():
    def mean_low(alpha):
        cfg = SynthConfig(seed=2, alpha_range=(alpha, alpha),
                          gamma_range=(2.0, 2.0), sigma_range=(0.0, 0.0))
        return float(synth_generate(cfg).low_left.mean())

    assert mean_low(0.2) < mean_low(0.35) < mean_low(0.5)


def test_epipolar_correspondence():
    # correlation oracle: right-view pixels match the left view at x or at
    # x + d for one of the manifest disparities (integer shifts); only thin
    # occlusion bands at layer edges may stay unexplained
    s = synth_generate(SynthConfig(seed=4, sigma_range=(0.0, 0.0)))
    shifts = sorted(set([0] + list(s.meta["disparities"])))
    w = s.width
    residual = np.full((s.height, w), np.inf)
    per_shift = {}
    for d in shifts:
        diff = np.abs(s.gt_right[:, :, : w - d] - s.gt_left[:, :, d:]).max(axis=0)
        per_shift[d] = diff
        residual[:, : w - d] = np.minimum(residual[:, : w - d], diff)
    valid = residual[:, : w - max(shifts)]
    assert (valid < 1e-6).mean() > 0.95
    # each nonzero disparity explains pixels that zero shift cannot
    for d in shifts:
        if d == 0:
            continue
        exclusive = (per_shift[d] < 1e-6) & (per_shift[0][:, : w - d] >= 1e-6)
        assert exclusive.sum() > 0


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig(height=18).validate()
    with pytest.raises(DataError):
        SynthConfig(disparity_max=20, width=64).validate()
    with pytest.raises(DataError):
        SynthConfig(alpha_range=(0.0, 0.5)).validate()
    with pytest.raises(DataError):
        SynthConfig(gamma_range=(0.5, 2.0)).validate()
    with pytest.raises(DataError):
        SynthConfig(sigma_range=(-0.1, 0.1)).validate()
    with pytest.raises(DataError):
        SynthConfig(layer_count=-1).validate()


def test_manifest_contents(tmp_path):
    samples = synth_dataset(SynthConfig(seed=9, height=16, width=16, disparity_max=1), 2, out_dir=tmp_path)
    text = (tmp_path / "manifest.txt").read_text()
    for s in samples:
        assert s.id in text and f"seed={s.meta['seed']}" in text


# ---------------------------------------------------------------------------
# cropping


def test_random_crop_pair(rng):
    s = synth_generate(SynthConfig(seed=1))
    c = random_crop_pair(s, (16, 16), rng)
    assert c.height == 16 and c.width == 16
    # the same window applies to all four images: locate it via gt_left
    found = False
    for y0 in range(s.height - 15):
        for x0 in range(s.width - 15):
            if np.array_equal(s.gt_left[:, y0 : y0 + 16, x0 : x0 + 16], c.gt_left):
                found = True
                for name in ("low_left", "low_right", "gt_right"):
                    assert np.array_equal(
                        getattr(s, name)[:, y0 : y0 + 16, x0 : x0 + 16], getattr(c, name))
                break
        if found:
            break
    assert found


def test_random_crop_pair_errors(rng):
    s = synth_generate(SynthConfig(seed=1, height=16, width=16, disparity_max=1))
    with pytest.raises(DataError):
        random_crop_pair(s, (32, 32), rng)
    with pytest.raises(DataError):
        random_crop_pair(s, (10, 10), rng)


def test_random_crop_accepts_seed():
    s = synth_generate(SynthConfig(seed=1))
    a = random_crop_pair(s, (16, 16), 7)
    b = random_crop_pair(s, (16, 16), 7)
    assert np.array_equal(a.gt_left, b.gt_left)
