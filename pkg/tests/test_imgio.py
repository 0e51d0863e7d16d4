import numpy as np
import pytest

from recseg.imgio import (
    load_image,
    load_mask,
    read_nifti_slice,
    save_image_png,
    save_mask_png,
    write_nifti_slice,
)


def test_png_image_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.uniform(0, 1, size=(9, 7))
    save_image_png(tmp_path / "a.png", arr, bits=8)
    loaded = load_image(tmp_path / "a.png")
    assert loaded.shape == arr.shape
    assert loaded.dtype == np.float32
    assert np.abs(loaded - arr).max() < 1 / 255 + 1e-6


def test_png_16bit_round_trip(tmp_path):
    arr = np.linspace(0, 1, 64).reshape(8, 8)
    save_image_png(tmp_path / "a.png", arr, bits=16)
    loaded = load_image(tmp_path / "a.png")
    assert np.abs(loaded - arr).max() < 1 / 65535 + 1e-7


def test_mask_round_trip_indexed(tmp_path):
    mask = np.array([[0, 1, 2], [5, 0, 3]], dtype=np.int64)
    save_mask_png(tmp_path / "m.png", mask)
    loaded = load_mask(tmp_path / "m.png", num_foreground=5)
    assert (loaded == mask).all()


def test_mask_value_validation(tmp_path):
    save_mask_png(tmp_path / "m.png", np.full((2, 2), 9))
    with pytest.raises(ValueError, match="outside"):
        load_mask(tmp_path / "m.png", num_foreground=5)


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
@pytest.mark.parametrize(
    "dtype", [np.uint8, np.int16, np.uint16, np.int32, np.float32]
)
def test_nifti_round_trip(tmp_path, suffix, dtype):
    rng = np.random.default_rng(1)
    if np.issubdtype(dtype, np.floating):
        arr = rng.uniform(-100, 100, size=(6, 11)).astype(dtype)
    else:
        info = np.iinfo(dtype)
        arr = rng.integers(max(info.min, -500), min(info.max, 500), size=(6, 11)).astype(dtype)
    path = tmp_path / f"slice{suffix}"
    write_nifti_slice(path, arr)
    loaded = read_nifti_slice(path)
    assert loaded.shape == arr.shape
    assert (loaded == arr).all()


def test_nifti_image_normalization(tmp_path):
    arr = np.array([[-1000, 0], [1000, 2000]], dtype=np.int16)
    write_nifti_slice(tmp_path / "ct.nii", arr)
    loaded = load_image(tmp_path / "ct.nii")
    assert loaded.min() == 0.0 and loaded.max() == 1.0
    windowed = load_image(tmp_path / "ct.nii", intensity_window=(0, 1000))
    assert windowed[0, 0] == 0.0  # below the window clips to 0
    assert windowed[1, 1] == 1.0  # above the window clips to 1
    assert windowed[0, 1] == 0.0 and windowed[1, 0] == 1.0


def test_nifti_mask(tmp_path):
    mask = np.array([[0, 1], [2, 0]], dtype=np.uint8)
    write_nifti_slice(tmp_path / "m.nii.gz", mask)
    assert (load_mask(tmp_path / "m.nii.gz", 2) == mask).all()
