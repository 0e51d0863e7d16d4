"""Reading and writing slice images and label masks.

Images: 8- or 16-bit grayscale PNG, or single-slice NIfTI-1 (.nii/.nii.gz).
Masks: indexed 8-bit PNG (value = class index) or single-slice NIfTI-1.

Loaded images are normalized to float32 in [0, 1]; an optional intensity
window rescales [lo, hi] to the unit range before clipping.

The NIfTI reader/writer below covers exactly the single-slice 2-D case this
package produces and consumes (uint8/int16/uint16/int32/float32, optional
gzip). It is not a general NIfTI implementation.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
from PIL import Image

# A fixed, colorblind-aware palette for up to 10 foreground classes;
# index 0 (background) stays black.
_PALETTE = [
    (0, 0, 0),
    (230, 97, 0),
    (93, 58, 155),
    (26, 133, 255),
    (212, 17, 89),
    (64, 176, 166),
    (255, 194, 10),
    (153, 79, 0),
    (12, 123, 220),
    (254, 254, 98),
    (211, 95, 183),
]

_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 512: np.uint16}
_NIFTI_CODES = {np.dtype(v).name: k for k, v in _NIFTI_DTYPES.items()}


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def read_nifti_slice(path) -> np.ndarray:
    """Read a 2-D array from a single-slice NIfTI-1 file."""
    path = Path(path)
    opener = gzip.open if path.name.lower().endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 352:
        raise ValueError(f"{path}: truncated NIfTI file")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    order = "<"
    if sizeof_hdr != 348:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != 348:
            raise ValueError(f"{path}: not a NIfTI-1 file")
        order = ">"
    dim = struct.unpack_from(f"{order}8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(f"{order}2h", raw, 70)
    (vox_offset,) = struct.unpack_from(f"{order}f", raw, 108)
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise ValueError(f"{path}: bad NIfTI magic {magic!r}")
    if datatype not in _NIFTI_DTYPES:
        raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
    ndim = dim[0]
    shape = [d for d in dim[1 : 1 + ndim]]
    if sum(1 for d in shape if d > 1) > 2:
        raise ValueError(f"{path}: expected a single slice, got dims {shape}")
    # dim1 is the fastest-varying axis; rows are stored as dim2.
    width = shape[0] if ndim >= 1 else 1
    height = shape[1] if ndim >= 2 else 1
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
    count = width * height
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=int(vox_offset))
    return np.ascontiguousarray(data.reshape((width, height), order="F").T)


def write_nifti_slice(path, array: np.ndarray) -> None:
    """Write a 2-D array as a minimal single-slice NIfTI-1 file."""
    path = Path(path)
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {array.shape}")
    name = np.dtype(array.dtype).name
    if name not in _NIFTI_CODES:
        if np.issubdtype(array.dtype, np.floating):
            array, name = array.astype(np.float32), "float32"
        else:
            array, name = array.astype(np.int32), "int32"
    code = _NIFTI_CODES[name]
    height, width = array.shape
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 2, width, height, 1, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, code, array.dtype.itemsize * 8)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<8f", header, 76, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)  # pixdim
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    header[344:348] = b"n+1\x00"
    payload = bytes(header) + b"\x00" * 4 + np.asfortranarray(array.T).tobytes(order="F")
    opener = gzip.open if path.name.lower().endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_image(path, intensity_window: tuple[float, float] | None = None) -> np.ndarray:
    """Load a grayscale slice as float32 in [0, 1].

    Without a window, PNGs are scaled by their dtype range and NIfTI slices
    by their own min/max. A window ``(lo, hi)`` instead maps that interval to
    [0, 1] and clips; it is expressed in dtype-normalized units for PNGs and
    in raw stored values for NIfTI.
    """
    path = Path(path)
    if _is_nifti(path):
        arr = read_nifti_slice(path).astype(np.float64)
    else:
        img = Image.open(path)
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=np.float64)
            if img.mode != "I":
                arr /= 65535.0
                if intensity_window is None:
                    return np.clip(arr, 0.0, 1.0).astype(np.float32)
        else:
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            if intensity_window is None:
                return np.clip(arr, 0.0, 1.0).astype(np.float32)
    if intensity_window is not None:
        lo, hi = intensity_window
        if hi <= lo:
            raise ValueError("intensity window must satisfy hi > lo")
        arr = (arr - lo) / (hi - lo)
    else:
        lo, hi = float(arr.min()), float(arr.max())
        if hi > lo:
            arr = (arr - lo) / (hi - lo)
        else:
            arr = np.zeros_like(arr)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def save_image_png(path, array01: np.ndarray, bits: int = 8) -> None:
    arr = np.clip(np.asarray(array01, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        Image.fromarray(np.round(arr * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def load_mask(path, num_foreground: int | None = None) -> np.ndarray:
    """Load an integer label mask; optionally validate the value range."""
    path = Path(path)
    if _is_nifti(path):
        mask = read_nifti_slice(path).astype(np.int64)
    else:
        img = Image.open(path)
        if img.mode not in ("P", "L"):
            raise ValueError(f"{path}: mask PNG must be indexed or 8-bit grayscale, got mode {img.mode}")
        mask = np.asarray(img, dtype=np.int64)
    if num_foreground is not None:
        bad = (mask < 0) | (mask > num_foreground)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(
                f"{path}: mask value {int(mask[r, c])} at ({int(r)}, {int(c)}) "
                f"outside 0..{num_foreground}"
            )
    return mask


def save_mask_png(path, mask: np.ndarray) -> None:
    """Write a label mask as an indexed 8-bit PNG (pixel value = class index)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.min() < 0 or mask.max() > 255:
        raise ValueError("mask values must fit 8-bit indices")
    img = Image.fromarray(mask.astype(np.uint8), mode="P")
    palette = []
    for i in range(256):
        palette.extend(_PALETTE[i % len(_PALETTE)] if i < len(_PALETTE) else (i, i, i))
    img.putpalette(palette)
    img.save(path)


def mask_file_sha256(path) -> str:
    import hashlib

    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
