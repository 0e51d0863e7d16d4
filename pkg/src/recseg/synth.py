"""Desk-scale synthetic dataset: bright lesions on noisy backgrounds.

Each slice holds one solid lesion whose class is identifiable two redundant
ways: by its intensity band and by its shape (ellipse, rectangle, cross,
ring, triangle), so a small network can learn the class from appearance
alone. The generator emits a pixel-labeled manifest, an image-labeled
manifest (labels assigned round-robin, hence uniform over classes up to
±1) and a held-out test manifest with masks and patient ids. Everything is
deterministic under the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .datamodel import ClassTaxonomy, DatasetManifest, SampleRecord, save_manifest
from .imgio import save_image_png, save_mask_png

# Mean intensity per class; bands are far enough apart to survive 8-bit
# quantization and the background noise floor.
CLASS_BANDS = {1: 0.35, 2: 0.50, 3: 0.65, 4: 0.80, 5: 0.95}


def _centered_grid(size: int, rng: np.random.Generator):
    margin = size // 4
    cy, cx = rng.uniform(margin, size - margin, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    return yy - cy, xx - cx


def _ellipse(size, rng):
    y, x = _centered_grid(size, rng)
    ry = rng.uniform(size / 10, size / 6)
    rx = rng.uniform(size / 10, size / 6)
    theta = rng.uniform(0, np.pi)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    return (xr / rx) ** 2 + (yr / ry) ** 2 <= 1.0


def _rectangle(size, rng):
    y, x = _centered_grid(size, rng)
    hh = rng.uniform(size / 12, size / 7)
    hw = rng.uniform(size / 12, size / 7)
    return (np.abs(y) <= hh) & (np.abs(x) <= hw)


def _cross(size, rng):
    y, x = _centered_grid(size, rng)
    arm = rng.uniform(size / 9, size / 6)
    thick = rng.uniform(size / 24, size / 14)
    bar_h = (np.abs(y) <= thick) & (np.abs(x) <= arm)
    bar_v = (np.abs(x) <= thick) & (np.abs(y) <= arm)
    return bar_h | bar_v


def _ring(size, rng):
    # the hole must stay comfortably above FH's min component size,
    # otherwise it gets folded into the ring superpixel
    y, x = _centered_grid(size, rng)
    r_out = rng.uniform(size / 8, size / 6)
    r_in = r_out * rng.uniform(0.5, 0.6)
    rr = np.sqrt(x**2 + y**2)
    return (rr <= r_out) & (rr > r_in)


def _triangle(size, rng):
    y, x = _centered_grid(size, rng)
    h = rng.uniform(size / 8, size / 5)
    # upright isoceles triangle: below the apex, inside the slanted sides
    return (y >= -h / 2) & (y <= h / 2) & (np.abs(x) <= (y + h / 2) / 2)


_SHAPES = {1: _ellipse, 2: _rectangle, 3: _cross, 4: _ring, 5: _triangle}


def make_slice(size: int, class_index: int, rng: np.random.Generator):
    """One (image, mask) pair with a single lesion of the given class."""
    background = 0.12 + 0.025 * rng.standard_normal((size, size))
    image = gaussian_filter(background, 0.7)
    blob = _SHAPES[class_index](size, rng)
    band = CLASS_BANDS[class_index] + rng.uniform(-0.01, 0.01)
    texture = 0.01 * rng.standard_normal((size, size))
    image = np.where(blob, band + texture, image)
    image = np.clip(image, 0.0, 1.0)
    mask = np.where(blob, class_index, 0).astype(np.int64)
    return image.astype(np.float32), mask


def generate_dataset(
    out_dir,
    n_pix: int = 8,
    n_img: int = 64,
    n_test: int = 24,
    seed: int = 0,
    size: int = 64,
    slices_per_patient: int = 4,
) -> dict[str, Path]:
    """Write images, masks and the three manifests; returns manifest paths."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    taxonomy = ClassTaxonomy.default()
    k = taxonomy.num_foreground

    def cls(i):
        return (i % k) + 1

    pix_records = []
    for i in range(n_pix):
        image, mask = make_slice(size, cls(i), rng)
        save_image_png(out_dir / "images" / f"pix_{i:04d}.png", image)
        save_mask_png(out_dir / "masks" / f"pix_{i:04d}.png", mask)
        pix_records.append(
            SampleRecord(
                id=f"pix_{i:04d}",
                image_ref=f"images/pix_{i:04d}.png",
                pixel_mask_ref=f"masks/pix_{i:04d}.png",
                source="synthetic",
            )
        )

    img_records = []
    for i in range(n_img):
        image, _ = make_slice(size, cls(i), rng)
        save_image_png(out_dir / "images" / f"img_{i:04d}.png", image)
        img_records.append(
            SampleRecord(
                id=f"img_{i:04d}",
                image_ref=f"images/img_{i:04d}.png",
                image_label=cls(i),
                source="synthetic",
            )
        )

    test_records = []
    for i in range(n_test):
        image, mask = make_slice(size, cls(i), rng)
        save_image_png(out_dir / "images" / f"test_{i:04d}.png", image)
        save_mask_png(out_dir / "masks" / f"test_{i:04d}.png", mask)
        test_records.append(
            SampleRecord(
                id=f"test_{i:04d}",
                image_ref=f"images/test_{i:04d}.png",
                pixel_mask_ref=f"masks/test_{i:04d}.png",
                patient_id=f"P{i // slices_per_patient:03d}",
                source="synthetic",
            )
        )

    paths = {}
    for name, records, split in (
        ("d_pix", pix_records, "train"),
        ("d_img", img_records, "train"),
        ("test", test_records, "test"),
    ):
        manifest = DatasetManifest(records=records, taxonomy=taxonomy, split=split, root=out_dir)
        path = out_dir / f"{name}.jsonl"
        save_manifest(manifest, path)
        paths[name] = path
    return paths
