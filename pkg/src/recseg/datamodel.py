"""Dataset manifests, class taxonomy and sampling rules.

A manifest is a JSON-lines file: an optional leading meta line (an object
without an ``id`` key, carrying ``taxonomy``/``split``/``intensity_window``)
followed by one record object per line. Every path inside a record is
resolved relative to the manifest file.

Records fall into exactly one of three pools:

* pixel-labeled -- a ground-truth mask is referenced (``pixel_mask_ref``),
* image-labeled -- only a per-slice class label is known (``image_label``),
* unlabeled     -- neither.

``image_label`` may be 0 to mark a slice that is known to contain no
foreground at all; such records stay in the image-labeled pool but are
never subsampled by :func:`balance_single_class`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

BACKGROUND = "background"

DEFAULT_FOREGROUND_CLASSES = (
    "epidural",
    "intraparenchymal",
    "intraventricular",
    "subarachnoid",
    "subdural",
)

VALID_SPLITS = ("train", "review", "test")


class ManifestError(ValueError):
    """Base class for manifest loading/validation failures."""


class ManifestParseError(ManifestError):
    """A manifest line is not valid JSON or misses required fields."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class DuplicateIdError(ManifestError):
    def __init__(self, path, ids):
        super().__init__(f"{path}: duplicate record ids: {sorted(ids)}")
        self.duplicate_ids = sorted(ids)


class MissingFilesError(ManifestError):
    """Raised after the whole manifest is scanned, listing every missing ref."""

    def __init__(self, path, missing):
        listing = "\n  ".join(str(m) for m in missing)
        super().__init__(f"{path}: {len(missing)} referenced file(s) missing:\n  {listing}")
        self.missing = list(missing)


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class names; index 0 is always the background class."""

    classes: tuple[str, ...]

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("taxonomy needs background plus at least one foreground class")
        if self.classes[0] != BACKGROUND:
            raise ValueError(f"class index 0 must be {BACKGROUND!r}, got {self.classes[0]!r}")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")

    @property
    def num_foreground(self) -> int:
        return len(self.classes) - 1

    @classmethod
    def default(cls) -> "ClassTaxonomy":
        return cls.from_foreground(DEFAULT_FOREGROUND_CLASSES)

    @classmethod
    def from_foreground(cls, names) -> "ClassTaxonomy":
        return cls((BACKGROUND, *names))

    def name_of(self, index: int) -> str:
        return self.classes[index]

    def index_of(self, name: str) -> int:
        return self.classes.index(name)

    def to_json(self) -> list[str]:
        return list(self.classes)

    @classmethod
    def from_json(cls, data) -> "ClassTaxonomy":
        return cls(tuple(data))


@dataclass(frozen=True)
class SampleRecord:
    """One image slice plus whatever supervision exists for it."""

    id: str
    image_ref: str
    source: str = ""
    pixel_mask_ref: str | None = None
    image_label: int | None = None
    patient_id: str | None = None

    @property
    def kind(self) -> str:
        """``"pix"``, ``"img"`` or ``"unlabeled"``; the pools are disjoint."""
        if self.pixel_mask_ref is not None:
            return "pix"
        if self.image_label is not None:
            return "img"
        return "unlabeled"

    def to_json(self) -> dict:
        out = {"id": self.id, "image_ref": self.image_ref}
        if self.pixel_mask_ref is not None:
            out["pixel_mask_ref"] = self.pixel_mask_ref
        if self.image_label is not None:
            out["image_label"] = self.image_label
        if self.patient_id is not None:
            out["patient_id"] = self.patient_id
        out["source"] = self.source
        return out


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy.default)
    split: str = "train"
    root: Path = field(default_factory=Path)
    intensity_window: tuple[float, float] | None = None

    @property
    def d_pix(self) -> list[SampleRecord]:
        return [r for r in self.records if r.kind == "pix"]

    @property
    def d_img(self) -> list[SampleRecord]:
        return [r for r in self.records if r.kind == "img"]

    @property
    def unlabeled(self) -> list[SampleRecord]:
        return [r for r in self.records if r.kind == "unlabeled"]

    def resolve(self, ref: str) -> Path:
        return (self.root / ref).resolve()

    def by_id(self, sample_id: str) -> SampleRecord:
        for r in self.records:
            if r.id == sample_id:
                return r
        raise KeyError(sample_id)


def _parse_record(path, line_no, obj, taxonomy: ClassTaxonomy) -> SampleRecord:
    for key in ("id", "image_ref"):
        if key not in obj:
            raise ManifestParseError(path, line_no, f"record misses required field {key!r}")
    label = obj.get("image_label")
    if label is not None:
        if not isinstance(label, int) or not (0 <= label <= taxonomy.num_foreground):
            raise ManifestParseError(
                path, line_no,
                f"image_label must be an integer in 0..{taxonomy.num_foreground}, got {label!r}",
            )
    if obj.get("pixel_mask_ref") is not None and label is not None:
        raise ManifestParseError(
            path, line_no,
            f"record {obj['id']!r} carries both pixel_mask_ref and image_label; "
            "a sample is either pixel-labeled or image-labeled, never both",
        )
    return SampleRecord(
        id=str(obj["id"]),
        image_ref=str(obj["image_ref"]),
        source=str(obj.get("source", "")),
        pixel_mask_ref=obj.get("pixel_mask_ref"),
        image_label=label,
        patient_id=obj.get("patient_id"),
    )


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a JSON-lines manifest.

    Raises :class:`ManifestParseError` (with line number) on malformed lines,
    :class:`DuplicateIdError` on repeated ids and :class:`MissingFilesError`
    listing every unresolvable file reference.
    """
    path = Path(path)
    taxonomy = ClassTaxonomy.default()
    split = "train"
    window = None
    records: list[SampleRecord] = []

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    first_record_seen = False
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(path, line_no, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ManifestParseError(path, line_no, "expected a JSON object")
        if "id" not in obj:
            if first_record_seen:
                raise ManifestParseError(path, line_no, "meta line must precede all records")
            if "taxonomy" in obj:
                taxonomy = ClassTaxonomy.from_json(obj["taxonomy"])
            if "split" in obj:
                split = obj["split"]
                if split not in VALID_SPLITS:
                    raise ManifestParseError(path, line_no, f"split must be one of {VALID_SPLITS}")
            if "intensity_window" in obj and obj["intensity_window"] is not None:
                lo, hi = obj["intensity_window"]
                window = (float(lo), float(hi))
            continue
        first_record_seen = True
        records.append(_parse_record(path, line_no, obj, taxonomy))

    ids = [r.id for r in records]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise DuplicateIdError(path, dupes)

    manifest = DatasetManifest(
        records=records,
        taxonomy=taxonomy,
        split=split,
        root=path.parent,
        intensity_window=window,
    )
    if check_files:
        missing = []
        for r in records:
            for ref in (r.image_ref, r.pixel_mask_ref):
                if ref is not None and not manifest.resolve(ref).exists():
                    missing.append(manifest.resolve(ref))
        if missing:
            raise MissingFilesError(path, missing)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"taxonomy": manifest.taxonomy.to_json(), "split": manifest.split}
        if manifest.intensity_window is not None:
            meta["intensity_window"] = list(manifest.intensity_window)
        fh.write(json.dumps(meta) + "\n")
        for r in manifest.records:
            fh.write(json.dumps(r.to_json()) + "\n")


def balance_single_class(
    manifest: DatasetManifest, per_class: int, seed: int = 0
) -> tuple[DatasetManifest, dict[int, int]]:
    """Subsample the image-labeled pool to equal per-class counts.

    Keeps at most ``per_class`` records for each foreground class, chosen
    deterministically under ``seed``. Records without a label are dropped;
    explicit-negative records (label 0) are kept in full. Classes with fewer
    than ``per_class`` records are kept whole and reported in the returned
    shortfall map (class index -> available count).
    """
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[SampleRecord]] = {}
    negatives: list[SampleRecord] = []
    for r in manifest.records:
        if r.image_label is None or r.kind != "img":
            continue
        if r.image_label == 0:
            negatives.append(r)
        else:
            by_class.setdefault(r.image_label, []).append(r)

    keep_ids: set[str] = {r.id for r in negatives}
    shortfall: dict[int, int] = {}
    for cls in sorted(by_class):
        recs = sorted(by_class[cls], key=lambda r: r.id)
        if len(recs) < per_class:
            shortfall[cls] = len(recs)
            chosen = recs
        else:
            idx = rng.choice(len(recs), size=per_class, replace=False)
            chosen = [recs[i] for i in sorted(idx)]
        keep_ids.update(r.id for r in chosen)

    kept = [r for r in manifest.records if r.id in keep_ids]
    return replace(manifest, records=kept), shortfall


def encode_one_hot(mask: np.ndarray, num_foreground: int) -> np.ndarray:
    """Expand an integer label map into an H x W x (K+1) one-hot array."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    bad = (mask < 0) | (mask > num_foreground)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(
            f"mask value {int(mask[r, c])} at pixel ({int(r)}, {int(c)}) "
            f"outside 0..{num_foreground}"
        )
    out = np.zeros((*mask.shape, num_foreground + 1), dtype=np.uint8)
    rows, cols = np.indices(mask.shape)
    out[rows, cols, mask.astype(int)] = 1
    return out


def decode_one_hot(one_hot: np.ndarray) -> np.ndarray:
    one_hot = np.asarray(one_hot)
    if one_hot.ndim != 3:
        raise ValueError(f"one-hot array must be 3-D, got shape {one_hot.shape}")
    return np.argmax(one_hot, axis=-1).astype(np.int64)
