"""Candidate weak labels: refinement against superpixels, gating, storage.

A predicted mask is refined by voting over the superpixels of the *image*
(not the mask): for superpixel s and foreground class c, ``cover(s, c)`` is
the fraction of s's pixels the mask assigns to c. The policy mode decides
what to do with that vote:

* ``shrink``     -- keep class c only inside superpixels with cover >= rho;
                    pixels are only ever cleared (false-positive reduction).
* ``grow``       -- flood every superpixel with cover >= rho with its best
                    class; other superpixels keep their original labels
                    (true-positive growth).
* ``objectness`` -- relabel each superpixel wholesale to its best class when
                    that class covers >= rho of it, else to background; the
                    output follows image boundaries and slivers vanish.
* ``none``       -- identity.

Candidates carry enough statistics for a reviewer or an automatic gate to
judge them without re-running the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import SampleRecord
from .fhseg import FHConfig, fh_segment
from .segnet import ModelBackend, predict_mask

REFINE_MODES = ("shrink", "grow", "objectness", "none")


@dataclass(frozen=True)
class RefinePolicy:
    mode: str = "objectness"
    coverage: float = 0.5  # superpixel voting threshold rho

    def __post_init__(self):
        if self.mode not in REFINE_MODES:
            raise ValueError(f"mode must be one of {REFINE_MODES}, got {self.mode!r}")
        if not (0 < self.coverage <= 1):
            raise ValueError("coverage must lie in (0, 1]")


@dataclass
class WeakLabelCandidate:
    sample_id: str
    predicted_mask: np.ndarray
    raw_mask: np.ndarray
    confidence_mean: float
    confidence_min: float
    foreground_area: int
    consistent_with_image_label: bool
    recursion_born: int
    image_label: int | None = None
    image_path: str | None = None  # set by the controller for the review UI

    def meta(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "confidence_mean": self.confidence_mean,
            "confidence_min": self.confidence_min,
            "foreground_area": self.foreground_area,
            "consistent_with_image_label": self.consistent_with_image_label,
            "recursion_born": self.recursion_born,
            "image_label": self.image_label,
            "image_path": self.image_path,
        }


@dataclass(frozen=True)
class GateConfig:
    area_min: int = 10
    area_max: int = 1_000_000
    conf_min: float = 0.5

    def __post_init__(self):
        if self.area_min < 0 or self.area_max < self.area_min:
            raise ValueError("gate bounds must satisfy 0 <= area_min <= area_max")
        if not (0 <= self.conf_min <= 1):
            raise ValueError("conf_min must lie in [0, 1]")


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    reason: str | None  # first failed clause: consistency | area | confidence


def refine_with_superpixels(
    mask: np.ndarray, superpixels: np.ndarray, policy: RefinePolicy
) -> np.ndarray:
    """Apply a refinement policy against a precomputed superpixel map."""
    mask = np.asarray(mask)
    superpixels = np.asarray(superpixels)
    if mask.shape != superpixels.shape:
        raise ValueError(f"shape mismatch: mask {mask.shape} vs superpixels {superpixels.shape}")
    if policy.mode == "none":
        return mask.copy()

    n_sp = int(superpixels.max()) + 1
    n_cls = int(mask.max()) + 1
    hist = np.zeros((n_sp, n_cls), dtype=np.int64)
    np.add.at(hist, (superpixels.ravel(), mask.ravel()), 1)
    sizes = hist.sum(axis=1)
    cover = hist / np.maximum(sizes, 1)[:, None]  # ids may be sparse

    sp_flat = superpixels.ravel()
    mask_flat = mask.ravel()
    rho = policy.coverage

    if policy.mode == "shrink":
        if n_cls == 1:
            return mask.copy()
        qualifies = cover >= rho  # (sp, class)
        qualifies[:, 0] = True  # background is never touched
        keep = qualifies[sp_flat, mask_flat]
        return np.where(keep, mask_flat, 0).reshape(mask.shape)

    # Best foreground class per superpixel (ties toward the lower index).
    if n_cls > 1:
        fg_cover = cover[:, 1:]
        best_class = np.argmax(fg_cover, axis=1) + 1
        best_cover = fg_cover[np.arange(n_sp), best_class - 1]
    else:
        best_class = np.zeros(n_sp, dtype=np.int64)
        best_cover = np.zeros(n_sp, dtype=np.float64)
    qualified = best_cover >= rho

    if policy.mode == "grow":
        out = mask_flat.copy()
        hit = qualified[sp_flat]
        out[hit] = best_class[sp_flat[hit]]
        return out.reshape(mask.shape)

    # objectness
    out = np.where(qualified[sp_flat], best_class[sp_flat], 0)
    return out.reshape(mask.shape)


def refine(
    mask: np.ndarray,
    image: np.ndarray,
    sp_cfg: FHConfig,
    policy: RefinePolicy,
) -> np.ndarray:
    """Refine a predicted mask using superpixels of its image.

    ``image`` is expected in [0, 1]; it is rescaled to [0, 255] before
    segmentation so the FH defaults apply.
    """
    mask = np.asarray(mask)
    image = np.asarray(image)
    if mask.shape != image.shape:
        raise ValueError(f"shape mismatch: mask {mask.shape} vs image {image.shape}")
    if policy.mode == "none":
        return mask.copy()
    sp = fh_segment(image * 255.0, sp_cfg)
    return refine_with_superpixels(mask, sp.labels, policy)


def candidate_stats(
    predicted: np.ndarray, confidence: np.ndarray, image_label: int | None
) -> tuple[float, float, int, bool]:
    """(mean conf, min conf, foreground area, consistency flag).

    Confidence statistics are taken over foreground pixels; when the
    prediction is empty they fall back to the whole confidence map.
    """
    fg = predicted > 0
    area = int(fg.sum())
    pool = confidence[fg] if area else confidence
    classes = set(np.unique(predicted).tolist()) - {0}
    allowed = set() if image_label in (None, 0) else {image_label}
    consistent = classes <= allowed
    return float(pool.mean()), float(pool.min()), area, consistent


def make_candidate(
    sample: SampleRecord,
    image: np.ndarray,
    model: ModelBackend,
    policy: RefinePolicy,
    sp_cfg: FHConfig,
    recursion: int,
) -> WeakLabelCandidate:
    """Predict, refine and package one image-labeled sample for review."""
    if sample.kind != "img":
        raise ValueError(f"sample {sample.id!r} is not image-labeled")
    raw, confidence = predict_mask(model, image)
    refined = refine(raw, image, sp_cfg, policy)
    mean_c, min_c, area, consistent = candidate_stats(refined, confidence, sample.image_label)
    return WeakLabelCandidate(
        sample_id=sample.id,
        predicted_mask=refined,
        raw_mask=raw,
        confidence_mean=mean_c,
        confidence_min=min_c,
        foreground_area=area,
        consistent_with_image_label=consistent,
        recursion_born=recursion,
        image_label=sample.image_label,
    )


def auto_gate(candidate: WeakLabelCandidate, gate: GateConfig) -> GateResult:
    """Accept a candidate when consistency, area and confidence all pass.

    Clauses are checked in that order and the first failure names the
    reason. Area bounds are a closed interval. For explicit-negative samples
    (image_label 0) the area clause demands an empty prediction.
    """
    if not candidate.consistent_with_image_label:
        return GateResult(False, "consistency")
    lo, hi = gate.area_min, gate.area_max
    if candidate.image_label == 0:
        lo, hi = 0, 0
    if not (lo <= candidate.foreground_area <= hi):
        return GateResult(False, "area")
    if candidate.confidence_mean < gate.conf_min:
        return GateResult(False, "confidence")
    return GateResult(True, None)


# --- candidate store -------------------------------------------------------


def save_candidates(directory, candidates: list[WeakLabelCandidate]) -> None:
    """Write refined masks plus a JSON-lines index into a recursion directory."""
    from .imgio import save_mask_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "index.jsonl", "w", encoding="utf-8") as fh:
        for cand in candidates:
            save_mask_png(directory / f"{cand.sample_id}.png", cand.predicted_mask)
            save_mask_png(directory / f"{cand.sample_id}.raw.png", cand.raw_mask)
            fh.write(json.dumps(cand.meta()) + "\n")


def load_candidate_index(directory) -> list[dict]:
    directory = Path(directory)
    index = directory / "index.jsonl"
    if not index.exists():
        raise FileNotFoundError(f"no candidate index at {index}")
    out = []
    with open(index, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def candidate_mask_path(directory, sample_id: str) -> Path:
    return Path(directory) / f"{sample_id}.png"
