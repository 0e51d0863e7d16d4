"""Wiring between config, data, backend, controller and evaluation."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datamodel import DatasetManifest, balance_single_class, load_manifest
from .imgio import load_image, load_mask
from .metrics import (
    MetricResult,
    ReportRow,
    binary_metrics,
    emit_report,
    make_report_row,
    pooled_metrics,
)
from .recursion import RecursionController, RecursionState
from .segnet import UNetBackend, predict_mask


def load_pipeline_manifests(cfg: ExperimentConfig) -> tuple[DatasetManifest, DatasetManifest]:
    d_pix = load_manifest(cfg.d_pix_manifest)
    d_img = load_manifest(cfg.d_img_manifest)
    if d_pix.taxonomy != d_img.taxonomy:
        raise ValueError("pixel- and image-labeled manifests use different taxonomies")
    if cfg.balance_per_class is not None:
        d_img, _short = balance_single_class(d_img, cfg.balance_per_class, seed=cfg.rng_seed)
    return d_pix, d_img


def build_backend(cfg: ExperimentConfig, num_foreground: int) -> UNetBackend:
    return UNetBackend(
        num_foreground=num_foreground,
        base_width=cfg.model_width,
        learning_rate=cfg.train.learning_rate,
        rng_seed=cfg.train.rng_seed,
    )


def build_controller(cfg: ExperimentConfig) -> RecursionController:
    d_pix, d_img = load_pipeline_manifests(cfg)
    backend = build_backend(cfg, d_pix.taxonomy.num_foreground)
    return RecursionController(cfg.experiment_dir, cfg, backend, d_pix, d_img)


def run_experiment(cfg: ExperimentConfig) -> RecursionState:
    controller = build_controller(cfg)
    cfg.save(Path(cfg.experiment_dir) / "config.json")
    return controller.run_all()


def stage_plan(cfg: ExperimentConfig) -> list[str]:
    """Human-readable description of what a run would do."""
    d_pix, d_img = load_pipeline_manifests(cfg)
    return [
        f"stage 1: train seed model on {len(d_pix.d_pix)} pixel-labeled samples "
        f"for {cfg.train.seed_epochs} epochs",
        f"stage 2: generate candidates for {len(d_img.d_img)} image-labeled samples, "
        f"select via {cfg.selection_mode!r} (policy {cfg.policy.mode}, rho {cfg.policy.coverage})",
        f"stage 3: recursion steps of {cfg.train.recursion_epochs} epochs each, "
        f"selection {cfg.recursion_selection_mode!r}, at most {cfg.stop.max_recursions} "
        f"recursions, stop when <{cfg.stop.resolved_min_new(len(d_img.d_img))} new samples "
        f"and relative area change <{cfg.stop.area_delta_eps}",
        f"evaluate: checkpoints r0 vs final on {len(cfg.test_manifests)} test manifest(s)",
        f"experiment dir: {cfg.experiment_dir}",
    ]


def _checkpoint_taxonomy(ckpt_path: Path) -> list[str] | None:
    meta_path = Path(ckpt_path).with_suffix(".meta.json")
    if meta_path.exists():
        return json.loads(meta_path.read_text(encoding="utf-8")).get("taxonomy")
    return None


def evaluate_checkpoint(
    cfg: ExperimentConfig,
    checkpoint: Path,
    manifest: DatasetManifest,
    phase: str,
    dataset_name: str,
    per_slice_sink: list[dict] | None = None,
) -> list[ReportRow]:
    """Slice- and patient-level report rows for one checkpoint on one manifest."""
    taxonomy = _checkpoint_taxonomy(checkpoint)
    if taxonomy is not None and list(taxonomy) != manifest.taxonomy.to_json():
        raise ValueError(
            f"checkpoint {checkpoint} was trained under taxonomy {taxonomy}, "
            f"manifest uses {manifest.taxonomy.to_json()}"
        )
    backend = build_backend(cfg, manifest.taxonomy.num_foreground)
    backend.load(checkpoint)

    k = manifest.taxonomy.num_foreground
    slice_results: list[MetricResult] = []
    by_patient: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    for record in manifest.d_pix:
        image = load_image(manifest.resolve(record.image_ref), manifest.intensity_window)
        gt = load_mask(manifest.resolve(record.pixel_mask_ref), k)
        pred, _conf = predict_mask(backend, image)
        result = binary_metrics(pred, gt, "any", unit_id=record.id)
        slice_results.append(result)
        patient = record.patient_id or record.id
        by_patient.setdefault(patient, []).append((pred, gt))
        if per_slice_sink is not None:
            per_slice_sink.append(
                {
                    "dataset": dataset_name,
                    "phase": phase,
                    "sample_id": record.id,
                    "patient_id": patient,
                    "dice": result.dice,
                    "iou": result.iou,
                    "precision": result.precision,
                    "recall": result.recall,
                }
            )
    patient_results = [
        pooled_metrics(pairs, "any", unit="patient", unit_id=pid)
        for pid, pairs in sorted(by_patient.items())
    ]
    return [
        make_report_row(dataset_name, phase, "slice", slice_results),
        make_report_row(dataset_name, phase, "patient", patient_results),
    ]


def evaluate(
    cfg: ExperimentConfig,
    before_checkpoint=None,
    after_checkpoint=None,
    manifests: list[str] | None = None,
    out_dir=None,
) -> dict[str, Path]:
    """Before/after evaluation over the test manifests; writes report files."""
    exp = Path(cfg.experiment_dir)
    if before_checkpoint is None:
        before_checkpoint = exp / "r0" / "checkpoint.pt"
    if after_checkpoint is None:
        state = RecursionState.load(exp / "state.json")
        after_checkpoint = exp / state.checkpoints[str(state.recursion_index)]
    for ckpt in (before_checkpoint, after_checkpoint):
        if not Path(ckpt).exists():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    manifest_paths = manifests if manifests is not None else cfg.test_manifests
    if not manifest_paths:
        raise ValueError("no test manifests configured")
    out_dir = Path(out_dir) if out_dir is not None else exp / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    per_slice: list[dict] = []
    before_rows: list[ReportRow] = []
    after_rows: list[ReportRow] = []
    for mpath in manifest_paths:
        manifest = load_manifest(mpath)
        name = Path(mpath).stem
        before_rows += evaluate_checkpoint(
            cfg, Path(before_checkpoint), manifest, "before", name, per_slice
        )
        after_rows += evaluate_checkpoint(
            cfg, Path(after_checkpoint), manifest, "after", name, per_slice
        )
    paths = emit_report(before_rows, after_rows, out_dir)
    per_slice_path = out_dir / "per_slice.jsonl"
    with open(per_slice_path, "w", encoding="utf-8") as fh:
        for row in per_slice:
            fh.write(json.dumps(row) + "\n")
    paths["per_slice"] = per_slice_path
    return paths


def report_from_per_slice(per_slice_path, out_dir) -> dict[str, Path]:
    """Re-render report files from a per-slice results file."""
    rows: dict[tuple[str, str], list[MetricResult]] = {}
    with open(per_slice_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            key = (obj["dataset"], obj["phase"])
            rows.setdefault(key, []).append(
                MetricResult(
                    dice=obj["dice"],
                    iou=obj["iou"],
                    precision=obj["precision"],
                    recall=obj["recall"],
                    unit="slice",
                    unit_id=obj["sample_id"],
                )
            )
    before = [
        make_report_row(ds, "before", "slice", res)
        for (ds, phase), res in sorted(rows.items())
        if phase == "before"
    ]
    after = [
        make_report_row(ds, "after", "slice", res)
        for (ds, phase), res in sorted(rows.items())
        if phase == "after"
    ]
    return emit_report(before, after, out_dir)
