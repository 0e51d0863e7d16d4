import json

import pytest

from recseg.config import ExperimentConfig
from recseg.losses import LossConfig
from recseg.pipeline import (
    evaluate,
    report_from_per_slice,
    run_experiment,
    stage_plan,
)
from recseg.recursion import StopRule
from recseg.segnet import TrainConfig
from recseg.synth import generate_dataset


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One tiny real pipeline run shared by the eval tests."""
    root = tmp_path_factory.mktemp("pipe")
    paths = generate_dataset(root / "data", n_pix=4, n_img=8, n_test=8, seed=0, size=32)
    cfg = ExperimentConfig(
        d_pix_manifest=str(paths["d_pix"]),
        d_img_manifest=str(paths["d_img"]),
        test_manifests=[str(paths["test"])],
        experiment_dir=str(root / "exp"),
        train=TrainConfig(seed_epochs=6, recursion_epochs=1, batch_size=2, learning_rate=3e-3),
        loss=LossConfig(dice_weight=2.0),
        stop=StopRule(min_new_samples=1, max_recursions=1),
        selection_mode="auto",
        recursion_selection_mode="auto",
        model_width=4,
        rng_seed=0,
    )
    state = run_experiment(cfg)
    return cfg, state


def test_stage_plan_mentions_all_stages(small_run):
    cfg, _ = small_run
    plan = stage_plan(cfg)
    text = "\n".join(plan)
    assert "stage 1" in text and "stage 2" in text and "stage 3" in text
    assert "4 pixel-labeled samples" in text


def test_evaluate_emits_reports(small_run, tmp_path):
    cfg, _ = small_run
    paths = evaluate(cfg, out_dir=tmp_path / "report")
    assert paths["table"].exists()
    rows = json.loads(paths["json"].read_text())
    phases = {(r["phase"], r["level"]) for r in rows}
    assert ("before", "slice") in phases and ("after", "patient") in phases
    # per-slice file has one row per (phase, sample)
    lines = paths["per_slice"].read_text().splitlines()
    assert len(lines) == 2 * 8


def test_patient_rows_present(small_run, tmp_path):
    cfg, _ = small_run
    paths = evaluate(cfg, out_dir=tmp_path / "report")
    per_slice = [json.loads(s) for s in paths["per_slice"].read_text().splitlines()]
    assert all("patient_id" in row for row in per_slice)
    rows = json.loads(paths["json"].read_text())
    patient_rows = [r for r in rows if r.get("level") == "patient" and r["phase"] == "before"]
    assert patient_rows[0]["metrics"]["dice"]["n"] == 2  # 8 slices, 4 per patient


def test_report_from_per_slice_recomputes_medians(small_run, tmp_path):
    cfg, _ = small_run
    paths = evaluate(cfg, out_dir=tmp_path / "report")
    rebuilt = report_from_per_slice(paths["per_slice"], tmp_path / "rebuilt")
    original = {
        (r["dataset"], r["phase"]): r["metrics"]["dice"]["median"]
        for r in json.loads(paths["json"].read_text())
        if r.get("level") == "slice" and r["phase"] in ("before", "after")
    }
    recomputed = {
        (r["dataset"], r["phase"]): r["metrics"]["dice"]["median"]
        for r in json.loads((tmp_path / "rebuilt" / "report.json").read_text())
        if r["phase"] in ("before", "after")
    }
    assert original == recomputed


def test_eval_refuses_mismatched_taxonomy(small_run, tmp_path):
    cfg, _ = small_run
    from pathlib import Path

    meta_path = Path(cfg.experiment_dir) / "r0" / "checkpoint.meta.json"
    meta = json.loads(meta_path.read_text())
    broken = dict(meta, taxonomy=["background", "other"])
    alt = tmp_path / "broken"
    alt.mkdir()
    (alt / "checkpoint.meta.json").write_text(json.dumps(broken))
    import shutil

    shutil.copyfile(Path(cfg.experiment_dir) / "r0" / "checkpoint.pt", alt / "checkpoint.pt")
    with pytest.raises(ValueError, match="taxonomy"):
        evaluate(cfg, before_checkpoint=alt / "checkpoint.pt", out_dir=tmp_path / "r")


def test_missing_checkpoint_rejected(small_run, tmp_path):
    cfg, _ = small_run
    with pytest.raises(FileNotFoundError):
        evaluate(cfg, before_checkpoint=tmp_path / "nope.pt", out_dir=tmp_path / "r")
