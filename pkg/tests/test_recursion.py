import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from recseg.config import ExperimentConfig
from recseg.datamodel import ClassTaxonomy, DatasetManifest, SampleRecord, save_manifest
from recseg.imgio import save_image_png, save_mask_png
from recseg.recursion import (
    ControllerError,
    ControllerLockedError,
    RecursionController,
    ReviewTimeoutError,
    StopRule,
)
from recseg.segnet import TrainConfig
from recseg.weaklabel import GateConfig, RefinePolicy
from tests.conftest import ThresholdBackend

BLOB = (slice(4, 8), slice(4, 8))  # 16-pixel square lesion


def blob_image(intensity, size=16):
    image = np.full((size, size), 0.1, dtype=np.float32)
    image[BLOB] = intensity
    return image


def blob_mask(size=16):
    mask = np.zeros((size, size), dtype=np.int64)
    mask[BLOB] = 1
    return mask


def make_dataset(root: Path, dimg_intensities):
    """Tiny binary-lesion dataset with controllable D_img blob intensities."""
    root.mkdir(parents=True, exist_ok=True)
    taxonomy = ClassTaxonomy.from_foreground(["lesion"])
    pix_records = []
    for i in range(2):
        save_image_png(root / f"pix{i}.png", blob_image(0.9))
        save_mask_png(root / f"pix{i}_mask.png", blob_mask())
        pix_records.append(
            SampleRecord(
                id=f"pix{i}", image_ref=f"pix{i}.png", pixel_mask_ref=f"pix{i}_mask.png"
            )
        )
    img_records = []
    for i, intensity in enumerate(dimg_intensities):
        save_image_png(root / f"img{i}.png", blob_image(intensity))
        img_records.append(
            SampleRecord(id=f"img{i}", image_ref=f"img{i}.png", image_label=1)
        )
    d_pix = DatasetManifest(records=pix_records, taxonomy=taxonomy, root=root)
    d_img = DatasetManifest(records=img_records, taxonomy=taxonomy, root=root)
    save_manifest(d_pix, root / "d_pix.jsonl")
    save_manifest(d_img, root / "d_img.jsonl")
    return d_pix, d_img


def make_config(exp_dir, **kwargs) -> ExperimentConfig:
    defaults = dict(
        experiment_dir=str(exp_dir),
        train=TrainConfig(seed_epochs=1, recursion_epochs=1, batch_size=2),
        policy=RefinePolicy(mode="none"),
        gate=GateConfig(area_min=1, area_max=10_000, conf_min=0.5),
        stop=StopRule(min_new_samples=1, area_delta_eps=0.005, max_recursions=10),
        selection_mode="auto",
        recursion_selection_mode="auto",
        review_poll_s=0.01,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def make_controller(tmp_path, dimg_intensities, backend=None, **cfg_kwargs):
    data = tmp_path / "data"
    d_pix, d_img = make_dataset(data, dimg_intensities)
    cfg = make_config(tmp_path / "exp", **cfg_kwargs)
    backend = backend or ThresholdBackend(threshold=0.75, step=0.1)
    return RecursionController(tmp_path / "exp", cfg, backend, d_pix, d_img), cfg


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestStage1:
    def test_stage1_writes_checkpoint_and_losses(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7])
        controller.run_stage1()
        assert (tmp_path / "exp" / "r0" / "checkpoint.pt.npy").exists()
        meta = json.loads((tmp_path / "exp" / "r0" / "checkpoint.meta.json").read_text())
        assert meta["recursion_index"] == 0
        assert controller.state.stage1_done
        assert controller.state.stage1_losses

    def test_empty_d_pix_fails_before_training(self, tmp_path):
        data = tmp_path / "data"
        _, d_img = make_dataset(data, [0.7])
        d_pix = DatasetManifest(records=[], taxonomy=d_img.taxonomy, root=data)
        cfg = make_config(tmp_path / "exp")
        controller = RecursionController(
            tmp_path / "exp", cfg, ThresholdBackend(), d_pix, d_img
        )
        with pytest.raises(ControllerError, match="empty"):
            controller.run_stage1()


class TestStage2:
    def test_auto_mode_accepts_visible_blobs(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7, 0.7, 0.2])
        controller.run_stage1()
        controller.run_stage2()
        assert set(controller.state.accepted) == {"img0", "img1"}
        assert controller.state.pending == ["img2"]
        assert controller.state.history[0]["newly_accepted"] == 2
        # blob is 16 px per accepted sample
        assert controller.state.history[0]["total_foreground_area"] == 32

    def test_auto_mode_zero_area_rejected_pipeline_proceeds(self, tmp_path):
        backend = ThresholdBackend(threshold=5.0, step=0.0)  # never predicts anything
        controller, _ = make_controller(tmp_path, [0.7, 0.6], backend=backend)
        controller.run_stage1()
        controller.run_stage2()
        assert controller.state.accepted == {}
        assert controller.state.stage2_done

    def test_human_mode_applies_summary_and_copies_bytes(self, tmp_path):
        controller, cfg = make_controller(
            tmp_path, [0.7, 0.7, 0.7], selection_mode="human", review_timeout_s=5.0
        )
        controller.run_stage1()
        summary_dir = tmp_path / "exp" / "reviews" / "r0"
        summary_dir.mkdir(parents=True)
        (summary_dir / "summary.json").write_text(
            json.dumps(
                {
                    "session_id": "t1",
                    "recursion_index": 0,
                    "accepted": ["img0", "img2"],
                    "rejected": ["img1"],
                    "undecided": [],
                }
            )
        )
        controller.run_stage2()
        assert set(controller.state.accepted) == {"img0", "img2"}
        assert controller.state.pending == ["img1"]
        for sid in ("img0", "img2"):
            cand = tmp_path / "exp" / "r0" / "candidates" / f"{sid}.png"
            pseudo = tmp_path / "exp" / "r0" / "pseudolabels" / f"{sid}.png"
            assert file_hash(cand) == file_hash(pseudo)

    def test_human_mode_timeout_leaves_state_intact(self, tmp_path):
        controller, _ = make_controller(
            tmp_path, [0.7], selection_mode="human", review_timeout_s=0.05
        )
        controller.run_stage1()
        with pytest.raises(ReviewTimeoutError):
            controller.run_stage2()
        assert not controller.state.stage2_done
        assert controller.state.accepted == {}


class TestRecursionLoop:
    def test_stall_stops_after_one_step(self, tmp_path):
        backend = ThresholdBackend(threshold=5.0, step=0.0)
        controller, _ = make_controller(tmp_path, [0.7, 0.6], backend=backend)
        controller.run_stage1()
        controller.run_stage2()
        assert controller.run_recursion_step() == "stop"
        assert controller.state.recursion_index == 1

    def test_one_new_sample_per_step_runs_to_max_recursions(self, tmp_path):
        # threshold after stage 1: 0.65, then 0.55, 0.45, 0.35 ...
        intensities = [0.7, 0.6, 0.5, 0.4]
        controller, _ = make_controller(
            tmp_path,
            intensities,
            stop=StopRule(min_new_samples=1, area_delta_eps=0.005, max_recursions=4),
        )
        state = controller.run_all()
        assert state.recursion_index == 4
        assert state.stopped
        steps = [h for h in state.history if h["recursion"] > 0]
        assert len(steps) == 4
        assert [h["newly_accepted"] for h in state.history] == [1, 1, 1, 1, 0]

    def test_monotone_accepted_growth(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7, 0.6, 0.5, 0.4])
        controller.run_stage1()
        controller.run_stage2()
        seen = [set(controller.state.accepted)]
        while controller.run_recursion_step() == "continue":
            current = set(controller.state.accepted)
            assert seen[-1] <= current
            seen.append(current)
        assert set(controller.state.accepted) == {"img0", "img1", "img2", "img3"}

    def test_d_pix_masks_never_touched(self, tmp_path):
        data_dir = tmp_path / "data"
        controller, _ = make_controller(tmp_path, [0.7, 0.6])
        hashes = {p: file_hash(p) for p in data_dir.glob("pix*_mask.png")}
        controller.run_all()
        assert {p: file_hash(p) for p in hashes} == hashes

    def test_termination_grid(self, tmp_path):
        configs = [
            StopRule(min_new_samples=m, area_delta_eps=e, max_recursions=r)
            for m in (1, 2, 100)
            for e in (0.005, 0.9)
            for r in (1, 3)
        ]
        for i, stop in enumerate(configs):
            controller, _ = make_controller(
                tmp_path / f"grid{i}", [0.7, 0.6, 0.5], stop=stop
            )
            state = controller.run_all()
            assert state.stopped
            assert state.recursion_index <= stop.max_recursions

    def test_state_invariants_maintained(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7, 0.6, 0.2])
        controller.run_stage1()
        controller.run_stage2()
        while True:
            state = controller.state
            accepted = set(state.accepted)
            pending = set(state.pending)
            forever = set(state.rejected_forever)
            assert accepted & pending == set()
            assert accepted | pending | forever == {"img0", "img1", "img2"}
            if controller.run_recursion_step() == "stop":
                break


class TestResume:
    def test_crash_resume_equivalence(self, tmp_path):
        intensities = [0.7, 0.6, 0.5]
        # uninterrupted run
        full, _ = make_controller(tmp_path / "full", intensities)
        final_full = full.run_all()

        # interrupted run: stage1+stage2+one step, then a fresh controller resumes
        part, cfg = make_controller(tmp_path / "part", intensities)
        part.run_stage1()
        part.run_stage2()
        part.run_recursion_step()
        data = tmp_path / "part" / "data"
        from recseg.datamodel import load_manifest

        d_pix = load_manifest(data / "d_pix.jsonl")
        d_img = load_manifest(data / "d_img.jsonl")
        resumed = RecursionController(
            tmp_path / "part" / "exp",
            cfg,
            ThresholdBackend(threshold=0.75, step=0.1),
            d_pix,
            d_img,
        )
        final_resumed = resumed.run_all()

        assert final_resumed.accepted.keys() == final_full.accepted.keys()
        assert final_resumed.recursion_index == final_full.recursion_index
        assert final_resumed.history == final_full.history
        assert final_resumed.pending == final_full.pending

    def test_resume_refuses_changed_config(self, tmp_path):
        controller, cfg = make_controller(tmp_path, [0.7])
        controller.run_stage1()
        data = tmp_path / "data"
        from recseg.datamodel import load_manifest

        changed = make_config(tmp_path / "exp", rng_seed=99)
        with pytest.raises(ControllerError, match="different configuration"):
            RecursionController(
                tmp_path / "exp",
                changed,
                ThresholdBackend(),
                load_manifest(data / "d_pix.jsonl"),
                load_manifest(data / "d_img.jsonl"),
            )

    def test_completed_run_is_noop_on_rerun(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7])
        state = controller.run_all()
        again = controller.run_all()
        assert again.history == state.history


class TestLock:
    def test_live_pid_blocks(self, tmp_path):
        controller, _ = make_controller(tmp_path, [0.7])
        (tmp_path / "exp" / ".lock").write_text(str(__import__("os").getpid()))
        with pytest.raises(ControllerLockedError):
            controller.acquire_lock()

    def test_stale_lock_is_replaced(self, tmp_path):
        proc = subprocess.Popen([sys.executable, "-c", "pass"])
        proc.wait()
        controller, _ = make_controller(tmp_path, [0.7])
        (tmp_path / "exp" / ".lock").write_text(str(proc.pid))
        controller.acquire_lock()
        controller.release_lock()


class TestRejectionCap:
    def test_chronic_rejects_move_to_forever(self, tmp_path):
        controller, cfg = make_controller(
            tmp_path,
            [0.7, 0.7],
            selection_mode="human",
            recursion_selection_mode="human",
            rejection_cap=2,
            review_timeout_s=5.0,
            stop=StopRule(min_new_samples=1, area_delta_eps=0.005, max_recursions=3),
        )

        def write_summary(r, accepted, rejected):
            d = tmp_path / "exp" / "reviews" / f"r{r}"
            d.mkdir(parents=True, exist_ok=True)
            (d / "summary.json").write_text(
                json.dumps(
                    {
                        "session_id": f"s{r}",
                        "recursion_index": r,
                        "accepted": accepted,
                        "rejected": rejected,
                        "undecided": [],
                    }
                )
            )

        controller.run_stage1()
        write_summary(0, ["img0"], ["img1"])
        controller.run_stage2()
        assert controller.state.rejection_counts == {"img1": 1}
        write_summary(1, [], ["img1"])
        controller.run_recursion_step()
        assert controller.state.rejected_forever == ["img1"]
        assert controller.state.pending == []


def test_pseudolabel_provenance_index(tmp_path):
    controller, _ = make_controller(tmp_path, [0.7, 0.6])
    controller.run_all()
    exp = tmp_path / "exp"
    entries = []
    for index in sorted(exp.glob("r*/pseudolabels/index.jsonl")):
        entries += [json.loads(line) for line in index.read_text().splitlines()]
    assert entries, "expected provenance entries for accepted pseudo-labels"
    for entry in entries:
        assert entry["checkpoint"]
        assert entry["policy_mode"] == "none"
        assert entry["decision"] in ("auto-gate", "refresh") or entry["decision"].startswith("review:")
        assert (exp / f"r{entry['recursion']}" / "pseudolabels" / f"{entry['sample_id']}.png").exists()
