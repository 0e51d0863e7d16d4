"""Three-stage controller: seed training, selection, recursive retraining.

Stage 1 overfits the backend on the pixel-labeled pool. Stage 2 runs
inference over the image-labeled pool, refines the predictions into weak
label candidates and selects a subset (a human review session or the
automatic gate). Each later recursion then (a) retrains for a few epochs on
the union of real and pseudo labels, (b) refreshes every accepted
pseudo-label with the new model's prediction, (c) proposes candidates for
the still-pending samples and accepts more, and (d) stops once expansion
stalls: too few new acceptances together with a flat total foreground area,
or the recursion budget is spent.

All state lives in the experiment directory so a killed run resumes at the
last completed recursion with identical behavior under the same seed:

    state.json                   controller state (atomic rewrite)
    history.log                  append-only event log
    r{N}/checkpoint.pt           backend checkpoint for recursion N
    r{N}/checkpoint.meta.json    taxonomy, recursion index, config hash
    r{N}/candidates/             refined candidate masks + index
    r{N}/pseudolabels/           accepted masks + provenance index
    reviews/r{N}/                decision log, session, summary

Per-recursion training seeds derive from the experiment seed and the
recursion index, and each stage starts from a fresh optimizer, which is
what makes the resume path reproduce an uninterrupted run.
"""

from __future__ import annotations

import json
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .datamodel import DatasetManifest
from .imgio import load_image, load_mask, save_mask_png
from .review import ReviewStore
from .segnet import ModelBackend, TrainSample, predict_mask, train
from .weaklabel import (
    WeakLabelCandidate,
    auto_gate,
    make_candidate,
    refine,
    save_candidates,
)

if TYPE_CHECKING:  # pragma: no cover
    from .config import ExperimentConfig


class ControllerError(RuntimeError):
    pass


class ControllerLockedError(ControllerError):
    pass


class ReviewTimeoutError(ControllerError):
    pass


@dataclass(frozen=True)
class StopRule:
    """Expansion-stall test. ``min_new_samples=None`` resolves to 1% of
    |D_img| with a floor of 1."""

    min_new_samples: int | None = None
    area_delta_eps: float = 0.005
    max_recursions: int = 10

    def __post_init__(self):
        if self.min_new_samples is not None and self.min_new_samples < 1:
            raise ValueError("min_new_samples must be >= 1")
        if self.area_delta_eps <= 0:
            raise ValueError("area_delta_eps must be > 0")
        if self.max_recursions < 1:
            raise ValueError("max_recursions must be >= 1")

    def resolved_min_new(self, n_dimg: int) -> int:
        if self.min_new_samples is not None:
            return self.min_new_samples
        return max(1, int(0.01 * n_dimg))


@dataclass
class RecursionState:
    recursion_index: int = -1  # last completed recursion; 0 after stage 2
    stage1_done: bool = False
    stage2_done: bool = False
    stopped: bool = False
    accepted: dict[str, str] = field(default_factory=dict)  # id -> pseudo-label relpath
    pending: list[str] = field(default_factory=list)
    rejected_forever: list[str] = field(default_factory=list)
    rejection_counts: dict[str, int] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    stage1_losses: list[float] = field(default_factory=list)
    rng_seed: int = 0
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "recursion_index": self.recursion_index,
            "stage1_done": self.stage1_done,
            "stage2_done": self.stage2_done,
            "stopped": self.stopped,
            "accepted": self.accepted,
            "pending": self.pending,
            "rejected_forever": self.rejected_forever,
            "rejection_counts": self.rejection_counts,
            "history": self.history,
            "checkpoints": self.checkpoints,
            "stage1_losses": self.stage1_losses,
            "rng_seed": self.rng_seed,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecursionState":
        return cls(**data)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "RecursionState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class RecursionController:
    """Drives one experiment directory; at most one live instance per dir."""

    def __init__(
        self,
        experiment_dir,
        cfg: "ExperimentConfig",
        backend: ModelBackend,
        d_pix: DatasetManifest,
        d_img: DatasetManifest,
    ):
        self.dir = Path(experiment_dir)
        self.cfg = cfg
        self.backend = backend
        self.d_pix = d_pix
        self.d_img = d_img
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock_held = False
        self.state = self._load_or_init_state()

    # -- state / locking --------------------------------------------------
    @property
    def state_path(self) -> Path:
        return self.dir / "state.json"

    def _load_or_init_state(self) -> RecursionState:
        if self.state_path.exists():
            state = RecursionState.load(self.state_path)
            if state.config_hash and state.config_hash != self.cfg.config_hash():
                raise ControllerError(
                    "experiment state was produced under a different configuration "
                    f"(state hash {state.config_hash}, current {self.cfg.config_hash()})"
                )
            return state
        dimg_ids = [r.id for r in self.d_img.d_img]
        excluded = []
        if not self.cfg.include_negative_dimg:
            negatives = {r.id for r in self.d_img.d_img if r.image_label == 0}
            excluded = sorted(negatives)
            dimg_ids = [i for i in dimg_ids if i not in negatives]
        return RecursionState(
            pending=dimg_ids,
            rejected_forever=excluded,
            rng_seed=self.cfg.rng_seed,
            config_hash=self.cfg.config_hash(),
        )

    def acquire_lock(self) -> None:
        lock = self.dir / ".lock"
        if lock.exists():
            try:
                pid = int(lock.read_text().strip())
            except ValueError:
                pid = -1
            if pid > 0 and _pid_alive(pid):
                raise ControllerLockedError(
                    f"experiment {self.dir} is locked by running pid {pid}"
                )
        lock.write_text(str(os.getpid()), encoding="utf-8")
        self._lock_held = True

    def release_lock(self) -> None:
        if self._lock_held:
            (self.dir / ".lock").unlink(missing_ok=True)
            self._lock_held = False

    def log_event(self, event: str, **payload) -> None:
        entry = {"ts": time.time(), "event": event, **payload}
        with open(self.dir / "history.log", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")

    # -- helpers -----------------------------------------------------------
    def _recursion_dir(self, r: int) -> Path:
        path = self.dir / f"r{r}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _load_train_image(self, manifest: DatasetManifest, record) -> np.ndarray:
        return load_image(manifest.resolve(record.image_ref), manifest.intensity_window)

    def _d_pix_samples(self) -> list[TrainSample]:
        k = self.d_pix.taxonomy.num_foreground
        samples = []
        for record in self.d_pix.d_pix:
            image = self._load_train_image(self.d_pix, record)
            mask = load_mask(self.d_pix.resolve(record.pixel_mask_ref), k)
            samples.append(TrainSample(record.id, image, mask, has_pixel_gt=True))
        return samples

    def _accepted_samples(self) -> list[TrainSample]:
        k = self.d_img.taxonomy.num_foreground
        samples = []
        for sample_id, relpath in sorted(self.state.accepted.items()):
            record = self.d_img.by_id(sample_id)
            image = self._load_train_image(self.d_img, record)
            mask = load_mask(self.dir / relpath, k)
            samples.append(TrainSample(sample_id, image, mask, has_pixel_gt=False))
        return samples

    def _save_checkpoint(self, r: int) -> None:
        rdir = self._recursion_dir(r)
        ckpt = rdir / "checkpoint.pt"
        self.backend.save(ckpt)
        meta = {
            "recursion_index": r,
            "taxonomy": self.d_pix.taxonomy.to_json(),
            "config_hash": self.cfg.config_hash(),
            "parameter_hash": self.backend.parameter_hash(),
        }
        (rdir / "checkpoint.meta.json").write_text(
            json.dumps(meta, indent=2), encoding="utf-8"
        )
        self.state.checkpoints[str(r)] = f"r{r}/checkpoint.pt"

    def _write_pseudolabel(
        self, r: int, sample_id: str, mask: np.ndarray | None, src: Path | None, decision: str
    ) -> str:
        """Store one pseudo-label (verbatim copy when ``src`` is given)."""
        pdir = self._recursion_dir(r) / "pseudolabels"
        pdir.mkdir(parents=True, exist_ok=True)
        dest = pdir / f"{sample_id}.png"
        if src is not None:
            shutil.copyfile(src, dest)
        else:
            save_mask_png(dest, mask)
        with open(pdir / "index.jsonl", "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "sample_id": sample_id,
                        "recursion": r,
                        "checkpoint": self.backend.parameter_hash(),
                        "policy_mode": self.cfg.policy.mode,
                        "coverage": self.cfg.policy.coverage,
                        "decision": decision,
                    }
                )
                + "\n"
            )
        return str(Path(f"r{r}") / "pseudolabels" / f"{sample_id}.png")

    def _generate_candidates(self, r: int) -> list[WeakLabelCandidate]:
        candidates = []
        for sample_id in list(self.state.pending):
            record = self.d_img.by_id(sample_id)
            image = self._load_train_image(self.d_img, record)
            cand = make_candidate(
                record, image, self.backend, self.cfg.policy, self.cfg.fh, recursion=r
            )
            cand.image_path = str(self.d_img.resolve(record.image_ref))
            candidates.append(cand)
        save_candidates(self._recursion_dir(r) / "candidates", candidates)
        return candidates

    def _select(self, r: int, candidates: list[WeakLabelCandidate], mode: str) -> int:
        """Accept candidates by gate or review outcome; returns acceptance count."""
        cand_dir = self._recursion_dir(r) / "candidates"
        decisions: dict[str, str] = {}
        if mode == "auto":
            for cand in candidates:
                result = auto_gate(cand, self.cfg.gate)
                if result.accepted:
                    decisions[cand.sample_id] = "auto-gate"
        else:
            summary = self._wait_for_review(r)
            for sample_id in summary["accepted"]:
                decisions[sample_id] = f"review:{summary['session_id']}"
            for sample_id in summary["rejected"]:
                count = self.state.rejection_counts.get(sample_id, 0) + 1
                self.state.rejection_counts[sample_id] = count
                if count >= self.cfg.rejection_cap and sample_id in self.state.pending:
                    self.state.pending.remove(sample_id)
                    self.state.rejected_forever.append(sample_id)

        newly = 0
        for cand in candidates:
            if cand.sample_id not in decisions:
                continue
            relpath = self._write_pseudolabel(
                r,
                cand.sample_id,
                mask=None,
                src=cand_dir / f"{cand.sample_id}.png",
                decision=decisions[cand.sample_id],
            )
            self.state.accepted[cand.sample_id] = relpath
            self.state.pending.remove(cand.sample_id)
            newly += 1
        return newly

    def _wait_for_review(self, r: int) -> dict:
        store = ReviewStore(self.dir)
        summary_path = store.summary_path(r)
        deadline = time.monotonic() + self.cfg.review_timeout_s
        while not summary_path.exists():
            if time.monotonic() > deadline:
                raise ReviewTimeoutError(
                    f"no review summary for recursion {r} within "
                    f"{self.cfg.review_timeout_s} s; nothing was accepted"
                )
            time.sleep(self.cfg.review_poll_s)
        return json.loads(summary_path.read_text(encoding="utf-8"))

    def _total_foreground_area(self) -> int:
        total = 0
        for relpath in self.state.accepted.values():
            mask = load_mask(self.dir / relpath)
            total += int((mask > 0).sum())
        return total

    def publish_stage2_candidates(self) -> int:
        """Generate stage-2 candidates without selecting (for async review)."""
        if not self.state.stage1_done:
            raise ControllerError("stage 1 has not completed")
        self.backend.load(self.dir / self.state.checkpoints["0"])
        return len(self._generate_candidates(0))

    # -- stages -----------------------------------------------------------
    def run_stage1(self) -> None:
        """Supervised seed training on the pixel-labeled pool."""
        if self.state.stage1_done:
            return
        samples = self._d_pix_samples()
        if not samples:
            raise ControllerError("the pixel-labeled pool is empty; nothing to train on")
        losses = train(
            self.backend,
            samples,
            epochs=self.cfg.train.seed_epochs,
            cfg=self.cfg.train,
            loss_cfg=self.cfg.loss,
            seed=self.state.rng_seed,
        )
        self._save_checkpoint(0)
        self.state.stage1_losses = losses
        self.state.stage1_done = True
        self.state.save(self.state_path)
        self.log_event("stage1_done", epochs=len(losses), final_loss=losses[-1])

    def run_stage2(self) -> None:
        """Candidate generation plus the first selection round."""
        if self.state.stage2_done:
            return
        if not self.state.stage1_done:
            raise ControllerError("stage 1 has not completed")
        candidates = self._generate_candidates(0)
        newly = self._select(0, candidates, self.cfg.selection_mode)
        self.state.history.append(
            {
                "recursion": 0,
                "newly_accepted": newly,
                "total_foreground_area": self._total_foreground_area(),
                "mean_train_loss": self.state.stage1_losses[-1]
                if self.state.stage1_losses
                else None,
            }
        )
        self.state.stage2_done = True
        self.state.recursion_index = 0
        self.state.save(self.state_path)
        self.log_event("stage2_done", newly_accepted=newly, mode=self.cfg.selection_mode)

    def run_recursion_step(self) -> str:
        """One retrain/refresh/expand cycle; returns ``"continue"`` or ``"stop"``."""
        if not self.state.stage2_done:
            raise ControllerError("stage 2 has not completed")
        r = self.state.recursion_index + 1
        stop = self.cfg.stop

        samples = self._d_pix_samples() + self._accepted_samples()
        losses = train(
            self.backend,
            samples,
            epochs=self.cfg.train.recursion_epochs,
            cfg=self.cfg.train,
            loss_cfg=self.cfg.loss,
            seed=self.state.rng_seed + 1000 * r,
        )
        self._save_checkpoint(r)

        # Refresh pseudo-labels of everything accepted so far.
        k = self.d_img.taxonomy.num_foreground
        for sample_id in sorted(self.state.accepted):
            record = self.d_img.by_id(sample_id)
            image = self._load_train_image(self.d_img, record)
            mask, _conf = predict_mask(self.backend, image)
            if self.cfg.refine_each_recursion:
                mask = refine(mask, image, self.cfg.fh, self.cfg.policy)
            relpath = self._write_pseudolabel(r, sample_id, mask, None, "refresh")
            self.state.accepted[sample_id] = relpath

        candidates = self._generate_candidates(r)
        newly = self._select(r, candidates, self.cfg.recursion_selection_mode)

        area = self._total_foreground_area()
        prev_area = self.state.history[-1]["total_foreground_area"] if self.state.history else 0
        self.state.history.append(
            {
                "recursion": r,
                "newly_accepted": newly,
                "total_foreground_area": area,
                "mean_train_loss": float(np.mean(losses)),
            }
        )
        self.state.recursion_index = r
        self.state.save(self.state_path)

        min_new = stop.resolved_min_new(len(self.d_img.d_img))
        rel_delta = abs(area - prev_area) / max(prev_area, 1)
        stalled = newly < min_new and rel_delta < stop.area_delta_eps
        verdict = "stop" if stalled or r >= stop.max_recursions else "continue"
        self.log_event(
            "recursion_done",
            recursion=r,
            newly_accepted=newly,
            total_foreground_area=area,
            verdict=verdict,
        )
        return verdict

    def run_all(self) -> RecursionState:
        """Execute or resume the full pipeline until the stop rule fires."""
        self.acquire_lock()
        try:
            if self.state.stopped:
                return self.state
            if self.state.recursion_index >= 0 and str(self.state.recursion_index) in self.state.checkpoints:
                self.backend.load(self.dir / self.state.checkpoints[str(self.state.recursion_index)])
            elif self.state.stage1_done and "0" in self.state.checkpoints:
                self.backend.load(self.dir / self.state.checkpoints["0"])
            self.run_stage1()
            self.run_stage2()
            while True:
                verdict = self.run_recursion_step()
                if verdict == "stop":
                    self.state.stopped = True
                    self.state.save(self.state_path)
                    self.log_event("stopped", recursion=self.state.recursion_index)
                    return self.state
        finally:
            self.release_lock()


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True
