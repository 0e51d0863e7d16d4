"""Scikit-learn style facade over the recursive training pipeline.

``SelfTrainingSegmenter`` exposes the whole three-stage strategy as a single
estimator: ``fit`` consumes a pixel-labeled manifest plus an optional
image-labeled manifest (run in automatic selection mode, so no human in the
loop), ``predict`` returns hard label maps and ``predict_proba`` the class
distributions. Hyperparameters follow sklearn conventions (settable in
``__init__``, introspectable via ``get_params``), so the estimator drops
into pipelines and search utilities.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .config import ExperimentConfig
from .datamodel import DatasetManifest, load_manifest
from .fhseg import FHConfig
from .losses import LossConfig
from .metrics import binary_metrics
from .pipeline import build_backend
from .recursion import RecursionController, StopRule
from .segnet import TrainConfig, predict_mask
from .weaklabel import GateConfig, RefinePolicy


class SelfTrainingSegmenter(BaseEstimator):
    def __init__(
        self,
        seed_epochs: int = 120,
        recursion_epochs: int = 3,
        batch_size: int = 4,
        learning_rate: float = 1e-3,
        base_width: int = 16,
        dice_weight: float = 1.0,
        refine_mode: str = "objectness",
        coverage: float = 0.5,
        scale_k: float = 100.0,
        min_size: int = 20,
        smoothing_sigma: float = 0.8,
        connectivity: int = 4,
        area_min: int = 10,
        area_max: int = 1_000_000,
        conf_min: float = 0.5,
        min_new_samples: int | None = None,
        area_delta_eps: float = 0.005,
        max_recursions: int = 10,
        work_dir: str | None = None,
        random_state: int = 0,
    ):
        self.seed_epochs = seed_epochs
        self.recursion_epochs = recursion_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.base_width = base_width
        self.dice_weight = dice_weight
        self.refine_mode = refine_mode
        self.coverage = coverage
        self.scale_k = scale_k
        self.min_size = min_size
        self.smoothing_sigma = smoothing_sigma
        self.connectivity = connectivity
        self.area_min = area_min
        self.area_max = area_max
        self.conf_min = conf_min
        self.min_new_samples = min_new_samples
        self.area_delta_eps = area_delta_eps
        self.max_recursions = max_recursions
        self.work_dir = work_dir
        self.random_state = random_state

    # -- sklearn plumbing -------------------------------------------------
    def _build_config(self, work_dir: str) -> ExperimentConfig:
        return ExperimentConfig(
            experiment_dir=work_dir,
            train=TrainConfig(
                seed_epochs=self.seed_epochs,
                recursion_epochs=self.recursion_epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                rng_seed=self.random_state,
            ),
            loss=LossConfig(dice_weight=self.dice_weight),
            fh=FHConfig(
                scale_k=self.scale_k,
                min_size=self.min_size,
                smoothing_sigma=self.smoothing_sigma,
                connectivity=self.connectivity,
            ),
            policy=RefinePolicy(mode=self.refine_mode, coverage=self.coverage),
            gate=GateConfig(
                area_min=self.area_min, area_max=self.area_max, conf_min=self.conf_min
            ),
            stop=StopRule(
                min_new_samples=self.min_new_samples,
                area_delta_eps=self.area_delta_eps,
                max_recursions=self.max_recursions,
            ),
            selection_mode="auto",
            recursion_selection_mode="auto",
            model_width=self.base_width,
            rng_seed=self.random_state,
        )

    @staticmethod
    def _as_manifest(data) -> DatasetManifest:
        if isinstance(data, DatasetManifest):
            return data
        return load_manifest(data)

    def fit(self, d_pix, d_img=None):
        """Train through the full pipeline (automatic selection).

        ``d_pix``: pixel-labeled manifest (path or DatasetManifest).
        ``d_img``: optional image-labeled manifest; without it only the
        supervised seed stage runs.
        """
        d_pix = self._as_manifest(d_pix)
        if d_img is None:
            d_img = DatasetManifest(records=[], taxonomy=d_pix.taxonomy)
        else:
            d_img = self._as_manifest(d_img)

        work_dir = self.work_dir or tempfile.mkdtemp(prefix="recseg-")
        Path(work_dir).mkdir(parents=True, exist_ok=True)
        cfg = self._build_config(str(work_dir))
        backend = build_backend(cfg, d_pix.taxonomy.num_foreground)
        controller = RecursionController(work_dir, cfg, backend, d_pix, d_img)
        self.state_ = controller.run_all()
        self.backend_ = backend
        self.taxonomy_ = d_pix.taxonomy
        self.experiment_dir_ = str(work_dir)
        return self

    def _check_fitted(self):
        if not hasattr(self, "backend_"):
            raise RuntimeError("this SelfTrainingSegmenter instance is not fitted yet")

    def predict(self, X):
        """Hard label maps for a list of 2-D images (or one image)."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        images = [X] if single else list(X)
        masks = [predict_mask(self.backend_, img)[0] for img in images]
        return masks[0] if single else masks

    def predict_proba(self, X):
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        images = [X] if single else list(X)
        probs = [self.backend_.forward(img) for img in images]
        return probs[0] if single else probs

    def score(self, X, y):
        """Mean foreground dice over (image, mask) pairs."""
        self._check_fitted()
        preds = self.predict(X)
        if isinstance(preds, np.ndarray):
            preds, y = [preds], [y]
        return float(np.mean([binary_metrics(p, g).dice for p, g in zip(preds, y)]))
