import numpy as np
import pytest
from sklearn.base import clone

from recseg.datamodel import load_manifest
from recseg.estimator import SelfTrainingSegmenter
from recseg.imgio import load_image, load_mask
from recseg.synth import generate_dataset


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("est")
    paths = generate_dataset(root / "data", n_pix=4, n_img=6, n_test=4, seed=3, size=32)
    est = SelfTrainingSegmenter(
        seed_epochs=6,
        recursion_epochs=1,
        batch_size=2,
        learning_rate=3e-3,
        base_width=4,
        max_recursions=1,
        min_new_samples=1,
        conf_min=0.0,
        area_min=1,
        work_dir=str(root / "exp"),
        random_state=0,
    )
    est.fit(paths["d_pix"], paths["d_img"])
    return est, paths


def test_get_params_round_trip():
    est = SelfTrainingSegmenter(seed_epochs=11, coverage=0.7)
    params = est.get_params()
    assert params["seed_epochs"] == 11
    assert params["coverage"] == 0.7
    cloned = clone(est)
    assert cloned.get_params() == params


def test_set_params_chainable():
    est = SelfTrainingSegmenter().set_params(max_recursions=2, refine_mode="shrink")
    assert est.max_recursions == 2
    assert est.refine_mode == "shrink"


def test_unfitted_predict_raises():
    with pytest.raises(RuntimeError, match="not fitted"):
        SelfTrainingSegmenter().predict(np.zeros((32, 32)))


def test_fit_predict_shapes(fitted):
    est, paths = fitted
    test = load_manifest(paths["test"])
    images = [load_image(test.resolve(r.image_ref)) for r in test.d_pix]
    masks = est.predict(images)
    assert len(masks) == len(images)
    assert masks[0].shape == images[0].shape
    assert masks[0].dtype == np.int64

    single = est.predict(images[0])
    assert single.shape == images[0].shape

    probs = est.predict_proba(images[0])
    assert probs.shape == (*images[0].shape, 6)
    assert np.abs(probs.sum(axis=-1) - 1).max() < 1e-5


def test_fit_ran_the_pipeline(fitted):
    est, _ = fitted
    assert est.state_.stage1_done and est.state_.stage2_done
    assert est.state_.stopped


def test_score_is_mean_dice(fitted):
    est, paths = fitted
    test = load_manifest(paths["test"])
    images = [load_image(test.resolve(r.image_ref)) for r in test.d_pix]
    gts = [load_mask(test.resolve(r.pixel_mask_ref), 5) for r in test.d_pix]
    score = est.score(images, gts)
    assert 0.0 <= score <= 1.0


def test_fit_without_dimg_runs_seed_stage_only(tmp_path):
    paths = generate_dataset(tmp_path / "d", n_pix=2, n_img=2, n_test=2, seed=4, size=32)
    est = SelfTrainingSegmenter(
        seed_epochs=2,
        recursion_epochs=1,
        batch_size=2,
        base_width=4,
        max_recursions=1,
        work_dir=str(tmp_path / "exp"),
    )
    est.fit(paths["d_pix"])
    assert est.state_.accepted == {}
    assert est.backend_ is not None
