import numpy as np
import pytest

from recseg.datamodel import ClassTaxonomy
from recseg.losses import LossConfig
from recseg.segnet import ModelBackend, TrainSample


class ThresholdBackend(ModelBackend):
    """Deterministic fake backend: foreground where image > threshold.

    The threshold drops by ``step`` every time a training stage starts
    (``reset_optimizer``), so the model "expands" to dimmer blobs one
    recursion at a time. Threshold state round-trips through save/load,
    which is what makes crash-resume tests meaningful.
    """

    def __init__(self, num_foreground=1, threshold=0.75, step=0.0, confidence=0.9):
        self.num_foreground = num_foreground
        self.threshold = threshold
        self.step = step
        self.confidence = confidence
        self.rounds = 0

    def forward(self, image):
        image = np.asarray(image)
        fg = image > self.threshold
        k1 = self.num_foreground + 1
        probs = np.zeros((*image.shape, k1), dtype=np.float32)
        rest = (1.0 - self.confidence) / (k1 - 1)
        probs[...] = rest
        probs[..., 0] = np.where(fg, rest, self.confidence)
        probs[..., 1] = np.where(fg, self.confidence, rest)
        return probs

    def train_step(self, batch, loss_cfg):
        return 0.5

    def reset_optimizer(self):
        self.rounds += 1
        self.threshold -= self.step

    def save(self, path):
        np.save(str(path) + ".npy", np.array([self.threshold, self.rounds]))

    def load(self, path):
        data = np.load(str(path) + ".npy")
        self.threshold = float(data[0])
        self.rounds = int(data[1])

    @property
    def parameter_count(self):
        return 2

    def parameter_hash(self):
        return f"mock-{self.threshold:.6f}-{self.rounds}"


@pytest.fixture
def binary_taxonomy():
    return ClassTaxonomy.from_foreground(["lesion"])


@pytest.fixture
def loss_cfg():
    return LossConfig()


def make_train_sample(sample_id="s", size=8, value=1.0, cls=1):
    image = np.zeros((size, size), dtype=np.float32)
    image[2:5, 2:5] = value
    mask = np.zeros((size, size), dtype=np.int64)
    mask[2:5, 2:5] = cls
    return TrainSample(sample_id, image, mask, has_pixel_gt=True)
