"""Segmentation model backend: abstract contract plus the default UNet.

The recursion controller only ever talks to :class:`ModelBackend`, so tests
can drive it with scripted mocks and the network choice stays swappable. The
default backend is a 4-level UNet with a softmax head; inputs whose sides are
not multiples of 16 are padded on the bottom/right (reflected where possible)
and the output is cropped back.

Every training stage starts from a freshly initialized optimizer. That keeps
a resumed run (which necessarily rebuilds the optimizer from scratch)
bit-for-bit equivalent to an uninterrupted one under the same seed.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .losses import LossConfig

PROB_SUM_TOL = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    seed_epochs: int = 120
    recursion_epochs: int = 3
    batch_size: int = 4
    learning_rate: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.seed_epochs < 1:
            raise ValueError("seed_epochs must be >= 1")
        if self.recursion_epochs < 1:
            raise ValueError("recursion_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class TrainSample:
    sample_id: str
    image: np.ndarray  # H x W float32 in [0, 1]
    mask: np.ndarray  # H x W int in 0..K
    has_pixel_gt: bool


class ModelBackend(ABC):
    """Contract every segmentation backend satisfies."""

    num_foreground: int

    @abstractmethod
    def forward(self, image: np.ndarray) -> np.ndarray:
        """Per-pixel class distribution, H x W x (K+1), channels summing to 1."""

    @abstractmethod
    def train_step(self, batch: list[TrainSample], loss_cfg: LossConfig) -> float:
        """One optimizer update over a batch; returns the batch loss."""

    @abstractmethod
    def reset_optimizer(self) -> None:
        """Drop accumulated optimizer state (called at the start of a stage)."""

    def set_learning_rate(self, lr: float) -> None:
        """Schedule hook; backends without an optimizer may ignore it."""

    @abstractmethod
    def save(self, path) -> None: ...

    @abstractmethod
    def load(self, path) -> None: ...

    @property
    @abstractmethod
    def parameter_count(self) -> int: ...

    def parameter_hash(self) -> str:
        """Stable digest of all parameters; used as the checkpoint identity."""
        raise NotImplementedError


def _norm(ch: int) -> nn.GroupNorm:
    # GroupNorm keeps training stable for tiny batches and for inputs whose
    # bottleneck collapses to 1x1 (where BatchNorm cannot be evaluated).
    groups = 8 if ch % 8 == 0 else ch
    return nn.GroupNorm(min(groups, ch), ch)


def _double_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        _norm(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        _norm(out_ch),
        nn.ReLU(inplace=True),
    )


class _UNet(nn.Module):
    def __init__(self, num_classes: int, base_width: int = 16):
        super().__init__()
        b = base_width
        self.enc1 = _double_conv(1, b)
        self.enc2 = _double_conv(b, 2 * b)
        self.enc3 = _double_conv(2 * b, 4 * b)
        self.enc4 = _double_conv(4 * b, 8 * b)
        self.bottleneck = _double_conv(8 * b, 16 * b)
        self.pool = nn.MaxPool2d(2)
        self.up4 = nn.ConvTranspose2d(16 * b, 8 * b, 2, stride=2)
        self.dec4 = _double_conv(16 * b, 8 * b)
        self.up3 = nn.ConvTranspose2d(8 * b, 4 * b, 2, stride=2)
        self.dec3 = _double_conv(8 * b, 4 * b)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, 2, stride=2)
        self.dec2 = _double_conv(4 * b, 2 * b)
        self.up1 = nn.ConvTranspose2d(2 * b, b, 2, stride=2)
        self.dec1 = _double_conv(2 * b, b)
        self.head = nn.Conv2d(b, num_classes, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        e4 = self.enc4(self.pool(e3))
        b = self.bottleneck(self.pool(e4))
        d4 = self.dec4(torch.cat([self.up4(b), e4], dim=1))
        d3 = self.dec3(torch.cat([self.up3(d4), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


DOWNSAMPLE_FACTOR = 16  # four pooling levels


def pad_to_multiple(image: np.ndarray, multiple: int = DOWNSAMPLE_FACTOR) -> np.ndarray:
    """Pad bottom/right so both sides are multiples of ``multiple``."""
    h, w = image.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    mode = "reflect" if ph < h and pw < w else "edge"
    return np.pad(image, ((0, ph), (0, pw)), mode=mode)


class UNetBackend(ModelBackend):
    """Default encoder-decoder backend (torch, CPU-friendly at desk scale)."""

    def __init__(
        self,
        num_foreground: int = 5,
        base_width: int = 16,
        learning_rate: float = 1e-3,
        rng_seed: int = 0,
    ):
        self.num_foreground = num_foreground
        self.base_width = base_width
        self.learning_rate = learning_rate
        torch.manual_seed(rng_seed)
        self.net = _UNet(num_foreground + 1, base_width)
        self._optimizer: torch.optim.Optimizer | None = None

    def reset_optimizer(self) -> None:
        self._optimizer = torch.optim.Adam(self.net.parameters(), lr=self.learning_rate)

    def set_learning_rate(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    @property
    def optimizer(self) -> torch.optim.Optimizer:
        if self._optimizer is None:
            self.reset_optimizer()
        return self._optimizer

    def forward(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        if image.ndim != 2:
            raise ValueError(f"expected a 2-D grayscale image, got shape {image.shape}")
        h, w = image.shape
        padded = pad_to_multiple(image)
        x = torch.from_numpy(padded).reshape(1, 1, *padded.shape)
        self.net.eval()
        with torch.no_grad():
            logits = self.net(x)
            probs = torch.softmax(logits, dim=1)
        out = probs[0].permute(1, 2, 0).numpy()[:h, :w, :]
        return out.astype(np.float32)

    def train_step(self, batch: list[TrainSample], loss_cfg: LossConfig) -> float:
        if not batch:
            raise ValueError("empty batch")
        self.net.train()
        opt = self.optimizer
        opt.zero_grad()
        total = 0.0
        # Group by image shape so same-size samples share one forward pass.
        groups: dict[tuple[int, int], list[TrainSample]] = {}
        for s in batch:
            groups.setdefault(s.image.shape, []).append(s)
        for shape, samples in groups.items():
            imgs = np.stack([pad_to_multiple(np.asarray(s.image, dtype=np.float32)) for s in samples])
            x = torch.from_numpy(imgs).unsqueeze(1)
            logits = self.net(x)
            probs = torch.softmax(logits, dim=1)
            h, w = shape
            loss = x.new_zeros(())
            for i, s in enumerate(samples):
                p = probs[i, :, :h, :w]
                t = torch.from_numpy(
                    np.eye(self.num_foreground + 1, dtype=np.float32)[np.asarray(s.mask)]
                ).permute(2, 0, 1)
                clamped = torch.clamp(p, min=loss_cfg.log_epsilon)
                ce = -(t * torch.log(clamped)).sum() / (h * w)
                sample_loss = ce
                if s.has_pixel_gt and loss_cfg.dice_weight > 0:
                    dice = p.new_zeros(())
                    for c in range(1, self.num_foreground + 1):
                        inter = (p[c] * t[c]).sum()
                        sums = p[c].sum() + t[c].sum()
                        dice = dice + 1.0 - (2.0 * inter + loss_cfg.dice_smoothing) / (
                            sums + loss_cfg.dice_smoothing
                        )
                    sample_loss = ce + loss_cfg.dice_weight * dice / self.num_foreground
                loss = loss + sample_loss
            (loss / len(batch)).backward()
            total += float(loss.detach())
        opt.step()
        return total / len(batch)

    def save(self, path) -> None:
        torch.save({"model": self.net.state_dict()}, path)

    def load(self, path) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        self.net.load_state_dict(state["model"])

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def parameter_hash(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.net.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.numpy().tobytes())
        return digest.hexdigest()


def train(
    model: ModelBackend,
    samples: list[TrainSample],
    epochs: int,
    cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    seed: int | None = None,
) -> list[float]:
    """Run ``epochs`` epochs over ``samples``; returns per-epoch mean losses.

    Sample order is shuffled per epoch by a generator seeded from ``seed``
    (falling back to ``cfg.rng_seed``), so a fixed seed reproduces the loss
    trajectory. The learning rate follows a cosine decay from its configured
    value, which stabilizes the end of short runs. Aborts on a non-finite
    loss, naming the epoch and batch.
    """
    if not samples:
        raise ValueError("training requires a non-empty dataset")
    seed = cfg.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    model.reset_optimizer()
    report = []
    for epoch in range(epochs):
        model.set_learning_rate(
            cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / max(1, epochs)))
        )
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            loss = model.train_step(batch, loss_cfg)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss!r} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            losses.append(loss)
        report.append(float(np.mean(losses)))
    return report


def predict_mask(model: ModelBackend, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hard prediction: per-pixel argmax mask plus max-probability confidence.

    Argmax ties go to the lower class index.
    """
    probs = model.forward(image)
    if probs.ndim != 3:
        raise ValueError(f"backend returned shape {probs.shape}, expected H x W x (K+1)")
    sums = probs.sum(axis=-1)
    if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
        raise ValueError("backend probabilities do not sum to 1 per pixel")
    mask = np.argmax(probs, axis=-1).astype(np.int64)
    confidence = np.max(probs, axis=-1).astype(np.float64)
    return mask, confidence
