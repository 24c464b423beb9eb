"""Supervised training loop and inference for the segmentation network."""

from __future__ import annotations

import copy
import dataclasses
import logging
from typing import Sequence

import numpy as np

from ..imaging import Sample
from . import layers as L
from .optim import AdamState, adam_step
from .unet import DEPTH, UNetModel, unet_backward, unet_forward

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class SegTrainConfig:
    base_channels: int = 64
    n_classes: int = 3
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-3


def to_tensor(images: Sequence[np.ndarray]) -> np.ndarray:
    """Stack uint8 grayscale images into an ``(N, 1, H, W)`` float tensor in [0, 1]."""
    return np.stack([np.asarray(im, dtype=np.float64) / 255.0 for im in images])[:, None]


def _evaluate(model: UNetModel, samples: Sequence[Sample], batch_size: int):
    loss_sum, correct, pixels = 0.0, 0, 0
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        x = to_tensor([s.image for s in batch])
        labels = np.stack([s.mask for s in batch]).astype(np.intp)
        probs, _ = unet_forward(model, x, mode="infer")
        loss, _ = L.cross_entropy_loss(probs, L.one_hot(labels, model.n_classes))
        n_pix = labels.size
        loss_sum += loss * n_pix
        correct += int(np.count_nonzero(probs.argmax(axis=1) == labels))
        pixels += n_pix
    return loss_sum / pixels, correct / pixels


def pixel_accuracy(model: UNetModel, samples: Sequence[Sample], batch_size: int = 2) -> float:
    return _evaluate(model, samples, batch_size)[1]


def train_segmenter(config: SegTrainConfig, train: Sequence[Sample], val: Sequence[Sample],
                    seed: int, progress=None):
    """Train a fresh U-Net with Adam.

    The model with the lowest validation loss is returned (or the final
    model when ``val`` is empty) together with one log record per epoch.
    """
    if not train:
        raise ValueError("training set is empty")
    if config.batch_size < 1 or config.batch_size > len(train):
        raise ValueError(f"batch size {config.batch_size} invalid for {len(train)} samples")
    rows, cols = train[0].image.shape
    factor = 2**DEPTH
    if rows % factor or cols % factor:
        raise ValueError(f"resolution {cols}x{rows} is not divisible by {factor}")

    rng = np.random.default_rng(seed)
    model = UNetModel(config.base_channels, config.n_classes, seed=int(rng.integers(2**63)))
    params = dict(model.named_parameters())
    state = AdamState(lr=config.lr)
    log = []
    best_loss, best_state = np.inf, None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            x = to_tensor([s.image for s in batch])
            labels = np.stack([s.mask for s in batch]).astype(np.intp)
            probs, cache = unet_forward(model, x, mode="train")
            loss, grad = L.cross_entropy_loss(probs, L.one_hot(labels, model.n_classes))
            grads = unet_backward(model, cache, grad)
            adam_step(params, grads, state)
            model.version += 1
            batch_losses.append(loss)

        record = {"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                  "val_loss": None, "val_accuracy": None}
        if val:
            val_loss, val_acc = _evaluate(model, val, config.batch_size)
            record["val_loss"], record["val_accuracy"] = val_loss, val_acc
            if val_loss < best_loss:
                best_loss, best_state = val_loss, copy.deepcopy(model.state())
        log.append(record)
        logger.info("epoch %d: %s", epoch, record)
        if progress is not None:
            progress(record)

    if best_state is not None:
        model.load_state(best_state)
    return model, log


def predict_probs(model: UNetModel, images: Sequence[np.ndarray], batch_size: int = 2):
    out = []
    for start in range(0, len(images), batch_size):
        probs, _ = unet_forward(model, to_tensor(images[start:start + batch_size]), mode="infer")
        out.append(probs)
    return np.concatenate(out)


def predict_mask(model: UNetModel, img: np.ndarray, resolution=None) -> np.ndarray:
    """Per-pixel argmax label map; ties resolve to the lower class index.

    ``resolution`` is the ``(width, height)`` the model was trained at; a
    mismatching image raises ``ValueError``.
    """
    if resolution is not None and (img.shape[1], img.shape[0]) != tuple(resolution):
        raise ValueError(f"image is {img.shape[1]}x{img.shape[0]}, model expects "
                         f"{resolution[0]}x{resolution[1]}")
    probs = predict_probs(model, [img])[0]
    return labels_from_probs(probs)


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    return probs.argmax(axis=0).astype(np.uint8)
