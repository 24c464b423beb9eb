"""Forward and backward passes for the U-Net building blocks.

All tensors are float64 numpy arrays laid out ``(batch, channels, rows, cols)``.
Every ``*_forward`` returns its output together with whatever the matching
``*_backward`` needs.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEBUG = os.environ.get("GLAUCOSCREEN_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with a layer."""


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if DEBUG and not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {name}")
    return x


@dataclasses.dataclass
class ConvLayer:
    """3x3 convolution, stride 1, zero padding 1."""

    weights: np.ndarray  # (out_ch, in_ch, 3, 3)
    bias: np.ndarray  # (out_ch,)

    @classmethod
    def init(cls, in_ch: int, out_ch: int, rng: np.random.Generator) -> "ConvLayer":
        std = np.sqrt(2.0 / (in_ch * 9))
        return cls(rng.normal(0.0, std, size=(out_ch, in_ch, 3, 3)), np.zeros(out_ch))


@dataclasses.dataclass
class UpConvLayer:
    """2x2 transpose convolution with stride 2."""

    weights: np.ndarray  # (in_ch, out_ch, 2, 2)
    bias: np.ndarray  # (out_ch,)

    @classmethod
    def init(cls, in_ch: int, out_ch: int, rng: np.random.Generator) -> "UpConvLayer":
        std = np.sqrt(2.0 / (in_ch * 4))
        return cls(rng.normal(0.0, std, size=(in_ch, out_ch, 2, 2)), np.zeros(out_ch))


@dataclasses.dataclass
class PointwiseLayer:
    """1x1 convolution used as the final class projection."""

    weights: np.ndarray  # (out_ch, in_ch)
    bias: np.ndarray

    @classmethod
    def init(cls, in_ch: int, out_ch: int, rng: np.random.Generator) -> "PointwiseLayer":
        std = np.sqrt(2.0 / in_ch)
        return cls(rng.normal(0.0, std, size=(out_ch, in_ch)), np.zeros(out_ch))


@dataclasses.dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def init(cls, channels: int) -> "BatchNormLayer":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
        )


# ------------------------------------------------------------------ convolution


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv2d_forward(x: np.ndarray, layer: ConvLayer):
    out_ch, in_ch = layer.weights.shape[:2]
    if x.ndim != 4 or x.shape[1] != in_ch:
        raise ShapeError(f"conv expects {in_ch} input channels, got shape {x.shape}")
    n, _, h, w = x.shape
    cols = _im2col(x)
    out = cols @ layer.weights.reshape(out_ch, -1).T + layer.bias
    out = out.reshape(n, h, w, out_ch).transpose(0, 3, 1, 2)
    return check_finite("conv2d", np.ascontiguousarray(out)), cols


def conv2d_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray, cols=None):
    """Gradients ``(grad_x, grad_w, grad_b)`` of a 3x3 convolution."""
    out_ch, in_ch = layer.weights.shape[:2]
    n, _, h, w = x.shape
    if grad_out.shape != (n, out_ch, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output")
    if cols is None:
        cols = _im2col(x)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    grad_w = (g.T @ cols).reshape(layer.weights.shape)
    grad_b = g.sum(axis=0)
    dcols = (g @ layer.weights.reshape(out_ch, -1)).reshape(n, h, w, in_ch, 3, 3)
    padded = np.zeros((n, in_ch, h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            padded[:, :, ky:ky + h, kx:kx + w] += dcols[..., ky, kx].transpose(0, 3, 1, 2)
    return padded[:, :, 1:-1, 1:-1].copy(), grad_w, grad_b


def pointwise_forward(x: np.ndarray, layer: PointwiseLayer) -> np.ndarray:
    if x.shape[1] != layer.weights.shape[1]:
        raise ShapeError(f"1x1 conv expects {layer.weights.shape[1]} channels, got {x.shape[1]}")
    out = np.einsum("oc,nchw->nohw", layer.weights, x) + layer.bias[None, :, None, None]
    return check_finite("pointwise", out)


def pointwise_backward(x: np.ndarray, layer: PointwiseLayer, grad_out: np.ndarray):
    grad_x = np.einsum("oc,nohw->nchw", layer.weights, grad_out)
    grad_w = np.einsum("nohw,nchw->oc", grad_out, x)
    return grad_x, grad_w, grad_out.sum(axis=(0, 2, 3))


# --------------------------------------------------------------- transpose conv


def upconv2_forward(x: np.ndarray, layer: UpConvLayer) -> np.ndarray:
    in_ch, out_ch = layer.weights.shape[:2]
    if x.ndim != 4 or x.shape[1] != in_ch:
        raise ShapeError(f"upconv expects {in_ch} input channels, got shape {x.shape}")
    n, _, h, w = x.shape
    # out[n, o, 2i+a, 2j+b] = sum_c x[n, c, i, j] * W[c, o, a, b]
    out = np.tensordot(x, layer.weights, axes=([1], [0]))  # n, h, w, o, a, b
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, out_ch, 2 * h, 2 * w)
    return check_finite("upconv2", out + layer.bias[None, :, None, None])


def upconv2_backward(x: np.ndarray, layer: UpConvLayer, grad_out: np.ndarray):
    in_ch, out_ch = layer.weights.shape[:2]
    n, _, h, w = x.shape
    if grad_out.shape != (n, out_ch, 2 * h, 2 * w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match upconv output")
    g = grad_out.reshape(n, out_ch, h, 2, w, 2)
    grad_x = np.einsum("noiajb,coab->ncij", g, layer.weights, optimize=True)
    grad_w = np.einsum("ncij,noiajb->coab", x, g, optimize=True)
    return grad_x, grad_w, grad_out.sum(axis=(0, 2, 3))


# ------------------------------------------------------------- pointwise layers


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling; returns the pooled tensor and flat in-block argmax indices."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)  # first maximum in scan order
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def maxpool2_backward(indices: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = grad_out.shape
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, indices[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(n, c, 2 * h2, 2 * w2)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad: np.ndarray, a_channels: int):
    """Backward of :func:`concat_channels`."""
    return grad[:, :a_channels], grad[:, a_channels:]


# --------------------------------------------------------------- batch norm


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, mode: str = "train"):
    """Per-channel normalization.

    In ``train`` mode batch statistics (biased variance) are used and the
    running estimates are updated in place; ``infer`` uses the running
    estimates. Returns ``(out, cache)``.
    """
    g = layer.gamma[None, :, None, None]
    b = layer.beta[None, :, None, None]
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.epsilon)
        x_hat = (x - layer.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        return g * x_hat + b, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise ValueError("batch norm statistics need at least two values per channel")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    m = layer.momentum
    layer.running_mean[:] = m * layer.running_mean + (1 - m) * mean
    layer.running_var[:] = m * layer.running_var + (1 - m) * var
    return check_finite("batchnorm", g * x_hat + b), (x_hat, inv_std)


def batchnorm_backward(cache, layer: BatchNormLayer, grad_out: np.ndarray):
    """Gradients ``(grad_x, grad_gamma, grad_beta)`` for a train-mode forward."""
    x_hat, inv_std = cache
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    count = x_hat.shape[0] * x_hat.shape[2] * x_hat.shape[3]
    dx_hat = grad_out * layer.gamma[None, :, None, None]
    grad_x = (
        inv_std[None, :, None, None]
        / count
        * (
            count * dx_hat
            - dx_hat.sum(axis=(0, 2, 3))[None, :, None, None]
            - x_hat * (dx_hat * x_hat).sum(axis=(0, 2, 3))[None, :, None, None]
        )
    )
    return grad_x, grad_gamma, grad_beta


# ------------------------------------------------------------- softmax + loss


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    if logits.shape[1] < 2:
        raise ShapeError("softmax needs at least two classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """``(N, H, W)`` integer labels to an ``(N, n_classes, H, W)`` one-hot tensor."""
    return (labels[:, None, :, :] == np.arange(n_classes)[None, :, None, None]).astype(np.float64)


def cross_entropy_loss(probs: np.ndarray, target: np.ndarray):
    """Pixel-averaged categorical cross-entropy.

    Returns ``(loss, grad_logits)`` where the gradient is taken through the
    softmax that produced ``probs``.
    """
    if probs.shape != target.shape:
        raise ShapeError(f"prediction {probs.shape} and target {target.shape} differ")
    if not (np.all((target == 0) | (target == 1)) and np.all(target.sum(axis=1) == 1)):
        raise ValueError("target must be one-hot along the class axis")
    pixels = probs.shape[0] * probs.shape[2] * probs.shape[3]
    clamped = np.clip(probs, 1e-12, 1.0)
    loss = float(-(target * np.log(clamped)).sum() / pixels)
    return loss, (probs - target) / pixels
