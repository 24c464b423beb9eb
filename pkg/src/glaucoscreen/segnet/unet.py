"""Multi-class U-Net with hand-written backpropagation."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import layers as L
from .layers import BatchNormLayer, ConvLayer, PointwiseLayer, ShapeError, UpConvLayer

DEPTH = 4


class StaleCacheError(RuntimeError):
    """The activation cache was produced before the latest parameter update."""


class DoubleConv:
    """Two (3x3 conv -> batch norm -> ReLU) stages."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv1 = ConvLayer.init(in_ch, out_ch, rng)
        self.bn1 = BatchNormLayer.init(out_ch)
        self.conv2 = ConvLayer.init(out_ch, out_ch, rng)
        self.bn2 = BatchNormLayer.init(out_ch)

    def forward(self, x, mode):
        caches = []
        for conv, bn in ((self.conv1, self.bn1), (self.conv2, self.bn2)):
            z, cols = L.conv2d_forward(x, conv)
            y, bn_cache = L.batchnorm_forward(z, bn, mode)
            caches.append((x, cols, bn_cache, y))
            x = L.relu_forward(y)
        return x, caches

    def backward(self, caches, grad, grads: dict, prefix: str):
        stages = ((self.conv1, self.bn1, "1"), (self.conv2, self.bn2, "2"))
        for (conv, bn, k), (x, cols, bn_cache, y) in zip(reversed(stages), reversed(caches)):
            grad = L.relu_backward(y, grad)
            grad, grads[f"{prefix}.bn{k}.gamma"], grads[f"{prefix}.bn{k}.beta"] = (
                L.batchnorm_backward(bn_cache, bn, grad)
            )
            grad, grads[f"{prefix}.conv{k}.weight"], grads[f"{prefix}.conv{k}.bias"] = (
                L.conv2d_backward(x, conv, grad, cols)
            )
        return grad

    def parameters(self, prefix: str):
        for k, conv, bn in (("1", self.conv1, self.bn1), ("2", self.conv2, self.bn2)):
            yield f"{prefix}.conv{k}.weight", conv.weights
            yield f"{prefix}.conv{k}.bias", conv.bias
            yield f"{prefix}.bn{k}.gamma", bn.gamma
            yield f"{prefix}.bn{k}.beta", bn.beta

    def buffers(self, prefix: str):
        for k, bn in (("1", self.bn1), ("2", self.bn2)):
            yield f"{prefix}.bn{k}.running_mean", bn.running_mean
            yield f"{prefix}.bn{k}.running_var", bn.running_var


class UNetModel:
    """Four-stage encoder, bottleneck, four-stage decoder, 1x1 class head.

    Encoder stage ``i`` has ``base_channels * 2**i`` channels and the
    bottleneck ``base_channels * 16``. Input rows and cols must be divisible
    by 16.
    """

    def __init__(self, base_channels: int = 64, n_classes: int = 3, in_channels: int = 1,
                 seed: int = 0):
        self.base_channels = base_channels
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.version = 0
        rng = np.random.default_rng(seed)
        widths = [base_channels * 2**i for i in range(DEPTH + 1)]
        self.encoders = []
        prev = in_channels
        for i in range(DEPTH):
            self.encoders.append(DoubleConv(prev, widths[i], rng))
            prev = widths[i]
        self.bottleneck = DoubleConv(widths[DEPTH - 1], widths[DEPTH], rng)
        self.upconvs, self.decoders = [], []
        for i in reversed(range(DEPTH)):
            self.upconvs.append(UpConvLayer.init(widths[i + 1], widths[i], rng))
            self.decoders.append(DoubleConv(2 * widths[i], widths[i], rng))
        self.head = PointwiseLayer.init(widths[0], n_classes, rng)

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(DEPTH + 1)]

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Trainable arrays in fixed architectural order."""
        for i, enc in enumerate(self.encoders):
            yield from enc.parameters(f"enc{i}")
        yield from self.bottleneck.parameters("bottleneck")
        for j, (up, dec) in enumerate(zip(self.upconvs, self.decoders)):
            stage = DEPTH - 1 - j
            yield f"up{stage}.weight", up.weights
            yield f"up{stage}.bias", up.bias
            yield from dec.parameters(f"dec{stage}")
        yield "head.weight", self.head.weights
        yield "head.bias", self.head.bias

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        """Batch-norm running statistics (saved, but not trained)."""
        for i, enc in enumerate(self.encoders):
            yield from enc.buffers(f"enc{i}")
        yield from self.bottleneck.buffers("bottleneck")
        for j, dec in enumerate(self.decoders):
            yield from dec.buffers(f"dec{DEPTH - 1 - j}")

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(list(self.named_parameters()) + list(self.named_buffers()))

    def load_state(self, state: dict) -> None:
        own = self.state()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, arr in own.items():
            if arr.shape != state[name].shape:
                raise ValueError(f"{name}: shape {state[name].shape}, expected {arr.shape}")
            arr[...] = state[name]
        self.version += 1


def unet_forward(model: UNetModel, x: np.ndarray, mode: str = "train"):
    """Run the network; returns ``(probs, cache)``.

    ``probs`` has shape ``(batch, n_classes, rows, cols)`` and sums to one over
    the class axis.
    """
    if x.ndim != 4 or x.shape[1] != model.in_channels:
        raise ShapeError(f"expected (N, {model.in_channels}, H, W) input, got {x.shape}")
    factor = 2**DEPTH
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} is not divisible by {factor}")

    skips, enc_caches, pool_idx = [], [], []
    h = x
    for enc in model.encoders:
        h, c = enc.forward(h, mode)
        skips.append(h)
        enc_caches.append(c)
        h, idx = L.maxpool2_forward(h)
        pool_idx.append(idx)
    h, bott_cache = model.bottleneck.forward(h, mode)

    dec_caches, up_inputs = [], []
    for j, (up, dec) in enumerate(zip(model.upconvs, model.decoders)):
        up_inputs.append(h)
        u = L.upconv2_forward(h, up)
        h, c = dec.forward(L.concat_channels(u, skips[DEPTH - 1 - j]), mode)
        dec_caches.append(c)

    logits = L.pointwise_forward(h, model.head)
    probs = L.softmax_channels(logits)
    cache = {
        "version": model.version,
        "mode": mode,
        "enc": enc_caches,
        "pool": pool_idx,
        "bottleneck": bott_cache,
        "up_inputs": up_inputs,
        "dec": dec_caches,
        "head_input": h,
    }
    return probs, cache


def unet_backward(model: UNetModel, cache: dict, grad_logits: np.ndarray) -> dict:
    """Gradients for every trainable parameter, keyed like ``named_parameters``."""
    if cache["version"] != model.version:
        raise StaleCacheError("parameters changed since the forward pass")
    if cache["mode"] != "train":
        raise ValueError("backward requires a train-mode forward pass")
    grads: dict[str, np.ndarray] = {}
    g, grads["head.weight"], grads["head.bias"] = L.pointwise_backward(
        cache["head_input"], model.head, grad_logits
    )
    skip_grads = [None] * DEPTH
    for j in reversed(range(DEPTH)):
        up, dec = model.upconvs[j], model.decoders[j]
        stage = DEPTH - 1 - j
        g = dec.backward(cache["dec"][j], g, grads, f"dec{stage}")
        g_up, skip_grads[stage] = L.split_channels(g, up.weights.shape[1])
        g, grads[f"up{stage}.weight"], grads[f"up{stage}.bias"] = L.upconv2_backward(
            cache["up_inputs"][j], up, g_up
        )
    g = model.bottleneck.backward(cache["bottleneck"], g, grads, "bottleneck")
    for i in reversed(range(DEPTH)):
        g = L.maxpool2_backward(cache["pool"][i], g) + skip_grads[i]
        g = model.encoders[i].backward(cache["enc"][i], g, grads, f"enc{i}")
    return {name: grads[name] for name, _ in model.named_parameters()}
