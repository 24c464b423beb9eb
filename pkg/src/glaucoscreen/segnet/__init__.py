"""From-scratch numpy U-Net for three-class disc/cup segmentation."""

from .layers import (
    BatchNormLayer,
    ConvLayer,
    PointwiseLayer,
    ShapeError,
    UpConvLayer,
    batchnorm_backward,
    batchnorm_forward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    cross_entropy_loss,
    maxpool2_backward,
    maxpool2_forward,
    one_hot,
    relu_backward,
    relu_forward,
    softmax_channels,
    upconv2_backward,
    upconv2_forward,
)
from .optim import AdamState, adam_step
from .training import SegTrainConfig, pixel_accuracy, predict_mask, train_segmenter
from .unet import StaleCacheError, UNetModel, unet_backward, unet_forward
from .weights import (
    WeightFileError,
    WeightVersionError,
    load_weights,
    save_weights,
)

__all__ = [
    "AdamState",
    "BatchNormLayer",
    "ConvLayer",
    "PointwiseLayer",
    "SegTrainConfig",
    "ShapeError",
    "StaleCacheError",
    "UNetModel",
    "UpConvLayer",
    "WeightFileError",
    "WeightVersionError",
    "adam_step",
    "batchnorm_backward",
    "batchnorm_forward",
    "concat_channels",
    "conv2d_backward",
    "conv2d_forward",
    "cross_entropy_loss",
    "load_weights",
    "maxpool2_backward",
    "maxpool2_forward",
    "one_hot",
    "pixel_accuracy",
    "predict_mask",
    "relu_backward",
    "relu_forward",
    "save_weights",
    "softmax_channels",
    "train_segmenter",
    "unet_backward",
    "unet_forward",
    "upconv2_backward",
    "upconv2_forward",
]
