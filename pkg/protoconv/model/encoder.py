"""
Shared convolutional backbone
stage1 3→stem stride 2, stage2 stem→C stride 2, stage3 C→C_h dilation 2, ReLU after each.
"""
from typing import Tuple

from protoconv.core.errors import ShapeMismatch
from protoconv.core.ops import conv2d, relu
from protoconv.core.tensor import Tensor
from protoconv.model.params import ModelParams


def _stage(x: Tensor, params: ModelParams, stage: int, stride: int = 1, dilation: int = 1) -> Tensor:
    w = params[f"encoder.stage{stage}.weight"]
    b = params[f"encoder.stage{stage}.bias"]
    return relu(conv2d(x, w, b, stride=stride, dilation=dilation))


def encode(image: Tensor, params: ModelParams) -> Tuple[Tensor, Tensor]:
    """
    Mid-level and high-level features of one image

    Args:
        image: [3×H×W]

    Returns:
        (mid [C×H/4×W/4], high [C_h×H/4×W/4])
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f"encoder expects a 3×H×W image, got {image.shape}")
    x = _stage(image, params, 1, stride=2)
    mid = _stage(x, params, 2, stride=2)
    high = _stage(mid, params, 3, dilation=2)
    return mid, high
