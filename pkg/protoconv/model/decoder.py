"""
Decoder: 1×1 projection, ASPP, classification head
"""
from typing import Sequence

from protoconv.core.errors import ShapeMismatch
from protoconv.core.ops import concat, conv2d, relu, reshape, sigmoid
from protoconv.core.tensor import Tensor
from protoconv.model.params import ModelParams


def aspp(features: Tensor, params: ModelParams, dilations: Sequence[int]) -> Tensor:
    """Parallel dilated 3×3 branches, concatenated then fused by a 1×1 conv"""
    branches = [
        conv2d(features, params[f"decoder.aspp{d}.weight"], params[f"decoder.aspp{d}.bias"], dilation=d)
        for d in dilations
    ]
    return relu(conv2d(concat(branches, axis=0), params["decoder.fuse.weight"], params["decoder.fuse.bias"]))


def decode(x_out: Tensor, params: ModelParams, dilations: Sequence[int] = (1, 2, 4)) -> Tensor:
    """Foreground probability [H×W] at feature resolution"""
    expected = params["decoder.conv.weight"].shape[1]
    if x_out.ndim != 3 or x_out.shape[0] != expected:
        raise ShapeMismatch(f"decoder expects {expected} input channels, got {x_out.shape}")
    f = relu(conv2d(x_out, params["decoder.conv.weight"], params["decoder.conv.bias"]))
    f = aspp(f, params, dilations)
    logits = conv2d(f, params["decoder.cls.weight"], params["decoder.cls.bias"])
    return reshape(sigmoid(logits), x_out.shape[1:])
