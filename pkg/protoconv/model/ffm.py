"""
Feature filtering: support prototype, pseudo-mask refinement, query background suppression
"""
from typing import Union

import numpy as np

from protoconv.core.errors import ShapeMismatch
from protoconv.core.ops import add, conv2d, masked_avg_pool, mul, reshape, resize_nearest, sigmoid
from protoconv.core.tensor import Tensor, as_tensor
from protoconv.model.params import ModelParams


def feature_mask(mask: Tensor, height: int, width: int) -> Tensor:
    """Image-resolution mask resized (nearest) to the feature grid"""
    return resize_nearest(mask, height, width)


def support_prototype(x_s: Tensor, m_s: Tensor) -> Tensor:
    """p = masked average of x_s under M_s; raises EmptyMask"""
    _, h, w = x_s.shape
    return masked_avg_pool(x_s, feature_mask(m_s, h, w))


def expand_prototype(p: Tensor, height: int, width: int) -> Tensor:
    """x_p: the prototype repeated at every position [C×H×W]"""
    ones = Tensor(np.ones((p.shape[0], height, width), dtype=p.dtype))
    return mul(ones, p)


def refine_pseudo_mask(
    x_q: Tensor,
    m_pse0: Union[Tensor, np.ndarray],
    x_p: Tensor,
    params: ModelParams,
) -> Tensor:
    """
    m_pse_r = σ(conv3×3((x_q ⊗ M_pse0) ⊕ x_p))

    m_pse0 is a constant prior; returns [H×W] in (0, 1).
    """
    prior = as_tensor(m_pse0.data if isinstance(m_pse0, Tensor) else m_pse0, like=x_q)
    if prior.shape != x_q.shape[1:] or x_p.shape != x_q.shape:
        raise ShapeMismatch(f"refine inputs x_q {x_q.shape}, prior {prior.shape}, x_p {x_p.shape}")
    fused = add(mul(x_q, prior), x_p)
    logits = conv2d(fused, params["ffm.refine.weight"], params["ffm.refine.bias"])
    return reshape(sigmoid(logits), x_q.shape[1:])


def filter_query(x_q: Tensor, m_pse_r: Tensor) -> Tensor:
    """x̃_q = (x_q ⊗ m_pse_r) ⊕ x_q"""
    return add(mul(x_q, m_pse_r), x_q)
