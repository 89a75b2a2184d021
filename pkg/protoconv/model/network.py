"""
Pipeline wiring: encode → SAM → FFM → DCM → decode
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from protoconv.core.errors import ShapeMismatch
from protoconv.core.models import RunConfig
from protoconv.core.ops import add, mul, resize_bilinear
from protoconv.core.tensor import Tensor
from protoconv.data.episodes import Episode
from protoconv.model.dcm import (
    DynamicKernelSet,
    ForegroundVectors,
    assemble_xout,
    enhance_query,
    extract_foreground,
    generate_kernels,
    merge_shots,
    pool_prototypes,
)
from protoconv.model.decoder import decode
from protoconv.model.encoder import encode
from protoconv.model.ffm import (
    expand_prototype,
    feature_mask,
    filter_query,
    refine_pseudo_mask,
    support_prototype,
)
from protoconv.model.params import ModelParams
from protoconv.model.sam import ActivationSet, run_sam

logger = logging.getLogger(__name__)


@dataclass
class Intermediates:
    """Tensors produced along one forward pass, for inspection and tests"""
    x_q: Tensor
    x_q_high: Tensor
    x_s: List[Tensor] = field(default_factory=list)
    m_s: List[Tensor] = field(default_factory=list)
    prototype: Optional[Tensor] = None
    x_p: Optional[Tensor] = None
    activations: Optional[ActivationSet] = None
    m_pse_r: Optional[Tensor] = None
    x_filtered: Optional[Tensor] = None
    foreground: Optional[ForegroundVectors] = None
    p_s: Optional[Tensor] = None
    p_s2: Optional[Tensor] = None
    kernels: Optional[DynamicKernelSet] = None
    enhanced: List[Tensor] = field(default_factory=list)
    x_out: Optional[Tensor] = None
    prob: Optional[Tensor] = None


def forward_pass(
    support_images: Sequence[Tensor],
    support_masks: Sequence[Tensor],
    query_image: Tensor,
    params: ModelParams,
    cfg: RunConfig,
) -> Tuple[Tensor, Intermediates]:
    """
    Predict the query mask from k annotated supports

    Support masks are image-resolution and may be soft (the support-loss pass
    feeds the predicted query mask back in).

    Returns:
        (M̂_q at query image resolution, intermediates)

    Raises:
        EmptyMask, EmptyForeground
    """
    if not support_images or len(support_images) != len(support_masks):
        raise ShapeMismatch(f"{len(support_images)} support images, {len(support_masks)} masks")
    x_q, x_q_high = encode(query_image, params)
    _, h, w = x_q.shape
    inter = Intermediates(x_q=x_q, x_q_high=x_q_high)

    prototypes, sam_sets = [], []
    for image, mask in zip(support_images, support_masks):
        x_s, x_s_high = encode(image, params)
        m_s = feature_mask(mask, h, w)
        inter.x_s.append(x_s)
        inter.m_s.append(m_s)
        prototypes.append(support_prototype(x_s, mask))
        if cfg.sam.enabled:
            sam_sets.append(run_sam(x_s_high, m_s.data, x_q_high))

    # k-shot prototype: mean of per-shot prototypes
    prototype = prototypes[0]
    for p in prototypes[1:]:
        prototype = add(prototype, p)
    if len(prototypes) > 1:
        prototype = mul(prototype, 1.0 / len(prototypes))
    inter.prototype = prototype
    inter.x_p = expand_prototype(prototype, h, w)

    maps = None
    if cfg.sam.enabled:
        inter.activations = ActivationSet.average(sam_sets)
        maps = inter.activations.maps
        prior = inter.activations.m_pse0
    else:
        prior = np.ones((h, w), dtype=x_q.dtype)

    x_filtered = x_q
    if cfg.ffm.enabled:
        inter.m_pse_r = refine_pseudo_mask(x_q, prior, inter.x_p, params)
        x_filtered = filter_query(x_q, inter.m_pse_r)
    inter.x_filtered = x_filtered

    query_blocks = [x_filtered]
    if cfg.dcm.enabled:
        inter.foreground = merge_shots([extract_foreground(x, m) for x, m in zip(inter.x_s, inter.m_s)])
        inter.p_s, inter.p_s2 = pool_prototypes(inter.foreground, cfg.dcm.kernel_size, cfg.dcm.pool_variant)
        inter.kernels = generate_kernels(inter.p_s, inter.p_s2, params, cfg.dcm.kernels)
        inter.enhanced = enhance_query(x_filtered, inter.kernels)
        query_blocks = inter.enhanced

    inter.x_out = assemble_xout(query_blocks, inter.x_p, maps, inter.m_pse_r)
    inter.prob = decode(inter.x_out, params, cfg.decoder.aspp_dilations)
    out_h, out_w = query_image.shape[1:]
    return resize_bilinear(inter.prob, out_h, out_w), inter


def forward_episode(ep: Episode, params: ModelParams, cfg: RunConfig) -> Tuple[Tensor, Intermediates]:
    return forward_pass(ep.support_images, ep.support_masks, ep.query_image, params, cfg)


def predict(ep: Episode, params: ModelParams, cfg: RunConfig) -> np.ndarray:
    """Binary query prediction (M̂_q ≥ 0.5) without recording gradients"""
    prob, _ = forward_episode(ep, params, cfg)
    return (prob.data >= 0.5).astype(np.float64)
