"""
Dual-direction BCE objective
L = L_q + λ·L_s, where L_s re-runs the network with the query (and its soft
prediction) as support and each support image as query.
"""
import logging
from typing import NamedTuple, Optional

from protoconv.core.errors import EmptyForeground, EmptyMask
from protoconv.core.models import RunConfig
from protoconv.core.ops import EPS_MASK, add, bce, mul
from protoconv.core.tensor import Tensor
from protoconv.data.episodes import Episode
from protoconv.model.network import forward_episode, forward_pass
from protoconv.model.params import ModelParams

logger = logging.getLogger(__name__)


class LossBreakdown(NamedTuple):
    total: Tensor
    query: Tensor
    support: Optional[Tensor]
    prediction: Tensor


def loss_query(pred: Tensor, target: Tensor) -> Tensor:
    """Mean BCE between M̂_q and M_q"""
    return bce(pred, target)


def loss_support(ep: Episode, pred_q: Tensor, params: ModelParams, cfg: RunConfig) -> Optional[Tensor]:
    """
    Average BCE of the role-swapped passes, one per support shot

    Returns None when the soft query prediction is too small to act as a
    support mask; the collapse is logged and the term is skipped.
    """
    if float(pred_q.data.sum()) < EPS_MASK:
        logger.warning("support pass skipped: predicted query mask has collapsed (class %d)", ep.class_id)
        return None
    losses = []
    for image, mask in zip(ep.support_images, ep.support_masks):
        try:
            pred_s, _ = forward_pass([ep.query_image], [pred_q], image, params, cfg)
        except (EmptyForeground, EmptyMask) as e:
            logger.warning("support pass skipped for one shot: %s", e)
            continue
        losses.append(bce(pred_s, mask))
    if not losses:
        return None
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return total if len(losses) == 1 else mul(total, 1.0 / len(losses))


def total_loss(ep: Episode, params: ModelParams, cfg: RunConfig) -> LossBreakdown:
    """L_q + λ·L_s; with λ = 0 the support pass is not run and L is L_q itself"""
    pred_q, _ = forward_episode(ep, params, cfg)
    l_q = loss_query(pred_q, ep.query_mask)
    lam = cfg.loss.lambda_
    if lam == 0.0:
        return LossBreakdown(total=l_q, query=l_q, support=None, prediction=pred_q)
    l_s = loss_support(ep, pred_q, params, cfg)
    if l_s is None:
        return LossBreakdown(total=l_q, query=l_q, support=None, prediction=pred_q)
    return LossBreakdown(total=add(l_q, mul(l_s, lam)), query=l_q, support=l_s, prediction=pred_q)
