"""
Segmentation scorers
Each scorer accumulates intersections and unions over fed episodes
"""
from typing import Dict, List, Union

import numpy as np

from protoconv.core.errors import ShapeMismatch
from protoconv.core.tensor import Tensor

MaskLike = Union[Tensor, np.ndarray]


def _binary(mask: MaskLike) -> np.ndarray:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return arr >= 0.5


def _counts(pred: MaskLike, gt: MaskLike):
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def _ratio(intersect: float, union: float) -> float:
    return 1.0 if union == 0 else intersect / union


def iou(pred: MaskLike, gt: MaskLike) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; 1 when both masks are empty"""
    p, g = _counts(pred, gt)
    return _ratio(float(np.sum(p & g)), float(np.sum(p | g)))


class BaseScorer:
    """Base class for accumulating scorers"""

    def __init__(self, name: str):
        self.name = name
        self.reset()

    def reset(self) -> None:
        raise NotImplementedError

    def feed(self, pred: MaskLike, gt: MaskLike, class_id: int) -> None:
        raise NotImplementedError

    def getval(self) -> float:
        raise NotImplementedError


class MeanIoUScorer(BaseScorer):
    """
    Per-class IoU from intersections and unions summed over all episodes of the
    class, averaged without weighting over the classes seen
    """

    def __init__(self):
        super().__init__("miou")

    def reset(self) -> None:
        self.intersect: Dict[int, float] = {}
        self.union: Dict[int, float] = {}

    def feed(self, pred: MaskLike, gt: MaskLike, class_id: int) -> None:
        p, g = _counts(pred, gt)
        self.intersect[class_id] = self.intersect.get(class_id, 0.0) + float(np.sum(p & g))
        self.union[class_id] = self.union.get(class_id, 0.0) + float(np.sum(p | g))

    def per_class(self) -> Dict[int, float]:
        return {c: _ratio(self.intersect[c], self.union[c]) for c in sorted(self.intersect)}

    def getval(self) -> float:
        values = list(self.per_class().values())
        return float(np.mean(values)) if values else 0.0


class FBIoUScorer(BaseScorer):
    """Class-agnostic mean of foreground and background IoU"""

    def __init__(self):
        super().__init__("fb_iou")

    def reset(self) -> None:
        self.fg = [0.0, 0.0]
        self.bg = [0.0, 0.0]

    def feed(self, pred: MaskLike, gt: MaskLike, class_id: int) -> None:
        p, g = _counts(pred, gt)
        self.fg[0] += float(np.sum(p & g))
        self.fg[1] += float(np.sum(p | g))
        self.bg[0] += float(np.sum(~p & ~g))
        self.bg[1] += float(np.sum(~p | ~g))

    @property
    def iou_fg(self) -> float:
        return _ratio(*self.fg)

    @property
    def iou_bg(self) -> float:
        return _ratio(*self.bg)

    def getval(self) -> float:
        return (self.iou_fg + self.iou_bg) / 2.0


def create_default_scorers() -> List[BaseScorer]:
    return [MeanIoUScorer(), FBIoUScorer()]
