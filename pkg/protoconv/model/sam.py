"""
Support activation: window-wise cosine matching of high-level features

The activation maps are a fixed prior for the rest of the network. Everything here
runs on raw arrays and never records on the gradient tape.
"""
import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from protoconv.core.errors import EmptyMask, ShapeMismatch, UnsupportedWindow
from protoconv.core.ops import EPS_MASK, cosine_matrix, minmax_norm, nearest_indices
from protoconv.core.tensor import Tensor

logger = logging.getLogger(__name__)

WINDOWS: Tuple[Tuple[int, int], ...] = ((5, 1), (3, 3), (1, 5))
ALLOWED_WINDOWS = WINDOWS + ((1, 1),)

ArrayOrTensor = Union[Tensor, np.ndarray]


def _array(x: ArrayOrTensor) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class ActivationSet:
    """Per-window activation maps and their mean (the initial pseudo mask)"""
    maps: List[np.ndarray]
    m_pse0: np.ndarray

    @classmethod
    def from_maps(cls, maps: Sequence[np.ndarray]) -> "ActivationSet":
        maps = [np.asarray(m) for m in maps]
        return cls(maps=maps, m_pse0=np.mean(np.stack(maps), axis=0))

    @classmethod
    def average(cls, sets: Sequence["ActivationSet"]) -> "ActivationSet":
        """k-shot merge: elementwise mean of the per-shot maps"""
        if len(sets) == 1:
            return sets[0]
        n = len(sets[0].maps)
        return cls.from_maps([np.mean([s.maps[i] for s in sets], axis=0) for i in range(n)])


@dataclass
class HeldPriors:
    """Records SAM results in call order and replays them after rewind()"""
    recorded: List[ActivationSet] = field(default_factory=list)
    replaying: bool = False
    cursor: int = 0

    def rewind(self) -> None:
        self.replaying = True
        self.cursor = 0


_held: ContextVar[Optional[HeldPriors]] = ContextVar("protoconv_held_priors", default=None)


@contextmanager
def held_priors() -> Iterator[HeldPriors]:
    """
    Hold the SAM prior fixed across repeated forward passes

    Finite differences of a stop-gradient branch must see it as a constant:
    the first pass records every activation set, later passes (after rewind)
    get the recorded sets back in the same call order.
    """
    held = HeldPriors()
    token = _held.set(held)
    try:
        yield held
    finally:
        _held.reset(token)


def check_window(window: Tuple[int, int]) -> Tuple[int, int]:
    dh, dw = (int(side) for side in window)
    if (dh, dw) not in ALLOWED_WINDOWS:
        raise UnsupportedWindow(f"window {window} is not one of {ALLOWED_WINDOWS}")
    return dh, dw


def region_features(x: ArrayOrTensor, window: Tuple[int, int]) -> np.ndarray:
    """
    Zero-padded window unfolding

    Entry [j, :, u] is the feature vector at offset j (row-major inside the
    window) around flattened position u.

    Returns:
        [dh·dw × Ch × H·W]
    """
    dh, dw = check_window(window)
    arr = _array(x)
    if arr.ndim != 3:
        raise ShapeMismatch(f"region_features expects [Ch×H×W], got {arr.shape}")
    ch, h, w = arr.shape
    ph, pw = dh // 2, dw // 2
    padded = np.pad(arr, ((0, 0), (ph, ph), (pw, pw)))
    out = np.empty((dh * dw, ch, h * w), dtype=arr.dtype)
    for a in range(dh):
        for b in range(dw):
            out[a * dw + b] = padded[:, a: a + h, b: b + w].reshape(ch, h * w)
    return out


def regional_corr(rs: np.ndarray, rq: np.ndarray) -> np.ndarray:
    """Corr[j, u, v] = cos(rs[j, :, u], rq[j, :, v]) for aligned offsets j"""
    if rs.ndim != 3 or rq.ndim != 3 or rs.shape[:2] != rq.shape[:2]:
        raise ShapeMismatch(f"region features {rs.shape} and {rq.shape} do not pair")
    return cosine_matrix(rs, rq)


def activation_map(corr: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Mean over offsets, max over support positions, then min-max normalization"""
    pooled = corr.mean(axis=0).max(axis=0)
    return minmax_norm(pooled.reshape(shape))


def resize_mask_nearest(mask: ArrayOrTensor, height: int, width: int) -> np.ndarray:
    arr = _array(mask)
    rows = nearest_indices(arr.shape[0], height)
    cols = nearest_indices(arr.shape[1], width)
    return arr[rows[:, None], cols[None, :]]


def run_sam(
    support_high: ArrayOrTensor,
    support_mask: ArrayOrTensor,
    query_high: ArrayOrTensor,
    windows: Sequence[Tuple[int, int]] = WINDOWS,
) -> ActivationSet:
    """
    Activation maps of the query for one support shot

    Args:
        support_high: x_s^h [Ch×H×W]
        support_mask: M_s at any resolution (resized nearest to H×W)
        query_high: x_q^h [Ch×Hq×Wq]

    Raises:
        EmptyMask: the resized support mask has no foreground
    """
    held = _held.get()
    if held is not None and held.replaying:
        result = held.recorded[held.cursor]
        held.cursor += 1
        return result
    xs, xq = _array(support_high), _array(query_high)
    if xs.ndim != 3 or xq.ndim != 3 or xs.shape[0] != xq.shape[0]:
        raise ShapeMismatch(f"SAM features {xs.shape} vs {xq.shape}")
    mask = resize_mask_nearest(support_mask, xs.shape[1], xs.shape[2])
    if mask.sum() < EPS_MASK:
        raise EmptyMask("support mask is empty at feature resolution")
    masked = xs * mask[None]
    maps = []
    for window in windows:
        corr = regional_corr(region_features(masked, window), region_features(xq, window))
        maps.append(activation_map(corr, xq.shape[1:]))
    result = ActivationSet.from_maps(maps)
    if held is not None:
        held.recorded.append(result)
    return result
