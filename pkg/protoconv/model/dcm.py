"""
Dynamic convolution: kernels generated per episode from support foreground vectors
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from protoconv.core.errors import EmptyForeground, ShapeMismatch
from protoconv.core.models import KERNEL_ORDER
from protoconv.core.ops import (
    adaptive_pool1d,
    concat,
    conv1d,
    depthwise_conv2d_dynamic,
    mul,
    relu,
    reshape,
    resize_bilinear,
    take,
    transpose,
)
from protoconv.core.tensor import Tensor
from protoconv.model.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class ForegroundVectors:
    """P_fg [N_fg×C] with the per-shot row counts"""
    vectors: Tensor
    counts: Tuple[int, ...]

    @property
    def n_fg(self) -> int:
        return self.vectors.shape[0]


@dataclass
class DynamicKernelSet:
    """Generated depthwise kernels; ker_v [S×1×C], ker_h [1×S×C], ker_s [S×S×C]"""
    size: int
    kernels: Dict[str, Tensor] = field(default_factory=dict)

    @property
    def ker_v(self) -> Optional[Tensor]:
        return self.kernels.get("v")

    @property
    def ker_h(self) -> Optional[Tensor]:
        return self.kernels.get("h")

    @property
    def ker_s(self) -> Optional[Tensor]:
        return self.kernels.get("s")


def extract_foreground(x_s: Tensor, m_s: Tensor) -> ForegroundVectors:
    """
    Feature columns under the mask, scanned row-major

    m_s is already at feature resolution. Rows are x_s[:, u] · m_s[u] for every u
    with m_s[u] > 0, so a binary mask yields the raw columns.

    Raises:
        EmptyForeground: no position is inside the mask
    """
    c, h, w = x_s.shape
    if m_s.shape != (h, w):
        raise ShapeMismatch(f"mask {m_s.shape} vs features {x_s.shape}")
    index = np.flatnonzero(m_s.data.reshape(-1) > 0)
    if index.size == 0:
        raise EmptyForeground("support mask selects no feature positions")
    columns = take(reshape(x_s, (c, h * w)), index, axis=1)
    weights = take(reshape(m_s, (h * w,)), index, axis=0)
    return ForegroundVectors(vectors=transpose(mul(columns, weights)), counts=(int(index.size),))


def merge_shots(shots: Sequence[ForegroundVectors]) -> ForegroundVectors:
    """Concatenate per-shot foreground vectors in shot order"""
    shots = [s for s in shots if s is not None and s.n_fg > 0]
    if not shots:
        raise EmptyForeground("every support shot is empty")
    if len(shots) == 1:
        return shots[0]
    counts = tuple(n for s in shots for n in s.counts)
    return ForegroundVectors(vectors=concat([s.vectors for s in shots], axis=0), counts=counts)


def pool_prototypes(fg: ForegroundVectors, size: int, variant: str = "serial") -> Tuple[Tensor, Tensor]:
    """
    (p_s [S×C], p_s2 [S²×C]) from the foreground vectors

    serial pools p_s2 from p_s; parallel pools both from P_fg.
    """
    p_s = adaptive_pool1d(fg.vectors, size)
    if variant == "serial":
        p_s2 = adaptive_pool1d(p_s, size * size)
    elif variant == "parallel":
        p_s2 = adaptive_pool1d(fg.vectors, size * size)
    else:
        raise ValueError(f"unknown pool variant '{variant}'")
    return p_s, p_s2


def _generator(seq: Tensor, params: ModelParams, kind: str) -> Tensor:
    """Two 1D convs over the sequence axis with ReLU between; [L×C] -> [L×C]"""
    prefix = f"kernel_gen.{kind}"
    x = transpose(seq)
    hidden = relu(conv1d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"]))
    out = conv1d(hidden, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"])
    return transpose(out)


def generate_kernels(
    p_s: Tensor,
    p_s2: Tensor,
    params: ModelParams,
    kinds: Sequence[str] = KERNEL_ORDER,
) -> DynamicKernelSet:
    s, c = p_s.shape
    if p_s2.shape != (s * s, c):
        raise ShapeMismatch(f"p_s {p_s.shape} and p_s2 {p_s2.shape} disagree")
    shapes = {"v": (s, 1, c), "h": (1, s, c), "s": (s, s, c)}
    kernels = {}
    for kind in KERNEL_ORDER:
        if kind in kinds:
            source = p_s2 if kind == "s" else p_s
            kernels[kind] = reshape(_generator(source, params, kind), shapes[kind])
    return DynamicKernelSet(size=s, kernels=kernels)


def enhance_query(x: Tensor, kernels: DynamicKernelSet) -> List[Tensor]:
    """One depthwise convolution of x̃_q per generated kernel, in v, h, s order"""
    return [depthwise_conv2d_dynamic(x, kernels.kernels[k]) for k in KERNEL_ORDER if k in kernels.kernels]


def assemble_xout(
    query_blocks: Sequence[Tensor],
    x_p: Tensor,
    maps: Optional[Sequence[np.ndarray]] = None,
    m_pse_r: Optional[Tensor] = None,
) -> Tensor:
    """
    x_out = [query blocks | x_p | activation maps | m_pse_r] along channels

    Activation maps at another resolution are resized bilinear.
    """
    _, h, w = x_p.shape
    for block in query_blocks:
        if block.shape[1:] != (h, w):
            raise ShapeMismatch(f"query block {block.shape} vs prototype {x_p.shape}")
    parts = list(query_blocks) + [x_p]
    for m in maps or ():
        t = Tensor(np.asarray(m), dtype=x_p.dtype)
        if t.shape != (h, w):
            t = resize_bilinear(t, h, w)
        parts.append(reshape(t, (1, h, w)))
    if m_pse_r is not None:
        if m_pse_r.shape != (h, w):
            raise ShapeMismatch(f"m_pse_r {m_pse_r.shape} vs {(h, w)}")
        parts.append(reshape(m_pse_r, (1, h, w)))
    return concat(parts, axis=0)
