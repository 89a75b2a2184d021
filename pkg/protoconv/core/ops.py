"""
Differentiable operation set
Everything the segmentation pipeline computes on tensors goes through these functions.
Convolutions are cross-correlations with zero "same" padding.
"""
import logging
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from protoconv.core.errors import (
    ChannelMismatch,
    EmptyMask,
    NonOddKernel,
    ShapeMismatch,
)
from protoconv.core.tensor import Function, Tensor, as_tensor

logger = logging.getLogger(__name__)

EPS_COS = 1e-8
EPS_MASK = 1e-6
EPS_BCE = 1e-7

Operand = Union[Tensor, float, int, np.ndarray]


# ══════════════════════════════════════════════════════════════════════════════
# Elementwise arithmetic with the two broadcast rules
# ══════════════════════════════════════════════════════════════════════════════

def _expanded_shape(small: Tuple[int, ...], big: Tuple[int, ...]) -> Optional[Tuple[int, ...]]:
    """
    Shape `small` must be viewed as to broadcast against `big`, or None

    Singleton expansion: same rank, every dim equal or 1 (scalars included).
    Channel expansion: a vector matching the leading dim of `big`, or a map
    matching the trailing dims of `big` (masks over channels).
    """
    if small == big:
        return small
    if len(small) == 0:
        return (1,) * len(big)
    if len(small) == len(big):
        if all(s == b or s == 1 for s, b in zip(small, big)):
            return small
        return None
    if len(small) == len(big) - 1 and small == big[1:]:
        return (1,) + small
    if len(small) == 1 and len(big) > 1 and small[0] == big[0]:
        return small + (1,) * (len(big) - 1)
    return None


def _unbroadcast(grad: np.ndarray, view: Tuple[int, ...], shape: Tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (v, g) in enumerate(zip(view, grad.shape)) if v == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Binary(Function):
    def forward(self, a, b, a_view, b_view):
        self.a_shape, self.b_shape = a.shape, b.shape
        self.a_view, self.b_view = a_view, b_view
        self.a, self.b = a.reshape(a_view), b.reshape(b_view)
        return self._op(self.a, self.b)


class _Add(_Binary):
    @staticmethod
    def _op(a, b):
        return a + b

    def backward(self, grad):
        return (
            _unbroadcast(grad, self.a_view, self.a_shape),
            _unbroadcast(grad, self.b_view, self.b_shape),
        )


class _Sub(_Binary):
    @staticmethod
    def _op(a, b):
        return a - b

    def backward(self, grad):
        return (
            _unbroadcast(grad, self.a_view, self.a_shape),
            _unbroadcast(-grad, self.b_view, self.b_shape),
        )


class _Mul(_Binary):
    @staticmethod
    def _op(a, b):
        return a * b

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.b, self.a_view, self.a_shape),
            _unbroadcast(grad * self.a, self.b_view, self.b_shape),
        )


_BINARY = {"add": _Add, "sub": _Sub, "mul": _Mul}


def elementwise(op: str, a: Operand, b: Operand) -> Tensor:
    """
    Elementwise add/sub/mul with singleton or channel expansion of either operand

    Raises:
        ShapeMismatch: when neither operand can be expanded to the other
    """
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op '{op}'")
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    if a.shape == b.shape:
        a_view, b_view = a.shape, b.shape
    elif (view := _expanded_shape(b.shape, a.shape)) is not None:
        a_view, b_view = a.shape, view
    elif (view := _expanded_shape(a.shape, b.shape)) is not None:
        a_view, b_view = view, b.shape
    else:
        raise ShapeMismatch(f"cannot {op} shapes {a.shape} and {b.shape}")
    return _BINARY[op].apply(a, b, a_view=a_view, b_view=b_view)


def add(a: Operand, b: Operand) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Operand, b: Operand) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Operand, b: Operand) -> Tensor:
    return elementwise("mul", a, b)


# ══════════════════════════════════════════════════════════════════════════════
# Linear algebra and shape plumbing
# ══════════════════════════════════════════════════════════════════════════════

class _MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [M×K] and b [K×N]"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul shapes {a.shape} and {b.shape} do not agree")
    return _MatMul.apply(a, b)


class _Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}")
    return _Reshape.apply(x, shape=shape)


class _Transpose(Function):
    def forward(self, x, axes):
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, self.inverse),)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    return _Transpose.apply(x, axes=axes)


class _Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis"""
    if not tensors:
        raise ShapeMismatch("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeMismatch(f"concat shapes {ref} and {t.shape} differ off axis {axis}")
    return _Concat.apply(*tensors, axis=axis)


class _Take(Function):
    def forward(self, x, index, axis):
        self.in_shape, self.index, self.axis = x.shape, index, axis
        return np.take(x, index, axis=axis)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.index, np.moveaxis(grad, self.axis, 0))
        return (out,)


def take(x: Tensor, index: Sequence[int], axis: int = 0) -> Tensor:
    """Gather slices along an axis (gradient scatters back)"""
    return _Take.apply(x, index=np.asarray(index, dtype=np.intp), axis=axis)


class _Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.in_shape, grad, dtype=grad.dtype),)


def sum_all(x: Tensor) -> Tensor:
    return _Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.size)


# ══════════════════════════════════════════════════════════════════════════════
# Convolutions
# ══════════════════════════════════════════════════════════════════════════════

def _check_odd(kh: int, kw: int) -> None:
    if kh % 2 == 0 or kw % 2 == 0:
        raise NonOddKernel(f"kernel {kh}×{kw} is not odd-sized")


class _Conv2d(Function):
    def forward(self, x, w, stride, dilation):
        c_in, h, wd = x.shape
        c_out, _, kh, kw = w.shape
        d, s = dilation, stride
        ph, pw = d * (kh - 1) // 2, d * (kw - 1) // 2
        ho, wo = (h - 1) // s + 1, (wd - 1) // s + 1
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
        self.xp, self.w = xp, w
        self.geom = (h, wd, ph, pw, ho, wo, s, d)
        out = np.zeros((c_out, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, i * d: i * d + s * (ho - 1) + 1: s, j * d: j * d + s * (wo - 1) + 1: s]
                out += np.tensordot(w[:, :, i, j], patch, axes=(1, 0))
        return out

    def backward(self, grad):
        h, wd, ph, pw, ho, wo, s, d = self.geom
        xp, w = self.xp, self.w
        _, _, kh, kw = w.shape
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i * d, i * d + s * (ho - 1) + 1, s)
                cols = slice(j * d, j * d + s * (wo - 1) + 1, s)
                dw[:, :, i, j] = np.tensordot(grad, xp[:, rows, cols], axes=([1, 2], [1, 2]))
                dxp[:, rows, cols] += np.tensordot(w[:, :, i, j], grad, axes=(0, 0))
        return dxp[:, ph: ph + h, pw: pw + wd], dw


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
) -> Tensor:
    """
    Zero-padded ("same") 2D cross-correlation

    Args:
        x: input [Cin×H×W]
        w: weights [Cout×Cin×kh×kw], kh and kw odd
        bias: optional [Cout]
        stride: output keeps ceil(H/stride)×ceil(W/stride) positions
        dilation: spacing between kernel taps

    Raises:
        ShapeMismatch, NonOddKernel
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"conv2d input {x.shape} vs weights {w.shape}")
    _check_odd(w.shape[2], w.shape[3])
    if dilation < 1 or stride < 1:
        raise ValueError("dilation and stride must be >= 1")
    out = _Conv2d.apply(x, w, stride=stride, dilation=dilation)
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise ShapeMismatch(f"bias {bias.shape} for {w.shape[0]} output channels")
        out = add(out, bias)
    return out


def conv1d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-padded 1D convolution of x [Cin×L] with w [Cout×Cin×k]"""
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeMismatch(f"conv1d input {x.shape} vs weights {w.shape}")
    c_in, length = x.shape
    c_out, _, k = w.shape
    out = conv2d(reshape(x, (c_in, 1, length)), reshape(w, (c_out, c_in, 1, k)), bias)
    return reshape(out, (c_out, length))


class _DepthwiseConv2d(Function):
    def forward(self, x, ker):
        _, h, w = x.shape
        kh, kw, _ = ker.shape
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
        self.xp, self.ker, self.geom = xp, ker, (h, w, ph, pw)
        out = np.zeros(x.shape, dtype=np.result_type(x, ker))
        for i in range(kh):
            for j in range(kw):
                out += ker[i, j, :, None, None] * xp[:, i: i + h, j: j + w]
        return out

    def backward(self, grad):
        h, w, ph, pw = self.geom
        xp, ker = self.xp, self.ker
        kh, kw, _ = ker.shape
        dxp = np.zeros_like(xp)
        dker = np.zeros_like(ker)
        for i in range(kh):
            for j in range(kw):
                dker[i, j, :] = (grad * xp[:, i: i + h, j: j + w]).sum(axis=(1, 2))
                dxp[:, i: i + h, j: j + w] += ker[i, j, :, None, None] * grad
        return dxp[:, ph: ph + h, pw: pw + w], dker


def depthwise_conv2d_dynamic(x: Tensor, ker: Tensor) -> Tensor:
    """
    Per-channel same-padded convolution with a generated kernel

    Channel c of x [C×H×W] is correlated with ker[:, :, c] of ker [kh×kw×C].
    Differentiable w.r.t. both x and ker.
    """
    if x.ndim != 3 or ker.ndim != 3:
        raise ShapeMismatch(f"depthwise input {x.shape} vs kernel {ker.shape}")
    if ker.shape[2] != x.shape[0]:
        raise ChannelMismatch(f"kernel has {ker.shape[2]} channels, features have {x.shape[0]}")
    _check_odd(ker.shape[0], ker.shape[1])
    return _DepthwiseConv2d.apply(x, ker)


# ══════════════════════════════════════════════════════════════════════════════
# Pooling and similarity
# ══════════════════════════════════════════════════════════════════════════════

class _MaskedAvgPool(Function):
    def forward(self, x, m):
        self.x, self.m = x, m
        self.total = m.sum()
        return (x * m[None]).sum(axis=(1, 2)) / self.total

    def backward(self, grad):
        p = (self.x * self.m[None]).sum(axis=(1, 2)) / self.total
        dx = grad[:, None, None] * self.m[None] / self.total
        dm = (grad[:, None, None] * (self.x - p[:, None, None])).sum(axis=0) / self.total
        return dx, dm


def masked_avg_pool(x: Tensor, m: Tensor) -> Tensor:
    """
    p[c] = Σ x[c]·m / Σ m

    Raises:
        EmptyMask: when Σ m < 1e-6
    """
    if x.ndim != 3 or m.shape != x.shape[1:]:
        raise ShapeMismatch(f"masked_avg_pool features {x.shape} vs mask {m.shape}")
    if float(m.data.sum()) < EPS_MASK:
        raise EmptyMask("mask sums to zero, nothing to pool")
    return _MaskedAvgPool.apply(x, m)


def pool_matrix(n: int, target: int, dtype=np.float64) -> np.ndarray:
    """
    Linear map [target×n] implementing adaptive 1D pooling

    n >= target averages contiguous bins [floor(i·n/t), floor((i+1)·n/t));
    n < target repeats row floor(i·n/t).
    """
    if n < 1 or target < 1:
        raise ValueError("pool sizes must be >= 1")
    mat = np.zeros((target, n), dtype=dtype)
    if n >= target:
        for i in range(target):
            lo, hi = (i * n) // target, ((i + 1) * n) // target
            mat[i, lo:hi] = 1.0 / (hi - lo)
    else:
        for i in range(target):
            mat[i, (i * n) // target] = 1.0
    return mat


def adaptive_pool1d(seq: Tensor, target: int) -> Tensor:
    """Pool (or nearest-upsample) the rows of seq [N×C] to target rows"""
    if seq.ndim != 2:
        raise ShapeMismatch(f"adaptive_pool1d expects [N×C], got {seq.shape}")
    return matmul(Tensor(pool_matrix(seq.shape[0], target, seq.dtype)), seq)


class _CosineSim(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        self.na, self.nb = np.linalg.norm(a), np.linalg.norm(b)
        self.den = self.na * self.nb + EPS_COS
        self.dot = float(a @ b)
        return np.asarray(self.dot / self.den, dtype=np.result_type(a, b))

    def backward(self, grad):
        da = self.b / self.den
        db = self.a / self.den
        if self.na > 0:
            da = da - self.dot * self.nb * self.a / (self.na * self.den ** 2)
        if self.nb > 0:
            db = db - self.dot * self.na * self.b / (self.nb * self.den ** 2)
        return grad * da, grad * db


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """a·b / (‖a‖‖b‖ + 1e-8); zero when either vector is zero"""
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch(f"cosine_sim needs equal vectors, got {a.shape} and {b.shape}")
    return _CosineSim.apply(a, b)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Batched cosine similarity between columns

    a [..., D, U], b [..., D, V] -> [..., U, V]; same ε rule as cosine_sim.
    Operates on raw arrays (no tape).
    """
    dots = np.einsum("...du,...dv->...uv", a, b)
    na = np.linalg.norm(a, axis=-2)
    nb = np.linalg.norm(b, axis=-2)
    return dots / (na[..., :, None] * nb[..., None, :] + EPS_COS)


# ══════════════════════════════════════════════════════════════════════════════
# Activations, resizing, normalization
# ══════════════════════════════════════════════════════════════════════════════

class _ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return _ReLU.apply(x)


class _Sigmoid(Function):
    def forward(self, x):
        info = np.finfo(x.dtype)
        # open interval (0, 1) even where exp saturates
        self.out = np.clip(np.exp(-np.logaddexp(0.0, -x)), info.tiny, 1.0 - info.epsneg)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


def sigmoid(x: Tensor) -> Tensor:
    return _Sigmoid.apply(x)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) * n_in) // n_out


class _ResizeNearest(Function):
    def forward(self, x, rows, cols):
        self.in_shape, self.rows, self.cols = x.shape, rows, cols
        return x[..., rows[:, None], cols[None, :]]

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        np.add.at(out, (Ellipsis, self.rows[:, None], self.cols[None, :]), grad)
        return (out,)


def resize_nearest(x: Tensor, height: int, width: int) -> Tensor:
    """Nearest-neighbour resize of [H×W] or [C×H×W]; source index floor(i·in/out)"""
    if height < 1 or width < 1:
        raise ValueError("resize target must be >= 1")
    h, w = x.shape[-2:]
    if (h, w) == (height, width):
        return x
    return _ResizeNearest.apply(x, rows=nearest_indices(h, height), cols=nearest_indices(w, width))


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Interpolation weights [n_out×n_in] with half-pixel centers; rows sum to 1"""
    mat = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        mat[o, i0] += 1.0 - frac
        mat[o, i1] += frac
    return mat


class _ResizeBilinear(Function):
    def forward(self, x, ry, rx):
        self.ry, self.rx = ry, rx
        return np.einsum("yh,...hw,xw->...yx", ry, x, rx)

    def backward(self, grad):
        return (np.einsum("yh,...yx,xw->...hw", self.ry, grad, self.rx),)


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resize of [H×W] or [C×H×W]"""
    if height < 1 or width < 1:
        raise ValueError("resize target must be >= 1")
    h, w = x.shape[-2:]
    if (h, w) == (height, width):
        return x
    return _ResizeBilinear.apply(
        x, ry=bilinear_matrix(h, height, x.dtype), rx=bilinear_matrix(w, width, x.dtype)
    )


def minmax_norm(m: Union[Tensor, np.ndarray]) -> np.ndarray:
    """(m − min)/(max − min + ε); a constant map normalizes to zeros. Not differentiable."""
    arr = m.data if isinstance(m, Tensor) else np.asarray(m)
    lo, hi = arr.min(), arr.max()
    if hi - lo < EPS_COS:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo + EPS_COS)


# ══════════════════════════════════════════════════════════════════════════════
# Loss
# ══════════════════════════════════════════════════════════════════════════════

class _BCE(Function):
    def forward(self, p, y):
        self.inside = (p > EPS_BCE) & (p < 1.0 - EPS_BCE)
        self.pc = np.clip(p, EPS_BCE, 1.0 - EPS_BCE)
        self.y = y
        self.n = p.size
        loss = -(y * np.log(self.pc) + (1.0 - y) * np.log(1.0 - self.pc))
        return np.asarray(loss.mean())

    def backward(self, grad):
        pc, y = self.pc, self.y
        dp = grad * (pc - y) / (pc * (1.0 - pc)) / self.n * self.inside
        dy = grad * (np.log(1.0 - pc) - np.log(pc)) / self.n
        return dp, dy


def bce(p: Tensor, y: Operand) -> Tensor:
    """
    Mean binary cross-entropy of probabilities p against targets y
    p is clamped to [1e-7, 1 − 1e-7] inside the loss only.
    """
    y = as_tensor(y, like=p)
    if p.shape != y.shape:
        raise ShapeMismatch(f"bce prediction {p.shape} vs target {y.shape}")
    return _BCE.apply(p, y)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def is_finite(x: Any) -> bool:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return bool(np.all(np.isfinite(arr)))
