"""
Finite-difference verification of tape gradients
"""
import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from protoconv.core.errors import NonFiniteLoss
from protoconv.core.tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5


def relative_error(numeric: float, analytic: float) -> float:
    """|g_fd − g_an| / max(1, |g_fd| + |g_an|)"""
    return abs(numeric - analytic) / max(1.0, abs(numeric) + abs(analytic))


def _scalar(loss: Tensor) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss is {value}")
    return value


def central_difference(
    f: Callable[[], Tensor],
    theta: Tensor,
    index: int,
    h: float = DEFAULT_STEP,
) -> float:
    """(f(θ + h·e_i) − f(θ − h·e_i)) / 2h, restoring θ afterwards"""
    flat = theta.data.reshape(-1)
    orig = flat[index]
    try:
        flat[index] = orig + h
        plus = _scalar(f())
        flat[index] = orig - h
        minus = _scalar(f())
    finally:
        flat[index] = orig
    return (plus - minus) / (2.0 * h)


def grad_check(
    f: Callable[[Tensor], Tensor],
    theta: Tensor,
    h: float = DEFAULT_STEP,
    indices: Optional[Iterable[int]] = None,
) -> float:
    """
    Compare the tape gradient of a scalar function with central differences

    Args:
        f: maps θ to a scalar tensor
        theta: 64-bit tensor; perturbed in place and restored
        h: difference step
        indices: flat positions to check (all by default)

    Returns:
        max relative error over the checked positions

    Raises:
        NonFiniteLoss: f produced NaN/Inf
    """
    if theta.dtype != np.float64:
        raise ValueError("grad_check needs a float64 tensor")
    was_tracked = theta.requires_grad
    theta.requires_grad = True
    try:
        with GradTape() as tape:
            loss = f(theta)
        _scalar(loss)
        (analytic,) = tape.gradient(loss, [theta])
        analytic = analytic.reshape(-1)
        positions = range(theta.size) if indices is None else indices
        worst = 0.0
        for i in positions:
            numeric = central_difference(lambda: f(theta), theta, i, h)
            worst = max(worst, relative_error(numeric, float(analytic[i])))
    finally:
        theta.requires_grad = was_tracked
    logger.debug("grad_check on %s: max rel err %.3e", theta.shape, worst)
    return worst


def grad_check_all(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = DEFAULT_STEP,
) -> float:
    """Max relative error over every input of a multi-argument scalar function"""
    worst = 0.0
    for k, theta in enumerate(inputs):
        def bound(t: Tensor, k: int = k) -> Tensor:
            args = list(inputs)
            args[k] = t
            return f(*args)
        worst = max(worst, grad_check(bound, theta, h))
    return worst
