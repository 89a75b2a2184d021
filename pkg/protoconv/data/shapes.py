"""
Procedural shape classes for the synthetic few-shot benchmark
Each class is a geometry family plus an appearance (color, texture, intensity band).
"""
import logging
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from protoconv.core.errors import DegenerateGeometry
from protoconv.core.ops import bilinear_matrix

logger = logging.getLogger(__name__)

FAMILIES = ("ring", "comb", "cross", "bars", "blob", "ellipse", "grid", "hollow-square")
# families whose every instance has at least one hole or slot
HOLED_FAMILIES = frozenset({"ring", "comb", "hollow-square"})

MIN_FG_FRACTION = 0.02
MAX_FG_FRACTION = 0.6
MAX_DRAWS = 16
NOISE_SIGMA = 0.05


class ShapeClass(BaseModel):
    """One synthetic object category"""
    model_config = ConfigDict(frozen=True)

    id: int
    family: str
    texture_freq: float
    intensity: Tuple[float, float]
    color: Tuple[float, float, float]
    scale: Tuple[float, float] = (0.25, 0.6)
    rotation: Tuple[float, float] = (0.0, 2 * np.pi)
    slots: int = Field(1, ge=0)


# ── geometry families, all in the object frame u, v ∈ [-1, 1] ─────────────────

def _ring(u, v, slots, rng):
    r = np.hypot(u, v)
    return (r <= 1.0) & (r >= 0.5)


def _comb(u, v, slots, rng):
    teeth = slots + 1
    spine = (np.abs(u) <= 1.0) & (v >= 0.55) & (v <= 1.0)
    phase = ((u + 1.0) / 2.0 * teeth) % 1.0
    tooth = (np.abs(u) <= 1.0) & (v >= -1.0) & (v < 0.55) & (phase < 0.55)
    return spine | tooth


def _cross(u, v, slots, rng):
    return ((np.abs(u) <= 0.3) & (np.abs(v) <= 1.0)) | ((np.abs(v) <= 0.3) & (np.abs(u) <= 1.0))


def _bars(u, v, slots, rng):
    n = max(slots, 2)
    phase = ((u + 1.0) / 2.0 * n) % 1.0
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0) & (phase < 0.5)


def _blob(u, v, slots, rng):
    out = np.zeros(u.shape, dtype=bool)
    for _ in range(3):
        cu, cv = rng.uniform(-0.45, 0.45, size=2)
        out |= np.hypot(u - cu, v - cv) <= rng.uniform(0.35, 0.55)
    return out


def _ellipse(u, v, slots, rng):
    aspect = rng.uniform(0.45, 0.8)
    return u ** 2 + (v / aspect) ** 2 <= 1.0


def _grid(u, v, slots, rng):
    n = max(slots, 2)
    body = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    pu = ((u + 1.0) / 2.0 * n) % 1.0
    pv = ((v + 1.0) / 2.0 * n) % 1.0
    holes = (pu > 0.3) & (pu < 0.7) & (pv > 0.3) & (pv < 0.7)
    return body & ~holes


def _hollow_square(u, v, slots, rng):
    r = np.maximum(np.abs(u), np.abs(v))
    return (r <= 1.0) & (r >= 0.55)


_GEOMETRY: Dict[str, Callable] = {
    "ring": _ring,
    "comb": _comb,
    "cross": _cross,
    "bars": _bars,
    "blob": _blob,
    "ellipse": _ellipse,
    "grid": _grid,
    "hollow-square": _hollow_square,
}


def _draw(shape_class: ShapeClass, size: int, rng: np.random.Generator):
    """One placement of the class: returns (mask, u, v) in pixel space"""
    scale = rng.uniform(*shape_class.scale)
    theta = rng.uniform(*shape_class.rotation)
    half = scale * size / 2.0
    margin = min(half * 1.42, size / 2.0)
    cx, cy = rng.uniform(margin, size - margin, size=2)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - cx, ys - cy
    u = (np.cos(theta) * dx + np.sin(theta) * dy) / half
    v = (-np.sin(theta) * dx + np.cos(theta) * dy) / half
    mask = _GEOMETRY[shape_class.family](u, v, shape_class.slots, rng)
    return mask, u, v


def _texture(shape_class: ShapeClass, u, v, rng: np.random.Generator) -> np.ndarray:
    """Per-channel foreground appearance [3×H×W]"""
    phi = rng.uniform(0, np.pi)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * shape_class.texture_freq * (u * np.cos(phi) + v * np.sin(phi)) / 2.0)
    lo, hi = shape_class.intensity
    level = lo + (hi - lo) * wave
    return np.asarray(shape_class.color)[:, None, None] * level[None]


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(0.1, 0.45, size=(3, 8, 8))
    up = bilinear_matrix(8, size)
    return np.einsum("yh,chw,xw->cyx", up, coarse, up)


def render(
    shape_class: ShapeClass,
    seed: int,
    size: int = 64,
    distractors: Sequence[ShapeClass] = (),
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render one textured instance over a cluttered background

    Deterministic in (class, seed, size, distractors). The object is composited
    on top of the distractor shapes; only the object is in the mask.

    Returns:
        image [3×size×size] float64, mask [size×size] in {0, 1}

    Raises:
        DegenerateGeometry: no draw in MAX_DRAWS met the foreground-fraction bounds
    """
    rng = np.random.default_rng([seed, shape_class.id])
    for _ in range(MAX_DRAWS):
        mask, u, v = _draw(shape_class, size, rng)
        fraction = mask.mean()
        if MIN_FG_FRACTION <= fraction <= MAX_FG_FRACTION:
            break
    else:
        raise DegenerateGeometry(
            f"class {shape_class.id} ({shape_class.family}) failed {MAX_DRAWS} draws at size {size}"
        )

    image = _background(size, rng)
    for other in distractors:
        other_mask, ou, ov = _draw(other, size, rng)
        image = np.where(other_mask[None], _texture(other, ou, ov, rng), image)
    image = np.where(mask[None], _texture(shape_class, u, v, rng), image)
    image = image + rng.normal(0.0, NOISE_SIGMA, size=image.shape)
    return image.astype(np.float64), mask.astype(np.float64)


class ShapeLibrary:
    """The full class set plus rendering with distractors from other classes"""

    def __init__(self, classes: Sequence[ShapeClass], size: int = 64):
        self.classes = list(classes)
        self.size = size
        self._by_id = {c.id: c for c in self.classes}

    @classmethod
    def build(cls, n_classes: int = 12, seed: int = 0, size: int = 64) -> "ShapeLibrary":
        """Deterministic class library; families cycle through FAMILIES"""
        rng = np.random.default_rng([seed, 9973])
        classes = []
        for cid in range(n_classes):
            family = FAMILIES[cid % len(FAMILIES)]
            lo = rng.uniform(0.45, 0.6)
            slots = {
                "comb": int(rng.integers(2, 4)),
                "bars": int(rng.integers(2, 4)),
                "grid": 2,
            }.get(family, 1)
            classes.append(ShapeClass(
                id=cid,
                family=family,
                texture_freq=float(rng.uniform(1.5, 4.5)),
                intensity=(float(lo), float(lo + 0.35)),
                color=tuple(float(c) for c in rng.uniform(0.4, 1.0, size=3)),
                slots=slots,
            ))
        return cls(classes, size=size)

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, class_id: int) -> ShapeClass:
        return self._by_id[class_id]

    def render(self, class_id: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Render class_id with 1–2 distractors drawn from the other classes"""
        rng = np.random.default_rng([seed, class_id, 7])
        others = [c for c in self.classes if c.id != class_id]
        count = int(rng.integers(1, 3)) if others else 0
        picks = rng.choice(len(others), size=min(count, len(others)), replace=False) if count else []
        return render(self[class_id], seed, self.size, [others[i] for i in picks])
