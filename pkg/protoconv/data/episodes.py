"""
Fold splits and episode sampling
"""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from protoconv.core.errors import EmptyPool
from protoconv.core.tensor import Tensor
from protoconv.data.shapes import ShapeLibrary

logger = logging.getLogger(__name__)

N_FOLDS = 4
Phase = Literal["train", "test"]


class FoldSplit(BaseModel):
    """Disjoint meta-train / meta-test class sets for one fold"""
    model_config = ConfigDict(frozen=True)

    fold: int = Field(ge=0, lt=N_FOLDS)
    train_ids: List[int]
    test_ids: List[int]

    @model_validator(mode="after")
    def disjoint(self) -> "FoldSplit":
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"classes {sorted(overlap)} are in both train and test")
        return self

    def pool(self, phase: Phase) -> List[int]:
        return self.train_ids if phase == "train" else self.test_ids


def make_split(fold: int, n_classes: int = 12) -> FoldSplit:
    """Fold f tests on classes [f·n/4, (f+1)·n/4) and trains on the rest"""
    if n_classes % N_FOLDS:
        raise ValueError(f"{n_classes} classes do not split into {N_FOLDS} folds")
    per_fold = n_classes // N_FOLDS
    test = list(range(fold * per_fold, (fold + 1) * per_fold))
    train = [c for c in range(n_classes) if c not in test]
    return FoldSplit(fold=fold, train_ids=train, test_ids=test)


@dataclass
class Episode:
    """k support (image, mask) pairs plus one query of the same class"""
    class_id: int
    support_images: List[Tensor]
    support_masks: List[Tensor]
    query_image: Tensor
    query_mask: Tensor
    seeds: List[int] = field(default_factory=list)

    @property
    def shots(self) -> int:
        return len(self.support_images)


def _distinct_seeds(rng: np.random.Generator, count: int) -> List[int]:
    seeds: List[int] = []
    while len(seeds) < count:
        s = int(rng.integers(0, 2 ** 31 - 1))
        if s not in seeds:
            seeds.append(s)
    return seeds


def sample_episode(
    library: ShapeLibrary,
    split: FoldSplit,
    phase: Phase,
    k: int,
    seed: int,
) -> Episode:
    """
    Draw one episode from the phase's class pool

    The class is uniform over the pool; support and query are k+1 renders with
    distinct seeds. Fully determined by (library, split, phase, k, seed).

    Raises:
        EmptyPool: the phase has no classes
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pool: Sequence[int] = split.pool(phase)
    if not pool:
        raise EmptyPool(f"fold {split.fold} has no {phase} classes")
    rng = np.random.default_rng([seed, 17])
    class_id = int(pool[int(rng.integers(len(pool)))])
    seeds = _distinct_seeds(rng, k + 1)
    renders = [library.render(class_id, s) for s in seeds]
    images = [Tensor(img) for img, _ in renders]
    masks = [Tensor(mask) for _, mask in renders]
    return Episode(
        class_id=class_id,
        support_images=images[:k],
        support_masks=masks[:k],
        query_image=images[k],
        query_mask=masks[k],
        seeds=seeds,
    )


def episode_seeds(master_seed: int, count: int) -> List[int]:
    """Per-episode seeds of a reproducible episode stream"""
    rng = np.random.default_rng([master_seed, 31])
    return [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=count)]
