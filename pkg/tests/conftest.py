"""
Shared fixtures: a tiny network config and episodes that survive feature downsampling
"""
import numpy as np
import pytest

from protoconv.core.config import build_config
from protoconv.data.episodes import make_split, sample_episode
from protoconv.data.shapes import ShapeLibrary
from protoconv.model.params import ModelParams
from protoconv.model.sam import resize_mask_nearest

TINY = {
    "data.image_size": 32,
    "encoder.stem_channels": 4,
    "encoder.mid_channels": 6,
    "encoder.high_channels": 8,
    "encoder.warmup_epochs": 0,
    "dcm.kernel_size": 3,
    "decoder.aspp_dilations": [1, 2],
    "train.batch": 2,
    "train.epochs": 2,
    "train.episodes_per_epoch": 4,
    "train.val_episodes": 2,
    "train.lr0": 0.01,
    "eval.episodes": 6,
}


def tiny_config(**overrides):
    """TINY plus overrides given as section__key=value"""
    flat = dict(TINY)
    flat.update({k.replace("__", "."): v for k, v in overrides.items()})
    return build_config(overrides=flat)


def visible_episode(library, split, phase="train", k=1, start=0, feature_size=8):
    """First episode from `start` whose masks all keep foreground at feature resolution"""
    for seed in range(start, start + 500):
        ep = sample_episode(library, split, phase, k, seed)
        masks = ep.support_masks + [ep.query_mask]
        if all(resize_mask_nearest(m, feature_size, feature_size).sum() > 0 for m in masks):
            return ep
    raise RuntimeError("no visible episode found")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def library():
    return ShapeLibrary.build(12, size=32)


@pytest.fixture(scope="session")
def split():
    return make_split(0, 12)


@pytest.fixture
def episode(library, split):
    return visible_episode(library, split)


@pytest.fixture
def two_shot_episode(library, split):
    return visible_episode(library, split, k=2, start=100)


@pytest.fixture
def params(tiny_cfg):
    return ModelParams.initialize(tiny_cfg, seed=0)
