"""
Learnable weights of the segmentation network
Parameters live in one ordered name -> Tensor mapping; the iteration order is the
flat index used by gradient checks and checkpoints.
"""
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from protoconv.core.errors import ShapeMismatch
from protoconv.core.models import RunConfig
from protoconv.core.serialization import load_checkpoint, save_checkpoint
from protoconv.core.tensor import Tensor

logger = logging.getLogger(__name__)

GROUPS = ("encoder", "ffm", "kernel_gen", "decoder")
GEN_KERNEL = 3
ENCODER_STAGES = (1, 2, 3)
HIGH_LEVEL_STAGE = 3

Shape = Tuple[int, ...]


def param_shapes(cfg: RunConfig) -> "OrderedDict[str, Shape]":
    """Every parameter name and shape a config needs, in flat-index order"""
    enc = cfg.encoder
    c, ch, stem = enc.mid_channels, enc.high_channels, enc.stem_channels
    shapes: "OrderedDict[str, Shape]" = OrderedDict()

    shapes["encoder.stage1.weight"] = (stem, 3, 3, 3)
    shapes["encoder.stage1.bias"] = (stem,)
    shapes["encoder.stage2.weight"] = (c, stem, 3, 3)
    shapes["encoder.stage2.bias"] = (c,)
    shapes["encoder.stage3.weight"] = (ch, c, 3, 3)
    shapes["encoder.stage3.bias"] = (ch,)

    if cfg.ffm.enabled:
        shapes["ffm.refine.weight"] = (1, c, 3, 3)
        shapes["ffm.refine.bias"] = (1,)

    if cfg.dcm.enabled:
        for kind in cfg.dcm.kernels:
            for layer in ("conv1", "conv2"):
                shapes[f"kernel_gen.{kind}.{layer}.weight"] = (c, c, GEN_KERNEL)
                shapes[f"kernel_gen.{kind}.{layer}.bias"] = (c,)

    shapes["decoder.conv.weight"] = (c, cfg.xout_channels(), 1, 1)
    shapes["decoder.conv.bias"] = (c,)
    for d in cfg.decoder.aspp_dilations:
        shapes[f"decoder.aspp{d}.weight"] = (c, c, 3, 3)
        shapes[f"decoder.aspp{d}.bias"] = (c,)
    shapes["decoder.fuse.weight"] = (c, c * len(cfg.decoder.aspp_dilations), 1, 1)
    shapes["decoder.fuse.bias"] = (c,)
    shapes["decoder.cls.weight"] = (1, c, 3, 3)
    shapes["decoder.cls.bias"] = (1,)
    return shapes


def he_uniform(shape: Shape, rng: np.random.Generator) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in)"""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ModelParams:
    """
    Named parameter tensors grouped as encoder / ffm / kernel_gen / decoder

    Frozen parameters carry requires_grad=False and therefore never receive a
    gradient from the tape.
    """

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self.tensors = OrderedDict(tensors)

    @classmethod
    def initialize(cls, cfg: RunConfig, seed: int = 0, dtype=np.float64) -> "ModelParams":
        rng = np.random.default_rng([seed, 4242])
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, shape in param_shapes(cfg).items():
            data = np.zeros(shape) if name.endswith(".bias") else he_uniform(shape, rng)
            tensors[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
        params = cls(tensors)
        logger.debug("initialized %d tensors (%d scalars)", len(params), params.size)
        return params

    # ── mapping protocol ─────────────────────────────────────────────────────

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def groups(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for name in self.tensors:
            out.setdefault(self.group_of(name), []).append(name)
        return out

    # ── flat index ───────────────────────────────────────────────────────────

    @property
    def size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def locate(self, flat_index: int) -> Tuple[str, int]:
        """Map a flat scalar index to (tensor name, index inside that tensor)"""
        if not 0 <= flat_index < self.size:
            raise IndexError(f"flat index {flat_index} outside [0, {self.size})")
        for name, t in self.tensors.items():
            if flat_index < t.size:
                return name, flat_index
            flat_index -= t.size
        raise IndexError(flat_index)

    def offset_of(self, name: str) -> int:
        offset = 0
        for other, t in self.tensors.items():
            if other == name:
                return offset
            offset += t.size
        raise KeyError(name)

    def vector(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    def assign(self, vector: np.ndarray) -> None:
        if vector.shape != (self.size,):
            raise ShapeMismatch(f"vector of {vector.shape} for {self.size} parameters")
        offset = 0
        for t in self.tensors.values():
            t.data[...] = vector[offset: offset + t.size].reshape(t.shape)
            offset += t.size

    # ── training state ───────────────────────────────────────────────────────

    def trainable(self) -> List[str]:
        return [name for name, t in self.tensors.items() if t.requires_grad]

    def apply_freeze(self, cfg: RunConfig, epoch: int) -> List[int]:
        """
        Set requires_grad for this epoch's backbone schedule

        The encoder is frozen for the first warmup_epochs and starts training
        afterwards, except for the stages listed in encoder.freeze. Stage 3 only
        feeds the stop-gradient activation prior and is always frozen.

        Returns:
            encoder stages frozen for the epoch
        """
        enc = cfg.encoder
        if not enc.train_backbone or epoch < enc.warmup_epochs:
            frozen = list(ENCODER_STAGES)
        else:
            frozen = sorted(set(enc.freeze) | {HIGH_LEVEL_STAGE})
        for name, t in self.tensors.items():
            if self.group_of(name) == "encoder":
                stage = int(name.split(".")[1].removeprefix("stage"))
                t.requires_grad = stage not in frozen
            else:
                t.requires_grad = True
        return frozen

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(OrderedDict(
            (name, Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name))
            for name, t in self.tensors.items()
        ))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(OrderedDict(
            (name, Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=name))
            for name, t in self.tensors.items()
        ))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    # ── persistence ──────────────────────────────────────────────────────────

    def save(self, path: Path) -> None:
        save_checkpoint(self.tensors, path)

    @classmethod
    def load(cls, path: Path, cfg: Optional[RunConfig] = None) -> "ModelParams":
        """Load a checkpoint; with cfg, the names and shapes must match its layout"""
        loaded = load_checkpoint(path)
        if cfg is not None:
            expected = param_shapes(cfg)
            if list(expected) != list(loaded):
                missing = sorted(set(expected) - set(loaded))
                extra = sorted(set(loaded) - set(expected))
                raise ShapeMismatch(f"checkpoint {path} layout differs: missing {missing}, extra {extra}")
            for name, shape in expected.items():
                if loaded[name].shape != shape:
                    raise ShapeMismatch(f"{name}: checkpoint {loaded[name].shape}, config {shape}")
        tensors = OrderedDict()
        for name, t in loaded.items():
            tensors[name] = Tensor(t.data, requires_grad=True, name=name)
        return cls(tensors)
