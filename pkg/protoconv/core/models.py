"""
Core data models for protoconv
Run configuration tree and report schemas (pydantic)
"""
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

KERNEL_ORDER = ("v", "h", "s")


def _split_list(value):
    """Accept `a,b,c` strings from config files as lists"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


# ══════════════════════════════════════════════════════════════════════════════
# Run configuration
# ══════════════════════════════════════════════════════════════════════════════

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DataConfig(_Section):
    """Synthetic benchmark geometry"""
    image_size: int = Field(64, ge=16)
    n_classes: int = Field(12, ge=4)

    @field_validator("image_size")
    @classmethod
    def divisible_by_four(cls, v: int) -> int:
        if v % 4:
            raise ValueError("image_size must be divisible by 4 (two stride-2 stages)")
        return v

    @field_validator("n_classes")
    @classmethod
    def four_folds(cls, v: int) -> int:
        if v % 4:
            raise ValueError("n_classes must split evenly into 4 folds")
        return v


class EncoderConfig(_Section):
    """Backbone widths and the per-stage freeze schedule"""
    stem_channels: int = Field(16, ge=1)
    mid_channels: int = Field(32, ge=1)
    high_channels: int = Field(64, ge=1)
    train_backbone: bool = True
    # stages kept frozen after warmup_epochs; the whole encoder is frozen before that
    freeze: List[int] = Field(default_factory=lambda: [1])
    warmup_epochs: int = Field(2, ge=0)

    @field_validator("freeze", mode="before")
    @classmethod
    def split_freeze(cls, v):
        return _split_list(v)

    @field_validator("freeze")
    @classmethod
    def valid_stages(cls, v: List[int]) -> List[int]:
        if any(stage not in (1, 2, 3) for stage in v):
            raise ValueError("freeze stages must be in {1, 2, 3}")
        return sorted(set(v))


class SamConfig(_Section):
    enabled: bool = True


class FfmConfig(_Section):
    enabled: bool = True


class DcmConfig(_Section):
    """Dynamic convolution options"""
    enabled: bool = True
    kernel_size: int = Field(5, ge=1)
    pool_variant: Literal["serial", "parallel"] = "serial"
    kernels: List[Literal["v", "h", "s"]] = Field(default_factory=lambda: list(KERNEL_ORDER))

    @field_validator("kernels", mode="before")
    @classmethod
    def split_kernels(cls, v):
        return _split_list(v)

    @field_validator("kernel_size")
    @classmethod
    def odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("dcm.kernel_size must be odd")
        return v

    @model_validator(mode="after")
    def normalize(self) -> "DcmConfig":
        # "no kernels" and "DCM off" are the same configuration
        kernels = [k for k in KERNEL_ORDER if k in set(self.kernels)]
        if not self.enabled or not kernels:
            self.enabled = False
            kernels = []
        self.kernels = kernels
        return self


class DecoderConfig(_Section):
    aspp_dilations: List[int] = Field(default_factory=lambda: [1, 2, 4])

    @field_validator("aspp_dilations", mode="before")
    @classmethod
    def split_aspp_dilations(cls, v):
        return _split_list(v)


class LossConfig(_Section):
    lambda_: float = Field(1.0, ge=0.0, alias="lambda")


class TrainConfig(_Section):
    """Optimizer and episode schedule"""
    lr0: float = Field(0.005, gt=0.0)
    batch: int = Field(4, ge=1)
    epochs: int = Field(30, ge=1)
    episodes_per_epoch: int = Field(100, ge=1)
    poly_power: float = Field(0.9, ge=0.0)
    shots: int = Field(1, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    deterministic: bool = True
    precision: Literal[32, 64] = 64
    val_episodes: int = Field(50, ge=0)
    checkpoint_every: int = Field(1, ge=0)

    @field_validator("precision", mode="before")
    @classmethod
    def parse_precision(cls, v):
        return int(v) if isinstance(v, str) else v


class EvalConfig(_Section):
    episodes: int = Field(200, ge=1)
    seed: int = 1000


class RunConfig(_Section):
    """Complete configuration of one training/evaluation run"""
    data: DataConfig = Field(default_factory=DataConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    sam: SamConfig = Field(default_factory=SamConfig)
    ffm: FfmConfig = Field(default_factory=FfmConfig)
    dcm: DcmConfig = Field(default_factory=DcmConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def baseline(self) -> bool:
        return not (self.sam.enabled or self.ffm.enabled or self.dcm.enabled)

    def xout_channels(self) -> int:
        """Channel count of the concatenated decoder input"""
        c = self.encoder.mid_channels
        query_blocks = len(self.dcm.kernels) if self.dcm.enabled else 1
        return query_blocks * c + c + (3 if self.sam.enabled else 0) + (1 if self.ffm.enabled else 0)


# ══════════════════════════════════════════════════════════════════════════════
# Reports
# ══════════════════════════════════════════════════════════════════════════════

class EvalReport(BaseModel):
    """Result of evaluating a model on sampled test episodes"""
    per_class_iou: Dict[int, float] = Field(default_factory=dict)
    miou: float
    fb_iou: float
    iou_fg: float
    iou_bg: float
    episodes: int
    shots: int
    fingerprint: str


class GradcheckEntry(BaseModel):
    group: str
    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


class GradcheckReport(BaseModel):
    """Tape gradient vs central differences over sampled parameters"""
    entries: List[GradcheckEntry] = Field(default_factory=list)
    max_rel_err: float = 0.0
    groups: List[str] = Field(default_factory=list)
    step: float
    loss: float


class AblationRow(BaseModel):
    setting: str
    fold: str
    miou: Optional[float] = None
    fb_iou: Optional[float] = None
    n_seeds: int = 0
    status: str = "ok"
    fingerprint: str = ""


class StepLog(BaseModel):
    """One optimizer step (row of steps.csv)"""
    epoch: int
    step: int
    lr: float
    loss_q: float
    loss_s: float
    loss_total: float


class EpochLog(BaseModel):
    """One epoch summary (row of epochs.csv)"""
    epoch: int
    train_loss: float
    train_miou: float
    val_miou: Optional[float] = None
