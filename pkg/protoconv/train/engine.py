"""
Training Engine - episodic SGD with a poly learning-rate schedule
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from protoconv.core.config import get_settings, write_config
from protoconv.core.errors import EmptyForeground, EmptyMask, IoError, NonFiniteLoss
from protoconv.core.gradcheck import DEFAULT_STEP, central_difference, relative_error
from protoconv.core.models import EpochLog, GradcheckEntry, GradcheckReport, RunConfig, StepLog
from protoconv.core.ops import is_finite
from protoconv.core.tensor import GradTape, Tensor
from protoconv.data.episodes import Episode, FoldSplit, make_split, sample_episode
from protoconv.data.shapes import ShapeLibrary
from protoconv.eval.engine import evaluate
from protoconv.eval.scorers import MeanIoUScorer
from protoconv.model.params import GROUPS, ModelParams
from protoconv.model.sam import held_priors
from protoconv.train.losses import total_loss

logger = logging.getLogger(__name__)

STEP_FIELDS = ["epoch", "step", "lr", "loss_q", "loss_s", "loss_total"]
EPOCH_FIELDS = ["epoch", "train_loss", "train_miou", "val_miou"]
VAL_SEED_OFFSET = 7919


def poly_lr(lr0: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """lr0·(1 − iter/max_iter)^power, reaching 0 at max_iter"""
    frac = min(max(iteration / max_iter, 0.0), 1.0) if max_iter > 0 else 1.0
    return lr0 * (1.0 - frac) ** power


def cast_episode(ep: Episode, dtype) -> Episode:
    if ep.query_image.dtype == dtype:
        return ep
    return Episode(
        class_id=ep.class_id,
        support_images=[t.astype(dtype) for t in ep.support_images],
        support_masks=[t.astype(dtype) for t in ep.support_masks],
        query_image=ep.query_image.astype(dtype),
        query_mask=ep.query_mask.astype(dtype),
        seeds=ep.seeds,
    )


@dataclass
class EpisodeGradients:
    """Loss values and parameter gradients of one episode"""
    class_id: int
    loss_q: float
    loss_s: float
    loss_total: float
    grads: Dict[str, np.ndarray]
    prediction: np.ndarray
    target: np.ndarray


def episode_gradients(ep: Episode, params: ModelParams, cfg: RunConfig) -> EpisodeGradients:
    """
    Forward and backward pass for one episode on the calling thread's tape

    Raises:
        NonFiniteLoss: loss or gradient is NaN/Inf
    """
    names = params.trainable()
    with GradTape() as tape:
        parts = total_loss(ep, params, cfg)
    total = parts.total.item()
    if not math.isfinite(total):
        raise NonFiniteLoss(f"loss is {total} on an episode of class {ep.class_id}")
    grads = dict(zip(names, tape.gradient(parts.total, [params[n] for n in names])))
    if not all(is_finite(g) for g in grads.values()):
        raise NonFiniteLoss(f"non-finite gradient on an episode of class {ep.class_id}")
    return EpisodeGradients(
        class_id=ep.class_id,
        loss_q=parts.query.item(),
        loss_s=parts.support.item() if parts.support is not None else 0.0,
        loss_total=total,
        grads=grads,
        prediction=(parts.prediction.data >= 0.5),
        target=ep.query_mask.data,
    )


@dataclass
class TrainResult:
    params: ModelParams
    steps: List[StepLog] = field(default_factory=list)
    epochs: List[EpochLog] = field(default_factory=list)
    skipped_episodes: int = 0


class TrainingEngine:
    """
    Episodic trainer for one fold

    Each step samples `train.batch` episodes, averages their gradients in episode
    order and applies θ ← θ − lr·g. With `train.deterministic` the episodes run
    sequentially, otherwise on a thread pool of `train.workers`.
    """

    def __init__(
        self,
        cfg: RunConfig,
        split: Optional[FoldSplit] = None,
        out_dir: Optional[Path] = None,
        library: Optional[ShapeLibrary] = None,
        params: Optional[ModelParams] = None,
    ):
        self.cfg = cfg
        self.split = split or make_split(0, cfg.data.n_classes)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.library = library or ShapeLibrary.build(cfg.data.n_classes, size=cfg.data.image_size)
        self.dtype = np.float64 if cfg.train.precision == 64 else np.float32
        self.params = params or ModelParams.initialize(cfg, seed=cfg.train.seed, dtype=self.dtype)
        self.workers = 1 if cfg.train.deterministic else max(cfg.train.workers, get_settings().workers)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.cfg.train.episodes_per_epoch / self.cfg.train.batch)

    def _epoch_seeds(self, epoch: int) -> List[int]:
        rng = np.random.default_rng([self.cfg.train.seed, 101, epoch])
        return [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=self.cfg.train.episodes_per_epoch)]

    def _one(self, seed: int) -> Optional[EpisodeGradients]:
        ep = sample_episode(self.library, self.split, "train", self.cfg.train.shots, seed)
        try:
            return episode_gradients(cast_episode(ep, self.dtype), self.params, self.cfg)
        except (EmptyMask, EmptyForeground) as e:
            logger.warning("training episode %d skipped: %s", seed, e)
            return None

    def _run_batch(self, seeds: List[int], pool: Optional[ThreadPoolExecutor]) -> List[Optional[EpisodeGradients]]:
        if pool is None:
            return [self._one(s) for s in seeds]
        return list(pool.map(self._one, seeds))

    def _abort(self, snapshot: np.ndarray, error: NonFiniteLoss) -> None:
        self.params.assign(snapshot)
        logger.error("non-finite training state, restored last good parameters: %s", error)
        if self.out_dir is not None:
            self.params.save(self.out_dir / "last_good.ckpt")
        raise error

    def _prepare_out_dir(self) -> None:
        if self.out_dir is None:
            return
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create {self.out_dir}: {e}") from e
        write_config(self.cfg, self.out_dir / "config.txt")

    def run(self) -> TrainResult:
        """Train for `train.epochs` epochs; writes logs and checkpoints when out_dir is set"""
        cfg, tc = self.cfg, self.cfg.train
        self._prepare_out_dir()
        result = TrainResult(params=self.params)
        max_iter = tc.epochs * self.steps_per_epoch
        iteration = 0
        pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        try:
            for epoch in range(tc.epochs):
                frozen = self.params.apply_freeze(cfg, epoch)
                logger.debug("epoch %d: frozen encoder stages %s", epoch, frozen)
                scorer = MeanIoUScorer()
                epoch_losses: List[float] = []
                seeds = self._epoch_seeds(epoch)
                for step in range(self.steps_per_epoch):
                    batch_seeds = seeds[step * tc.batch: (step + 1) * tc.batch]
                    snapshot = self.params.vector()
                    try:
                        outcomes = self._run_batch(batch_seeds, pool)
                    except NonFiniteLoss as e:
                        self._abort(snapshot, e)
                    done = [o for o in outcomes if o is not None]
                    result.skipped_episodes += len(outcomes) - len(done)
                    lr = poly_lr(tc.lr0, iteration, max_iter, tc.poly_power)
                    iteration += 1
                    if not done:
                        continue
                    for name in done[0].grads:
                        g = sum(o.grads[name] for o in done) / len(done)
                        t = self.params[name]
                        t.data -= (lr * g).astype(t.dtype)
                    if not is_finite(self.params.vector()):
                        self._abort(snapshot, NonFiniteLoss(f"parameters became non-finite at step {iteration}"))
                    for o in done:
                        scorer.feed(o.prediction, o.target, o.class_id)
                    record = StepLog(
                        epoch=epoch,
                        step=iteration,
                        lr=lr,
                        loss_q=float(np.mean([o.loss_q for o in done])),
                        loss_s=float(np.mean([o.loss_s for o in done])),
                        loss_total=float(np.mean([o.loss_total for o in done])),
                    )
                    result.steps.append(record)
                    epoch_losses.extend(o.loss_total for o in done)

                val_miou = None
                if tc.val_episodes > 0:
                    val_miou = evaluate(
                        self.params, cfg, self.split, n_episodes=tc.val_episodes,
                        seed=cfg.eval.seed + VAL_SEED_OFFSET, library=self.library,
                    ).miou
                summary = EpochLog(
                    epoch=epoch,
                    train_loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                    train_miou=scorer.getval(),
                    val_miou=val_miou,
                )
                result.epochs.append(summary)
                logger.info("epoch %d: loss %.4f, train mIoU %.4f, val mIoU %s",
                            epoch, summary.train_loss, summary.train_miou,
                            "-" if val_miou is None else f"{val_miou:.4f}")
                self._write_logs(result)
                if self.out_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
                    self.params.save(self.out_dir / f"epoch_{epoch:03d}.ckpt")
        finally:
            if pool is not None:
                pool.shutdown()

        if self.out_dir is not None:
            self.params.save(self.out_dir / "final.ckpt")
        if result.skipped_episodes:
            logger.warning("%d training episodes skipped (empty mask at feature resolution)",
                           result.skipped_episodes)
        return result

    def _write_logs(self, result: TrainResult) -> None:
        if self.out_dir is None:
            return
        try:
            with open(self.out_dir / "steps.csv", "w", newline="", encoding="utf-8") as fp:
                writer = csv.DictWriter(fp, fieldnames=STEP_FIELDS)
                writer.writeheader()
                for row in result.steps:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.model_dump().items()})
            with open(self.out_dir / "epochs.csv", "w", newline="", encoding="utf-8") as fp:
                writer = csv.DictWriter(fp, fieldnames=EPOCH_FIELDS)
                writer.writeheader()
                for row in result.epochs:
                    values = row.model_dump()
                    writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                                     for k, v in values.items()})
        except OSError as e:
            raise IoError(f"cannot write training logs to {self.out_dir}: {e}") from e


def train(
    cfg: RunConfig,
    split: Optional[FoldSplit] = None,
    out_dir: Optional[Path] = None,
    library: Optional[ShapeLibrary] = None,
) -> TrainResult:
    return TrainingEngine(cfg, split, out_dir, library).run()


# ══════════════════════════════════════════════════════════════════════════════
# End-to-end gradient check
# ══════════════════════════════════════════════════════════════════════════════

def sample_param_indices(params: ModelParams, n_params: int, rng: np.random.Generator) -> List[int]:
    """n distinct flat indices, at least one from every parameter group present"""
    groups = params.groups()
    picks: List[int] = []
    for group in GROUPS:
        names = groups.get(group)
        if not names:
            continue
        name = names[int(rng.integers(len(names)))]
        picks.append(params.offset_of(name) + int(rng.integers(params[name].size)))
    taken = set(picks)
    remaining = [i for i in range(params.size) if i not in taken]
    extra = max(0, min(n_params - len(picks), len(remaining)))
    if extra:
        picks.extend(int(i) for i in rng.choice(remaining, size=extra, replace=False))
    return picks


def gradcheck_pipeline(
    cfg: RunConfig,
    n_params: int = 50,
    seed: int = 0,
    image_size: int = 32,
    h: float = DEFAULT_STEP,
    params: Optional[ModelParams] = None,
    episode: Optional[Episode] = None,
) -> GradcheckReport:
    """
    Tape gradient of the total loss vs central differences on sampled parameters

    Runs in 64-bit on a small episode. The SAM prior is held at its base-point
    value for the difference quotients, matching its stop-gradient role.

    Raises:
        NonFiniteLoss
    """
    if params is None:
        params = ModelParams.initialize(cfg, seed=seed, dtype=np.float64)
    else:
        params = params.astype(np.float64)
    for t in params.tensors.values():
        t.requires_grad = True
    if episode is None:
        library = ShapeLibrary.build(cfg.data.n_classes, size=image_size)
        episode = sample_episode(library, make_split(0, cfg.data.n_classes), "train", cfg.train.shots, seed)
    episode = cast_episode(episode, np.float64)

    with held_priors() as held:
        with GradTape() as tape:
            loss = total_loss(episode, params, cfg).total
        base = loss.item()
        if not math.isfinite(base):
            raise NonFiniteLoss(f"loss is {base}")
        analytic = np.concatenate([
            g.reshape(-1) for g in tape.gradient(loss, list(params.tensors.values()))
        ])

        def objective() -> Tensor:
            held.rewind()
            return total_loss(episode, params, cfg).total

        rng = np.random.default_rng([seed, 555])
        entries = []
        for flat in sample_param_indices(params, n_params, rng):
            name, local = params.locate(flat)
            numeric = central_difference(objective, params[name], local, h)
            entries.append(GradcheckEntry(
                group=params.group_of(name),
                name=name,
                index=local,
                analytic=float(analytic[flat]),
                numeric=numeric,
                rel_err=relative_error(numeric, float(analytic[flat])),
            ))

    report = GradcheckReport(
        entries=entries,
        max_rel_err=max((e.rel_err for e in entries), default=0.0),
        groups=sorted({e.group for e in entries}),
        step=h,
        loss=base,
    )
    logger.info("gradcheck over %d parameters: max rel err %.3e", len(entries), report.max_rel_err)
    return report
