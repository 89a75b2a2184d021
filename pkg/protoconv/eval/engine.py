"""
Evaluation Engine - runs sampled test episodes through a predictor and the scorers
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from protoconv.core.config import compute_fingerprint, get_settings
from protoconv.core.errors import EmptyForeground, EmptyMask, IoError
from protoconv.core.models import EvalReport, RunConfig
from protoconv.data.episodes import Episode, FoldSplit, Phase, episode_seeds, sample_episode
from protoconv.data.pgm import write_mask_pgm
from protoconv.data.shapes import ShapeLibrary
from protoconv.eval.scorers import BaseScorer, create_default_scorers
from protoconv.model.network import predict
from protoconv.model.params import ModelParams

logger = logging.getLogger(__name__)

Predictor = Callable[[Episode], np.ndarray]


def model_predictor(params: ModelParams, cfg: RunConfig) -> Predictor:
    """Threshold the network output; support masks that vanish give an all-background answer"""

    def run(ep: Episode) -> np.ndarray:
        try:
            return predict(ep, params, cfg)
        except (EmptyMask, EmptyForeground) as e:
            logger.warning("episode of class %d predicted as background: %s", ep.class_id, e)
            return np.zeros(ep.query_mask.shape)

    return run


class EvaluationEngine:
    """
    Orchestrates evaluation of one model on one fold
    Samples episodes, runs the predictor and feeds every registered scorer
    """

    def __init__(
        self,
        cfg: RunConfig,
        split: FoldSplit,
        library: Optional[ShapeLibrary] = None,
        workers: Optional[int] = None,
    ):
        self.cfg = cfg
        self.split = split
        self.library = library or ShapeLibrary.build(cfg.data.n_classes, size=cfg.data.image_size)
        self.workers = workers or max(cfg.train.workers, get_settings().workers)
        self.scorers: List[BaseScorer] = []

    def register_scorer(self, scorer: BaseScorer) -> None:
        """Register a scorer to be fed during evaluation"""
        self.scorers.append(scorer)

    def _scorer(self, name: str) -> BaseScorer:
        for scorer in self.scorers:
            if scorer.name == name:
                return scorer
        raise KeyError(f"no scorer named '{name}' registered")

    def evaluate(
        self,
        params: Optional[ModelParams] = None,
        n_episodes: Optional[int] = None,
        shots: Optional[int] = None,
        seed: Optional[int] = None,
        phase: Phase = "test",
        predictor: Optional[Predictor] = None,
        dump_dir: Optional[Path] = None,
    ) -> EvalReport:
        """
        Score n_episodes sampled episodes

        Args:
            params: trained parameters (ignored when predictor is given)
            predictor: maps an episode to a binary query mask
            dump_dir: when set, every prediction is written as ep{idx}_class{cid}.pgm

        Returns:
            EvalReport with per-class IoU, mIoU and FB-IoU
        """
        n_episodes = n_episodes or self.cfg.eval.episodes
        shots = shots or self.cfg.train.shots
        seed = self.cfg.eval.seed if seed is None else seed
        if predictor is None:
            if params is None:
                raise ValueError("evaluate needs params or a predictor")
            predictor = model_predictor(params, self.cfg)
        if not self.scorers:
            for scorer in create_default_scorers():
                self.register_scorer(scorer)
        for scorer in self.scorers:
            scorer.reset()
        if dump_dir is not None:
            try:
                Path(dump_dir).mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise IoError(f"cannot create {dump_dir}: {e}") from e

        seeds = episode_seeds(seed, n_episodes)

        def run_one(episode_seed: int) -> Tuple[Episode, np.ndarray]:
            ep = sample_episode(self.library, self.split, phase, shots, episode_seed)
            return ep, predictor(ep)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outcomes = list(pool.map(run_one, seeds))
        else:
            outcomes = [run_one(s) for s in seeds]

        for idx, (ep, pred) in enumerate(outcomes):
            for scorer in self.scorers:
                scorer.feed(pred, ep.query_mask, ep.class_id)
            if dump_dir is not None:
                write_mask_pgm(pred, Path(dump_dir) / f"ep{idx:04d}_class{ep.class_id}.pgm")

        miou, fb = self._scorer("miou"), self._scorer("fb_iou")
        report = EvalReport(
            per_class_iou=miou.per_class(),
            miou=miou.getval(),
            fb_iou=fb.getval(),
            iou_fg=fb.iou_fg,
            iou_bg=fb.iou_bg,
            episodes=n_episodes,
            shots=shots,
            fingerprint=compute_fingerprint(self.cfg, seed),
        )
        logger.info("fold %d, %d-shot, %d episodes: mIoU %.4f, FB-IoU %.4f",
                    self.split.fold, shots, n_episodes, report.miou, report.fb_iou)
        return report


def evaluate(
    params: ModelParams,
    cfg: RunConfig,
    split: FoldSplit,
    phase: Phase = "test",
    n_episodes: Optional[int] = None,
    shots: Optional[int] = None,
    seed: Optional[int] = None,
    library: Optional[ShapeLibrary] = None,
) -> EvalReport:
    engine = EvaluationEngine(cfg, split, library)
    return engine.evaluate(params, n_episodes=n_episodes, shots=shots, seed=seed, phase=phase)
