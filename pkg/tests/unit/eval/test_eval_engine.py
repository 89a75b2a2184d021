"""
Evaluation engine over sampled test episodes
"""
import numpy as np
import pytest

from protoconv.core.tensor import Tensor
from protoconv.data.episodes import Episode
from protoconv.data.pgm import read_mask_pgm
from protoconv.eval.engine import EvaluationEngine, evaluate, model_predictor
from protoconv.eval.scorers import FBIoUScorer, MeanIoUScorer


def oracle(ep):
    return ep.query_mask.data


def background(ep):
    return np.zeros(ep.query_mask.shape)


@pytest.mark.unit
def test_oracle_predictor_scores_one(tiny_cfg, library, split):
    report = EvaluationEngine(tiny_cfg, split, library).evaluate(predictor=oracle, n_episodes=8, seed=3)
    assert report.miou == 1.0
    assert report.fb_iou == 1.0
    assert set(report.per_class_iou) <= set(split.test_ids)
    assert report.episodes == 8 and report.shots == 1


@pytest.mark.unit
def test_background_predictor(tiny_cfg, library, split):
    report = EvaluationEngine(tiny_cfg, split, library).evaluate(predictor=background, n_episodes=8)
    assert report.miou == 0.0
    assert report.iou_fg == 0.0
    assert 0.0 < report.iou_bg < 1.0
    assert report.fb_iou == pytest.approx(report.iou_bg / 2)


@pytest.mark.unit
def test_needs_params_or_predictor(tiny_cfg, library, split):
    with pytest.raises(ValueError):
        EvaluationEngine(tiny_cfg, split, library).evaluate()


@pytest.mark.unit
def test_model_evaluation_is_deterministic(tiny_cfg, library, split, params):
    a = evaluate(params, tiny_cfg, split, library=library, seed=11)
    b = evaluate(params, tiny_cfg, split, library=library, seed=11)
    assert a == b
    assert 0.0 <= a.miou <= 1.0
    assert a.episodes == tiny_cfg.eval.episodes


@pytest.mark.unit
def test_seed_enters_fingerprint(tiny_cfg, library, split):
    engine = EvaluationEngine(tiny_cfg, split, library)
    a = engine.evaluate(predictor=oracle, n_episodes=2, seed=1)
    b = engine.evaluate(predictor=oracle, n_episodes=2, seed=2)
    assert a.fingerprint != b.fingerprint


@pytest.mark.unit
def test_workers_match_sequential(tiny_cfg, library, split, params):
    seq = EvaluationEngine(tiny_cfg, split, library, workers=1).evaluate(params, n_episodes=4, seed=5)
    par = EvaluationEngine(tiny_cfg, split, library, workers=3).evaluate(params, n_episodes=4, seed=5)
    assert seq == par


@pytest.mark.unit
def test_dump_dir_writes_masks(tmp_path, tiny_cfg, library, split):
    out = tmp_path / "masks"
    EvaluationEngine(tiny_cfg, split, library).evaluate(predictor=oracle, n_episodes=3, dump_dir=out)
    files = sorted(out.glob("ep*_class*.pgm"))
    assert len(files) == 3
    assert files[0].name.startswith("ep0000_class")
    assert read_mask_pgm(files[0]).shape == (32, 32)


@pytest.mark.unit
def test_custom_scorer_is_reset_between_runs(tiny_cfg, library, split):
    engine = EvaluationEngine(tiny_cfg, split, library)
    engine.register_scorer(MeanIoUScorer())
    engine.register_scorer(FBIoUScorer())
    engine.evaluate(predictor=background, n_episodes=2)
    report = engine.evaluate(predictor=oracle, n_episodes=2)
    assert report.miou == 1.0


@pytest.mark.unit
def test_empty_support_predicts_background(tiny_cfg, params, episode):
    blank = Episode(
        class_id=episode.class_id,
        support_images=episode.support_images,
        support_masks=[Tensor(np.zeros((32, 32)))],
        query_image=episode.query_image,
        query_mask=episode.query_mask,
    )
    pred = model_predictor(params, tiny_cfg)(blank)
    assert pred.shape == (32, 32)
    assert not pred.any()
