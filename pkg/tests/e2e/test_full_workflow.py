"""
Full workflow: train a tiny model, evaluate it, reload the checkpoint
"""
import pytest

from protoconv.core.config import load_config
from protoconv.eval.engine import EvaluationEngine
from protoconv.model.params import ModelParams
from protoconv.train.engine import TrainingEngine
from tests.conftest import tiny_config


@pytest.mark.e2e
@pytest.mark.slow
def test_train_evaluate_reload(tmp_path, library, split):
    cfg = tiny_config(train__epochs=3, train__episodes_per_epoch=6)
    result = TrainingEngine(cfg, split, out_dir=tmp_path, library=library).run()
    assert len(result.epochs) == 3

    engine = EvaluationEngine(cfg, split, library)
    report = engine.evaluate(result.params, n_episodes=10, seed=42)
    assert 0.0 <= report.miou <= 1.0
    assert 0.0 <= report.fb_iou <= 1.0
    assert set(report.per_class_iou) <= set(split.test_ids)

    saved_cfg = load_config(tmp_path / "config.txt")
    assert saved_cfg == cfg
    reloaded = ModelParams.load(tmp_path / "final.ckpt", saved_cfg)
    again = EvaluationEngine(saved_cfg, split, library).evaluate(reloaded, n_episodes=10, seed=42)
    assert again == report


@pytest.mark.e2e
@pytest.mark.slow
def test_k_shot_evaluation_of_one_shot_model(tmp_path, library, split):
    cfg = tiny_config(train__epochs=1)
    params = TrainingEngine(cfg, split, library=library).run().params
    engine = EvaluationEngine(cfg, split, library)
    one = engine.evaluate(params, n_episodes=6, shots=1, seed=9)
    five = engine.evaluate(params, n_episodes=6, shots=5, seed=9)
    assert one.shots == 1 and five.shots == 5
    assert one.fingerprint == five.fingerprint
