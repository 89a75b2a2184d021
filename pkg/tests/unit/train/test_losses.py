"""
Query and support losses
"""
import numpy as np
import pytest

from protoconv.core.tensor import GradTape
from protoconv.model.params import ModelParams
from protoconv.train.losses import loss_support, total_loss
from tests.conftest import tiny_config


@pytest.mark.unit
def test_lambda_zero_is_query_loss(episode):
    cfg = tiny_config(loss__lambda=0.0)
    params = ModelParams.initialize(cfg, seed=0)
    parts = total_loss(episode, params, cfg)
    assert parts.support is None
    assert parts.total is parts.query
    assert parts.total.item() == parts.query.item()


@pytest.mark.unit
def test_total_combines_both_terms(episode):
    cfg = tiny_config(loss__lambda=0.5)
    params = ModelParams.initialize(cfg, seed=0)
    parts = total_loss(episode, params, cfg)
    assert parts.support is not None
    assert parts.total.item() == pytest.approx(parts.query.item() + 0.5 * parts.support.item(), rel=1e-12)


@pytest.mark.unit
def test_support_loss_averages_shots(two_shot_episode, tiny_cfg, params):
    parts = total_loss(two_shot_episode, params, tiny_cfg)
    assert parts.support.item() > 0.0


@pytest.mark.unit
def test_collapsed_prediction_skips_support_pass(episode, tiny_cfg, params):
    params["decoder.cls.bias"].data[...] = -1000.0
    parts = total_loss(episode, params, tiny_cfg)
    assert parts.support is None
    assert parts.total is parts.query
    assert loss_support(episode, parts.prediction, params, tiny_cfg) is None


@pytest.mark.unit
def test_bias_gradient_closed_form(episode):
    """Zero head, λ = 0: ∂L/∂b_cls = mean(0.5 − M_q)"""
    cfg = tiny_config(loss__lambda=0.0)
    params = ModelParams.initialize(cfg, seed=5)
    params["decoder.cls.weight"].data[...] = 0.0
    bias = params["decoder.cls.bias"]
    with GradTape() as tape:
        loss = total_loss(episode, params, cfg).total
    (g,) = tape.gradient(loss, [bias])
    assert loss.item() == pytest.approx(np.log(2.0))
    assert g[0] == pytest.approx(float(np.mean(0.5 - episode.query_mask.data)), abs=1e-12)


@pytest.mark.unit
def test_support_pass_contributes_gradient(episode):
    cfg_q = tiny_config(loss__lambda=0.0)
    cfg_qs = tiny_config(loss__lambda=1.0)
    params = ModelParams.initialize(cfg_q, seed=0)
    grads = []
    for cfg in (cfg_q, cfg_qs):
        with GradTape() as tape:
            loss = total_loss(episode, params, cfg).total
        grads.append(tape.gradient(loss, [params["kernel_gen.v.conv1.weight"]])[0])
    assert not np.allclose(grads[0], grads[1])
