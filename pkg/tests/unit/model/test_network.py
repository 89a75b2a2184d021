"""
End-to-end forward pass and module toggles
"""
import numpy as np
import pytest

from protoconv.core.ops import bce, masked_avg_pool
from protoconv.core.tensor import GradTape, Tensor
from protoconv.model.ffm import refine_pseudo_mask
from protoconv.model.network import forward_episode, forward_pass, predict
from protoconv.model.params import ModelParams
from tests.conftest import tiny_config


@pytest.mark.unit
def test_full_model_output(tiny_cfg, params, episode):
    prob, inter = forward_episode(episode, params, tiny_cfg)
    assert prob.shape == (32, 32)
    assert np.all((prob.data > 0) & (prob.data < 1))
    assert inter.x_out.shape == (tiny_cfg.xout_channels(), 8, 8)
    assert len(inter.enhanced) == 3
    assert inter.activations is not None and len(inter.activations.maps) == 3


@pytest.mark.unit
@pytest.mark.parametrize("sam,ffm,dcm", [
    (False, False, False), (True, False, False), (False, True, False), (False, False, True),
    (True, True, False), (True, False, True), (False, True, True),
])
def test_module_toggles(episode, sam, ffm, dcm):
    cfg = tiny_config(sam__enabled=sam, ffm__enabled=ffm, dcm__enabled=dcm)
    params = ModelParams.initialize(cfg, seed=1)
    prob, inter = forward_episode(episode, params, cfg)
    assert prob.shape == (32, 32)
    assert inter.x_out.shape[0] == cfg.xout_channels()
    assert (inter.activations is not None) == sam
    assert (inter.m_pse_r is not None) == ffm
    if not ffm:
        assert inter.x_filtered is inter.x_q
    if not dcm:
        np.testing.assert_array_equal(inter.x_out.data[:6], inter.x_filtered.data)
        assert inter.kernels is None


@pytest.mark.unit
def test_ffm_without_sam_uses_flat_prior(episode):
    """With SAM off the refinement sees x_q unchanged, as if M_pse0 were all ones"""
    cfg = tiny_config(sam__enabled=False, dcm__enabled=False)
    params = ModelParams.initialize(cfg, seed=2)
    _, inter = forward_episode(episode, params, cfg)
    ref = refine_pseudo_mask(inter.x_q, np.ones((8, 8)), inter.x_p, params)
    np.testing.assert_array_equal(inter.m_pse_r.data, ref.data)


@pytest.mark.unit
def test_k_shot_prototype_is_mean(tiny_cfg, params, two_shot_episode):
    _, inter = forward_episode(two_shot_episode, params, tiny_cfg)
    per_shot = [masked_avg_pool(x, m).data for x, m in zip(inter.x_s, inter.m_s)]
    np.testing.assert_allclose(inter.prototype.data, np.mean(per_shot, axis=0))
    assert inter.foreground.counts == tuple(int((m.data > 0).sum()) for m in inter.m_s)


@pytest.mark.unit
def test_parallel_pool_variant(episode):
    cfg = tiny_config(dcm__pool_variant="parallel", dcm__kernel_size=5)
    params = ModelParams.initialize(cfg, seed=0)
    _, inter = forward_episode(episode, params, cfg)
    assert inter.p_s.shape == (5, 6) and inter.p_s2.shape == (25, 6)
    assert inter.kernels.ker_s.shape == (5, 5, 6)


@pytest.mark.unit
def test_forward_is_deterministic(tiny_cfg, params, episode):
    a, _ = forward_episode(episode, params, tiny_cfg)
    b, _ = forward_episode(episode, params, tiny_cfg)
    assert a.data.tobytes() == b.data.tobytes()


@pytest.mark.unit
def test_predict_is_binary(tiny_cfg, params, episode):
    pred = predict(episode, params, tiny_cfg)
    assert pred.shape == (32, 32)
    assert set(np.unique(pred)) <= {0.0, 1.0}


@pytest.mark.unit
def test_soft_support_mask_is_accepted(tiny_cfg, params, episode):
    soft = Tensor(np.full((32, 32), 0.3))
    prob, inter = forward_pass([episode.query_image], [soft], episode.support_images[0], params, tiny_cfg)
    assert prob.shape == (32, 32)
    assert inter.foreground.n_fg == 64


@pytest.mark.unit
def test_high_level_stage_gets_no_gradient(tiny_cfg, params, episode):
    """The high-level branch only feeds the activation prior"""
    with GradTape() as tape:
        prob, _ = forward_episode(episode, params, tiny_cfg)
        loss = bce(prob, episode.query_mask)
    g3w, g3b, g1 = tape.gradient(loss, [params["encoder.stage3.weight"], params["encoder.stage3.bias"],
                                        params["encoder.stage1.weight"]])
    assert not np.any(g3w) and not np.any(g3b)
    assert np.any(g1)
