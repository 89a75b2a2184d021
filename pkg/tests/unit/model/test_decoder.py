"""
Encoder and decoder heads
"""
import numpy as np
import pytest

from protoconv.core.errors import ShapeMismatch
from protoconv.core.gradcheck import grad_check
from protoconv.core.ops import mul, sum_all
from protoconv.core.tensor import Tensor
from protoconv.model.decoder import decode
from protoconv.model.encoder import encode


@pytest.mark.unit
def test_encoder_resolutions(tiny_cfg, params, rng):
    mid, high = encode(Tensor(rng.uniform(size=(3, 32, 32))), params)
    assert mid.shape == (tiny_cfg.encoder.mid_channels, 8, 8)
    assert high.shape == (tiny_cfg.encoder.high_channels, 8, 8)
    assert mid.data.min() >= 0.0 and high.data.min() >= 0.0


@pytest.mark.unit
def test_encoder_odd_sizes_round_up(params, rng):
    mid, _ = encode(Tensor(rng.uniform(size=(3, 30, 18))), params)
    assert mid.shape[1:] == (8, 5)


@pytest.mark.unit
def test_encoder_rejects_grayscale(params):
    with pytest.raises(ShapeMismatch):
        encode(Tensor(np.zeros((1, 32, 32))), params)


@pytest.mark.unit
def test_decoder_output(tiny_cfg, params, rng):
    x_out = Tensor(rng.normal(size=(tiny_cfg.xout_channels(), 8, 8)))
    prob = decode(x_out, params, tiny_cfg.decoder.aspp_dilations)
    assert prob.shape == (8, 8)
    assert np.all((prob.data > 0) & (prob.data < 1))


@pytest.mark.unit
def test_decoder_channel_mismatch(tiny_cfg, params, rng):
    with pytest.raises(ShapeMismatch):
        decode(Tensor(rng.normal(size=(tiny_cfg.xout_channels() + 1, 8, 8))), params, [1, 2])


@pytest.mark.unit
def test_decoder_zero_head_gives_half(tiny_cfg, params, rng):
    params["decoder.cls.weight"].data[...] = 0.0
    prob = decode(Tensor(rng.normal(size=(tiny_cfg.xout_channels(), 4, 4))), params, [1, 2])
    np.testing.assert_allclose(prob.data, 0.5)


@pytest.mark.unit
def test_decoder_gradient(tiny_cfg, params, rng):
    x_out = Tensor(rng.normal(size=(tiny_cfg.xout_channels(), 5, 5)))
    r = Tensor(rng.normal(size=(5, 5)))

    def f(_):
        return sum_all(mul(decode(x_out, params, [1, 2]), r))

    assert grad_check(f, params["decoder.cls.weight"]) < 1e-6
    assert grad_check(f, params["decoder.aspp2.weight"], indices=range(0, 324, 11)) < 1e-6
    assert grad_check(f, x_out, indices=range(0, x_out.size, 13)) < 1e-6
