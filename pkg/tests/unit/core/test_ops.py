"""
Differentiable ops: brute-force oracles and finite-difference gradient checks
"""
import numpy as np
import pytest

from protoconv.core.errors import ChannelMismatch, EmptyMask, NonOddKernel, ShapeMismatch
from protoconv.core.gradcheck import grad_check, grad_check_all
from protoconv.core.ops import (
    EPS_BCE,
    adaptive_pool1d,
    add,
    bce,
    bilinear_matrix,
    concat,
    conv1d,
    conv2d,
    cosine_matrix,
    cosine_sim,
    depthwise_conv2d_dynamic,
    masked_avg_pool,
    matmul,
    minmax_norm,
    mul,
    nearest_indices,
    pool_matrix,
    relu,
    reshape,
    resize_bilinear,
    resize_nearest,
    sigmoid,
    sub,
    sum_all,
    take,
    transpose,
)
from protoconv.core.tensor import Tensor

TRIALS = 100
ORACLE_TOL = 1e-10
GRAD_TOL = 1e-6


def weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar Σ out·R with a fixed random R so every output element matters"""
    return sum_all(mul(out, Tensor(weights)))


# ── oracles ──────────────────────────────────────────────────────────────────

def conv2d_oracle(x, w, b, stride, dilation):
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[o] if b is not None else 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for bb in range(kw):
                            r = i * stride + a * dilation - ph
                            s = j * stride + bb * dilation - pw
                            if 0 <= r < h and 0 <= s < wd:
                                acc += w[o, c, a, bb] * x[c, r, s]
                out[o, i, j] = acc
    return out


def depthwise_oracle(x, ker):
    c, h, w = x.shape
    kh, kw, _ = ker.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        r, s = i + a - kh // 2, j + b - kw // 2
                        if 0 <= r < h and 0 <= s < w:
                            acc += ker[a, b, ch] * x[ch, r, s]
                out[ch, i, j] = acc
    return out


def adaptive_oracle(seq, target):
    n = seq.shape[0]
    rows = []
    for i in range(target):
        if n >= target:
            lo, hi = (i * n) // target, ((i + 1) * n) // target
            rows.append(seq[lo:hi].mean(axis=0))
        else:
            rows.append(seq[(i * n) // target])
    return np.stack(rows)


class TestOracles:
    """Randomized small instances against loop implementations"""

    @pytest.mark.unit
    def test_conv2d(self, rng):
        for _ in range(TRIALS):
            c_in, c_out = rng.integers(1, 4, size=2)
            h, w = rng.integers(3, 8, size=2)
            kh, kw = rng.choice([1, 3, 5], size=2)
            stride, dilation = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            x = rng.normal(size=(c_in, h, w))
            wt = rng.normal(size=(c_out, c_in, kh, kw))
            b = rng.normal(size=c_out)
            out = conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, dilation=dilation)
            expected = conv2d_oracle(x, wt, b, stride, dilation)
            assert out.shape == expected.shape
            assert np.max(np.abs(out.data - expected)) < ORACLE_TOL

    @pytest.mark.unit
    def test_depthwise(self, rng):
        for _ in range(TRIALS):
            c = int(rng.integers(1, 5))
            h, w = rng.integers(2, 8, size=2)
            kh, kw = rng.choice([1, 3, 5], size=2)
            x = rng.normal(size=(c, h, w))
            ker = rng.normal(size=(kh, kw, c))
            out = depthwise_conv2d_dynamic(Tensor(x), Tensor(ker))
            assert np.max(np.abs(out.data - depthwise_oracle(x, ker))) < ORACLE_TOL

    @pytest.mark.unit
    def test_masked_avg_pool(self, rng):
        for _ in range(TRIALS):
            c = int(rng.integers(1, 5))
            h, w = rng.integers(1, 7, size=2)
            x = rng.normal(size=(c, h, w))
            m = rng.uniform(size=(h, w)) * (rng.uniform(size=(h, w)) > 0.3)
            m.flat[int(rng.integers(m.size))] = 1.0
            expected = np.array([sum(x[k, i, j] * m[i, j] for i in range(h) for j in range(w)) / m.sum()
                                 for k in range(c)])
            out = masked_avg_pool(Tensor(x), Tensor(m))
            assert np.max(np.abs(out.data - expected)) < ORACLE_TOL

    @pytest.mark.unit
    def test_adaptive_pool1d(self, rng):
        for _ in range(TRIALS):
            n, target, c = int(rng.integers(1, 30)), int(rng.integers(1, 30)), int(rng.integers(1, 4))
            seq = rng.normal(size=(n, c))
            out = adaptive_pool1d(Tensor(seq), target)
            assert np.max(np.abs(out.data - adaptive_oracle(seq, target))) < ORACLE_TOL

    @pytest.mark.unit
    def test_cosine_matrix(self, rng):
        for _ in range(TRIALS):
            j, d, u, v = rng.integers(1, 5, size=4)
            a = rng.normal(size=(j, d, u))
            b = rng.normal(size=(j, d, v))
            out = cosine_matrix(a, b)
            for jj in range(j):
                for uu in range(u):
                    for vv in range(v):
                        x, y = a[jj, :, uu], b[jj, :, vv]
                        ref = float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y) + 1e-8)
                        assert abs(out[jj, uu, vv] - ref) < ORACLE_TOL


# ── behavior ─────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_conv2d_identity_kernel():
    x = Tensor(np.arange(12.0).reshape(1, 3, 4))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    w.data[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(x, w).data, x.data)


@pytest.mark.unit
def test_conv2d_rejects_even_kernel():
    with pytest.raises(NonOddKernel):
        conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


@pytest.mark.unit
def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


@pytest.mark.unit
def test_conv2d_stride_output_size():
    out = conv2d(Tensor(np.ones((1, 7, 5))), Tensor(np.ones((2, 1, 3, 3))), stride=2)
    assert out.shape == (2, 4, 3)


@pytest.mark.unit
def test_conv1d_matches_conv2d_row(rng):
    x = rng.normal(size=(3, 9))
    w = rng.normal(size=(2, 3, 3))
    out = conv1d(Tensor(x), Tensor(w))
    ref = conv2d_oracle(x[:, None, :], w[:, :, None, :], None, 1, 1)[:, 0, :]
    assert np.max(np.abs(out.data - ref)) < ORACLE_TOL


@pytest.mark.unit
def test_depthwise_channel_mismatch():
    with pytest.raises(ChannelMismatch):
        depthwise_conv2d_dynamic(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 3, 2))))


@pytest.mark.unit
def test_masked_avg_pool_empty_mask():
    with pytest.raises(EmptyMask):
        masked_avg_pool(Tensor(np.ones((2, 3, 3))), Tensor(np.zeros((3, 3))))


@pytest.mark.unit
def test_masked_avg_pool_constant_features():
    x = np.full((2, 4, 4), 3.5)
    m = np.zeros((4, 4))
    m[1, 2] = 0.25
    np.testing.assert_allclose(masked_avg_pool(Tensor(x), Tensor(m)).data, [3.5, 3.5])


@pytest.mark.unit
def test_pool_matrix_identity_and_repeat():
    np.testing.assert_array_equal(pool_matrix(5, 5), np.eye(5))
    up = pool_matrix(2, 5)
    assert up.sum(axis=1).tolist() == [1.0] * 5
    assert [int(np.argmax(r)) for r in up] == [0, 0, 0, 1, 1]


@pytest.mark.unit
def test_cosine_sim_zero_vector_is_zero():
    out = cosine_sim(Tensor(np.zeros(4)), Tensor(np.ones(4)))
    assert out.item() == 0.0


@pytest.mark.unit
def test_cosine_sim_parallel_vectors():
    out = cosine_sim(Tensor(np.array([1.0, 2.0])), Tensor(np.array([2.0, 4.0])))
    assert out.item() == pytest.approx(1.0, abs=1e-7)


@pytest.mark.unit
def test_nearest_indices_floor_rule():
    assert nearest_indices(8, 4).tolist() == [0, 2, 4, 6]
    assert nearest_indices(4, 8).tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


@pytest.mark.unit
def test_bilinear_rows_sum_to_one():
    for n_in, n_out in [(4, 16), (16, 4), (5, 7), (1, 3)]:
        np.testing.assert_allclose(bilinear_matrix(n_in, n_out).sum(axis=1), 1.0)


@pytest.mark.unit
def test_resize_bilinear_constant_map():
    x = Tensor(np.full((2, 3, 5), 0.7))
    out = resize_bilinear(x, 8, 9)
    assert out.shape == (2, 8, 9)
    np.testing.assert_allclose(out.data, 0.7)


@pytest.mark.unit
def test_resize_same_size_is_identity():
    x = Tensor(np.ones((4, 4)))
    assert resize_bilinear(x, 4, 4) is x
    assert resize_nearest(x, 4, 4) is x


@pytest.mark.unit
def test_minmax_norm_range_and_constant():
    out = minmax_norm(np.array([[2.0, 4.0], [6.0, 3.0]]))
    assert out.min() == 0.0 and out.max() == pytest.approx(1.0)
    np.testing.assert_array_equal(minmax_norm(np.full((3, 3), 5.0)), 0.0)


@pytest.mark.unit
def test_bce_known_value():
    p = Tensor(np.array([0.5, 0.5]))
    assert bce(p, np.array([1.0, 0.0])).item() == pytest.approx(np.log(2.0))


@pytest.mark.unit
def test_bce_clamps_saturated_predictions():
    loss = bce(Tensor(np.array([0.0, 1.0])), np.array([1.0, 0.0]))
    assert loss.item() == pytest.approx(-np.log(EPS_BCE), rel=1e-6)


@pytest.mark.unit
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_sigmoid_stays_inside_open_interval(dtype):
    p = sigmoid(Tensor(np.array([-800.0, -40.0, 0.0, 40.0, 800.0], dtype=dtype))).data
    assert p.dtype == dtype
    assert np.all(p > 0.0) and np.all(p < 1.0)
    assert p[2] == 0.5
    assert np.all(np.diff(p) >= 0)


@pytest.mark.unit
def test_broadcast_mask_over_channels_and_channel_vector():
    x = Tensor(np.ones((3, 2, 2)))
    m = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_array_equal(mul(x, m).data[2], m.data)
    v = Tensor(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(add(x, v).data[:, 0, 0], [2.0, 3.0, 4.0])


@pytest.mark.unit
def test_broadcast_rejects_incompatible():
    with pytest.raises(ShapeMismatch):
        add(Tensor(np.ones((3, 2))), Tensor(np.ones((4,))))


@pytest.mark.unit
def test_concat_rejects_off_axis_mismatch():
    with pytest.raises(ShapeMismatch):
        concat([Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 3, 2)))])


# ── gradient checks ──────────────────────────────────────────────────────────

class TestGradients:
    """Tape gradients vs central differences, 64-bit"""

    @pytest.mark.unit
    @pytest.mark.parametrize("stride,dilation", [(1, 1), (2, 1), (1, 2)])
    def test_conv2d(self, rng, stride, dilation):
        x = Tensor(rng.normal(size=(2, 5, 6)))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = Tensor(rng.normal(size=3))
        out_shape = conv2d(x, w, b, stride=stride, dilation=dilation).shape
        r = rng.normal(size=out_shape)
        f = lambda x, w, b: weighted(conv2d(x, w, b, stride=stride, dilation=dilation), r)  # noqa: E731
        assert grad_check_all(f, [x, w, b]) < GRAD_TOL

    @pytest.mark.unit
    def test_depthwise(self, rng):
        x = Tensor(rng.normal(size=(3, 5, 4)))
        ker = Tensor(rng.normal(size=(3, 1, 3)))
        r = rng.normal(size=(3, 5, 4))
        assert grad_check_all(lambda x, k: weighted(depthwise_conv2d_dynamic(x, k), r), [x, ker]) < GRAD_TOL

    @pytest.mark.unit
    def test_masked_avg_pool(self, rng):
        x = Tensor(rng.normal(size=(3, 4, 4)))
        m = Tensor(rng.uniform(0.1, 1.0, size=(4, 4)))
        r = rng.normal(size=3)
        assert grad_check_all(lambda x, m: weighted(masked_avg_pool(x, m), r), [x, m]) < GRAD_TOL

    @pytest.mark.unit
    @pytest.mark.parametrize("n,target", [(10, 3), (3, 9), (4, 4)])
    def test_adaptive_pool1d(self, rng, n, target):
        seq = Tensor(rng.normal(size=(n, 2)))
        r = rng.normal(size=(target, 2))
        assert grad_check(lambda s: weighted(adaptive_pool1d(s, target), r), seq) < GRAD_TOL

    @pytest.mark.unit
    def test_cosine_sim(self, rng):
        a, b = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))
        assert grad_check_all(cosine_sim, [a, b]) < GRAD_TOL

    @pytest.mark.unit
    def test_activations(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        r = rng.normal(size=(3, 4))
        assert grad_check(lambda t: weighted(sigmoid(t), r), x) < GRAD_TOL
        assert grad_check(lambda t: weighted(relu(t), r), x) < GRAD_TOL

    @pytest.mark.unit
    @pytest.mark.parametrize("size", [(7, 9), (2, 3)])
    def test_resizes(self, rng, size):
        x = Tensor(rng.normal(size=(2, 4, 5)))
        r = rng.normal(size=(2,) + size)
        assert grad_check(lambda t: weighted(resize_bilinear(t, *size), r), x) < GRAD_TOL
        assert grad_check(lambda t: weighted(resize_nearest(t, *size), r), x) < GRAD_TOL

    @pytest.mark.unit
    def test_bce(self, rng):
        p = Tensor(rng.uniform(0.1, 0.9, size=(4, 4)))
        y = Tensor(rng.uniform(size=(4, 4)))
        assert grad_check_all(bce, [p, y]) < GRAD_TOL

    @pytest.mark.unit
    def test_shape_plumbing(self, rng):
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 2)))
        r = rng.normal(size=(2, 3))
        assert grad_check_all(lambda a, b: weighted(transpose(matmul(a, b)), r), [a, b]) < GRAD_TOL
        r2 = rng.normal(size=(2, 6))
        gathered = lambda t: reshape(take(reshape(t, (6, 2)), [1, 1, 4, 0, 5, 3], axis=0), (2, 6))  # noqa: E731
        assert grad_check(lambda t: weighted(gathered(t), r2), a) < GRAD_TOL
        r3 = rng.normal(size=(6, 4))
        assert grad_check_all(lambda a, c: weighted(concat([a, c], axis=0), r3),
                              [a, Tensor(rng.normal(size=(3, 4)))]) < GRAD_TOL

    @pytest.mark.unit
    def test_broadcast_arithmetic(self, rng):
        x = Tensor(rng.normal(size=(3, 2, 2)))
        m = Tensor(rng.normal(size=(2, 2)))
        v = Tensor(rng.normal(size=3))
        r = rng.normal(size=(3, 2, 2))
        assert grad_check_all(lambda x, m, v: weighted(sub(add(mul(x, m), v), mul(x, x)), r), [x, m, v]) < GRAD_TOL
