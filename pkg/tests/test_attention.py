import numpy as np
import pytest

from carseg import tensor as T
from carseg.attention import AttentionConfig, SaaMixer, attention_flops, axial_attention_core
from carseg.gradcheck import rel_error
from carseg.tensor import Tensor

from oracles import dense_attention_by_loops, softmax_row


def make_mixer(heads, c, seed=0):
    return SaaMixer(AttentionConfig(heads=heads, d_model=c), np.random.default_rng(seed))


def project_qkv(mixer, x):
    h = mixer.cpe(Tensor(x))
    conv = lambda w: T.conv2d(h, w).data
    return conv(mixer.wq), conv(mixer.wk), conv(mixer.wv)


class TestCpe:
    def test_zero_weights_identity(self):
        mixer = make_mixer(2, 4)
        mixer.cpe_w = Tensor(np.zeros_like(mixer.cpe_w.data), requires_grad=True)
        x = np.random.default_rng(1).normal(size=(5, 6, 4))
        assert np.array_equal(mixer.cpe(Tensor(x)).data, x)

    @pytest.mark.parametrize("hw", [(3, 8), (7, 2), (1, 5)])
    def test_shape_preserved(self, hw):
        mixer = make_mixer(2, 4)
        x = np.random.default_rng(2).normal(size=(*hw, 4))
        assert mixer.cpe(Tensor(x)).shape == x.shape


class TestSaaForward:
    @pytest.mark.parametrize("hw", [(1, 6), (6, 1)])
    def test_single_axis_equals_dense_attention(self, hw):
        # with one extent degenerate, the first pass is a 1-way softmax and
        # the whole mixer reduces to dense attention over the other axis
        mixer = make_mixer(2, 8, seed=3)
        x = np.random.default_rng(4).normal(size=(*hw, 8))
        q, k, v = project_qkv(mixer, x)
        dense = dense_attention_by_loops(q, k, v, heads=2, scale=mixer.cfg.scale)
        got = axial_attention_core(Tensor(q), Tensor(k), Tensor(v), 2, mixer.cfg.scale).data
        assert np.max(np.abs(got - dense)) <= 1e-10

    def test_constant_input_stays_constant(self):
        mixer = make_mixer(4, 8, seed=5)
        x = np.tile(np.random.default_rng(6).normal(size=(1, 1, 8)), (5, 7, 1))
        out = mixer.forward(Tensor(x)).data
        assert np.max(np.abs(out - out[0, 0])) < 1e-12

    def test_attention_rows_normalized_and_output_finite(self):
        mixer = make_mixer(4, 8, seed=7)
        x = np.random.default_rng(8).normal(size=(5, 7, 8))
        q, k, v = project_qkv(mixer, x)
        qh = q.reshape(5, 7, 4, 2)
        kh = k.reshape(5, 7, 4, 2)
        for w in range(7):
            for hd in range(4):
                scores = mixer.cfg.scale * qh[:, w, hd] @ kh[:, w, hd].T
                for row in scores:
                    assert abs(softmax_row(row).sum() - 1.0) < 1e-12
        assert np.isfinite(mixer.forward(Tensor(x)).data).all()

    def test_joint_permutation_equivariance(self):
        # attention proper is a set operation along each axis; the positional
        # conv is zeroed so it cannot re-introduce neighborhood order
        mixer = make_mixer(2, 8, seed=9)
        mixer.cpe_w = Tensor(np.zeros_like(mixer.cpe_w.data), requires_grad=True)
        x = np.random.default_rng(10).normal(size=(5, 6, 8))
        base = mixer.forward(Tensor(x)).data
        rng = np.random.default_rng(11)
        rows, cols = rng.permutation(5), rng.permutation(6)
        permuted = mixer.forward(Tensor(x[rows][:, cols])).data
        assert np.max(np.abs(permuted - base[rows][:, cols])) < 1e-12

    def test_column_then_row_differs_from_row_then_column(self):
        x = np.random.default_rng(12).normal(size=(4, 4, 8))
        cf = SaaMixer(AttentionConfig(heads=2, d_model=8, column_first=True),
                      np.random.default_rng(13))
        rf = SaaMixer(AttentionConfig(heads=2, d_model=8, column_first=False),
                      np.random.default_rng(13))
        assert not np.allclose(cf.forward(Tensor(x)).data, rf.forward(Tensor(x)).data)


class CountingMatmul:
    """Multiply counter mirroring the score+aggregate matmuls of attention."""

    def __init__(self):
        self.multiplies = 0

    def __call__(self, a, b):
        m, k = a.shape
        k2, n = b.shape
        assert k == k2
        self.multiplies += m * k * n
        return a @ b


def counted_dense_core(q, k, v, heads, counter):
    h, w, c = q.shape
    dh = c // heads
    n = h * w
    out = np.zeros((n, c))
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = counter(q.reshape(n, c)[:, sl], k.reshape(n, c)[:, sl].T)
        att = np.apply_along_axis(softmax_row, 1, scores)
        out[:, sl] = counter(att, v.reshape(n, c)[:, sl])
    return out.reshape(h, w, c)


def counted_saa_core(q, k, v, heads, counter):
    h, w, c = q.shape
    dh = c // heads
    mid = np.zeros_like(v)
    for col in range(w):
        for hd in range(heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            scores = counter(q[:, col, sl], k[:, col, sl].T)
            att = np.apply_along_axis(softmax_row, 1, scores)
            mid[:, col, sl] = counter(att, v[:, col, sl])
    out = np.zeros_like(v)
    for row in range(h):
        for hd in range(heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            scores = counter(q[row, :, sl], k[row, :, sl].T)
            att = np.apply_along_axis(softmax_row, 1, scores)
            out[row, :, sl] = counter(att, mid[row, :, sl])
    return out


class TestAttentionFlops:
    def test_ratio_64(self):
        dense = attention_flops(64, 64, 64, "dense")
        saa = attention_flops(64, 64, 64, "saa")
        assert saa.core / dense.core == (64 + 64) / (64 * 64)
        assert saa.core / dense.core == 1 / 32

    def test_degenerate_one_by_one(self):
        dense = attention_flops(1, 1, 16, "dense")
        saa = attention_flops(1, 1, 16, "saa")
        assert saa.core / dense.core == 2.0

    def test_counts_match_instrumented_counter_exactly(self):
        h = w = 8
        c, heads = 8, 2
        rng = np.random.default_rng(14)
        q, k, v = (rng.normal(size=(h, w, c)) for _ in range(3))

        counter = CountingMatmul()
        counted_dense_core(q, k, v, heads, counter)
        assert counter.multiplies == attention_flops(h, w, c, "dense").core

        counter = CountingMatmul()
        counted_saa_core(q, k, v, heads, counter)
        assert counter.multiplies == attention_flops(h, w, c, "saa").core

    def test_projection_cost_shared(self):
        assert attention_flops(8, 8, 16, "dense").projection == attention_flops(8, 8, 16, "saa").projection

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            attention_flops(0, 4, 4, "dense")
        with pytest.raises(ValueError):
            attention_flops(4, 4, 4, "sparse")
