"""Fusion tests: decoding bounds, attention normalization, convex composition."""

import numpy as np
import pytest

from xing import fusion as fu
from xing import tensor as tz
from xing.tensor import ContractError, ShapeError, Tensor


def rand_codes(rng, count, c=6, h=4, w=3):
    return [Tensor(rng.normal(size=(c, h, w))) for _ in range(count)]


class TestConfig:
    def test_codes_consumed(self):
        assert fu.FusionConfig(3, "dccaf").codes_consumed(t_stages=5) == 6
        assert fu.FusionConfig(3, "caf").codes_consumed(t_stages=5) == 1

    def test_invalid(self):
        with pytest.raises(ContractError):
            fu.FusionConfig(0, "dccaf")
        with pytest.raises(ContractError):
            fu.FusionConfig(2, "blend")


class TestDecode:
    def test_counts_and_shapes(self):
        rng = np.random.default_rng(0)
        codes = rand_codes(rng, 3)
        dec = fu.DecoderParams.init("dec", in_ch=18, n_candidates=10, rng=rng)
        imgs = fu.decode_intermediates(codes, dec, 10)
        assert len(imgs) == 10
        assert all(im.shape == (3, 16, 12) for im in imgs)

    def test_outputs_strictly_inside_unit_range(self):
        rng = np.random.default_rng(1)
        codes = rand_codes(rng, 2)
        dec = fu.DecoderParams.init("dec", in_ch=12, n_candidates=4, rng=rng)
        for im in fu.decode_intermediates(codes, dec, 4):
            assert np.abs(im.data).max() < 1.0

    def test_zeroed_weights_collapse_to_tanh_bias(self):
        rng = np.random.default_rng(2)
        codes = rand_codes(rng, 1)
        dec = fu.DecoderParams.init("dec", in_ch=6, n_candidates=2, rng=rng)
        for conv in (dec.conv1, dec.conv2, dec.head):
            conv.weight.data = np.zeros_like(conv.weight.data)
        dec.head.bias.data = np.linspace(-1.0, 1.0, 6)
        imgs = fu.decode_intermediates(codes, dec, 2)
        flat = np.concatenate([im.data for im in imgs])
        for ch in range(6):
            assert np.allclose(flat[ch], np.tanh(dec.head.bias.data[ch]), atol=1e-12)

    def test_empty_codes_rejected(self):
        rng = np.random.default_rng(3)
        dec = fu.DecoderParams.init("dec", in_ch=6, n_candidates=2, rng=rng)
        with pytest.raises(ContractError):
            fu.decode_intermediates([], dec, 2)

    def test_candidate_count_must_match(self):
        rng = np.random.default_rng(4)
        dec = fu.DecoderParams.init("dec", in_ch=6, n_candidates=2, rng=rng)
        with pytest.raises(ContractError):
            fu.decode_intermediates(rand_codes(rng, 1), dec, 3)


class TestCoAttention:
    def test_channel_counts_and_sums(self):
        rng = np.random.default_rng(5)
        codes_i, codes_p = rand_codes(rng, 2), rand_codes(rng, 2)
        prm = fu.CoAttentionParams.init("att", stacked_ch=24, n_candidates=10, rng=rng)
        attn = fu.co_attention(codes_i, codes_p, prm, 10)
        assert attn.shape == (21, 16, 12)
        sums = attn.data.sum(axis=0)
        assert np.abs(sums - 1.0).max() <= 1e-9
        assert (attn.data > 0).all()

    def test_zeroed_conv_gives_uniform(self):
        rng = np.random.default_rng(6)
        codes_i, codes_p = rand_codes(rng, 1), rand_codes(rng, 1)
        prm = fu.CoAttentionParams.init("att", stacked_ch=12, n_candidates=3, rng=rng)
        prm.conv.weight.data = np.zeros_like(prm.conv.weight.data)
        attn = fu.co_attention(codes_i, codes_p, prm, 3)
        assert np.allclose(attn.data, 1.0 / 7.0, atol=1e-12)

    def test_spatial_mismatch_rejected(self):
        rng = np.random.default_rng(7)
        prm = fu.CoAttentionParams.init("att", stacked_ch=12, n_candidates=2, rng=rng)
        with pytest.raises(ShapeError):
            fu.co_attention(rand_codes(rng, 1, h=4), rand_codes(rng, 1, h=5), prm, 2)


class TestCompose:
    def test_one_hot_selects_source_bitwise(self):
        rng = np.random.default_rng(8)
        n, h, w = 3, 5, 4
        apps = [Tensor(rng.normal(size=(3, h, w))) for _ in range(n)]
        shapes = [Tensor(rng.normal(size=(3, h, w))) for _ in range(n)]
        i_s = Tensor(rng.uniform(-1, 1, size=(3, h, w)))
        attn = np.zeros((2 * n + 1, h, w))
        attn[2 * n] = 1.0
        out = fu.compose(apps, shapes, i_s, Tensor(attn))
        assert np.array_equal(out.data, i_s.data)

    def test_convexity_bound(self):
        rng = np.random.default_rng(9)
        n, h, w = 2, 4, 4
        apps = [Tensor(rng.uniform(-1, 1, size=(3, h, w))) for _ in range(n)]
        shapes = [Tensor(rng.uniform(-1, 1, size=(3, h, w))) for _ in range(n)]
        i_s = Tensor(rng.uniform(-1, 1, size=(3, h, w)))
        logits = rng.normal(size=(2 * n + 1, h, w)) * 3
        e = np.exp(logits - logits.max(axis=0, keepdims=True))
        attn = Tensor(e / e.sum(axis=0, keepdims=True))
        out = fu.compose(apps, shapes, i_s, attn).data
        stack = np.stack([t.data for t in [*apps, *shapes, i_s]])
        assert (out <= stack.max(axis=0) + 1e-12).all()
        assert (out >= stack.min(axis=0) - 1e-12).all()

    def test_uniform_average_of_three_constants(self):
        h, w = 3, 3
        apps = [Tensor(np.full((3, h, w), -1.0))]
        shapes = [Tensor(np.zeros((3, h, w)))]
        i_s = Tensor(np.ones((3, h, w)))
        attn = Tensor(np.full((3, h, w), 1.0 / 3.0))
        out = fu.compose(apps, shapes, i_s, attn).data
        assert np.abs(out).max() <= 1e-15

    def test_channel_mismatch_rejected(self):
        rng = np.random.default_rng(10)
        imgs = [Tensor(rng.normal(size=(3, 4, 4)))]
        with pytest.raises(ShapeError):
            fu.compose(imgs, imgs, imgs[0], Tensor(np.ones((4, 4, 4))))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(11)
        n, h, w = 2, 4, 4
        apps = [Tensor(rng.normal(size=(2, 3, h, w))) for _ in range(n)]
        shapes = [Tensor(rng.normal(size=(2, 3, h, w))) for _ in range(n)]
        i_s = Tensor(rng.normal(size=(2, 3, h, w)))
        logits = rng.normal(size=(2, 2 * n + 1, h, w))
        e = np.exp(logits)
        attn = Tensor(e / e.sum(axis=1, keepdims=True))
        out = fu.compose(apps, shapes, i_s, attn).data
        for b in range(2):
            single = fu.compose(
                [Tensor(a.data[b]) for a in apps],
                [Tensor(s.data[b]) for s in shapes],
                Tensor(i_s.data[b]),
                Tensor(attn.data[b]),
            ).data
            assert np.allclose(out[b], single, atol=1e-12)


class TestGradients:
    def test_full_fusion_gradcheck(self):
        rng = np.random.default_rng(12)
        dec = fu.DecoderParams.init("dec", in_ch=4, n_candidates=2, rng=rng, width=4)
        att = fu.CoAttentionParams.init("att", stacked_ch=8, n_candidates=2, rng=rng)
        code_p = Tensor(rng.normal(size=(4, 2, 2)))
        i_s = Tensor(rng.uniform(-0.5, 0.5, size=(3, 8, 8)))

        def f(t):
            apps = fu.decode_intermediates([t], dec, 2)
            shapes = fu.decode_intermediates([code_p], dec, 2)
            attn = fu.co_attention([t], [code_p], att, 2)
            return tz.tsum(tz.absolute(fu.compose(apps, shapes, i_s, attn)))

        err = tz.grad_check(f, Tensor(rng.normal(size=(4, 2, 2))), eps=1e-5)
        assert err <= 1e-5, err
