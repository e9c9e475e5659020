"""Generator assembly tests: encoding, stage cascade, persistence."""

import numpy as np
import pytest

from xing import generator as gen
from xing import tensor as tz
from xing.attention import PyramidSpec
from xing.checkpoint import CheckpointError, load_arrays, save_arrays
from xing.pose_synth import sample_episode
from xing.tensor import ContractError, ShapeError, Tensor


def small_config(**kw):
    base = dict(variant="xingpp", t_stages=2, c=8, h=16, w=8, n_candidates=2,
                pyramid=PyramidSpec((1, 2)), fusion_mode="dccaf")
    base.update(kw)
    return gen.GeneratorConfig(**base)


def episode_tensors(seed, h, w):
    ep = sample_episode(seed, h, w)
    return ep.i_s, ep.p_s, ep.p_t


class TestConfig:
    def test_variant_defaults(self):
        assert gen.GeneratorConfig(variant="xing", h=16, w=16).t_stages == 9
        assert gen.GeneratorConfig(variant="xingpp", h=16, w=16).t_stages == 5

    def test_xing_rejects_pyramid(self):
        with pytest.raises(ContractError):
            gen.GeneratorConfig(variant="xing", pyramid=PyramidSpec((1, 2)), h=16, w=16)

    def test_xingpp_gets_default_pyramid(self):
        cfg = gen.GeneratorConfig(variant="xingpp", h=16, w=16)
        assert cfg.pyramid.scale_factors == (1, 2, 3, 6)

    def test_indivisible_size_rejected(self):
        with pytest.raises(ContractError):
            gen.GeneratorConfig(h=18, w=16)


class TestEncode:
    def test_code_resolution(self):
        rng = np.random.default_rng(0)
        enc = gen.EncoderParams.init("enc", 8, rng)
        f_i, f_p = gen.encode(
            Tensor(rng.normal(size=(3, 64, 32))),
            Tensor(rng.normal(size=(18, 64, 32))),
            Tensor(rng.normal(size=(18, 64, 32))),
            enc,
        )
        assert f_i.shape == (8, 16, 8)
        assert f_p.shape == (8, 16, 8)

    def test_pose_encoder_consumes_36_channels(self):
        enc = gen.EncoderParams.init("enc", 4, np.random.default_rng(1))
        assert enc.pose_conv1.weight.data.shape[1] == 36

    def test_zero_inputs_zero_biases_give_zero_codes(self):
        enc = gen.EncoderParams.init("enc", 4, np.random.default_rng(2))
        f_i, f_p = gen.encode(
            Tensor(np.zeros((3, 16, 16))),
            Tensor(np.zeros((18, 16, 16))),
            Tensor(np.zeros((18, 16, 16))),
            enc,
        )
        assert np.array_equal(f_i.data, np.zeros((4, 4, 4)))
        assert np.array_equal(f_p.data, np.zeros((4, 4, 4)))

    def test_indivisible_spatial_rejected(self):
        enc = gen.EncoderParams.init("enc", 4, np.random.default_rng(3))
        with pytest.raises(ShapeError):
            gen.encode(
                Tensor(np.zeros((3, 18, 16))),
                Tensor(np.zeros((18, 18, 16))),
                Tensor(np.zeros((18, 18, 16))),
                enc,
            )

    def test_wrong_channel_counts_rejected(self):
        enc = gen.EncoderParams.init("enc", 4, np.random.default_rng(4))
        with pytest.raises(ShapeError):
            gen.encode(
                Tensor(np.zeros((3, 16, 16))),
                Tensor(np.zeros((17, 16, 16))),
                Tensor(np.zeros((18, 16, 16))),
                enc,
            )


class TestForward:
    def test_init_identity_cascade(self):
        # fresh alpha = beta = 0: every appearance code equals the encoder output
        i_s, p_s, p_t = episode_tensors(0, 16, 16)
        for variant, pyramid in (("xing", None), ("xingpp", PyramidSpec((1, 2)))):
            cfg = small_config(variant=variant, pyramid=pyramid, t_stages=3, w=16)
            gp = gen.GeneratorParams.init(cfg, np.random.default_rng(5))
            _, diag = gen.generator_forward(i_s, p_s, p_t, gp)
            first = diag["codes_i"][0].data
            for code in diag["codes_i"][1:]:
                assert np.array_equal(code.data, first)

    def test_output_shape_and_range(self):
        cfg = small_config(w=16)
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(6))
        i_s, p_s, p_t = episode_tensors(1, 16, 16)
        img, diag = gen.generator_forward(i_s, p_s, p_t, gp)
        assert img.shape == (3, 16, 16)
        assert np.abs(img.data).max() <= 1.0
        assert diag["attention"].shape == (5, 16, 16)
        assert len(diag["apps"]) == 2

    def test_deterministic(self):
        cfg = small_config(w=16)
        i_s, p_s, p_t = episode_tensors(2, 16, 16)

        def run():
            gp = gen.GeneratorParams.init(cfg, np.random.default_rng(7))
            return gen.generator_forward(i_s, p_s, p_t, gp)[0].data

        assert np.array_equal(run(), run())

    def test_batched_forward(self):
        cfg = small_config()
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(8))
        rng = np.random.default_rng(9)
        img, _ = gen.generator_forward(
            Tensor(rng.uniform(-1, 1, size=(2, 3, 16, 8))),
            Tensor(rng.uniform(0, 1, size=(2, 18, 16, 8))),
            Tensor(rng.uniform(0, 1, size=(2, 18, 16, 8))),
            gp,
        )
        assert img.shape == (2, 3, 16, 8)

    def test_caf_consumes_last_stage_only(self):
        cfg = small_config(fusion_mode="caf", w=16)
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(10))
        assert gp.dec_i.conv1.weight.data.shape[1] == cfg.c
        i_s, p_s, p_t = episode_tensors(3, 16, 16)
        img, _ = gen.generator_forward(i_s, p_s, p_t, gp)
        assert img.shape == (3, 16, 16)

    def test_gradcheck_through_full_model(self):
        """Mean-output loss vs central differences on a small weight tensor."""
        cfg = gen.GeneratorConfig(variant="xingpp", t_stages=5, c=8, h=64, w=32,
                                  n_candidates=2, pyramid=PyramidSpec((1, 2, 3, 6)))
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(11))
        for sa, as_ in gp.stages:  # nonzero gains so attention paths carry gradient
            sa.alpha.value.data = np.asarray(0.3)
            as_.beta.value.data = np.asarray(0.3)
        i_s, p_s, p_t = episode_tensors(4, 64, 32)
        target = gp.encoder.img_conv1.bias

        def f(t):
            gp.encoder.img_conv1.bias.value = t
            img, _ = gen.generator_forward(i_s, p_s, p_t, gp)
            return tz.tmean(img * img)

        err = tz.grad_check(f, Tensor(target.data.copy()), eps=1e-5)
        assert err <= 1e-5, err


class TestPersistence:
    def test_array_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(12)
        arrays = {
            "a.weight": rng.normal(size=(3, 4)),
            "b.scalar": np.asarray(0.123456789),
            "c.vec": rng.normal(size=7),
        }
        path = tmp_path / "t.ckpt"
        save_arrays(path, arrays)
        back = load_arrays(path)
        assert list(back) == list(arrays)
        for k in arrays:
            assert np.array_equal(back[k], arrays[k])
            assert back[k].shape == np.asarray(arrays[k]).shape

    def test_generator_roundtrip_forward_bitwise(self, tmp_path):
        cfg = small_config(w=16)
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(13))
        for sa, as_ in gp.stages:
            sa.alpha.value.data = np.asarray(0.4)
            as_.beta.value.data = np.asarray(-0.2)
        i_s, p_s, p_t = episode_tensors(5, 16, 16)
        before = gen.generator_forward(i_s, p_s, p_t, gp)[0].data

        path = tmp_path / "g.ckpt"
        gen.save_generator(path, gp)
        gp2, _ = gen.load_generator(path)
        after = gen.generator_forward(i_s, p_s, p_t, gp2)[0].data
        assert np.array_equal(before, after)

    def test_config_roundtrip(self):
        for cfg in (small_config(), small_config(fusion_mode="caf"),
                    gen.GeneratorConfig(variant="xing", t_stages=2, c=4, h=16, w=16)):
            assert gen.config_from_arrays(gen.config_to_arrays(cfg)) == cfg

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_arrays(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_arrays(path, {"x": np.ones((4, 4))})
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CheckpointError):
            load_arrays(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_arrays(tmp_path / "absent.ckpt")

    def test_shape_mismatch_rejected(self, tmp_path):
        cfg = small_config()
        gp = gen.GeneratorParams.init(cfg, np.random.default_rng(14))
        arrays = gen.config_to_arrays(cfg)
        for p in gp.params():
            arrays[p.name] = p.data
        first = gp.params()[0].name
        arrays[first] = np.zeros((1, 1))
        path = tmp_path / "bad.ckpt"
        save_arrays(path, arrays)
        with pytest.raises(CheckpointError):
            gen.load_generator(path)
