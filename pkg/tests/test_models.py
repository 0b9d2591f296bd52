import numpy as np
import pytest

from advam import models as M
from advam import numerics as nx
from advam.config import ConfigError, ModelConfig, paper_preset
from advam.numerics import ShapeError, Tensor


def gen(rng, feat=32, frames=16, depth=4, base=16, axis="freq"):
    return M.build_generator(rng, feat, frames, depth, base, stride_axis=axis)


class TestBuildGenerator:
    def test_desk_default_shapes(self, rng):
        g = gen(rng)
        assert g.encoder_channels == [16, 32, 64, 128]
        assert g.bottleneck_shape == (128, 2, 16)
        # 128 channels x 2 x 16 = 4096
        assert g.h_size == 4096

    def test_single_pair(self, rng):
        g = gen(rng, depth=1)
        x = rng.normal(size=(1, 32, 16))
        x_hat, h = M.generator_forward(g, x)
        assert x_hat.shape == (1, 32, 16)
        assert len(g.decoder_layers) == 1 and g.skip_map == []

    @pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
    def test_skip_inputs_doubled(self, rng, depth):
        g = gen(rng, depth=depth, base=4)
        for j, i in g.skip_map:
            assert g.decoder_layers[j].in_units == 2 * g.encoder_layers[i].out_units
        assert g.decoder_layers[0].in_units == g.encoder_layers[-1].out_units

    def test_decoder_mirrors_encoder_filters(self, rng):
        g = gen(rng, base=8)
        for j, p in enumerate(g.decoder_layers):
            enc = g.encoder_layers[g.depth - 1 - j]
            assert p.weights.shape[2:] == enc.weights.shape[2:]
            assert p.stride == enc.stride
            # output channels equal the mirrored encoder layer's input channels
            assert p.out_units == enc.in_units

    def test_channel_cap(self, rng):
        assert M.channel_schedule(8, 16, 512) == [16, 32, 64, 128, 256, 512, 512, 512]

    def test_axis_not_reducible(self, rng):
        with pytest.raises(ConfigError):
            gen(rng, feat=24, depth=4)

    def test_paper_preset_rejected(self):
        cfg = paper_preset()
        with pytest.raises(ConfigError):
            M.check_generator_shape(cfg.data.feat_dim, cfg.data.context, cfg.model.depth)

    def test_time_axis_stride(self, rng):
        g = gen(rng, feat=5, frames=16, depth=2, base=4, axis="time")
        x_hat, _ = M.generator_forward(g, rng.normal(size=(1, 5, 16)))
        assert x_hat.shape == (1, 5, 16)
        assert g.bottleneck_shape == (8, 5, 4)


class TestGeneratorForward:
    @pytest.mark.parametrize("feat, frames, depth", [(32, 16, 4), (32, 15, 4), (16, 7, 2), (8, 3, 3)])
    def test_output_shape_and_mirror(self, rng, feat, frames, depth):
        g = gen(rng, feat, frames, depth, base=4)
        x = Tensor(rng.normal(size=(2, 1, feat, frames)))
        acts, outs = M.generator_trace(g, x)
        n = g.depth
        for j, out in enumerate(outs):
            # decoder layer n-1-i restores the input shape of encoder layer i
            assert out.shape[2:] == acts[n - 1 - j].shape[2:]
        x_hat, h = M.generator_forward(g, x)
        assert x_hat.shape == x.shape
        assert h.shape == (2, g.h_size)

    def test_h_matches_encoder(self, rng):
        g = gen(rng, base=4)
        x = rng.normal(size=(3, 1, 32, 16))
        _, h = M.generator_forward(g, x)
        assert np.array_equal(h.data, M.encode(g, x).data)

    def test_deterministic(self, rng):
        g = gen(rng, base=4)
        x = rng.normal(size=(1, 32, 16))
        a = M.generator_forward(g, x)
        b = M.generator_forward(g, x)
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    def test_shape_mismatch(self, rng):
        g = gen(rng, base=4)
        with pytest.raises(ShapeError):
            M.generator_forward(g, rng.normal(size=(1, 16, 16)))

    @pytest.mark.parametrize("seed", range(2))
    def test_end_to_end_grad_check(self, seed):
        r = np.random.default_rng(seed)
        g = M.build_generator(r, 8, 5, depth=2, base_channels=3)
        for p in g.parameters():
            if p.ndim == 1:
                p.data[:] = r.normal(scale=0.1, size=p.shape)
        x = Tensor(r.normal(size=(2, 1, 8, 5)))
        err = nx.grad_check_tensors(lambda: nx.mean(nx.square(M.generator_forward(g, x)[0])),
                                    g.parameters())
        assert err <= 1e-5


class TestDiscriminator:
    def test_zero_weights(self, rng):
        d = M.build_discriminator(rng, 12, 5)
        for p in d.parameters():
            p.data[...] = 0.0
        assert np.array_equal(M.discriminator_forward(d, rng.normal(size=(4, 1, 3, 4))).data, np.zeros(4))

    def test_batch_shape(self, rng):
        d = M.build_discriminator(rng, 12, 5)
        assert M.discriminator_forward(d, rng.normal(size=(7, 1, 3, 4))).shape == (7,)

    def test_affine_in_output_weights(self, rng):
        d = M.build_discriminator(rng, 12, 5)
        s = rng.normal(size=(3, 1, 3, 4))
        w0 = d.output.weights.data.copy()
        d.output.bias.data[:] = 0.0
        base = M.discriminator_forward(d, s).data
        d.output.weights.data[...] = 2.5 * w0
        np.testing.assert_allclose(M.discriminator_forward(d, s).data, 2.5 * base, rtol=1e-13)

    def test_single_hidden_layer_unbounded(self, rng):
        d = M.build_discriminator(rng, 12, 5)
        assert len(d.layers()) == 2 and d.output.activation == "linear"
        d.output.weights.data[...] = 1e3
        assert np.abs(M.discriminator_forward(d, rng.normal(size=(2, 12)) * 10).data).max() > 1

    def test_width_mismatch(self, rng):
        d = M.build_discriminator(rng, 12, 5)
        with pytest.raises(ShapeError):
            M.discriminator_forward(d, rng.normal(size=(2, 13)))


class TestClassifier:
    def test_zero_weights_uniform(self, rng):
        c = M.build_classifier(rng, 20, 10, hidden=8)
        for p in c.parameters():
            p.data[...] = 0.0
        post = M.classifier_forward(c, rng.normal(size=(3, 20)), "train", rng).data
        np.testing.assert_allclose(post, 0.1, rtol=0, atol=1e-15)

    def test_sums_to_one(self, rng):
        c = M.build_classifier(rng, 20, 10, hidden=8)
        post = M.classifier_forward(c, rng.normal(size=(5, 20)) * 10).data
        assert np.max(np.abs(post.sum(axis=1) - 1)) <= 1e-12

    def test_eval_ignores_rng(self, rng):
        c = M.build_classifier(rng, 20, 4, hidden=8)
        h = rng.normal(size=(3, 20))
        a = M.classifier_forward(c, h, "eval", np.random.default_rng(1)).data
        b = M.classifier_forward(c, h, "eval", np.random.default_rng(2)).data
        assert a.tobytes() == b.tobytes()

    def test_structure(self, rng):
        c = M.build_classifier(rng, 20, 4, hidden=8, dropout_rate=0.3)
        assert len(c.hidden) == 2
        assert all(p.activation == "relu" and p.dropout_rate == 0.3 for p in c.hidden)

    def test_length_mismatch(self, rng):
        c = M.build_classifier(rng, 20, 4, hidden=8)
        with pytest.raises(ShapeError):
            M.classifier_forward(c, rng.normal(size=(2, 21)))

    @pytest.mark.parametrize("seed", range(2))
    def test_grad_check(self, seed):
        r = np.random.default_rng(seed)
        c = M.build_classifier(r, 12, 4, hidden=6, dropout_rate=0.0)
        h = Tensor(r.normal(size=(5, 12)))
        labels = r.integers(0, 4, size=5)
        err = nx.grad_check_tensors(lambda: nx.cross_entropy(M.classifier_logits(c, h), labels),
                                    c.parameters())
        assert err <= 1e-5


def small_nets(rng):
    return M.build_networks(rng, ModelConfig(depth=2, base_channels=4, d_hidden=8, c_hidden=8), 8, 5, 3)


def test_acoustic_model_ignores_d_and_decoder(rng):
    nets = small_nets(rng)
    x = rng.normal(size=(4, 1, 8, 5))
    before = M.acoustic_model_posteriors(nets.generator, nets.classifier, x)
    with nx.no_grad():
        full = M.classifier_forward(nets.classifier, M.generator_forward(nets.generator, x)[1]).data
    assert before.tobytes() == full.tobytes()
    for p in nets.discriminator.parameters() + nets.generator.decoder_parameters():
        p.data[...] = rng.normal(size=p.shape)
    after = M.acoustic_model_posteriors(nets.generator, nets.classifier, x)
    assert before.tobytes() == after.tobytes()


def test_frozen_blocks_gradients(rng):
    nets = small_nets(rng)
    with M.frozen(nets.discriminator):
        x_hat, _ = M.generator_forward(nets.generator, rng.normal(size=(2, 1, 8, 5)))
        nx.sum(M.discriminator_forward(nets.discriminator, x_hat)).backward()
    assert all(p.grad is None for p in nets.discriminator.parameters())
    assert all(p.requires_grad for p in nets.discriminator.parameters())
    assert nets.generator.encoder_layers[0].weights.grad is not None


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        nets = small_nets(rng)
        path = tmp_path / "a.ckpt"
        extras = [rng.normal(size=(2, 3))]
        M.save_checkpoint(path, nets, "c" * 64, "d" * 64, extras, {"epoch": 3})
        ck = M.load_checkpoint(path, expected_digest="c" * 64, expected_corpus="d" * 64)
        for a, b in zip(nets.parameters(), ck.nets.parameters()):
            assert a.data.tobytes() == b.data.tobytes()
        assert np.array_equal(ck.extras[0], extras[0])
        assert ck.meta == {"epoch": 3}

    def test_byte_stable(self, rng, tmp_path):
        nets = small_nets(rng)
        M.save_checkpoint(tmp_path / "a", nets, "x", "y")
        M.save_checkpoint(tmp_path / "b", nets, "x", "y")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_digest_mismatch(self, rng, tmp_path):
        nets = small_nets(rng)
        M.save_checkpoint(tmp_path / "a", nets, "x" * 64, "y" * 64)
        with pytest.raises(M.CheckpointError, match="config digest"):
            M.load_checkpoint(tmp_path / "a", expected_digest="z" * 64)
        with pytest.raises(M.CheckpointError, match="corpus digest"):
            M.load_checkpoint(tmp_path / "a", expected_corpus="z" * 64)

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"not a checkpoint")
        with pytest.raises(M.CheckpointError):
            M.load_checkpoint(tmp_path / "bad")

    def test_truncated(self, rng, tmp_path):
        nets = small_nets(rng)
        M.save_checkpoint(tmp_path / "a", nets, "x", "y")
        blob = (tmp_path / "a").read_bytes()
        (tmp_path / "b").write_bytes(blob[: len(blob) // 2])
        with pytest.raises(M.CheckpointError):
            M.load_checkpoint(tmp_path / "b")
