import numpy as np
import pytest
import torch

from pgcgan.data import LabelError, PathologyLabel
from pgcgan.model import (ContractError, DiscriminatorConfig, DiscriminatorModel, GeneratorConfig, GeneratorModel,
                          SNConv1d, condition_latent, decode, discriminate, encode, generate, sample_noise,
                          spectral_normalize)

VOCAB6 = ("normal", "a", "b", "c", "d", "e")


def small_gen(**kw):
    cfg = dict(T=20, d=5, C=3, latent_dim=4, encoder_channels=[8], decoder_channels=[8], seed=0)
    cfg.update(kw)
    return GeneratorModel(GeneratorConfig(**cfg))


def small_disc(**kw):
    cfg = dict(T=20, d=5, C=3, conv_channels=[8, 8], fc_widths=[4, 1], seed=1)
    cfg.update(kw)
    return DiscriminatorModel(DiscriminatorConfig(**cfg))


def top_singular(w) -> float:
    return float(np.linalg.svd(np.asarray(w), compute_uv=False)[0])


class TestNoise:
    def test_deterministic(self):
        cfg = GeneratorConfig(T=60, d=75, C=6)
        a = sample_noise(4, cfg, 123).values
        b = sample_noise(4, cfg, 123).values
        assert torch.equal(a, b)

    def test_shape(self):
        assert sample_noise(1, GeneratorConfig(T=60, d=75, C=6), 0).values.shape == (1, 60, 75)

    def test_moments(self):
        v = sample_noise(10_000, GeneratorConfig(T=1, d=1, C=2), 5).values
        assert abs(float(v.mean())) < 0.05
        assert abs(float(v.std()) - 1) < 0.05

    def test_invalid_batch(self):
        with pytest.raises(ValueError):
            sample_noise(0, GeneratorConfig(T=2, d=2, C=2), 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(latent_dim=0), dict(kernel_size=4), dict(encoder_channels=[])])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GeneratorConfig(T=8, d=3, C=2, **kw)


class TestEncodeDecode:
    def test_zero_noise_zero_weights(self):
        g = small_gen()
        with torch.no_grad():
            for p in g.parameters():
                p.zero_()
        z = encode(g, torch.zeros(2, 20, 5))
        assert z.shape == (2, 4, 20)
        assert torch.all(z == 0)

    def test_finite_and_pure(self):
        g = small_gen()
        n = sample_noise(3, g.config, 0)
        z1, z2 = encode(g, n), encode(g, n)
        assert torch.isfinite(z1).all()
        assert torch.equal(z1, z2)

    def test_nonnegative_intermediate_on_zero_input(self):
        g = small_gen()
        with torch.no_grad():
            for m in g.encoder:
                if isinstance(m, torch.nn.Conv1d):
                    m.bias.uniform_(0.0, 1.0)
        h = torch.zeros(2, 5, 20)
        for m in g.encoder:
            h = m(h)
            if isinstance(m, torch.nn.ReLU):
                assert torch.all(h >= 0)
        assert torch.all(encode(g, torch.zeros(2, 20, 5)) >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            encode(small_gen(), torch.zeros(2, 19, 5))
        with pytest.raises(ContractError):
            decode(small_gen(), torch.zeros(2, 6, 20))

    def test_decode_shape(self):
        g = small_gen()
        out = decode(g, torch.randn(3, 4 + 3, 20))
        assert out.shape == (3, 20, 5)
        assert torch.isfinite(out).all()


class TestCondition:
    def test_broadcast_one_hot(self):
        z = torch.randn(2, 4, 7)
        out = condition_latent(z, PathologyLabel(2, VOCAB6), 6)
        assert out.shape == (2, 10, 7)
        expected = torch.tensor([0, 0, 1, 0, 0, 0.0])
        for t in range(7):
            assert torch.equal(out[0, 4:, t], expected)
        assert torch.equal(out[:, :4], z)

    def test_labels_only_change_appended_channels(self):
        z = torch.randn(1, 4, 5)
        a = condition_latent(z, [PathologyLabel(0, VOCAB6)], 6)
        b = condition_latent(z, [PathologyLabel(5, VOCAB6)], 6)
        assert torch.equal(a[:, :4], b[:, :4])
        assert not torch.equal(a[:, 4:], b[:, 4:])

    def test_out_of_range(self):
        with pytest.raises(LabelError):
            condition_latent(torch.zeros(1, 2, 3), [6], 6)


class TestGenerate:
    def test_deterministic_and_shape(self):
        g = small_gen()
        a = generate(g, [0, 0, 1], seed=9)
        b = generate(g, [0, 0, 1], seed=9)
        assert torch.equal(a, b)
        assert a.shape == (3, 20, 5)

    def test_independent_rows(self):
        g = small_gen()
        out = generate(g, [0, 0, 1], seed=1)
        assert not torch.equal(out[0], out[1])

    def test_label_changes_output_after_training_step(self):
        g = small_gen()
        opt = torch.optim.Adam(g.parameters(), lr=1e-2)
        noise = sample_noise(4, g.config, 0)
        target = torch.randn(4, 20, 5)
        loss = ((g(noise, [0, 1, 2, 0]) - target) ** 2).mean()
        loss.backward()
        opt.step()
        n1 = sample_noise(1, g.config, 3)
        with torch.no_grad():
            assert not torch.equal(g(n1, [0]), g(n1, [1]))

    def test_empty_labels(self):
        with pytest.raises(ValueError):
            generate(small_gen(), [], seed=0)


class TestSpectralNorm:
    def test_diag(self):
        w = torch.tensor([[3.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        u = torch.tensor([0.6, 0.8], dtype=torch.float64)
        w_sn, u2, sigma = spectral_normalize(w, u, steps=30)
        assert abs(float(sigma) - 3.0) < 1e-6
        assert abs(top_singular(w_sn) - 1.0) < 1e-6
        assert abs(float(u2.norm()) - 1.0) < 1e-12

    def test_fixed_point(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((6, 4))
        w = torch.tensor(a / top_singular(a))
        u = torch.tensor(rng.standard_normal(6))
        w_sn, _, _ = spectral_normalize(w, u / u.norm(), steps=200)
        assert torch.allclose(w_sn, w, atol=1e-6)

    def test_random_64_converged(self):
        rng = np.random.default_rng(1)
        w = torch.tensor(rng.standard_normal((64, 64)))
        u = torch.tensor(rng.standard_normal(64))
        w_sn, _, sigma = spectral_normalize(w, u / u.norm(), steps=500)
        assert abs(top_singular(w_sn) - 1) < 1e-3
        assert abs(float(sigma) - top_singular(w.numpy())) / float(sigma) < 1e-3

    def test_random_64_fifty_steps(self):
        # 50 steps suffice only when the top two singular values are well
        # separated; random Gaussian matrices often are not.
        rng = np.random.default_rng(2)
        errs = []
        for _ in range(40):
            w = torch.tensor(rng.standard_normal((64, 64)))
            u = torch.tensor(rng.standard_normal(64))
            w_sn, _, _ = spectral_normalize(w, u / u.norm(), steps=50)
            errs.append(abs(top_singular(w_sn) - 1))
        errs = np.array(errs)
        assert np.median(errs) < 1e-3
        assert np.mean(errs < 1e-3) >= 0.7
        assert errs.max() < 0.05

    def test_zero_weight(self):
        w = torch.zeros(3, 4, dtype=torch.float64)
        u = torch.tensor([1.0, 0, 0], dtype=torch.float64)
        w_sn, u2, sigma = spectral_normalize(w, u, steps=3)
        assert float(sigma) == pytest.approx(1e-12)
        assert torch.all(w_sn == 0)

    def test_invalid_steps(self):
        with pytest.raises(ValueError):
            spectral_normalize(torch.eye(2), torch.tensor([1.0, 0.0]), steps=0)

    def test_layer_u_unit_and_eval_fixed(self):
        layer = SNConv1d(3, 5, 3)
        layer.reset_parameters(torch.Generator().manual_seed(0))
        x = torch.randn(2, 3, 10)
        layer.train()
        for _ in range(3):
            layer(x)
        assert abs(float(layer.u.norm()) - 1) < 1e-6
        layer.eval()
        u = layer.u.clone()
        layer(x)
        assert torch.equal(u, layer.u)

    def test_layer_converges_to_unit_sigma(self):
        layer = SNConv1d(4, 6, 5).double()
        layer.reset_parameters(torch.Generator().manual_seed(3))
        layer.train()
        for _ in range(300):
            w = layer.normalized_weight()
        assert abs(top_singular(w.detach().view(6, -1).numpy()) - 1) < 1e-3


class TestDiscriminator:
    def test_zero_final_layer(self):
        d = small_disc()
        with torch.no_grad():
            d.fcs[-1].weight.zero_()
            d.fcs[-1].bias.zero_()
        s = discriminate(d, torch.randn(4, 20, 5), [0, 1, 2, 0])
        assert torch.all(s == 0.5)

    def test_range(self):
        d = small_disc()
        s = discriminate(d, 100 * torch.randn(8, 20, 5), [0, 1, 2, 0, 1, 2, 0, 1])
        assert torch.all((s > 0) & (s < 1)) or torch.all((s >= 0) & (s <= 1))
        assert torch.isfinite(s).all()
        s = discriminate(d, torch.randn(8, 20, 5), [0] * 8)
        assert torch.all((s > 0) & (s < 1))

    def test_permutation_equivariance(self):
        d = small_disc()
        x = torch.randn(6, 20, 5)
        labels = torch.tensor([0, 1, 2, 2, 1, 0])
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        a = discriminate(d, x, labels)
        b = discriminate(d, x[perm], labels[perm])
        assert torch.allclose(a[perm], b, atol=1e-6)

    def test_input_channels_include_labels(self):
        d = small_disc()
        assert d.convs[0].weight.shape[1] == 5 + 3

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            discriminate(small_disc(), torch.randn(2, 20, 4), [0, 1])

    def test_every_conv_is_spectrally_normalized(self):
        d = small_disc()
        assert all(isinstance(c, SNConv1d) for c in d.convs)
        assert all(abs(float(c.u.norm()) - 1) < 1e-6 for c in d.convs)
