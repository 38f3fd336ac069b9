import numpy as np
import pytest

from framesearch import nn
from framesearch.dataio import SynthConfig, as_frame, generate_synthetic, modality_transform, sample_pairs
from framesearch.errors import DataError, IndexFormatError, TrainingDivergedError, TruncatedPayloadError
from framesearch.models import (AEConfig, AEModel, PAPER_AE, PAPER_VAE, SiameseConfig, SiameseModel,
                                TrainConfig, VAEConfig, VAEModel, ae_encode, ae_train, count_parameters,
                                load_model, model_from_bytes, siamese_distance, siamese_train, vae_encode_mu,
                                vae_train)
from framesearch.nn import layers as L

SMALL = dict(input_size=(32, 32), channels=(4, 8, 8))


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SynthConfig(n_clusters=5, frames_per_cluster=4, image_size=32, seed=11))


@pytest.fixture(scope="module")
def frame(corpus):
    return corpus.pixels[0]


class TestParameterCounts:
    def test_dense(self):
        assert count_parameters([L.dense(2, 3)]) == 9

    def test_conv(self):
        assert count_parameters([L.conv(3, 16, 3)]) == 448

    def test_vae_smaller_than_ae(self):
        assert VAEModel(VAEConfig()).num_parameters() < AEModel(AEConfig()).num_parameters()

    def test_paper_size_configs_build(self):
        assert count_parameters(AEModel.build_specs(PAPER_AE)) > count_parameters(VAEModel.build_specs(PAPER_VAE))

    def test_matches_live_tensors(self):
        m = AEModel(AEConfig(**SMALL))
        assert m.num_parameters() == sum(p.data.size for p in m.params)


class TestAE:
    def test_latent_length_default(self, frame):
        assert ae_encode(AEModel(AEConfig()), frame).shape == (32,)

    def test_encode_pure(self, frame):
        m = AEModel(AEConfig(**SMALL))
        a, b = ae_encode(m, frame), ae_encode(m, frame)
        np.testing.assert_array_equal(a, b)
        assert np.isfinite(a).all()

    def test_decoder_shape_mirrors_input(self, corpus):
        m = AEModel(AEConfig(input_size=(30, 30), channels=(4, 8, 8)))
        batch = m.prepare(corpus.pixels[:2])
        assert m.reconstruct_batch(batch).shape == batch.shape

    def test_zero_epochs(self, corpus):
        init = AEModel(AEConfig(**SMALL), seed=5)
        model, report = ae_train(corpus, AEConfig(**SMALL), TrainConfig(epochs=0, seed=5))
        assert report.losses == [] and report.epochs == 0
        assert model.to_bytes() == init.to_bytes()

    def test_same_seed_same_checksum(self, corpus):
        cfg, tc = AEConfig(**SMALL), TrainConfig(epochs=2, seed=3, batch_size=8)
        a, ra = ae_train(corpus, cfg, tc)
        b, rb = ae_train(corpus, cfg, tc)
        assert a.checksum == b.checksum
        assert ra.losses == rb.losses
        assert len(ra.losses) == ra.epochs == 2

    def test_zero_lr_keeps_weights(self, corpus):
        cfg = AEConfig(**SMALL)
        init = AEModel(cfg, seed=1)
        model, _ = ae_train(corpus, cfg, TrainConfig(epochs=2, lr=0.0, seed=1, batch_size=8))
        assert model.to_bytes() == init.to_bytes()

    def test_empty_corpus(self, corpus):
        with pytest.raises(DataError):
            ae_train(corpus.subset([]), AEConfig(**SMALL), TrainConfig(epochs=1))

    def test_divergence_reports_epoch(self, corpus):
        cfg = AEConfig(**SMALL)
        model = AEModel(cfg)
        model.params[0].data[...] = np.nan
        with pytest.raises(TrainingDivergedError) as info:
            ae_train(corpus, cfg, TrainConfig(epochs=1), model=model)
        assert info.value.epoch == 0

    def test_tiny_corpus_reconstruction(self, corpus):
        tiny = corpus.subset(corpus.ids[:2])
        model, report = ae_train(tiny, AEConfig(**SMALL), TrainConfig(epochs=300, batch_size=2, seed=0))
        batch = model.prepare(tiny.pixels)
        mae = np.abs(model.reconstruct_batch(batch) - batch).mean()
        assert mae < 0.15
        assert report.losses[-1] < 0.5 * report.losses[0]


class TestVAE:
    def test_mu_length_default(self, frame):
        m = VAEModel(VAEConfig())
        assert vae_encode_mu(m, frame).shape == (10,)
        assert m.encode_log_var_batch(m.prepare([frame])).shape == (1, 10)

    def test_mu_deterministic(self, frame):
        m = VAEModel(VAEConfig(**SMALL))
        m.networks["mu_head"].params[0].data[...] = 0.01
        np.testing.assert_array_equal(vae_encode_mu(m, frame), vae_encode_mu(m, frame))

    def test_kl_zero_at_init(self, corpus):
        m = VAEModel(VAEConfig(**SMALL))
        batch = m.prepare(corpus.pixels[:4])
        eps = np.random.default_rng(0).standard_normal((4, 10)).astype(np.float32)
        total, rec, kl = m.loss_terms(batch, eps)
        assert float(kl) == 0.0
        assert float(total) == pytest.approx(float(rec))

    def test_total_at_least_reconstruction(self, corpus):
        m = VAEModel(VAEConfig(**SMALL), seed=2)
        for p in m.networks["log_var_head"].params + m.networks["mu_head"].params:
            p.data[...] = np.random.default_rng(1).normal(0, 0.05, p.shape)
        batch = m.prepare(corpus.pixels[:4])
        eps = np.random.default_rng(0).standard_normal((4, 10)).astype(np.float32)
        for beta in (0.0, 0.5, 1.0, 4.0):
            total, rec, _ = m.loss_terms(batch, eps, beta)
            assert float(total) >= float(rec) - 1e-6

    def test_zero_noise_sample_is_mean(self, corpus):
        m = VAEModel(VAEConfig(**SMALL))
        m.networks["mu_head"].params[1].data[...] = 0.3
        batch = m.prepare(corpus.pixels[:3])
        mu = m.encode_batch(batch)
        lv = m.encode_log_var_batch(batch)
        z = m.reparameterize(nn.Tensor(mu), nn.Tensor(lv), np.zeros_like(mu)).data
        np.testing.assert_array_equal(z, mu)
        np.testing.assert_array_equal(m.reconstruct_batch(batch), m.reconstruct_batch(batch))

    def test_modality_pair_distance_finite(self, frame):
        m = VAEModel(VAEConfig(**SMALL), seed=4)
        m.networks["mu_head"].params[0].data[...] = 0.01
        d = np.linalg.norm(vae_encode_mu(m, frame) - vae_encode_mu(m, modality_transform(frame)))
        assert np.isfinite(d)

    def test_training_reduces_loss_and_is_seeded(self, corpus):
        cfg, tc = VAEConfig(**SMALL), TrainConfig(epochs=6, batch_size=8, seed=9)
        _, ra = vae_train(corpus, cfg, tc)
        _, rb = vae_train(corpus, cfg, tc)
        assert ra.losses == rb.losses
        assert ra.losses[-1] < ra.losses[0]
        assert len(ra.components["kl"]) == 6


@pytest.fixture(scope="module")
def siamese():
    return SiameseModel(SiameseConfig(input_size=(32, 32), channels=(4, 8, 8), embedding_dim=16), seed=3)


class TestSiamese:
    def test_self_distance_zero(self, siamese, frame):
        assert siamese_distance(siamese, frame, frame) <= 1e-6

    def test_symmetric_exactly(self, siamese, corpus):
        a, b = corpus.pixels[0], corpus.pixels[7]
        assert siamese_distance(siamese, a, b) == siamese_distance(siamese, b, a)
        assert siamese_distance(siamese, a, b) >= 0

    def test_direct_norm_oracle(self, siamese, corpus):
        a, b = corpus.pixels[1], corpus.pixels[9]
        ea, eb = (siamese.embed_batch(siamese.prepare([f]))[0].astype(np.float64) for f in (a, b))
        direct = np.sqrt(sum((x - y) ** 2 for x, y in zip(ea, eb)))
        assert siamese_distance(siamese, a, b) == pytest.approx(direct, rel=1e-6)

    def test_hinge_saturation(self):
        d = nn.Tensor(np.array([1.0, 1.5, 3.0]), requires_grad=True)
        loss = nn.contrastive_loss(d, np.ones(3), margin=1.0)
        loss.backward()
        assert float(loss.data) == 0.0
        np.testing.assert_array_equal(d.grad, 0.0)

    def test_single_class_stream(self, corpus):
        pairs = [p for p in sample_pairs(corpus, 40, 0.5, 0) if p.y == 1]
        with pytest.raises(ValueError):
            siamese_train(corpus, pairs, SiameseConfig(input_size=(32, 32)), TrainConfig(epochs=1))

    def test_training_separates_pairs(self, corpus):
        cfg = SiameseConfig(input_size=(32, 32), channels=(4, 8, 8), embedding_dim=16)
        tc = TrainConfig(epochs=6, iterations=20, batch_size=16, seed=1)
        train, held = corpus.subset(corpus.ids[:12]), corpus
        model, ra = siamese_train(train, sample_pairs(train, 400, 0.5, 1), cfg, tc)
        _, rb = siamese_train(train, sample_pairs(train, 400, 0.5, 1), cfg, tc)
        assert ra.losses == rb.losses
        test_pairs = sample_pairs(held, 200, 0.5, 99)
        sim = [siamese_distance(model, held[p.a], held[p.b]) for p in test_pairs if p.y == 0]
        dis = [siamese_distance(model, held[p.a], held[p.b]) for p in test_pairs if p.y == 1]
        assert np.mean(sim) < np.mean(dis)

    def test_update_keeps_symmetry(self, corpus):
        cfg = SiameseConfig(input_size=(32, 32), channels=(4, 8, 8), embedding_dim=16)
        model, _ = siamese_train(corpus, sample_pairs(corpus, 100, 0.5, 0), cfg,
                                 TrainConfig(epochs=1, iterations=3, batch_size=8))
        a, b = corpus.pixels[2], corpus.pixels[15]
        assert siamese_distance(model, a, b) == siamese_distance(model, b, a)


class TestWeightsFile:
    @pytest.mark.parametrize("cls,cfg", [(AEModel, AEConfig(**SMALL)), (VAEModel, VAEConfig(**SMALL)),
                                         (SiameseModel, SiameseConfig(input_size=(32, 32)))])
    def test_round_trip_bit_identical(self, tmp_path, cls, cfg, corpus):
        m = cls(cfg, seed=7)
        for p in m.params:
            p.data += np.random.default_rng(0).normal(0, 0.01, p.shape).astype(np.float32)
        m.invalidate()
        m.save(tmp_path / "w.lvwt")
        back = load_model(tmp_path / "w.lvwt")
        assert type(back) is cls and back.config == cfg
        batch = m.prepare(corpus.pixels[:3])
        if cls is SiameseModel:
            np.testing.assert_array_equal(back.embed_batch(batch), m.embed_batch(batch))
        else:
            np.testing.assert_array_equal(back.encode_batch(batch), m.encode_batch(batch))
        assert back.checksum == m.checksum

    def test_header_layout(self):
        data = VAEModel(VAEConfig(**SMALL)).to_bytes()
        assert data[:4] == b"LVWT"
        assert int.from_bytes(data[4:6], "little") == 1
        assert data[6] == 1

    def test_bad_magic(self):
        data = bytearray(AEModel(AEConfig(**SMALL)).to_bytes())
        data[:4] = b"XXXX"
        with pytest.raises(IndexFormatError):
            model_from_bytes(bytes(data))

    def test_truncated(self):
        data = AEModel(AEConfig(**SMALL)).to_bytes()
        with pytest.raises(TruncatedPayloadError):
            model_from_bytes(data[:-5])

    def test_trailing_bytes(self):
        with pytest.raises(IndexFormatError):
            model_from_bytes(AEModel(AEConfig(**SMALL)).to_bytes() + b"\0")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_model(tmp_path / "nope.lvwt")

    def test_encode_from_path(self, tmp_path, frame):
        from framesearch.dataio import write_image
        write_image(tmp_path / "a.png", frame)
        m = AEModel(AEConfig(**SMALL))
        np.testing.assert_array_equal(ae_encode(m, tmp_path / "a.png"), ae_encode(m, as_frame(frame)))
