"""Conditioning identities and the assembled model's embedding sources."""

import numpy as np
import pytest

from casnet import nn
from casnet.checkpoint import load_checkpoint, save_checkpoint
from casnet.film import (
    CasNet,
    EmbeddingSource,
    FilmGenerator,
    film_apply,
    model_from_checkpoint,
)
from casnet.gradcheck import grad_check
from casnet.tensor import Tensor
from conftest import small_enc_config, small_sep_config


@pytest.fixture
def model():
    return CasNet(small_sep_config(), small_enc_config(), seed=8)


class TestFilmGenerator:
    def test_two_maps_have_distinct_parameters(self, rng):
        gen = FilmGenerator(6, 12, rng)
        assert gen.to_scale.weight is not gen.to_shift.weight
        assert gen.to_scale.bias is not gen.to_shift.bias

    def test_zero_weights_pinned_bias_give_identity_conditioning(self, rng):
        gen = FilmGenerator(6, 12, rng)
        gen.to_scale.weight.data[:] = 0.0
        gen.to_scale.bias.data[:] = 1.0
        gen.to_shift.weight.data[:] = 0.0
        gen.to_shift.bias.data[:] = 0.0
        params = gen(Tensor(rng.standard_normal((3, 6))))
        assert np.array_equal(params.scale.data, np.ones((3, 12)))
        assert np.array_equal(params.shift.data, np.zeros((3, 12)))

    def test_gradcheck(self, rng):
        gen = FilmGenerator(4, 5, rng)
        emb = Tensor(rng.standard_normal((2, 4)), requires_grad=True)

        def loss():
            p = gen(emb)
            return (p.scale**2).sum() + (p.shift**2).sum()

        wrt = [emb] + [p for _, p in gen.named_parameters()]
        assert grad_check(loss, wrt, rng=rng) < 1e-4


class TestFilmApply:
    def test_unit_scale_zero_shift_is_prelu_of_norm(self, model, rng):
        features = Tensor(rng.standard_normal((2, 12, 9)))
        model.film.to_scale.weight.data[:] = 0.0
        model.film.to_scale.bias.data[:] = 1.0
        model.film.to_shift.weight.data[:] = 0.0
        model.film.to_shift.bias.data[:] = 0.0
        params = model.film(Tensor(rng.standard_normal((2, 6))))
        out = film_apply(features, params, model.film_prelu)
        expected = model.film_prelu(nn.instance_norm(features))
        assert np.array_equal(out.data, expected.data)

    def test_zero_scale_is_time_constant_shift(self, model, rng):
        features = Tensor(rng.standard_normal((2, 12, 9)))
        model.film.to_scale.bias.data[:] = 0.0
        shift = rng.standard_normal((2, 12))
        model.film.to_shift.bias.data[:] = 0.0
        params = model.film(Tensor(np.zeros((2, 6))))
        params.shift.data[:] = shift
        out = film_apply(features, params, model.film_prelu)
        expected = model.film_prelu(Tensor(np.broadcast_to(shift[:, :, None], (2, 12, 9))))
        assert np.allclose(out.data, expected.data)
        assert np.allclose(out.data, out.data[:, :, :1])  # constant over time

    def test_gradcheck_through_conditioning(self, model, rng):
        features = Tensor(rng.standard_normal((1, 12, 6)), requires_grad=True)
        emb = Tensor(rng.standard_normal((1, 6)), requires_grad=True)

        def loss():
            return (film_apply(features, model.film(emb), model.film_prelu) ** 2).sum()

        err = grad_check(loss, [features, emb, model.film_prelu.slope], rng=rng)
        assert err < 1e-3


class TestCasNetForward:
    def test_bypass_equals_plain_separator_bitwise(self, model, rng):
        x = Tensor(rng.standard_normal((2, 50)))
        est, emb, logits = model(x, EmbeddingSource.BYPASS)
        baseline = model.separator(x)
        assert emb is None and logits is None
        assert np.array_equal(est.data, baseline.data)

    def test_all_ones_mode_needs_no_rng_and_is_deterministic(self, model, rng):
        x = Tensor(rng.standard_normal((1, 40)))
        est1, emb, logits = model(x, EmbeddingSource.ALL_ONES)
        est2, _, _ = model(x, EmbeddingSource.ALL_ONES)
        assert logits is None
        assert np.array_equal(emb.vector.data, np.ones((1, 6)))
        assert np.array_equal(est1.data, est2.data)

    def test_gaussian_mode_reproducible_under_seed(self, model, rng):
        x = Tensor(rng.standard_normal((1, 40)))
        a, ea, _ = model(x, EmbeddingSource.GAUSSIAN, rng=np.random.default_rng(4))
        b, eb, _ = model(x, EmbeddingSource.GAUSSIAN, rng=np.random.default_rng(4))
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(ea.vector.data, eb.vector.data)
        assert ea.source_kind is EmbeddingSource.GAUSSIAN

    def test_gaussian_mode_requires_rng(self, model, rng):
        with pytest.raises(ValueError, match="rng"):
            model(Tensor(rng.standard_normal((1, 40))), EmbeddingSource.GAUSSIAN)

    def test_aux_modes_require_aux(self, model, rng):
        x = Tensor(rng.standard_normal((1, 40)))
        for source in (
            EmbeddingSource.SAME_MIXTURE,
            EmbeddingSource.OTHER_SAME_CHANNEL,
            EmbeddingSource.OTHER_CHANNEL,
        ):
            with pytest.raises(ValueError, match="requires aux"):
                model(x, source)

    def test_aux_modes_return_logits_and_shapes(self, model, rng):
        x = Tensor(rng.standard_normal((3, 40)))
        est, emb, logits = model(x, EmbeddingSource.SAME_MIXTURE, aux=x)
        assert est.shape == (3, 2, 40)
        assert emb.vector.shape == (3, 6)
        assert emb.source_kind is EmbeddingSource.SAME_MIXTURE
        assert logits.shape == (3, 3)

    def test_modes_are_mutually_exclusive_strings(self):
        values = [s.value for s in EmbeddingSource]
        assert len(values) == len(set(values)) == 6


class TestFullLossGradients:
    def test_every_parameter_gets_a_finite_gradient(self, model, rng):
        from casnet.objectives import channel_id_loss, pit_loss

        x = Tensor(rng.standard_normal((2, 44)) * 0.3)
        targets = rng.standard_normal((2, 2, 44)) * 0.3
        model.zero_grad()
        est, _, logits = model(x, EmbeddingSource.OTHER_CHANNEL, aux=x)
        l_rc = (pit_loss(est[0], Tensor(targets[0]))[0] + pit_loss(est[1], Tensor(targets[1]))[0]) / 2.0
        total = l_rc + 0.1 * channel_id_loss(logits, [0, 1])
        total.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            assert np.all(np.isfinite(p.grad)), name


class TestCheckpointRoundtrip:
    def test_forward_identical_after_reload(self, model, tmp_path, rng):
        x = Tensor(rng.standard_normal((1, 44)))
        before, _, _ = model(x, EmbeddingSource.SAME_MIXTURE, aux=x)
        path = tmp_path / "model.ck"
        save_checkpoint(
            path,
            "casnet",
            {"separator": model.sep_cfg.to_dict(), "chanenc": model.enc_cfg.to_dict()},
            model.state_dict(),
        )
        reloaded = model_from_checkpoint(load_checkpoint(path))
        after, _, _ = reloaded(x, EmbeddingSource.SAME_MIXTURE, aux=x)
        assert np.array_equal(before.data, after.data)

    def test_unknown_kind_rejected(self, model, tmp_path):
        path = tmp_path / "weird.ck"
        save_checkpoint(path, "mystery", {"separator": model.sep_cfg.to_dict()}, {})
        with pytest.raises(ValueError, match="unknown checkpoint kind"):
            model_from_checkpoint(load_checkpoint(path))
