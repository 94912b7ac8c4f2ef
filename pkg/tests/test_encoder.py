import numpy as np
import pytest
import torch

from kelp.corpus import PAD_ID
from kelp.encoder import (
    EncoderConfig,
    SequenceStates,
    TinyEncoder,
    backward,
    encode,
    self_attentive_pool,
    sentence_repr,
)
from kelp.errors import ConfigError, DataError, NumericalError
from kelp.model import init_model, load_checkpoint, save_checkpoint

from oracles import np_forward, np_pool, np_softmax, weights_of


def make_model(seed=0, **kw):
    defaults = dict(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_len=12, vocab_size=25)
    defaults.update(kw)
    config = EncoderConfig(**defaults)
    return TinyEncoder(config, torch.Generator().manual_seed(seed))


class TestConfig:
    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            EncoderConfig(d_model=10, n_heads=3).validate()

    def test_positive_fields(self):
        with pytest.raises(ConfigError):
            EncoderConfig(n_layers=0).validate()


class TestForward:
    def test_matches_numpy_oracle(self):
        model = make_model(seed=11)
        tokens = [3, 17, 4, 9, 21, 1]
        got = encode(model, tokens).final.detach().numpy()
        want = np_forward(weights_of(model), model.config, tokens)
        assert np.abs(got - want).max() < 1e-10

    def test_oracle_with_override(self):
        model = make_model(seed=2)
        override_vec = torch.randn(8, generator=torch.Generator().manual_seed(5), dtype=torch.float64)
        got = encode(model, [4, 5, 6], {1: override_vec}).final.detach().numpy()
        want = np_forward(weights_of(model), model.config, [4, 5, 6], {1: override_vec.numpy()})
        assert np.abs(got - want).max() < 1e-10

    def test_zero_model_all_states_equal(self):
        model = make_model()
        with torch.no_grad():
            for _, p in model.named_parameters():
                p.zero_()
        final = encode(model, [3, 4, 5, 6]).final
        assert torch.equal(final, torch.zeros_like(final))

    def test_identity_override_is_noop(self):
        model = make_model(seed=3)
        tokens = [7, 8, 9]
        plain = encode(model, tokens).final
        overridden = encode(model, tokens, {1: model.tok_emb[8]}).final
        assert torch.equal(plain, overridden)

    def test_hidden_stack_shape(self):
        model = make_model()
        states = encode(model, [1, 2, 3])
        assert len(states.hidden) == model.config.n_layers + 1
        for h in states.hidden:
            assert h.shape == (3, model.config.d_model)
            assert torch.isfinite(h).all()

    def test_forward_determinism(self):
        a = encode(make_model(seed=9), [5, 6, 7]).final
        b = encode(make_model(seed=9), [5, 6, 7]).final
        assert torch.equal(a, b)

    def test_permutation_equivariance_without_positions(self):
        model = make_model(seed=4)
        with torch.no_grad():
            model.pos_emb.zero_()
        tokens = [3, 9, 14, 2, 7]
        perm = [2, 0, 4, 1, 3]
        base = encode(model, tokens).final
        permuted = encode(model, [tokens[i] for i in perm]).final
        assert torch.allclose(permuted, base[perm], atol=1e-12)

    def test_errors(self):
        model = make_model()
        with pytest.raises(DataError):
            encode(model, [])
        with pytest.raises(DataError):
            encode(model, [99])
        with pytest.raises(DataError):
            encode(model, list(range(13)))
        with pytest.raises(DataError):
            encode(model, [1, 2], {5: torch.zeros(8, dtype=torch.float64)})
        with pytest.raises(NumericalError):
            encode(model, [1, 2], {0: torch.full((8,), float("nan"), dtype=torch.float64)})


class TestPooling:
    def test_single_vector_identity(self):
        model = make_model()
        v = torch.randn(1, 8, dtype=torch.float64)
        assert torch.allclose(self_attentive_pool(model, v, "entity"), v[0])

    def test_identical_vectors(self):
        model = make_model()
        v = torch.randn(8, dtype=torch.float64)
        span = torch.stack([v, v])
        assert torch.allclose(self_attentive_pool(model, span, "relation"), v, atol=1e-15)

    def test_three_vector_hand_computed(self):
        model = make_model(seed=6)
        span = torch.randn(3, 8, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        got = self_attentive_pool(model, span, "description").detach().numpy()
        w = np_softmax(span.numpy() @ weights_of(model)["pool.description"], axis=0)
        assert np.abs(got - w @ span.numpy()).max() < 1e-12

    def test_convex_hull_bounds(self):
        model = make_model(seed=8)
        span = torch.randn(5, 8, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
        out = self_attentive_pool(model, span, "span_output")
        assert (out >= span.min(dim=0).values - 1e-12).all()
        assert (out <= span.max(dim=0).values + 1e-12).all()

    def test_empty_span(self):
        with pytest.raises(DataError):
            self_attentive_pool(make_model(), [], "entity")

    def test_unknown_head(self):
        with pytest.raises(ConfigError):
            self_attentive_pool(make_model(), torch.zeros(1, 8, dtype=torch.float64), "bogus")


class TestSentenceRepr:
    def test_single_token(self):
        model = make_model()
        states = encode(model, [5])
        assert torch.equal(sentence_repr(states), states.final[0])

    def test_two_token_mean(self):
        model = make_model()
        states = encode(model, [5, 6])
        assert torch.allclose(sentence_repr(states), (states.final[0] + states.final[1]) / 2)

    def test_matches_oracle_mean(self):
        model = make_model(seed=12)
        tokens = [2, 9, 13, 4]
        got = sentence_repr(encode(model, tokens)).detach().numpy()
        want = np_forward(weights_of(model), model.config, tokens).mean(axis=0)
        assert np.abs(got - want).max() < 1e-12

    def test_pad_excluded(self):
        model = make_model()
        with_pad = encode(model, [5, 6, PAD_ID])
        keep = sentence_repr(with_pad)
        assert torch.allclose(keep, (with_pad.final[0] + with_pad.final[1]) / 2)

    def test_all_pad_errors(self):
        with pytest.raises(DataError):
            sentence_repr(encode(make_model(), [PAD_ID, PAD_ID]))


class TestBackward:
    def test_constant_loss_gives_zero_gradients(self):
        model = make_model()
        grads = backward(model.named_parameters(), torch.zeros((), dtype=torch.float64))
        assert all(torch.equal(g, torch.zeros_like(g)) for g in grads.values())
        assert len(grads) == len(list(model.named_parameters()))

    def test_non_finite_loss_rejected(self):
        model = make_model()
        with pytest.raises(NumericalError):
            backward(model.named_parameters(), torch.tensor(float("inf"), dtype=torch.float64))

    def test_duplicated_example_doubles_gradient(self):
        model = make_model(seed=5)

        def loss_of(batch):
            total = torch.zeros((), dtype=torch.float64)
            for tokens in batch:
                total = total + encode(model, tokens).final.sum()
            return total

        single = backward(model.named_parameters(), loss_of([[3, 4, 5]]))
        double = backward(model.named_parameters(), loss_of([[3, 4, 5], [3, 4, 5]]))
        for name in single:
            assert torch.allclose(double[name], 2 * single[name], atol=1e-12)

    def test_finite_difference_spot_check(self):
        model = make_model(seed=13)
        tokens = [3, 11, 7]

        def loss_fn():
            return encode(model, tokens).final.square().sum()

        grads = backward(model.named_parameters(), loss_fn())
        step = 1e-4
        flat = model.pos_emb.data.view(-1)
        for i in (0, 5, 11):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
            fd = (up - down) / (2 * step)
            ag = grads["pos_emb"].view(-1)[i].item()
            # near-zero gradients drown in finite-difference noise; guard them
            assert abs(fd - ag) / max(abs(fd), abs(ag)) < 1e-4 or max(abs(fd), abs(ag)) < 1e-6


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        bundle = init_model(EncoderConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=25, max_len=12), seed=3)
        path = str(tmp_path / "m.dkpt")
        save_checkpoint(path, bundle)
        loaded = load_checkpoint(path)
        for (n1, p1), (n2, p2) in zip(bundle.named_parameters(), loaded.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2)
        tokens = [1, 5, 9]
        assert torch.equal(
            encode(bundle.encoder, tokens).final, encode(loaded.encoder, tokens).final
        )

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "m.dkpt"
        save_checkpoint(str(path), init_model(EncoderConfig(d_model=8, n_heads=2, vocab_size=10, max_len=8), seed=0))
        assert path.read_bytes()[:4] == b"DKPT"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dkpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(str(path))

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "m.dkpt"
        save_checkpoint(str(path), init_model(EncoderConfig(d_model=8, n_heads=2, vocab_size=10, max_len=8), seed=0))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(str(path))

    def test_tied_output_projection_shares_storage(self):
        bundle = init_model(EncoderConfig(d_model=8, n_heads=2, vocab_size=10, max_len=8), seed=0)
        h = torch.randn(8, dtype=torch.float64)
        logits = bundle.encoder.output_logits(h)
        assert logits.shape == (10,)
        with torch.no_grad():
            bundle.encoder.tok_emb[3] += 1.0
        assert not torch.allclose(bundle.encoder.output_logits(h), logits)
