import numpy as np
import pytest

from models.nn_core import (
    LstmStackConfig,
    ParameterStore,
    ShapeMismatchError,
    TransformerConfig,
    init_parameters,
    linear_forward,
    lstm_stack_forward,
    mha_forward,
    temporal_encoding,
    transformer_layer_forward,
)


def _zero(store):
    for name in store:
        store[name][...] = 0.0
    return store


class TestLinear:
    def test_identity(self):
        store = ParameterStore(np.float64)
        store.add("fc.W", np.eye(2))
        store.add("fc.b", [3.0, 4.0])
        y, _ = linear_forward(store, "fc", np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(y, [[4.0, 6.0]])

    def test_width_mismatch(self):
        store = ParameterStore(np.float64)
        store.add("fc.W", np.eye(2))
        store.add("fc.b", np.zeros(2))
        with pytest.raises(ShapeMismatchError):
            linear_forward(store, "fc", np.ones((1, 3)))


class TestTemporalEncoding:
    def test_first_row(self):
        pe = temporal_encoding(4, 8)
        np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_odd_width(self):
        with pytest.raises(ValueError):
            temporal_encoding(4, 7)


class TestAttention:
    def test_single_step_is_value_path(self, rng):
        cfg = TransformerConfig(n_layers=1, n_heads=2, model_dim=4, ff_dim=8)
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        x = rng.normal(size=(1, 4))
        out, _ = mha_forward(store, "encoder.l0.attn", x, n_heads=2)
        v, _ = linear_forward(store, "encoder.l0.attn.v", x)
        expected, _ = linear_forward(store, "encoder.l0.attn.o", v)
        np.testing.assert_allclose(out, expected)

    def test_zero_projections_give_identity_layer(self, rng):
        cfg = TransformerConfig(n_layers=1, n_heads=2, model_dim=4, ff_dim=8)
        store = init_parameters(cfg, seed=0, dtype=np.float64)
        for name in ("encoder.l0.attn.o.W", "encoder.l0.attn.o.b", "encoder.l0.ff2.W", "encoder.l0.ff2.b"):
            store[name][...] = 0.0
        x = rng.normal(size=(2, 5, 4))
        y, _ = transformer_layer_forward(store, "encoder.l0", x, n_heads=2)
        np.testing.assert_allclose(y, x)

    def test_bad_head_split(self):
        with pytest.raises(ValueError):
            TransformerConfig(n_heads=3, model_dim=64).validate()


class TestLstm:
    def test_zero_weights_give_zero_output(self, rng):
        cfg = LstmStackConfig(n_layers=2, hidden=3, input_dim=5)
        store = _zero(init_parameters(cfg, seed=0, dtype=np.float64))
        y, _ = lstm_stack_forward(store, "lstm", rng.normal(size=(4, 5)), n_layers=2)
        assert y.shape == (4, 3)
        np.testing.assert_array_equal(y, 0.0)

    def test_forget_bias(self):
        store = init_parameters(LstmStackConfig(n_layers=1, hidden=3, input_dim=2), seed=0)
        np.testing.assert_array_equal(store["lstm.l0.b"], [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_batched_matches_single(self, rng):
        cfg = LstmStackConfig(n_layers=2, hidden=3, input_dim=5)
        store = init_parameters(cfg, seed=1, dtype=np.float64)
        x = rng.normal(size=(2, 6, 5))
        batched, _ = lstm_stack_forward(store, "lstm", x, n_layers=2)
        single, _ = lstm_stack_forward(store, "lstm", x[1], n_layers=2)
        np.testing.assert_allclose(batched[1], single)


class TestInit:
    def test_seed_determines_store(self):
        cfg = TransformerConfig(n_layers=1, n_heads=2, model_dim=4, ff_dim=8)
        a = init_parameters(cfg, seed=5)
        b = init_parameters(cfg, seed=5)
        c = init_parameters(cfg, seed=6)
        assert list(a) == list(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a["encoder.l0.ff1.W"], c["encoder.l0.ff1.W"])

    def test_uniform_bound(self):
        store = init_parameters(LstmStackConfig(n_layers=1, hidden=8, input_dim=16), seed=0)
        assert np.abs(store["lstm.l0.Wx"]).max() <= 1 / np.sqrt(16)

    def test_duplicate_name(self):
        store = ParameterStore()
        store.add("a", np.zeros(2))
        with pytest.raises(ValueError):
            store.add("a", np.zeros(2))
