import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idian import core
from idian.core import DenseLayer, Mlp, Tape
from idian.data import Batch
from idian.errors import ConfigError, DataError
from idian.networks import (NETWORK_NAMES, NoiseSource, Widths, build_model, embed, impute,
                            load_checkpoint, predict_proba, save_checkpoint)


def small(d_s=5, d_t=4, n_c=3, seed=0):
    return build_model(d_s, d_t, n_c, seed, Widths.uniform(6))


def constant_imputer(model, values):
    """Replace the imputer by a layer that outputs ``values`` whatever the input."""
    v = np.asarray(values, float)
    logits = np.log(v / (1 - v))
    model.g_i_hat = Mlp("g_i_hat", [DenseLayer(np.zeros((len(v), len(v))), logits, "sigmoid")])
    return model


def test_published_widths():
    model = build_model(20, 1302, 10)
    assert model.g_i_hat.dims == [1302, 512, 512, 512, 1302]
    assert model.g_s.dims == [20, 2048, 1024]
    assert model.g_t.dims == [1302, 2048, 1024]
    assert model.de_t.dims == [1024, 2048, 1302]
    assert model.g.dims == [1024, 512, 256]
    assert model.d.dims == [256, 512, 1]
    assert model.f.dims == [256, 10]
    assert model.f.layers[0].activation == "softmax"
    assert model.g_i_hat.layers[-1].activation == "sigmoid"
    assert model.d.layers[-1].activation == "sigmoid"


def test_same_seed_same_parameters():
    a, b = small(seed=3), small(seed=3)
    for k, v in a.parameters().items():
        assert v.tobytes() == b.parameters()[k].tobytes()
    c = small(seed=4)
    assert any(not np.array_equal(v, c.parameters()[k]) for k, v in a.parameters().items())


def test_parameter_keys_cover_every_network():
    assert {k[0] for k in small().parameters()} == set(NETWORK_NAMES)


def test_fully_observed_rows_pass_through():
    model = small()
    x = np.random.default_rng(0).random((3, 4))
    out = impute(model, x, np.ones_like(x), NoiseSource(1)).value
    np.testing.assert_array_equal(out, x)


def test_stub_imputer_fills_missing_entry():
    model = constant_imputer(small(d_t=3), [0.9, 0.7, 0.1])
    out = impute(model, [[0.5, 0.0, 0.8]], [[1.0, 0.0, 1.0]], np.zeros((1, 3))).value
    np.testing.assert_allclose(out, [[0.5, 0.7, 0.8]], rtol=0, atol=1e-15)
    assert out[0, 0] == 0.5 and out[0, 2] == 0.8


def test_all_missing_row_is_generator_output():
    model = small()
    eps = np.random.default_rng(2).standard_normal((2, 4))
    out = impute(model, np.zeros((2, 4)), np.zeros((2, 4)), eps).value
    expected = core.forward(model.g_i_hat, eps).value
    np.testing.assert_array_equal(out, expected)
    assert np.all((out > 0) & (out < 1))


def test_impute_shape_errors():
    with pytest.raises(ConfigError):
        impute(small(), np.zeros((1, 4)), np.ones((1, 3)), NoiseSource(0))
    with pytest.raises(ConfigError):
        impute(small(), np.zeros((1, 4)), np.ones((1, 4)), np.zeros((2, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_imputer_gradient_only_from_missing_positions(seed):
    rng = np.random.default_rng(seed)
    model = small(seed=seed % 97)
    x = rng.random((2, 4))
    m = (rng.random((2, 4)) > 0.5).astype(float)
    eps = rng.standard_normal((2, 4))
    weights = rng.standard_normal((2, 4))
    tape = Tape()
    out = impute(model, x * m, m, eps, tape)
    # a loss that only reads observed positions must leave the imputer untouched
    grads = tape.backward(core.sum(core.mul(out, weights * m)), model.parameters())
    for k, g in grads.for_network("g_i_hat").items():
        assert not np.any(g), k


def test_noise_for_rows_is_order_free():
    noise = NoiseSource(5)
    a = noise.for_rows([3, 7], 4)
    b = noise.for_rows([7, 3], 4)
    np.testing.assert_array_equal(a, b[::-1])


def batch(n_b=4, d_s=5, d_t=4, n_c=3, seed=0, observed=True):
    rng = np.random.default_rng(seed)
    m = np.ones((n_b, d_t)) if observed else (rng.random((n_b, d_t)) > 0.5).astype(float)
    return Batch(rng.random((n_b, d_s)), rng.integers(0, n_c, n_b), rng.random((n_b, d_t)) * m, m,
                 rng.integers(0, n_c, n_b), rng.random((n_b, d_t)) * m, m)


def test_complete_target_embedding_ignores_noise():
    model, b = small(), batch(observed=True)
    e1 = embed(model, b, NoiseSource(1))
    e2 = embed(model, b, NoiseSource(2))
    np.testing.assert_array_equal(e1.f_t_labeled.value, e2.f_t_labeled.value)


def test_shared_extractors_give_identical_features():
    model = small(d_s=4, d_t=4)
    model.g_t = Mlp("g_t", model.g_s.layers)
    rng = np.random.default_rng(0)
    x = rng.random((4, 4))
    b = Batch(x, np.zeros(4, int), x, np.ones((4, 4)), np.zeros(4, int), x, np.ones((4, 4)))
    e = embed(model, b, NoiseSource(0))
    np.testing.assert_array_equal(e.f_s.value, e.f_t_labeled.value)


def test_embedding_shape_at_published_batch_size():
    model = build_model(6, 5, 3, 0, Widths(8, 16, 1024, 16, 8, 8, 8))
    e = embed(model, batch(n_b=128, d_s=6, d_t=5), NoiseSource(0))
    assert e.f_s.shape == (128, 1024)


def test_predictions_are_distributions():
    model = small()
    x = np.random.default_rng(0).random((6, 4))
    p = predict_proba(model, x, np.ones_like(x), eval_seed=0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_checkpoint_round_trip(tmp_path):
    model = small(seed=9)
    save_checkpoint(model, tmp_path / "m.npz", master_seed=9, config_hash="abc", extra={"variant": "full"})
    loaded, header = load_checkpoint(tmp_path / "m.npz")
    assert header["master_seed"] == 9 and header["config_hash"] == "abc"
    assert header["extra"]["variant"] == "full"
    for k, v in model.parameters().items():
        assert v.tobytes() == loaded.parameters()[k].tobytes()
    x = np.random.default_rng(0).random((3, 4))
    np.testing.assert_array_equal(predict_proba(model, x, np.ones_like(x), 0),
                                  predict_proba(loaded, x, np.ones_like(x), 0))


def test_unreadable_checkpoint(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.npz")
