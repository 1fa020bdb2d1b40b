import json

import numpy as np
import pytest

from anemctl.domain import Direction
from anemctl.features import NormalizationStats
from anemctl.network import (
    ESA_CLASSES,
    IS_CLASSES,
    DenseNetConfig,
    Model,
    ModelLoadError,
    RecurrentModel,
    RecurrentNetConfig,
    TrainingError,
    build_model,
    labels_to_indices,
    load,
    train,
)

RNG = np.random.default_rng(0)


def dense_config(**kwargs):
    base = dict(input_dim=5, hidden_layers=2, units=8, dropout_rate=0.0,
                l1_coefficient=0.0, output_classes=3, learning_rate=1e-3,
                epochs=5, batch_size=4, seed=3)
    base.update(kwargs)
    return DenseNetConfig(**base)


def recurrent_config(**kwargs):
    base = dict(input_dim=5, hidden_layers=2, units=6, dropout_rate=0.0,
                l1_coefficient=0.0, output_classes=2, learning_rate=1e-3,
                epochs=5, batch_size=4, seed=3)
    base.update(kwargs)
    return RecurrentNetConfig(**base)


def numeric_grads(model, X, y, X_prev=None, eps=1e-6, per_tensor=6, seed=1):
    """Central finite differences on a sample of coordinates per tensor."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, tensor in model.params.items():
        flat = tensor.ravel()
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        grads = {}
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = model.loss_and_grads(X, y, X_prev)
            flat[i] = orig - eps
            down, _ = model.loss_and_grads(X, y, X_prev)
            flat[i] = orig
            grads[int(i)] = (up - down) / (2 * eps)
        out[name] = grads
    return out


def max_rel_error(model, X, y, X_prev=None):
    _, analytic = model.loss_and_grads(X, y, X_prev)
    numeric = numeric_grads(model, X, y, X_prev)
    worst = 0.0
    for name, coords in numeric.items():
        flat = analytic[name].ravel()
        for i, g_num in coords.items():
            g_ana = flat[i]
            denom = max(abs(g_num), abs(g_ana), 1e-8)
            worst = max(worst, abs(g_num - g_ana) / denom)
    return worst


class TestForward:
    def test_probabilities_are_a_distribution(self):
        model = build_model(dense_config())
        X = RNG.normal(size=(50, 5))
        probs = model.predict_probs(X)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_output_layer_gives_uniform(self):
        model = build_model(dense_config())
        model.params["out_W"][:] = 0.0
        model.params["out_b"][:] = 0.0
        probs = model.predict_probs(RNG.normal(size=(4, 5)))
        assert np.allclose(probs, 1.0 / 3.0)

    def test_inference_is_deterministic(self):
        model = build_model(dense_config(dropout_rate=0.5))
        X = RNG.normal(size=(10, 5))
        assert np.array_equal(model.predict_probs(X), model.predict_probs(X))

    def test_input_width_checked(self):
        model = build_model(dense_config())
        with pytest.raises(ValueError):
            model.predict_probs(np.zeros((2, 7)))

    def test_recurrent_predecessor_shape_checked(self):
        model = build_model(recurrent_config())
        with pytest.raises(ValueError):
            model.predict_probs(np.zeros((2, 5)), np.zeros((3, 5)))

    def test_recurrent_duplicates_missing_predecessor(self):
        model = build_model(recurrent_config())
        X = RNG.normal(size=(6, 5))
        assert np.array_equal(model.predict_probs(X),
                              model.predict_probs(X, X.copy()))

    def test_recurrent_uses_predecessor(self):
        model = build_model(recurrent_config())
        X = RNG.normal(size=(6, 5))
        P = RNG.normal(size=(6, 5))
        assert not np.array_equal(model.predict_probs(X), model.predict_probs(X, P))


class TestLoss:
    def test_uniform_prediction_loss_is_ln_k(self):
        model = build_model(dense_config())
        model.params["out_W"][:] = 0.0
        model.params["out_b"][:] = 0.0
        X = RNG.normal(size=(8, 5))
        y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
        loss, _ = model.loss_and_grads(X, y)
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_class_weights_scale_example_terms(self):
        model = build_model(dense_config())
        X = RNG.normal(size=(6, 5))
        y = np.array([0, 0, 1, 1, 2, 2])
        base, _ = model.loss_and_grads(X, y)
        model.class_weights = np.array([2.0, 2.0, 2.0])
        doubled, _ = model.loss_and_grads(X, y)
        assert doubled == pytest.approx(2 * base)

    def test_zero_weight_class_contributes_nothing(self):
        model = build_model(dense_config())
        model.class_weights = np.array([1.0, 1.0, 0.0])
        X = RNG.normal(size=(6, 5))
        y = np.array([0, 1, 2, 2, 1, 0])
        loss_a, grads_a = model.loss_and_grads(X, y)
        X2 = X.copy()
        X2[y == 2] = RNG.normal(size=(2, 5))  # perturb only weight-zero examples
        loss_b, grads_b = model.loss_and_grads(X2, y)
        assert loss_a == pytest.approx(loss_b)
        for k in grads_a:
            assert np.allclose(grads_a[k], grads_b[k])

    def test_l1_penalty_counts_weights_not_biases(self):
        cfg = dense_config(l1_coefficient=0.5)
        model = build_model(cfg)
        X = RNG.normal(size=(4, 5))
        y = np.array([0, 1, 2, 1])
        loss_with, _ = model.loss_and_grads(X, y)
        expected_penalty = 0.5 * sum(
            np.abs(v).sum() for k, v in model.params.items() if not k.endswith("_b"))
        model2 = build_model(dense_config(l1_coefficient=0.0))
        model2.params = {k: v.copy() for k, v in model.params.items()}
        loss_without, _ = model2.loss_and_grads(X, y)
        assert loss_with == pytest.approx(loss_without + expected_penalty)

    def test_bias_change_does_not_change_penalty(self):
        cfg = dense_config(l1_coefficient=0.5)
        model = build_model(cfg)
        X = np.zeros((2, 5))
        y = np.array([0, 1])
        model.params["out_W"][:] = 0.0
        loss_a, _ = model.loss_and_grads(X, y)
        model.params["out_b"][:] = np.array([1.0, 1.0, 1.0])  # shifts all logits equally
        loss_b, _ = model.loss_and_grads(X, y)
        assert loss_a == pytest.approx(loss_b)

    def test_empty_batch_rejected(self):
        model = build_model(dense_config())
        with pytest.raises(ValueError):
            model.loss_and_grads(np.zeros((0, 5)), np.zeros(0, dtype=int))

    def test_probability_clamp_warns_once(self, caplog):
        import logging
        model = build_model(dense_config())
        model.params["out_b"][:] = np.array([0.0, 0.0, -2000.0])
        X = np.zeros((2, 5))
        y = np.array([2, 2])
        with caplog.at_level(logging.WARNING):
            loss, _ = model.loss_and_grads(X, y)
            model.loss_and_grads(X, y)
        assert np.isfinite(loss)
        assert sum("clamped" in r.message for r in caplog.records) == 1


class TestGradients:
    def test_dense_gradcheck(self):
        model = build_model(dense_config(l1_coefficient=0.0))
        X = RNG.normal(size=(7, 5))
        y = np.array([0, 1, 2, 1, 0, 2, 1])
        assert max_rel_error(model, X, y) < 1e-4

    def test_dense_gradcheck_with_class_weights(self):
        model = build_model(dense_config())
        model.class_weights = np.array([3.0, 1.0, 8.0])
        X = RNG.normal(size=(7, 5))
        y = np.array([0, 1, 2, 1, 0, 2, 1])
        assert max_rel_error(model, X, y) < 1e-4

    def test_recurrent_gradcheck(self):
        model = build_model(recurrent_config())
        X = RNG.normal(size=(6, 5))
        P = RNG.normal(size=(6, 5))
        y = np.array([0, 1, 0, 1, 0, 1])
        assert max_rel_error(model, X, y, P) < 1e-4

    def test_l1_subgradient_away_from_zero(self):
        # with |w| > eps everywhere the L1 term is differentiable and the
        # finite-difference check still applies
        model = build_model(dense_config(l1_coefficient=0.1))
        for k, v in model.params.items():
            if not k.endswith("_b"):
                v[np.abs(v) < 1e-3] = 1e-3
        X = RNG.normal(size=(5, 5))
        y = np.array([0, 1, 2, 1, 0])
        assert max_rel_error(model, X, y) < 1e-4


class TestAdam:
    def test_first_step_magnitude(self):
        model = build_model(dense_config(learning_rate=1e-3))
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        grads["out_b"][0] = 0.5
        before = {k: v.copy() for k, v in model.params.items()}
        model.apply_adam(grads)
        delta = model.params["out_b"][0] - before["out_b"][0]
        # first bias-corrected step is -lr * g / (|g| + eps)
        assert delta == pytest.approx(-1e-3, rel=1e-6)
        for k in before:
            untouched = model.params[k].copy()
            untouched_ref = before[k].copy()
            if k == "out_b":
                untouched[0] = untouched_ref[0] = 0.0
            assert np.array_equal(untouched, untouched_ref)

    def test_step_counter_increments(self):
        model = build_model(dense_config())
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        model.apply_adam(grads)
        model.apply_adam(grads)
        assert model.step == 2

    def test_non_finite_gradient_names_tensor(self):
        model = build_model(dense_config())
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        grads["dense1_W"][0, 0] = np.nan
        with pytest.raises(TrainingError, match="dense1_W"):
            model.apply_adam(grads)


class TestDropout:
    def test_inverted_dropout_preserves_expectation(self):
        # one hidden layer: the logits are linear in the masked activation,
        # so the Monte-Carlo mean of train-mode logits must match eval mode
        cfg = dense_config(hidden_layers=1, units=16, dropout_rate=0.3)
        model = build_model(cfg)
        x = RNG.normal(size=(1, 5))
        eval_logits = model.forward_batch(x)[1]["logits"][0]
        rng = np.random.default_rng(99)
        n = 10_000
        draws = np.empty((n, 3))
        for i in range(n):
            draws[i] = model.forward_batch(x, train=True, rng=rng)[1]["logits"][0]
        se = draws.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - eval_logits) < 3.5 * se + 1e-12)

    def test_dropout_off_at_inference(self):
        model = build_model(dense_config(dropout_rate=0.9))
        X = RNG.normal(size=(5, 5))
        assert np.array_equal(model.predict_probs(X), model.predict_probs(X))

    def test_dropout_rate_validated(self):
        with pytest.raises(ValueError):
            dense_config(dropout_rate=1.0)


class TestTraining:
    def make_blobs(self):
        rng = np.random.default_rng(5)
        centers = np.array([[3.0, 0, 0, 0, 0], [0, 3.0, 0, 0, 0], [0, 0, 3.0, 0, 0]])
        X = np.vstack([rng.normal(size=(30, 5)) * 0.3 + centers[k] for k in range(3)])
        y = np.repeat([0, 1, 2], 30)
        return X, y

    def test_learns_separable_blobs(self):
        X, y = self.make_blobs()
        model = train(dense_config(epochs=120), X, y)
        pred = model.predict_probs(X).argmax(axis=1)
        assert np.mean(pred == y) == 1.0

    def test_recurrent_learns_sequence_dependence(self):
        # the label is carried by the predecessor row only
        rng = np.random.default_rng(8)
        P = np.vstack([rng.normal(size=(40, 5)) * 0.3 + [3, 0, 0, 0, 0],
                       rng.normal(size=(40, 5)) * 0.3 + [0, 3, 0, 0, 0]])
        X = rng.normal(size=(80, 5)) * 0.3
        y = np.repeat([0, 1], 40)
        model = train(recurrent_config(epochs=150, units=12), X, y, X_prev=P)
        pred = model.predict_probs(X, P).argmax(axis=1)
        assert np.mean(pred == y) >= 0.95

    def test_same_seed_trains_identically(self):
        X, y = self.make_blobs()
        cfg = dense_config(epochs=10, dropout_rate=0.2, l1_coefficient=1e-3)
        a = train(cfg, X, y)
        b = train(cfg, X, y)
        assert a.save() == b.save()

    def test_different_seed_differs(self):
        X, y = self.make_blobs()
        a = train(dense_config(epochs=3), X, y)
        b = train(dense_config(epochs=3, seed=9), X, y)
        assert a.save() != b.save()

    def test_loss_trace_recorded_and_finite(self):
        X, y = self.make_blobs()
        model = train(dense_config(epochs=7), X, y)
        assert len(model.loss_trace) == 7
        assert all(np.isfinite(v) for v in model.loss_trace)

    def test_missing_class_warns(self, caplog):
        import logging
        X, y = self.make_blobs()
        y = np.where(y == 2, 0, y)
        with caplog.at_level(logging.WARNING):
            train(dense_config(epochs=1), X, y)
        assert any("class" in r.message for r in caplog.records)

    def test_class_weight_length_checked(self):
        X, y = self.make_blobs()
        with pytest.raises(ValueError):
            train(dense_config(epochs=1), X, y, class_weights=np.ones(2))


class TestSerialization:
    def trained(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 5))
        y = rng.integers(0, 3, size=20)
        stats = NormalizationStats(mean=tuple(range(8)), std=(1.0,) * 8)
        return train(dense_config(epochs=3), X, y, normalization=stats), X

    def test_round_trip_forward_identical(self):
        model, X = self.trained()
        clone = load(model.save())
        assert np.array_equal(model.predict_probs(X), clone.predict_probs(X))
        assert clone.normalization == model.normalization
        assert clone.save() == model.save()

    def test_recurrent_round_trip(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(12, 5))
        P = rng.normal(size=(12, 5))
        y = rng.integers(0, 2, size=12)
        model = train(recurrent_config(epochs=3), X, y, X_prev=P)
        clone = load(model.save())
        assert isinstance(clone, RecurrentModel)
        assert np.array_equal(model.predict_probs(X, P), clone.predict_probs(X, P))

    def test_version_id_tracks_content(self):
        model, _ = self.trained()
        v1 = model.version_id()
        model.params["out_b"][0] += 1.0
        assert model.version_id() != v1

    def test_truncated_document_rejected(self):
        model, _ = self.trained()
        with pytest.raises(ModelLoadError):
            load(model.save()[:100])

    def test_unknown_format_version_rejected(self):
        model, _ = self.trained()
        doc = json.loads(model.save())
        doc["format_version"] = 99
        with pytest.raises(ModelLoadError, match="format_version"):
            load(doc)

    def test_tensor_shape_mismatch_names_tensor(self):
        model, _ = self.trained()
        doc = json.loads(model.save())
        doc["tensors"]["out_W"]["data"] = doc["tensors"]["out_W"]["data"][:-1]
        with pytest.raises(ModelLoadError, match="out_W"):
            load(doc)

    def test_missing_tensor_rejected(self):
        model, _ = self.trained()
        doc = json.loads(model.save())
        del doc["tensors"]["dense0_W"]
        with pytest.raises(ModelLoadError, match="dense0_W"):
            load(doc)

    def test_kind_config_mismatch_rejected(self):
        model, _ = self.trained()
        doc = json.loads(model.save())
        doc["kind"] = "recurrent"  # dense tensors cannot satisfy the LSTM layout
        with pytest.raises(ModelLoadError):
            load(doc)

    def test_unknown_kind_rejected(self):
        model, _ = self.trained()
        doc = json.loads(model.save())
        doc["kind"] = "transformer"
        with pytest.raises(ModelLoadError, match="kind"):
            load(doc)


def test_label_index_order():
    assert ESA_CLASSES == (Direction.UP, Direction.STAY, Direction.DOWN)
    assert IS_CLASSES == (Direction.UP, Direction.STAY)
    idx = labels_to_indices([Direction.DOWN, Direction.UP, Direction.STAY], ESA_CLASSES)
    assert idx.tolist() == [2, 0, 1]


def test_config_validation():
    with pytest.raises(ValueError):
        DenseNetConfig(hidden_layers=0)
    with pytest.raises(ValueError):
        DenseNetConfig(l1_coefficient=-0.1)
    with pytest.raises(ValueError):
        RecurrentNetConfig(sequence_len=3)
    with pytest.raises(TypeError):
        RecurrentModel(DenseNetConfig())
