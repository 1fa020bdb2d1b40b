"""From-scratch trainable classifiers.

Two architectures: a dense rectifier network for the 3-way ESA direction and
a short-sequence (length 2) LSTM followed by the same dense stack for the
2-way iron-supplement direction. Training uses class-weighted cross-entropy
with an L1 penalty on weights, inverted dropout, and Adam. All arithmetic is
64-bit and fully deterministic given (seed, config, data).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import Direction
from .features import FeatureVector, NormalizationStats

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PROB_FLOOR = 1e-12

ESA_CLASSES: tuple[Direction, ...] = (Direction.UP, Direction.STAY, Direction.DOWN)
IS_CLASSES: tuple[Direction, ...] = (Direction.UP, Direction.STAY)


class TrainingError(RuntimeError):
    pass


class ModelLoadError(ValueError):
    pass


@dataclass(frozen=True)
class DenseNetConfig:
    input_dim: int = 16
    hidden_layers: int = 10
    units: int = 512
    dropout_rate: float = 0.20
    l1_coefficient: float = 0.3
    output_classes: int = 3
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.units,
               self.output_classes, self.epochs, self.batch_size) <= 0:
            raise ValueError("all counts must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l1_coefficient < 0:
            raise ValueError("l1_coefficient must be >= 0")


@dataclass(frozen=True)
class RecurrentNetConfig(DenseNetConfig):
    output_classes: int = 2
    sequence_len: int = 2  # fixed: two successive occasions feed the cell

    def __post_init__(self):
        super().__post_init__()
        if self.sequence_len != 2:
            raise ValueError("sequence_len is fixed at 2")


@dataclass(frozen=True)
class ClassProbabilities:
    p_up: float
    p_stay: float
    p_down: Optional[float] = None

    def __post_init__(self):
        parts = [self.p_up, self.p_stay] + ([self.p_down] if self.p_down is not None else [])
        for p in parts:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(parts)}, not 1")


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _l1_weight_keys(params: dict[str, np.ndarray]) -> list[str]:
    # biases excluded from the L1 penalty
    return [k for k in params if not k.endswith("_b") and not k == "lstm_b"]


class Model:
    """Trainable classifier state: tensors, Adam accumulators, normalization
    statistics, class weights, and a config snapshot."""

    kind = "dense"

    def __init__(self, config: DenseNetConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.step = 0
        self.normalization: Optional[NormalizationStats] = None
        self.class_weights = np.ones(config.output_classes, dtype=np.float64)
        self.loss_trace: list[float] = []
        self._clamp_warned = False
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self._init_params(rng)
        self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- architecture -----------------------------------------------------

    def _dense_stack_input_dim(self) -> int:
        return self.config.input_dim

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        fan_in = self._dense_stack_input_dim()
        for layer in range(cfg.hidden_layers):
            self.params[f"dense{layer}_W"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(cfg.units, fan_in))
            self.params[f"dense{layer}_b"] = np.zeros(cfg.units)
            fan_in = cfg.units
        self.params["out_W"] = rng.normal(0.0, np.sqrt(1.0 / fan_in),
                                          size=(cfg.output_classes, fan_in))
        self.params["out_b"] = np.zeros(cfg.output_classes)

    # -- forward / backward -----------------------------------------------

    def _stack_forward(self, h: np.ndarray, train: bool,
                       rng: Optional[np.random.Generator],
                       cache: dict) -> np.ndarray:
        cfg = self.config
        cache["acts"] = [h]
        cache["masks"] = []
        for layer in range(cfg.hidden_layers):
            z = h @ self.params[f"dense{layer}_W"].T + self.params[f"dense{layer}_b"]
            h = _relu(z)
            if train and cfg.dropout_rate > 0.0:
                # inverted dropout: expected activation preserved
                mask = (rng.random(h.shape) >= cfg.dropout_rate) / (1.0 - cfg.dropout_rate)
                h = h * mask
                cache["masks"].append(mask)
            else:
                cache["masks"].append(None)
            cache["acts"].append(h)
        logits = h @ self.params["out_W"].T + self.params["out_b"]
        cache["logits"] = logits
        return logits

    def _stack_backward(self, dlogits: np.ndarray, cache: dict,
                        grads: dict[str, np.ndarray]) -> np.ndarray:
        cfg = self.config
        acts = cache["acts"]
        grads["out_W"] = dlogits.T @ acts[-1]
        grads["out_b"] = dlogits.sum(axis=0)
        dh = dlogits @ self.params["out_W"]
        for layer in reversed(range(cfg.hidden_layers)):
            mask = cache["masks"][layer]
            if mask is not None:
                dh = dh * mask
            # relu gradient: the cached activation is post-relu (pre-dropout
            # masking does not change its zero set)
            dz = dh * (acts[layer + 1] > 0 if mask is None else cache["acts"][layer + 1] != 0)
            grads[f"dense{layer}_W"] = dz.T @ acts[layer]
            grads[f"dense{layer}_b"] = dz.sum(axis=0)
            dh = dz @ self.params[f"dense{layer}_W"]
        return dh

    def forward_batch(self, X: np.ndarray, X_prev: Optional[np.ndarray] = None,
                      train: bool = False,
                      rng: Optional[np.random.Generator] = None
                      ) -> tuple[np.ndarray, dict]:
        if X.shape[1] != self.config.input_dim:
            raise ValueError(f"expected {self.config.input_dim} inputs, got {X.shape[1]}")
        cache: dict = {}
        logits = self._stack_forward(X, train, rng, cache)
        return _softmax(logits), cache

    def backward_batch(self, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        self._stack_backward(dlogits, cache, grads)
        return grads

    # -- loss / optimization ------------------------------------------------

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray,
                       X_prev: Optional[np.ndarray] = None,
                       train: bool = False,
                       rng: Optional[np.random.Generator] = None
                       ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean class-weighted cross-entropy plus L1 penalty, with gradients."""
        if len(y) == 0:
            raise ValueError("empty batch")
        probs, cache = self.forward_batch(X, X_prev, train=train, rng=rng)
        n = len(y)
        w = self.class_weights[y]
        p_label = probs[np.arange(n), y]
        if np.any(p_label < PROB_FLOOR):
            if not self._clamp_warned:
                logger.warning("predicted probability clamped at %g before log", PROB_FLOOR)
                self._clamp_warned = True
            p_label = np.maximum(p_label, PROB_FLOOR)
        ce = float(np.mean(w * -np.log(p_label)))
        l1 = self.config.l1_coefficient
        penalty = l1 * sum(float(np.abs(self.params[k]).sum())
                           for k in _l1_weight_keys(self.params)) if l1 > 0 else 0.0

        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        dlogits = (probs - onehot) * w[:, None] / n
        grads = self.backward_batch(cache, dlogits)
        if l1 > 0:
            for k in _l1_weight_keys(self.params):
                grads[k] = grads[k] + l1 * np.sign(self.params[k])
        return ce + penalty, grads

    def apply_adam(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in tensor {name!r}")
        self.step += 1
        t = self.step
        lr = self.config.learning_rate
        for name, g in grads.items():
            self.adam_m[name] = ADAM_BETA1 * self.adam_m[name] + (1 - ADAM_BETA1) * g
            self.adam_v[name] = ADAM_BETA2 * self.adam_v[name] + (1 - ADAM_BETA2) * g * g
            m_hat = self.adam_m[name] / (1 - ADAM_BETA1 ** t)
            v_hat = self.adam_v[name] / (1 - ADAM_BETA2 ** t)
            self.params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            if not np.all(np.isfinite(self.params[name])):
                raise TrainingError(f"non-finite parameter in tensor {name!r} after step {t}")

    def backward_and_step(self, X: np.ndarray, y: np.ndarray,
                          X_prev: Optional[np.ndarray] = None,
                          train: bool = True,
                          rng: Optional[np.random.Generator] = None) -> float:
        loss, grads = self.loss_and_grads(X, y, X_prev, train=train, rng=rng)
        self.apply_adam(grads)
        return loss

    # -- inference -----------------------------------------------------------

    def class_order(self) -> tuple[Direction, ...]:
        return ESA_CLASSES if self.config.output_classes == 3 else IS_CLASSES

    def predict_probs(self, X: np.ndarray,
                      X_prev: Optional[np.ndarray] = None) -> np.ndarray:
        probs, _ = self.forward_batch(X, X_prev, train=False)
        return probs

    def forward_single(self, features: np.ndarray,
                       prev: Optional[np.ndarray] = None) -> ClassProbabilities:
        X = features.reshape(1, -1)
        X_prev = prev.reshape(1, -1) if prev is not None else None
        p = self.predict_probs(X, X_prev)[0]
        if self.config.output_classes == 3:
            return ClassProbabilities(p_up=float(p[0]), p_stay=float(p[1]),
                                      p_down=float(p[2]))
        return ClassProbabilities(p_up=float(p[0]), p_stay=float(p[1]))

    # -- serialization ---------------------------------------------------------

    def to_document(self) -> dict:
        cfg = dataclasses.asdict(self.config)
        norm = (None if self.normalization is None else
                {"mean": list(self.normalization.mean), "std": list(self.normalization.std)})
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "config": cfg,
            "class_weights": self.class_weights.tolist(),
            "normalization": norm,
            "step": self.step,
            "loss_trace": self.loss_trace,
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in sorted(self.params.items())},
            "adam_m": {k: v.ravel().tolist() for k, v in sorted(self.adam_m.items())},
            "adam_v": {k: v.ravel().tolist() for k, v in sorted(self.adam_v.items())},
        }

    def save(self) -> bytes:
        return json.dumps(self.to_document(), sort_keys=True).encode("utf-8")

    def version_id(self) -> str:
        return hashlib.sha256(self.save()).hexdigest()[:16]


class RecurrentModel(Model):
    """LSTM cell over two successive feature vectors, then the dense stack."""

    kind = "recurrent"

    def __init__(self, config: RecurrentNetConfig,
                 rng: Optional[np.random.Generator] = None):
        if not isinstance(config, RecurrentNetConfig):
            raise TypeError("RecurrentModel needs a RecurrentNetConfig")
        super().__init__(config, rng)

    def _dense_stack_input_dim(self) -> int:
        return self.config.units

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        H, D = cfg.units, cfg.input_dim
        self.params["lstm_Wx"] = rng.normal(0.0, np.sqrt(1.0 / D), size=(4 * H, D))
        self.params["lstm_Wh"] = rng.normal(0.0, np.sqrt(1.0 / H), size=(4 * H, H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        self.params["lstm_b"] = b
        super()._init_params(rng)

    def _cell_forward(self, x: np.ndarray, h: np.ndarray, c: np.ndarray) -> tuple:
        H = self.config.units
        a = x @ self.params["lstm_Wx"].T + h @ self.params["lstm_Wh"].T + self.params["lstm_b"]
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return h_new, c_new, (x, h, c, i, f, g, o, c_new)

    def forward_batch(self, X: np.ndarray, X_prev: Optional[np.ndarray] = None,
                      train: bool = False,
                      rng: Optional[np.random.Generator] = None
                      ) -> tuple[np.ndarray, dict]:
        if X.shape[1] != self.config.input_dim:
            raise ValueError(f"expected {self.config.input_dim} inputs, got {X.shape[1]}")
        if X_prev is None:
            # degenerate-input rule: duplicate the current occasion
            logger.debug("no predecessor features; duplicating current occasion")
            X_prev = X
        if X_prev.shape != X.shape:
            raise ValueError(f"predecessor shape {X_prev.shape} != {X.shape}")
        B, H = X.shape[0], self.config.units
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        cache: dict = {"steps": []}
        for x in (X_prev, X):
            h, c, step_cache = self._cell_forward(x, h, c)
            cache["steps"].append(step_cache)
        logits = self._stack_forward(h, train, rng, cache)
        return _softmax(logits), cache

    def backward_batch(self, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        dh = self._stack_backward(dlogits, cache, grads)
        H = self.config.units
        Wx, Wh = self.params["lstm_Wx"], self.params["lstm_Wh"]
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * H)
        dc = np.zeros_like(dh)
        for x, h_prev, c_prev, i, f, g, o, c_new in reversed(cache["steps"]):
            tanh_c = np.tanh(c_new)
            do = dh * tanh_c
            dc = dc + dh * o * (1 - tanh_c ** 2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc = dc * f
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
            dWx += da.T @ x
            dWh += da.T @ h_prev
            db += da.sum(axis=0)
            dh = da @ Wh
        grads["lstm_Wx"] = dWx
        grads["lstm_Wh"] = dWh
        grads["lstm_b"] = db
        return grads


def build_model(config: DenseNetConfig) -> Model:
    if isinstance(config, RecurrentNetConfig):
        return RecurrentModel(config)
    return Model(config)


def labels_to_indices(labels: Sequence[Direction], classes: Sequence[Direction]) -> np.ndarray:
    index = {d: i for i, d in enumerate(classes)}
    return np.array([index[d] for d in labels], dtype=np.int64)


def class_weight_array(weights: dict[Direction, float],
                       classes: Sequence[Direction]) -> np.ndarray:
    return np.array([weights[c] for c in classes], dtype=np.float64)


def train(config: DenseNetConfig,
          X: np.ndarray,
          y: np.ndarray,
          X_prev: Optional[np.ndarray] = None,
          class_weights: Optional[np.ndarray] = None,
          normalization: Optional[NormalizationStats] = None) -> Model:
    """Train a model for `config.epochs` epochs of seeded shuffled
    mini-batches. Deterministic given (seed, config, data)."""
    model = build_model(config)
    if class_weights is not None:
        if len(class_weights) != config.output_classes:
            raise ValueError("class_weights length must match output_classes")
        model.class_weights = np.asarray(class_weights, dtype=np.float64)
    model.normalization = normalization
    present = set(np.unique(y).tolist())
    if present != set(range(config.output_classes)):
        logger.warning("not every class is present in the training labels (%s)", present)
    rng = np.random.default_rng(config.seed)
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = model.backward_and_step(
                X[idx], y[idx],
                X_prev[idx] if X_prev is not None else None,
                train=True, rng=rng)
            epoch_loss += loss
            batches += 1
        mean_loss = epoch_loss / batches
        if not np.isfinite(mean_loss):
            raise TrainingError(
                f"loss diverged at epoch {epoch}: {mean_loss} (trace: {model.loss_trace[-5:]})")
        model.loss_trace.append(mean_loss)
    return model


def _tensor_from_doc(name: str, entry: dict) -> np.ndarray:
    try:
        shape = tuple(entry["shape"])
        data = np.array(entry["data"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ModelLoadError(f"tensor {name!r}: malformed entry ({exc})") from None
    if data.size != int(np.prod(shape)):
        raise ModelLoadError(f"tensor {name!r}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def load(document: bytes | str | dict) -> Model:
    """Rebuild a model from its saved document; forward outputs reproduce the
    saved model bit-exactly."""
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelLoadError(f"not a valid model document: {exc}") from None
    if not isinstance(document, dict):
        raise ModelLoadError("model document must be a JSON object")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelLoadError(f"format_version {version!r} != supported {FORMAT_VERSION}")
    kind = document.get("kind")
    try:
        cfg_dict = dict(document["config"])
        if kind == "dense":
            cfg_dict.pop("sequence_len", None)
            config = DenseNetConfig(**cfg_dict)
            model = Model(config)
        elif kind == "recurrent":
            config = RecurrentNetConfig(**cfg_dict)
            model = RecurrentModel(config)
        else:
            raise ModelLoadError(f"unknown model kind {kind!r}")
        tensors = document["tensors"]
    except KeyError as exc:
        raise ModelLoadError(f"missing field {exc}") from None
    except TypeError as exc:
        raise ModelLoadError(f"bad config: {exc}") from None

    if set(tensors) != set(model.params):
        missing = set(model.params) - set(tensors)
        extra = set(tensors) - set(model.params)
        raise ModelLoadError(f"tensor set mismatch (missing {missing or '{}'}, extra {extra or '{}'})")
    for name in model.params:
        value = _tensor_from_doc(name, tensors[name])
        if value.shape != model.params[name].shape:
            raise ModelLoadError(
                f"tensor {name!r}: shape {value.shape} != expected {model.params[name].shape}")
        model.params[name] = value

    weights = np.array(document.get("class_weights", []), dtype=np.float64)
    if len(weights) != config.output_classes:
        raise ModelLoadError("class_weights length does not match output_classes")
    model.class_weights = weights
    norm = document.get("normalization")
    if norm is not None:
        model.normalization = NormalizationStats(mean=tuple(norm["mean"]),
                                                 std=tuple(norm["std"]))
    model.step = int(document.get("step", 0))
    model.loss_trace = list(document.get("loss_trace", []))
    for store, key in ((model.adam_m, "adam_m"), (model.adam_v, "adam_v")):
        saved = document.get(key, {})
        for name in store:
            if name in saved:
                arr = np.array(saved[name], dtype=np.float64)
                if arr.size != store[name].size:
                    raise ModelLoadError(f"{key}[{name!r}]: size mismatch")
                store[name] = arr.reshape(store[name].shape)
    return model
