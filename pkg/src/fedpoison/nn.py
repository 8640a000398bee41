"""Feed-forward MLP with ReLU hidden layers and a softmax head.

Everything is written against plain numpy arrays. Parameters are held in
:class:`ModelParams`, which is treated as an immutable value: every function
here returns a fresh instance instead of editing its input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from fedpoison import _seeding
from fedpoison.errors import ConfigError, DataError, NumericError, ShapeError

# Only guards log(0) after softmax underflow; a larger floor would make the
# loss flat where backward() still reports the cross-entropy slope.
PROB_FLOOR = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ModelParams:
    """Ordered ``(weight, bias)`` pairs, weight shaped ``(fan_in, fan_out)``."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        prev = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if prev is not None and prev != w.shape[0]:
                raise ShapeError(f"layer {i}: fan_in {w.shape[0]} != previous fan_out {prev}")
            prev = w.shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    @property
    def n_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def tensors(self) -> Iterator[np.ndarray]:
        for w, b in self.layers:
            yield w
            yield b

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def copy(self) -> "ModelParams":
        return ModelParams(tuple((w.copy(), b.copy()) for w, b in self.layers))

    def map(self, fn, *others: "ModelParams") -> "ModelParams":
        """Apply ``fn`` tensor-wise across this and ``others`` (same shapes)."""
        for o in others:
            if o.layer_dims != self.layer_dims:
                raise ShapeError(f"shape mismatch: {self.layer_dims} vs {o.layer_dims}")
        out = []
        for i, (w, b) in enumerate(self.layers):
            ow = [o.layers[i][0] for o in others]
            ob = [o.layers[i][1] for o in others]
            out.append((fn(w, *ow), fn(b, *ob)))
        return ModelParams(tuple(out))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    def equals(self, other: "ModelParams") -> bool:
        """Bit-level equality of every tensor."""
        if self.layer_dims != other.layer_dims:
            return False
        return all(
            a.tobytes() == b.tobytes() for a, b in zip(self.tensors(), other.tensors())
        )

    # -- export -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "layers": [
                {"weight_shape": list(w.shape), "weight": w.tolist(), "bias": b.tolist()}
                for w, b in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        layers = []
        for layer in d["layers"]:
            w = np.asarray(layer["weight"], dtype=np.float64).reshape(layer["weight_shape"])
            layers.append((w, np.asarray(layer["bias"], dtype=np.float64)))
        return cls(tuple(layers))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    def save_binary(self, path) -> None:
        """Shape header (JSON, length-prefixed) followed by little-endian float64 data."""
        header = json.dumps({"layer_dims": self.layer_dims, "dtype": "<f8"}).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self.flat().astype("<f8").tobytes())

    @classmethod
    def load_binary(cls, path) -> "ModelParams":
        raw = Path(path).read_bytes()
        (hlen,) = struct.unpack("<I", raw[:4])
        header = json.loads(raw[4 : 4 + hlen])
        data = np.frombuffer(raw[4 + hlen :], dtype="<f8").astype(np.float64)
        dims = header["layer_dims"]
        layers, pos = [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = data[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = data[pos : pos + fan_out]
            pos += fan_out
            layers.append((w.copy(), b.copy()))
        return cls(tuple(layers))


@dataclass(frozen=True)
class TrainingHyperparams:
    """Local training settings.

    ``hidden_dims`` and ``init_range`` describe the model built by the
    federation/centralized drivers; the rest drive the optimizer.
    """

    learning_rate: float = 0.01
    local_epochs: int = 3
    batch_size: int = 100
    l2_coef: float = 0.0
    dropout_rate: float = 0.0
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_dims: tuple[int, ...] = (64,)
    init_range: float = 0.05

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.local_epochs < 0:
            raise ConfigError(f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_coef < 0:
            raise ConfigError(f"l2_coef must be >= 0, got {self.l2_coef}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.init_range <= 0:
            raise ConfigError(f"init_range must be > 0, got {self.init_range}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.features) < 1:
            raise DataError("batch must contain at least one row")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )


@dataclass
class AdamState:
    """First/second moment estimates for one parameter set.

    Owned by a single training loop; ``step`` is the index of the last
    update applied.
    """

    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        z = params.map(np.zeros_like)
        return cls(m=z, v=z.copy())


def init_model(layer_dims: Sequence[int], init_range: float = 0.05, seed: int = 0) -> ModelParams:
    """Uniform(-init_range, init_range) weights and biases, deterministic per seed."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"layer_dims needs >= 2 positive entries, got {list(layer_dims)}")
    if init_range <= 0:
        raise ConfigError(f"init_range must be > 0, got {init_range}")
    gen = _seeding.rng(_seeding.INIT, seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = gen.uniform(-init_range, init_range, size=(fan_in, fan_out))
        b = gen.uniform(-init_range, init_range, size=fan_out)
        layers.append((w, b))
    return ModelParams(tuple(layers))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(shape, rate: float, dropout_seed: int, layer: int) -> np.ndarray:
    keep = _seeding.rng(dropout_seed, layer).random(shape) >= rate
    return keep / (1.0 - rate)


def _forward_cache(params, features, mode, dropout_seed, dropout_rate):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ShapeError(
            f"features of shape {x.shape} do not fit input dim {params.layer_dims[0]}"
        )
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    acts, pre_acts, masks = [x], [], []
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        pre_acts.append(z)
        if i == last:
            break
        h = np.maximum(z, 0.0)
        if mode == "train" and dropout_rate > 0:
            mask = _dropout_mask(h.shape, dropout_rate, dropout_seed, i)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)
    return acts, pre_acts, masks, softmax(pre_acts[-1])


def forward(
    params: ModelParams,
    features: np.ndarray,
    mode: str = "eval",
    dropout_seed: int = 0,
    dropout_rate: float = 0.0,
) -> np.ndarray:
    """Class-probability matrix; inverted dropout on hidden layers in train mode."""
    return _forward_cache(params, features, mode, dropout_seed, dropout_rate)[3]


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return forward(params, features).argmax(axis=1)


def loss(probabilities: np.ndarray, labels: np.ndarray, params: ModelParams | None = None,
         l2_coef: float = 0.0) -> float:
    """Mean cross-entropy of the true class plus ``l2_coef * sum(W**2)`` (biases excluded)."""
    labels = np.asarray(labels)
    n, k = probabilities.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0]} labels for {n} probability rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label outside [0, {k})")
    p = np.clip(probabilities[np.arange(n), labels], PROB_FLOOR, 1.0)
    value = float(-np.mean(np.log(p)))
    if l2_coef and params is not None:
        value += l2_coef * sum(float(np.sum(w * w)) for w, _ in params.layers)
    return value


def backward(params: ModelParams, batch: Batch, hyper: TrainingHyperparams,
             dropout_seed: int = 0) -> ModelParams:
    """Exact gradient of :func:`loss` under the forward pass's dropout mask."""
    mode = "train" if hyper.dropout_rate > 0 else "eval"
    acts, pre_acts, masks, probs = _forward_cache(
        params, batch.features, mode, dropout_seed, hyper.dropout_rate
    )
    n, k = probs.shape
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"label outside [0, {k})")
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        gw = acts[i].T @ delta
        if hyper.l2_coef:
            gw = gw + 2.0 * hyper.l2_coef * w
        grads[i] = (gw, delta.sum(axis=0))
        if i == 0:
            break
        delta = delta @ w.T
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1]
        delta = delta * (pre_acts[i - 1] > 0)
    return ModelParams(tuple(grads))


def apply_update(params: ModelParams, gradient: ModelParams, hyper: TrainingHyperparams,
                 step_index: int = 1, state: AdamState | None = None) -> ModelParams:
    """One optimizer step. Adam needs ``state``, which is advanced in place."""
    if not gradient.is_finite():
        raise NumericError("gradient contains NaN or Inf")
    lr = hyper.learning_rate
    if hyper.optimizer == "sgd":
        return params.map(lambda p, g: p - lr * g, gradient)

    if state is None:
        raise ConfigError("adam updates require an AdamState")
    if step_index != state.step + 1:
        raise ConfigError(f"adam step_index {step_index} does not follow stored step {state.step}")
    b1, b2 = hyper.beta1, hyper.beta2
    state.m = state.m.map(lambda m, g: b1 * m + (1 - b1) * g, gradient)
    state.v = state.v.map(lambda v, g: b2 * v + (1 - b2) * g * g, gradient)
    state.step = step_index
    c1 = 1 - b1**step_index
    c2 = 1 - b2**step_index
    return params.map(
        lambda p, m, v: p - lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps), state.m, state.v
    )
