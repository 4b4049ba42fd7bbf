"""Deep feed-forward binary classifier: parameters, loss, gradient, local training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, DataError, NumericError, PreconditionError, ShapeError

HIDDEN_SIZES = (32, 16, 8, 4)
OUTPUT_SIZE = 1
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LayerSpec:
    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) != len(HIDDEN_SIZES) + 2:
            raise ShapeError(f"expected {len(HIDDEN_SIZES) + 2} layer sizes, got {len(sizes)}")
        if sizes[0] < 1:
            raise ShapeError(f"input size must be >= 1, got {sizes[0]}")
        if sizes[1:-1] != HIDDEN_SIZES:
            raise ShapeError(f"hidden sizes must be {list(HIDDEN_SIZES)}, got {list(sizes[1:-1])}")
        if sizes[-1] != OUTPUT_SIZE:
            raise ShapeError(f"output size must be {OUTPUT_SIZE}, got {sizes[-1]}")

    @classmethod
    def for_input(cls, d: int) -> "LayerSpec":
        return cls((d, *HIDDEN_SIZES, OUTPUT_SIZE))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_params(self) -> int:
        return param_count(self.sizes)

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight, bias) slices into the flat vector, one pair per layer."""
        out = []
        off = 0
        for nin, nout in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + nin * nout)
            off += nin * nout
            b = slice(off, off + nout)
            off += nout
            out.append((w, b))
        return out


def param_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True, eq=False)
class ModelParameters:
    values: np.ndarray
    spec: LayerSpec

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if v.shape[0] != self.spec.n_params:
            raise ShapeError(f"expected {self.spec.n_params} values for {list(self.spec.sizes)}, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise NumericError("model parameters contain non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def unchecked(cls, values, spec: LayerSpec) -> "ModelParameters":
        """Wrap received values without the finiteness check, for validators to inspect."""
        obj = object.__new__(cls)
        v = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if v.shape[0] != spec.n_params:
            raise ShapeError(f"expected {spec.n_params} values for {list(spec.sizes)}, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(obj, "values", v)
        object.__setattr__(obj, "spec", spec)
        return obj

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for (ws, bs), nin, nout in zip(self.spec.layer_slices(), self.spec.sizes[:-1], self.spec.sizes[1:]):
            out.append((self.values[ws].reshape(nin, nout), self.values[bs]))
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelParameters):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class Hyperparameters:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise PreconditionError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise PreconditionError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise PreconditionError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise PreconditionError(f"{name} must be in (0, 1), got {b}")
        if not self.adam_epsilon > 0:
            raise PreconditionError(f"adam_epsilon must be > 0, got {self.adam_epsilon}")


@dataclass(frozen=True)
class TrainedUpdate:
    params: ModelParameters
    sample_count: int
    final_loss: float


def init_model(spec: LayerSpec, seed: int) -> ModelParameters:
    """Fan-in scaled uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    if not isinstance(spec, LayerSpec):
        spec = LayerSpec(tuple(spec))
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.n_params)
    for (ws, _), nin in zip(spec.layer_slices(), spec.sizes[:-1]):
        limit = np.sqrt(6.0 / nin)
        values[ws] = rng.uniform(-limit, limit, size=ws.stop - ws.start)
    return ModelParameters(values, spec)


def probe_coverage(params: ModelParameters, probes: int = 512, seed: int = 0) -> float:
    """Fraction of uniform inputs in [0, 1]^d that reach at least one active unit of the last hidden layer.

    With zero biases a network whose narrowest layer is silent on most of the
    input box outputs sigmoid(b_out) there and gets no gradient to leave that
    state. Scaled features live in [0, 1]^d, so this needs no data.
    """
    h = np.random.default_rng(seed).uniform(size=(probes, params.spec.input_dim))
    for w, b in params.layers()[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    return float(np.mean(np.any(h > 0, axis=1)))


def init_live_model(spec: LayerSpec, seed: int, min_coverage: float = 0.9, max_draws: int = 64) -> ModelParameters:
    """First of ``init_model(spec, seed)``, ``init_model(spec, [seed, 1])``, ... whose probe coverage is at least ``min_coverage``."""
    if not isinstance(spec, LayerSpec):
        spec = LayerSpec(tuple(spec))
    best, best_cov = None, -1.0
    for i in range(max_draws):
        p = init_model(spec, seed if i == 0 else [seed, i])
        cov = probe_coverage(p)
        if cov >= min_coverage:
            return p
        if cov > best_cov:
            best, best_cov = p, cov
    return best


def _check_features(params: ModelParameters, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1 and params.spec.input_dim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(f"features must be [n x {params.spec.input_dim}], got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    return np.ascontiguousarray(x)


def _check_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"{n} feature rows but {y.shape[0]} labels")
    return y


def forward(params: ModelParameters, features) -> np.ndarray:
    """Attack probabilities, strictly inside (0, 1)."""
    x = _check_features(params, features)
    return kernels.forward(params.values, params.spec.sizes, x)


def bce_loss(preds, labels) -> float:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.size == 0 or y.size == 0:
        raise ArgumentError("bce_loss needs non-empty inputs")
    if p.shape != y.shape:
        raise ShapeError(f"{p.size} predictions but {y.size} labels")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def gradient(params: ModelParameters, features, labels) -> np.ndarray:
    """Backprop gradient of the mean BCE over the batch, in the parameter layout.

    The log clamp is a guard on the loss value only; the gradient is the exact
    derivative of the unclamped loss, ``(p - y) / n`` at the output.
    """
    x = _check_features(params, features)
    y = _check_labels(labels, x.shape[0])
    if x.shape[0] == 0:
        raise PreconditionError("gradient needs a non-empty batch")
    g, _ = kernels.batch_gradient(params.values, params.spec.sizes, x, y)
    return g


def shuffle_order(n: int, epochs: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.intp)


def train_local(start: ModelParameters, data, hp: Hyperparameters) -> TrainedUpdate:
    """E epochs of mini-batch Adam on BCE; ``data`` needs ``features`` and ``labels``.

    Optimizer moments start at zero on every call. Rows are reshuffled each
    epoch from ``hp.seed``.
    """
    hp.validate()
    x = np.asarray(data.features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot train on an empty partition")
    x = _check_features(start, x)
    y = _check_labels(data.labels, x.shape[0])
    n = x.shape[0]
    order = shuffle_order(n, hp.epochs, hp.seed)
    w, bad_epoch, bad_batch = kernels.train(
        start.values, start.spec.sizes, x, y, order, int(hp.batch_size),
        float(hp.learning_rate), float(hp.adam_beta1), float(hp.adam_beta2), float(hp.adam_epsilon),
    )
    if bad_epoch >= 0:
        raise NumericError(
            f"non-finite gradient at epoch {bad_epoch}, batch {bad_batch}",
            epoch=int(bad_epoch), batch=int(bad_batch),
        )
    if not np.all(np.isfinite(w)):
        raise NumericError("parameters became non-finite during training", epoch=hp.epochs - 1)
    params = ModelParameters(w, start.spec)
    loss = bce_loss(kernels.forward(params.values, params.spec.sizes, x), y)
    return TrainedUpdate(params=params, sample_count=n, final_loss=loss)
