"""Linear softmax and one-hidden-layer ReLU classifiers on flat parameters.

Parameters live in a single flat float64 vector plus a layout describing
each tensor's (name, shape, offset). Keeping every model a flat vector
lets the optimizers stay model-agnostic and makes checkpoints trivial:
a JSON layout header followed by the raw bytes.

The loss is mean softmax cross-entropy, computed through log-sum-exp so
large logits cannot overflow. Gradients are exact and analytic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .problems import Dataset


@dataclass(frozen=True)
class Linear:
    d_in: int
    n_classes: int

    def descriptor(self) -> str:
        return f"linear({self.d_in}->{self.n_classes})"


@dataclass(frozen=True)
class MLP:
    d_in: int
    hidden: int
    n_classes: int

    def descriptor(self) -> str:
        return f"mlp({self.d_in}->{self.hidden}->{self.n_classes})"


ModelSpec = Linear | MLP


@dataclass(frozen=True)
class ParamVector:
    data: np.ndarray                                   # flat float64
    layout: tuple[tuple[str, tuple[int, ...], int], ...]  # (name, shape, offset)

    def view(self, name: str) -> np.ndarray:
        for entry_name, shape, offset in self.layout:
            if entry_name == name:
                size = int(np.prod(shape))
                return self.data[offset:offset + size].reshape(shape)
        raise KeyError(name)


def _layout_for(spec: ModelSpec) -> tuple[tuple[str, tuple[int, ...], int], ...]:
    if isinstance(spec, Linear):
        shapes = [("W", (spec.d_in, spec.n_classes)), ("b", (spec.n_classes,))]
    else:
        shapes = [("W1", (spec.d_in, spec.hidden)), ("b1", (spec.hidden,)),
                  ("W2", (spec.hidden, spec.n_classes)), ("b2", (spec.n_classes,))]
    layout = []
    offset = 0
    for name, shape in shapes:
        layout.append((name, shape, offset))
        offset += int(np.prod(shape))
    return tuple(layout)


def param_count(spec: ModelSpec) -> int:
    name, shape, offset = _layout_for(spec)[-1]
    return offset + int(np.prod(shape))


def _validate_spec(spec: ModelSpec):
    if isinstance(spec, Linear):
        ok = spec.d_in >= 1 and spec.n_classes >= 2
    elif isinstance(spec, MLP):
        ok = spec.d_in >= 1 and spec.hidden >= 1 and spec.n_classes >= 2
    else:
        raise ValueError(f"unknown model spec {type(spec).__name__}")
    if not ok:
        raise ValueError(f"invalid model dimensions: {spec}")


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    _validate_spec(spec)
    rng = np.random.default_rng(seed)
    layout = _layout_for(spec)
    data = np.zeros(param_count(spec))
    for name, shape, offset in layout:
        if len(shape) == 2:  # biases stay zero
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            size = fan_in * fan_out
            data[offset:offset + size] = rng.uniform(-limit, limit, size)
    return ParamVector(data=data, layout=layout)


def _logits(spec: ModelSpec, params: ParamVector, x: np.ndarray):
    if isinstance(spec, Linear):
        return x @ params.view("W") + params.view("b"), None, None
    z1 = x @ params.view("W1") + params.view("b1")
    a1 = np.maximum(z1, 0.0)
    return a1 @ params.view("W2") + params.view("b2"), z1, a1


def forward_loss_grad(spec: ModelSpec, params: ParamVector, x: np.ndarray,
                      y: np.ndarray) -> tuple[float, ParamVector, float]:
    """Mean cross-entropy loss, gradient, and batch accuracy."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if x.shape[1] != (spec.d_in):
        raise ValueError(f"feature width {x.shape[1]} does not match d_in {spec.d_in}")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValueError(f"labels out of range [0, {spec.n_classes})")

    with np.errstate(over="ignore", invalid="ignore"):
        logits, z1, a1 = _logits(spec, params, x)
        zmax = logits.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
        loss = float(np.mean(lse - logits[np.arange(n), y]))
        accuracy = float(np.mean(np.argmax(logits, axis=1) == y))

        probs = np.exp(logits - lse[:, None])
        dlogits = probs
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n

        grad = np.zeros_like(params.data)
        gview = ParamVector(data=grad, layout=params.layout)
        if isinstance(spec, Linear):
            gview.view("W")[:] = x.T @ dlogits
            gview.view("b")[:] = dlogits.sum(axis=0)
        else:
            gview.view("W2")[:] = a1.T @ dlogits
            gview.view("b2")[:] = dlogits.sum(axis=0)
            da1 = dlogits @ params.view("W2").T
            dz1 = da1 * (z1 > 0)
            gview.view("W1")[:] = x.T @ dz1
            gview.view("b1")[:] = dz1.sum(axis=0)

    return loss, gview, accuracy


def accuracy_on(spec: ModelSpec, params: ParamVector, ds: Dataset) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        logits, _, _ = _logits(spec, params, ds.features)
        return float(np.mean(np.argmax(logits, axis=1) == ds.labels))


# checkpoint format: one JSON header line, then the raw float64 bytes


def save_params(path, params: ParamVector):
    header = {"layout": [[name, list(shape), offset]
                         for name, shape, offset in params.layout],
              "dtype": "float64", "n": int(params.data.size)}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(params.data, dtype=np.float64).tobytes())


def load_params(path) -> ParamVector:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        data = np.frombuffer(f.read(), dtype=np.float64).copy()
    if data.size != header["n"]:
        raise ValueError(f"checkpoint {path} is truncated: "
                         f"expected {header['n']} values, got {data.size}")
    layout = tuple((name, tuple(shape), offset)
                   for name, shape, offset in header["layout"])
    return ParamVector(data=data, layout=layout)
