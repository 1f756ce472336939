"""Small reverse-mode layer set: dense, activations, softmax, conv2d, MSE.

Every layer caches what its backward pass needs during ``forward`` and
raises if ``backward`` is called without one.  Parameters live in
``layer.params`` (name -> array) and gradients land in ``layer.grads``
under the same names, so an optimiser can walk both dicts in step.
"""
from __future__ import annotations

import math

import numpy as np

from .. import _kernels
from ..errors import ShapeError, TrainingError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name, x, y):
    """d act / d x given the pre-activation ``x`` and output ``y``."""
    if name == "relu":
        return (x > 0).astype(x.dtype)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(x)


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_out, fan_in))


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called "
                               "without a recorded forward pass")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Dense(Layer):
    """y = act(x W^T + b) over the last axis of ``x``."""

    def __init__(self, weights, bias, activation="identity"):
        super().__init__()
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeError(f"weights {weights.shape} and bias {bias.shape} disagree")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.params = {"w": weights, "b": bias}
        self.activation = activation
        self.zero_grad()

    @classmethod
    def init(cls, rng, n_in, n_out, activation="identity"):
        return cls(glorot_uniform(rng, n_in, n_out), np.zeros(n_out), activation)

    @property
    def n_in(self):
        return self.params["w"].shape[1]

    @property
    def n_out(self):
        return self.params["w"].shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"input width {x.shape[-1]} != layer input {self.n_in}")
        pre = x @ self.params["w"].T + self.params["b"]
        y = activate(self.activation, pre)
        self._cache = (x, pre, y)
        return y

    def backward(self, upstream):
        x, pre, y = self._need_cache()
        d = upstream * activate_grad(self.activation, pre, y)
        d2 = d.reshape(-1, d.shape[-1])
        self.grads["w"] = self.grads["w"] + d2.T @ x.reshape(-1, x.shape[-1])
        self.grads["b"] = self.grads["b"] + d2.sum(axis=0)
        return d @ self.params["w"]


def dense_forward(layer, x):
    return layer.forward(x)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(s, upstream, axis=-1):
    """Vector-Jacobian product of softmax given its output ``s``."""
    return s * (upstream - (upstream * s).sum(axis=axis, keepdims=True))


def mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


def _check_conv(input_shape, kernel_shape):
    k0, k1 = kernel_shape
    if k0 % 2 == 0 or k1 % 2 == 0:
        raise ShapeError(f"kernel must be odd-sided, got {kernel_shape}")
    if k0 > input_shape[-2] or k1 > input_shape[-1]:
        raise ShapeError(f"kernel {kernel_shape} larger than input {input_shape[-2:]}")


def conv2d(x, kernel):
    """Valid-mode 2-D correlation; batched over any leading axes of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_conv(x.shape, kernel.shape)
    lead = x.shape[:-2]
    out = _kernels.conv2d_batch(x.reshape((-1,) + x.shape[-2:]), kernel)
    return out.reshape(lead + out.shape[-2:])


def conv2d_backward(x, kernel, upstream):
    """Gradients (d input, d kernel) of :func:`conv2d`."""
    x = np.asarray(x, dtype=np.float64)
    k0, k1 = kernel.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (k0, k1), axis=(-2, -1))
    win = win.reshape((-1,) + win.shape[-4:])
    dk = np.einsum("nijuv,nij->uv", win, upstream.reshape((-1,) + upstream.shape[-2:]))
    dx = np.zeros_like(x)
    o0, o1 = upstream.shape[-2:]
    for u in range(k0):
        for v in range(k1):
            dx[..., u:u + o0, v:v + o1] += kernel[u, v] * upstream
    return dx, dk


class Conv2d(Layer):
    """Correlation with a kernel that may be frozen (``trainable=False``)."""

    def __init__(self, kernel, trainable=True):
        super().__init__()
        self.params = {"k": np.asarray(kernel, dtype=np.float64)}
        self.trainable = trainable
        self.zero_grad()

    def forward(self, x):
        self._cache = np.asarray(x, dtype=np.float64)
        return conv2d(self._cache, self.params["k"])

    def backward(self, upstream):
        x = self._need_cache()
        dx, dk = conv2d_backward(x, self.params["k"], upstream)
        if self.trainable:
            self.grads["k"] = self.grads["k"] + dk
        return dx


class Adam:
    """Adaptive-moment optimiser over ``{path: array}`` parameter dicts."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.steps = 0

    def hyperparameters(self):
        return {"kind": "adam", "learning_rate": self.learning_rate,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def step(self, params, grads, learning_rate=None):
        """Update ``params`` in place."""
        for path, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {path}", path=path)
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for path, p in params.items():
            g = grads[path]
            if p.shape != g.shape:
                raise ShapeError(f"{path}: param {p.shape} vs grad {g.shape}")
            m = self.m.setdefault(path, np.zeros_like(p))
            v = self.v.setdefault(path, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(state, params, grads):
    state.step(params, grads)
    return params


def collect(layers, prefix=""):
    """Flatten ``{name: layer}`` into path-keyed param and grad dicts.

    Call after the backward pass: layers rebind their grad arrays.
    Frozen layers (``trainable = False``) are skipped.
    """
    params, grads = {}, {}
    for name, layer in layers.items():
        if not getattr(layer, "trainable", True):
            continue
        for k, v in layer.params.items():
            params[f"{prefix}{name}.{k}"] = v
            grads[f"{prefix}{name}.{k}"] = layer.grads[k]
    return params, grads
