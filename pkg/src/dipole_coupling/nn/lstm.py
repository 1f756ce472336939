"""Stacked LSTM over batched, variable-length sequences.

Gate order along the 4H axis is forget, input, output, candidate:

    c_t = f_t * c_{t-1} + i_t * tanh(W_c [h_{t-1}, g_t] + b_c)
    h_t = o_t * tanh(c_t)

The sequence loop itself lives in :mod:`dipole_coupling._kernels`.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import ShapeError
from .core import Layer, glorot_uniform, sigmoid


class LSTMLayer(Layer):
    def __init__(self, wx, wh, b):
        super().__init__()
        wx, wh, b = (np.asarray(a, dtype=np.float64) for a in (wx, wh, b))
        h = wh.shape[0]
        if wh.shape != (h, 4 * h) or wx.shape[1] != 4 * h or b.shape != (4 * h,):
            raise ShapeError(f"inconsistent LSTM shapes {wx.shape}, {wh.shape}, {b.shape}")
        self.params = {"wx": wx, "wh": wh, "b": b}
        self.zero_grad()

    @classmethod
    def init(cls, rng, n_in, hidden, forget_bias=1.0):
        wx = glorot_uniform(rng, n_in, 4 * hidden, (n_in, 4 * hidden))
        wh = glorot_uniform(rng, hidden, 4 * hidden, (hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[:hidden] = forget_bias
        return cls(wx, wh, b)

    @property
    def hidden(self):
        return self.params["wh"].shape[0]

    @property
    def n_in(self):
        return self.params["wx"].shape[0]

    def forward(self, xs):
        """xs: (T, B, D) -> hidden states (T, B, H), zero initial state."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 3 or xs.shape[-1] != self.n_in:
            raise ShapeError(f"expected (T, B, {self.n_in}) input, got {xs.shape}")
        if xs.shape[0] == 0:
            raise ShapeError("empty sequence")
        p = self.params
        hs, cs, gates = _kernels.lstm_forward(xs, p["wx"], p["wh"], p["b"])
        self._cache = (xs, hs, cs, gates)
        return hs

    def backward(self, dhs):
        xs, hs, cs, gates = self._need_cache()
        p = self.params
        dxs, dwx, dwh, db = _kernels.lstm_backward(xs, p["wx"], p["wh"],
                                                   hs, cs, gates, dhs)
        self.grads["wx"] = self.grads["wx"] + dwx
        self.grads["wh"] = self.grads["wh"] + dwh
        self.grads["b"] = self.grads["b"] + db
        return dxs

    @property
    def last_cell(self):
        return self._need_cache()[2][-1]


def lstm_step(layer, g_t, h_prev, c_prev):
    """One cell update for a single (unbatched) input vector."""
    p = layer.params
    h = layer.hidden
    g_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (g_t, h_prev, c_prev))
    if g_t.shape != (layer.n_in,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ShapeError("lstm_step shape mismatch")
    pre = g_t @ p["wx"] + h_prev @ p["wh"] + p["b"]
    f = sigmoid(pre[:h])
    i = sigmoid(pre[h:2 * h])
    o = sigmoid(pre[2 * h:3 * h])
    cand = np.tanh(pre[3 * h:])
    c = f * c_prev + i * cand
    return o * np.tanh(c), c


class StackedLSTM:
    """Layers applied in turn; the last hidden state of the top layer is the summary."""

    def __init__(self, layers):
        self.layers = list(layers)

    @classmethod
    def init(cls, rng, n_in, hidden, n_layers):
        layers = []
        for i in range(n_layers):
            layers.append(LSTMLayer.init(rng, n_in if i == 0 else hidden, hidden))
        return cls(layers)

    def named_layers(self, prefix="lstm"):
        return {f"{prefix}{i}": layer for i, layer in enumerate(self.layers)}

    def forward(self, xs):
        """xs: (T, B, D) -> all top-layer hidden states (T, B, H)."""
        h = xs
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, dhs):
        for layer in reversed(self.layers):
            dhs = layer.backward(dhs)
        return dhs


def lstm_forward(stack, sequence):
    """Final top-layer hidden state h_N for one sequence of row vectors."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ShapeError("sequence must be a non-empty (T, D) array")
    return stack.forward(seq[:, None, :])[-1, 0]
