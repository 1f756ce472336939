"""Softmax attention that fuses the real and imaginary Green's channels.

Both channels go through their own ReLU dense map (applied along each matrix
row), the mapped rows are concatenated, and a third dense layer emits two
logits per grid position.  A per-position softmax over the pair gives
(alpha_r, alpha_i) and the fused matrix is alpha_r * X'_r + alpha_i * X'_i.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn.core import Dense, softmax, softmax_backward


@dataclass
class FusedFeatures:
    matrix: np.ndarray
    alpha_r: np.ndarray
    alpha_i: np.ndarray
    mapped_r: np.ndarray
    mapped_i: np.ndarray


class FusionBlock:
    def __init__(self, map_r, map_i, attn):
        if map_r.n_out != map_i.n_out:
            raise ShapeError("real and imaginary maps must share output width")
        if attn.n_in != 2 * map_r.n_out or attn.n_out != 2 * map_r.n_out:
            raise ShapeError("attention layer must map 2W features to 2W logits")
        self.map_r = map_r
        self.map_i = map_i
        self.attn = attn
        self._cache = None

    @classmethod
    def init(cls, rng, side):
        return cls(Dense.init(rng, side, side, "relu"),
                   Dense.init(rng, side, side, "relu"),
                   Dense.init(rng, 2 * side, 2 * side, "identity"))

    @property
    def width(self):
        return self.map_r.n_out

    def named_layers(self, prefix="fusion."):
        return {f"{prefix}map_r": self.map_r, f"{prefix}map_i": self.map_i,
                f"{prefix}attn": self.attn}

    def logits(self, mapped_r, mapped_i):
        z = self.attn.forward(np.concatenate([mapped_r, mapped_i], axis=-1))
        w = self.width
        return np.stack([z[..., :w], z[..., w:]], axis=-1)

    def forward(self, x_r, x_i):
        x_r = np.asarray(x_r, dtype=np.float64)
        x_i = np.asarray(x_i, dtype=np.float64)
        if x_r.shape != x_i.shape:
            raise ShapeError(f"channel shapes differ: {x_r.shape} vs {x_i.shape}")
        if x_r.shape[-1] != self.map_r.n_in:
            raise ShapeError(f"row width {x_r.shape[-1]} != {self.map_r.n_in}")
        mr = self.map_r.forward(x_r)
        mi = self.map_i.forward(x_i)
        a = softmax(self.logits(mr, mi), axis=-1)
        fused = a[..., 0] * mr + a[..., 1] * mi
        self._cache = (mr, mi, a)
        return FusedFeatures(fused, a[..., 0], a[..., 1], mr, mi)

    def backward(self, upstream):
        """Accumulate parameter grads; return grads w.r.t. (x_r, x_i)."""
        if self._cache is None:
            raise RuntimeError("FusionBlock.backward without a forward pass")
        mr, mi, a = self._cache
        d_mr = upstream * a[..., 0]
        d_mi = upstream * a[..., 1]
        d_a = np.stack([upstream * mr, upstream * mi], axis=-1)
        d_z = softmax_backward(a, d_a, axis=-1)
        d_cat = self.attn.backward(np.concatenate([d_z[..., 0], d_z[..., 1]], axis=-1))
        w = self.width
        d_mr = d_mr + d_cat[..., :w]
        d_mi = d_mi + d_cat[..., w:]
        return self.map_r.backward(d_mr), self.map_i.backward(d_mi)

    def zero_grad(self):
        for layer in (self.map_r, self.map_i, self.attn):
            layer.zero_grad()


def fuse(x_r, x_i, params):
    return params.forward(x_r, x_i)


def fusion_grads(params, upstream):
    """Parameter gradients after a recorded :func:`fuse` call."""
    params.zero_grad()
    params.backward(upstream)
    return {name: dict(layer.grads) for name, layer in params.named_layers().items()}
