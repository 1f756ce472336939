"""Label-free regression of the frequency-factored Green's matrix.

The network maps normalised geometry scalars (radius, length, frequency and,
for two-dipole grids, spacing) to the upper triangle of the factored
Green's matrix: real parts first, imaginary parts second.  Targets come
straight from :func:`dipole_coupling.geometry.green_matrix`; no solver output
is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError
from .geometry import (ArrayGeometry, GreenKind, green_matrix,
                       half_wave_dipole, wavelength)
from .nn import checkpoint
from .nn.core import Adam, Dense, collect

FEATURES = ("radius_m", "length_m", "frequency_hz", "spacing_m")


@dataclass
class PannConfig:
    epochs: int = 1200
    learning_rate: float = 1e-2
    final_learning_rate: float = 1e-6
    seed: int = 42
    alpha: float = 0.5
    adaptive: bool = True
    hidden: tuple = (128, 128, 128)
    activation: str = "tanh"
    segments: int = 16
    elements: int = 1
    # default training family: half-wave dipoles, r = 0.002 lambda
    frequencies_hz: tuple = tuple(np.linspace(2.0e9, 3.0e9, 8))
    radius_over_lambda: float = 0.002
    spacings_over_lambda: tuple = ()

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        d["frequencies_hz"] = [float(f) for f in self.frequencies_hz]
        d["spacings_over_lambda"] = [float(s) for s in self.spacings_over_lambda]
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("hidden", "frequencies_hz", "spacings_over_lambda"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def training_geometries(config):
    """Sample geometries the network is fitted on."""
    geoms = []
    for f in config.frequencies_hz:
        dip = half_wave_dipole(f, config.radius_over_lambda, config.segments)
        if config.elements == 1:
            geoms.append(ArrayGeometry(dip, (0.0,), f))
        else:
            lam = wavelength(f)
            for s in config.spacings_over_lambda:
                geoms.append(ArrayGeometry(dip, (0.0, s * lam), f))
    return geoms


def reference_geometry(segments):
    """Half-wave dipole at 3 GHz with r = 0.002 lambda."""
    f = 3.0e9
    return ArrayGeometry(half_wave_dipole(f, 0.002, segments), (0.0,), f)


def analytic_targets(segments=None, geometry=None):
    """Real and imaginary parts of the factored Green's upper triangle.

    Either ``segments`` (reference half-wave dipole) or a full ``geometry``.
    Each returned vector has length side(side+1)/2, side = elements * N.
    """
    if geometry is None:
        if segments is None or segments < 2:
            raise ValueError("need segments >= 2 or a geometry")
        geometry = reference_geometry(segments)
    g = green_matrix(geometry, GreenKind.FREQUENCY_FACTORED).upper()
    return g.real.copy(), g.imag.copy()


def geometry_features(geometry):
    sp = geometry.spacings_m[0] if geometry.elements > 1 else 0.0
    return np.array([geometry.dipole.radius_m, geometry.dipole.length_m,
                     geometry.frequency_hz, sp])


def adaptive_weights(loss_r, loss_i, alpha=0.5):
    """(omega_r, omega_i): the component with the larger loss gets more weight.

    Ties, including the converged case of two zero losses, give (0.5, 0.5).
    """
    if loss_r < 0 or loss_i < 0:
        raise ValueError("losses must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if loss_r == loss_i:
        return 0.5, 0.5
    big = min(1.0, alpha + (1.0 - alpha) * abs(loss_r - loss_i) / (loss_r + loss_i))
    if loss_r > loss_i:
        return big, 1.0 - big
    return 1.0 - big, big


@dataclass
class AdaptiveLossState:
    alpha: float = 0.5
    omega_r: float = 0.5
    omega_i: float = 0.5
    adaptive: bool = True
    history: list = field(default_factory=list)

    def update(self, loss_r, loss_i):
        """Set the weights for the next epoch from this epoch's losses."""
        if self.adaptive:
            self.omega_r, self.omega_i = adaptive_weights(loss_r, loss_i, self.alpha)


def split_losses(pred, target_r, target_i):
    half = target_r.shape[-1]
    if pred.shape[-1] != 2 * half or target_i.shape != target_r.shape:
        raise ShapeError(f"prediction width {pred.shape[-1]} != 2 x {half}")
    dr = pred[..., :half] - target_r
    di = pred[..., half:] - target_i
    return float(np.mean(dr * dr)), float(np.mean(di * di))


def total_loss(pred, targets, state):
    """omega_r L_r + omega_i L_i using the state's current weights."""
    pred = np.asarray(pred, dtype=np.float64)
    lr, li = split_losses(pred, *targets)
    return state.omega_r * lr + state.omega_i * li


class PannModel:
    def __init__(self, layers, mean, std, segments, elements, config=None,
                 ranges=None):
        self.layers = layers
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.segments = segments
        self.elements = elements
        self.config = config
        self.ranges = ranges

    @property
    def side(self):
        return self.segments * self.elements

    @property
    def n_upper(self):
        return self.side * (self.side + 1) // 2

    @property
    def n_out(self):
        return 2 * self.n_upper

    def named_layers(self):
        return {f"dense{i}": layer for i, layer in enumerate(self.layers)}

    def normalize(self, features):
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_raw(self, features):
        return self.forward(self.normalize(np.atleast_2d(features)))

    def to_doc(self, **meta):
        extra = {"kind": "pann", "mean": self.mean.tolist(),
                 "std": self.std.tolist(), "segments": self.segments,
                 "elements": self.elements,
                 "ranges": None if self.ranges is None else np.asarray(self.ranges).tolist(),
                 "config": None if self.config is None else self.config.to_dict()}
        return checkpoint.checkpoint_doc(self.named_layers(), extra=extra,
                                         **({"seed": None, "epoch": 0, "loss": None} | meta))

    @classmethod
    def from_doc(cls, doc):
        ex = doc["extra"]
        layers = checkpoint.layers_from_doc(doc["layers"])
        cfg = None if ex.get("config") is None else PannConfig.from_dict(ex["config"])
        return cls([layers[f"dense{i}"] for i in range(len(layers))],
                   ex["mean"], ex["std"], ex["segments"], ex["elements"], cfg,
                   None if ex.get("ranges") is None else np.asarray(ex["ranges"]))


def init_model(config, feats):
    rng = np.random.default_rng(config.seed)
    side = config.segments * config.elements
    n_out = side * (side + 1)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(np.abs(mean), 1e-300), std,
                   np.where(mean != 0, np.abs(mean), 1.0))
    widths = (len(FEATURES),) + tuple(config.hidden)
    layers = [Dense.init(rng, a, b, config.activation)
              for a, b in zip(widths, widths[1:])]
    layers.append(Dense.init(rng, widths[-1], n_out, "identity"))
    ranges = np.stack([feats.min(axis=0), feats.max(axis=0)])
    return PannModel(layers, mean, std, config.segments, config.elements,
                     config, ranges)


def _lr_at(config, epoch):
    if config.epochs <= 1 or config.final_learning_rate >= config.learning_rate:
        return config.learning_rate
    ratio = config.final_learning_rate / config.learning_rate
    return config.learning_rate * ratio ** (epoch / (config.epochs - 1))


def train_pann(config=None, geometries=None, callback=None):
    """Fit a PANN; returns ``(model, history)``.

    ``history`` holds one dict per epoch with ``L_r``, ``L_i``, the weights
    used in that epoch, ``L_total`` (weighted) and ``mse`` (unweighted).
    """
    config = config or PannConfig()
    geometries = geometries or training_geometries(config)
    feats = np.stack([geometry_features(g) for g in geometries])
    targets = [analytic_targets(geometry=g) for g in geometries]
    t_r = np.stack([t[0] for t in targets])
    t_i = np.stack([t[1] for t in targets])
    model = init_model(config, feats)
    if t_r.shape[1] != model.n_upper:
        raise ShapeError("training geometries do not match the configured grid")
    x = model.normalize(feats)
    state = AdaptiveLossState(alpha=config.alpha, adaptive=config.adaptive)
    opt = Adam(config.learning_rate)
    history = []
    half = model.n_upper
    n = t_r.size
    for epoch in range(config.epochs):
        for layer in model.layers:
            layer.zero_grad()
        pred = model.forward(x)
        dr = pred[:, :half] - t_r
        di = pred[:, half:] - t_i
        lr_ = float(np.mean(dr * dr))
        li_ = float(np.mean(di * di))
        if not (math.isfinite(lr_) and math.isfinite(li_)):
            raise TrainingError(f"PANN loss diverged at epoch {epoch}", epoch=epoch)
        wr, wi = state.omega_r, state.omega_i
        rec = {"epoch": epoch, "L_r": lr_, "L_i": li_, "w_r": wr, "w_i": wi,
               "L_total": wr * lr_ + wi * li_, "mse": 0.5 * (lr_ + li_)}
        history.append(rec)
        if callback is not None:
            callback(rec)
        grad = np.concatenate([wr * 2.0 * dr / n, wi * 2.0 * di / n], axis=1)
        model.backward(grad)
        params, grads = collect(model.named_layers())
        try:
            opt.step(params, grads, _lr_at(config, epoch))
        except TrainingError as exc:
            raise TrainingError(f"{exc} at epoch {epoch}", epoch=epoch,
                                path=exc.path) from exc
        state.update(lr_, li_)
    model.final_state = state
    return model, history


def final_losses(model, geometries=None):
    """(L_r, L_i) of ``model`` on its training set, after the last update."""
    geometries = geometries or training_geometries(model.config)
    feats = np.stack([geometry_features(g) for g in geometries])
    pred = model.predict_raw(feats)
    targets = [analytic_targets(geometry=g) for g in geometries]
    return split_losses(pred, np.stack([t[0] for t in targets]),
                        np.stack([t[1] for t in targets]))


@dataclass
class PannPrediction:
    values: np.ndarray
    side: int
    warnings: list

    def matrix(self):
        """Full symmetric complex matrix, mirrored from the upper triangle."""
        out = np.zeros((self.side, self.side), dtype=np.complex128)
        iu = np.triu_indices(self.side)
        out[iu] = self.values
        out[iu[1], iu[0]] = out[iu]
        return out


def pann_predict(model, radius_m, length_m, frequency_hz, spacing_m=0.0):
    feats = np.array([radius_m, length_m, frequency_hz, spacing_m], dtype=float)
    warnings = []
    if model.ranges is not None:
        lo, hi = model.ranges
        span = np.maximum(hi - lo, 1e-9 * np.maximum(np.abs(hi), 1e-300))
        for name, v, a, b, s in zip(FEATURES, feats, lo, hi, span):
            if v < a - 1e-6 * s or v > b + 1e-6 * s:
                warnings.append(f"{name}={v:g} outside training range [{a:g}, {b:g}]")
    raw = model.predict_raw(feats)[0]
    half = model.n_upper
    return PannPrediction(raw[:half] + 1j * raw[half:], model.side, warnings)
