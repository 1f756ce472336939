"""Two-port impedance from Green's features: physics kernel + stacked LSTM.

Pipeline for one geometry (spacing d, length l, radius r, frequency f):

1. the two-dipole PANN predicts the 32 x 32 factored Green's matrix;
2. real and imaginary channels are standardised per grid cell and fused
   by :class:`~dipole_coupling.fusion.FusionBlock`;
3. the real, imaginary and fused channels are each correlated with the
   fixed decaying kernel;
4. rows of the three filtered maps, plus the normalised geometry scalars,
   form the LSTM input sequence;
5. a dense head on the last hidden state gives z11, z12, z22 (re, im).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, TrainingError
from .fusion import FusionBlock
from .geometry import ArrayGeometry, wavelength
from .nn import checkpoint
from .nn.core import Adam, Dense, collect, conv2d, conv2d_backward
from .nn.lstm import StackedLSTM
from .pann import PannConfig, PannModel, geometry_features, train_pann

TARGET_NAMES = ("z11_re", "z11_im", "z12_re", "z12_im", "z22_re", "z22_im")


# --------------------------------------------------------------------------
# Physics-aware kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicsKernel:
    side: int
    decay: float
    weights: np.ndarray


def raw_kernel(side, decay):
    """Unnormalised kernel: 1 at the centre, exp(-decay |i - j|) / d elsewhere.

    ``d`` is the Manhattan distance to the centre cell.
    """
    if int(side) != side or side < 3 or side % 2 == 0:
        raise DomainError(f"kernel side must be an odd integer >= 3, got {side}")
    if not decay > 0:
        raise DomainError(f"decay must be positive, got {decay}")
    c = side // 2
    i, j = np.indices((side, side))
    dist = np.abs(i - c) + np.abs(j - c)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.exp(-decay * np.abs(i - j)) / dist
    k[c, c] = 1.0
    return k


def build_kernel(side=3, decay=1.0):
    k = raw_kernel(side, decay)
    w = k / k.sum()
    w = 0.5 * (w + w[::-1, ::-1])
    w.setflags(write=False)
    return PhysicsKernel(int(side), float(decay), w)


# --------------------------------------------------------------------------
# Configuration and bundle
# --------------------------------------------------------------------------

@dataclass
class TwoPortConfig:
    epochs: int = 800
    learning_rate: float = 3e-3
    final_learning_rate: float = 1e-4
    seed: int = 42
    hidden: int = 64
    layers: int = 4
    kernel_side: int = 3
    kernel_decay: float = 1.0
    holdout_fraction: float = 0.2
    pann_epochs: int = 1200
    pann_learning_rate: float = 1e-2
    pann_final_learning_rate: float = 1e-6
    pann_grid: int = 48
    pann_hidden: tuple = (128, 128, 128)

    def to_dict(self):
        d = dict(self.__dict__)
        d["pann_hidden"] = list(self.pann_hidden)
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "pann_hidden" in doc:
            doc["pann_hidden"] = tuple(doc["pann_hidden"])
        return cls(**doc)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x, axis=0):
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=axis)
        std = x.std(axis=axis)
        scale = np.maximum(np.abs(mean), 1.0)
        std = np.where(std > 1e-9 * scale, std, 1.0)
        return cls(mean, std)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_doc(self):
        return {"mean": np.asarray(self.mean).tolist(),
                "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_doc(cls, doc):
        return cls(np.asarray(doc["mean"], dtype=np.float64),
                   np.asarray(doc["std"], dtype=np.float64))


@dataclass
class TwoPortPrediction:
    z11: complex
    z12: complex
    z22: complex
    warnings: list = field(default_factory=list)

    @property
    def reconstructed(self):
        return np.array([[self.z11, self.z12], [self.z12, self.z22]])


class ModelBundle:
    """Frozen PANN plus the trainable fusion, LSTM stack and output head."""

    def __init__(self, pann, fusion, kernel, lstm, head, channel_norm,
                 scalar_norm, target_norm, ranges, config, trained=False,
                 meta=None):
        self.pann = pann
        self.fusion = fusion
        self.kernel = kernel
        self.lstm = lstm
        self.head = head
        self.channel_norm = channel_norm
        self.scalar_norm = scalar_norm
        self.target_norm = target_norm
        self.ranges = ranges
        self.config = config
        self.trained = trained
        self.meta = meta or {}

    def named_layers(self):
        layers = dict(self.fusion.named_layers())
        layers.update(self.lstm.named_layers("lstm"))
        layers["head"] = self.head
        return layers

    def zero_grad(self):
        for layer in self.named_layers().values():
            layer.zero_grad()

    # -- forward / backward over a batch of precomputed channels ----------

    def forward(self, xr, xi, scalars):
        """xr, xi: (B, S, S) standardised channels; scalars: (B, 4)."""
        fused = self.fusion.forward(xr, xi).matrix
        k = self.kernel.weights
        cr = conv2d(xr, k)
        ci = conv2d(xi, k)
        cf = conv2d(fused, k)
        nb, nt, _ = cr.shape
        seq = np.concatenate(
            [cr, ci, cf, np.broadcast_to(scalars[:, None, :], (nb, nt, scalars.shape[1]))],
            axis=2)
        hs = self.lstm.forward(seq.transpose(1, 0, 2))
        out = self.head.forward(hs[-1])
        self._cache = (fused, cr.shape, hs.shape)
        return out

    def backward(self, d_out):
        fused, cshape, hshape = self._cache
        dh = self.head.backward(d_out)
        dhs = np.zeros(hshape)
        dhs[-1] = dh
        dseq = self.lstm.backward(dhs).transpose(1, 0, 2)
        w = cshape[2]
        dcf = dseq[:, :, 2 * w:3 * w]
        dfused, _ = conv2d_backward(fused, self.kernel.weights, dcf)
        self.fusion.backward(dfused)

    # -- serialisation -----------------------------------------------------

    def to_doc(self, seed=None, epoch=0, loss=None, optimizer=None):
        pann_doc = self.pann.to_doc()
        extra = {
            "kind": "twoport",
            "pann": pann_doc,
            "pann_digest": checkpoint.digest(pann_doc),
            "kernel": {"side": self.kernel.side, "decay": self.kernel.decay,
                       "weights": self.kernel.weights.tolist()},
            "channel_norm": self.channel_norm.to_doc(),
            "scalar_norm": self.scalar_norm.to_doc(),
            "target_norm": self.target_norm.to_doc(),
            "ranges": np.asarray(self.ranges).tolist(),
            "config": self.config.to_dict(),
            "trained": self.trained,
            "meta": self.meta,
        }
        return checkpoint.checkpoint_doc(self.named_layers(), seed=seed,
                                         epoch=epoch, loss=loss,
                                         optimizer=optimizer, extra=extra)

    @classmethod
    def from_doc(cls, doc):
        ex = doc["extra"]
        if ex.get("kind") != "twoport":
            raise ValueError("not a two-port bundle")
        layers = checkpoint.layers_from_doc(doc["layers"])
        fusion = FusionBlock(layers["fusion.map_r"], layers["fusion.map_i"],
                             layers["fusion.attn"])
        n_lstm = sum(1 for k in layers if k.startswith("lstm"))
        lstm = StackedLSTM([layers[f"lstm{i}"] for i in range(n_lstm)])
        kd = ex["kernel"]
        w = np.asarray(kd["weights"], dtype=np.float64)
        w.setflags(write=False)
        kernel = PhysicsKernel(kd["side"], kd["decay"], w)
        return cls(PannModel.from_doc(ex["pann"]), fusion, kernel, lstm,
                   layers["head"], Normalizer.from_doc(ex["channel_norm"]),
                   Normalizer.from_doc(ex["scalar_norm"]),
                   Normalizer.from_doc(ex["target_norm"]),
                   np.asarray(ex["ranges"]), TwoPortConfig.from_dict(ex["config"]),
                   ex.get("trained", False), ex.get("meta", {}))


# --------------------------------------------------------------------------
# Feature extraction
# --------------------------------------------------------------------------

def geometry_scalars(geometries):
    """(d, l, r, f) for each two-element geometry."""
    return np.stack([[g.spacings_m[0], g.dipole.length_m, g.dipole.radius_m,
                      g.frequency_hz] for g in geometries])


def green_channels(pann, geometries):
    """PANN-predicted real and imaginary Green's grids, (B, S, S) each."""
    feats = np.stack([geometry_features(g) for g in geometries])
    raw = pann.predict_raw(feats)
    half = pann.n_upper
    side = pann.side
    iu = np.triu_indices(side)
    gr = np.zeros((len(geometries), side, side))
    gi = np.zeros_like(gr)
    gr[:, iu[0], iu[1]] = raw[:, :half]
    gi[:, iu[0], iu[1]] = raw[:, half:]
    gr[:, iu[1], iu[0]] = raw[:, :half]
    gi[:, iu[1], iu[0]] = raw[:, half:]
    return gr, gi


def _inputs(bundle, geometries):
    gr, gi = green_channels(bundle.pann, geometries)
    cm = bundle.channel_norm
    xr = (gr - cm.mean[0]) / cm.std[0]
    xi = (gi - cm.mean[1]) / cm.std[1]
    sc = bundle.scalar_norm.normalize(geometry_scalars(geometries))
    return xr, xi, sc


def targets_from_zport(zports):
    z = np.asarray(zports)
    return np.stack([z[:, 0, 0].real, z[:, 0, 0].imag, z[:, 0, 1].real,
                     z[:, 0, 1].imag, z[:, 1, 1].real, z[:, 1, 1].imag], axis=1)


def _range_warnings(bundle, scalars):
    lo, hi = bundle.ranges
    names = ("spacing_m", "length_m", "radius_m", "frequency_hz")
    out = []
    for row in np.atleast_2d(scalars):
        w = []
        for name, v, a, b in zip(names, row, lo, hi):
            tol = 1e-6 * max(abs(b - a), abs(b), 1e-300)
            if v < a - tol or v > b + tol:
                w.append(f"{name}={v:g} outside training range [{a:g}, {b:g}]")
        out.append(w)
    return out


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _lr(config, epoch):
    if config.epochs <= 1 or config.final_learning_rate >= config.learning_rate:
        return config.learning_rate
    ratio = config.final_learning_rate / config.learning_rate
    return config.learning_rate * ratio ** (epoch / (config.epochs - 1))


def split_indices(n, fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(n * fraction))
    return np.sort(perm[:n - n_hold]), np.sort(perm[n - n_hold:])


def pann_for_dipole(dipole, frequency_hz, spacing_range_m, config):
    """Two-dipole PANN on a spacing grid for one dipole and frequency."""
    lo, hi = spacing_range_m
    grid = np.linspace(lo, hi, config.pann_grid)
    geoms = [ArrayGeometry(dipole, (0.0, float(s)), frequency_hz) for s in grid]
    pc = PannConfig(epochs=config.pann_epochs,
                    learning_rate=config.pann_learning_rate,
                    final_learning_rate=config.pann_final_learning_rate,
                    seed=config.seed, hidden=config.pann_hidden,
                    segments=dipole.segments, elements=2,
                    frequencies_hz=(frequency_hz,), spacings_over_lambda=tuple(
                        grid / wavelength(frequency_hz)))
    model, hist = train_pann(pc, geoms)
    return model, hist


def init_bundle(geometries, zports, config, pann=None):
    """Initialised (untrained) bundle with normalisers fit on ``geometries``."""
    sc = geometry_scalars(geometries)
    if pann is None:
        dip = geometries[0].dipole
        f = geometries[0].frequency_hz
        span = (sc[:, 0].min(), sc[:, 0].max())
        pann, _ = pann_for_dipole(dip, f, span, config)
    gr, gi = green_channels(pann, geometries)
    cn_r = Normalizer.fit(gr)
    cn_i = Normalizer.fit(gi)
    channel_norm = Normalizer(np.stack([cn_r.mean, cn_i.mean]),
                              np.stack([cn_r.std, cn_i.std]))
    scalar_norm = Normalizer.fit(sc)
    target_norm = Normalizer.fit(targets_from_zport(zports))
    rng = np.random.default_rng(config.seed)
    side = pann.side
    kernel = build_kernel(config.kernel_side, config.kernel_decay)
    width = side - config.kernel_side + 1
    fusion = FusionBlock.init(rng, side)
    lstm = StackedLSTM.init(rng, 3 * width + sc.shape[1], config.hidden, config.layers)
    head = Dense.init(rng, config.hidden, len(TARGET_NAMES))
    ranges = np.stack([sc.min(axis=0), sc.max(axis=0)])
    return ModelBundle(pann, fusion, kernel, lstm, head, channel_norm,
                       scalar_norm, target_norm, ranges, config)


def train_two_port(dataset, config=None, pann=None, callback=None):
    """End-to-end fit of fusion, LSTM and head on (geometry -> Z_port) pairs.

    The PANN is trained first (or taken from ``pann``) and then frozen.
    Returns ``(bundle, history)``; each history row carries the normalised
    training loss for one epoch.
    """
    config = config or TwoPortConfig()
    geoms = [s.geometry for s in dataset.samples]
    zports = np.stack([s.zport for s in dataset.samples])
    if getattr(dataset, "train_indices", None) is not None:
        train_idx = np.asarray(dataset.train_indices, dtype=int)
        hold_idx = np.asarray(dataset.holdout_indices, dtype=int)
    else:
        train_idx, hold_idx = split_indices(len(geoms), config.holdout_fraction,
                                            config.seed)
    tg = [geoms[i] for i in train_idx]
    bundle = init_bundle(tg, zports[train_idx], config, pann)
    bundle.meta = {"train_indices": train_idx.tolist(),
                   "holdout_indices": hold_idx.tolist()}
    xr, xi, sc = _inputs(bundle, tg)
    y = bundle.target_norm.normalize(targets_from_zport(zports[train_idx]))
    opt = Adam(config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        bundle.zero_grad()
        out = bundle.forward(xr, xi, sc)
        d = out - y
        loss = float(np.mean(d * d))
        if not math.isfinite(loss):
            raise TrainingError(f"two-port loss diverged at epoch {epoch}", epoch=epoch)
        rec = {"epoch": epoch, "loss": loss}
        history.append(rec)
        if callback is not None:
            callback(rec)
        bundle.backward(2.0 * d / d.size)
        params, grads = collect(bundle.named_layers())
        try:
            opt.step(params, grads, _lr(config, epoch))
        except TrainingError as exc:
            raise TrainingError(f"{exc} at epoch {epoch}", epoch=epoch,
                                path=exc.path) from exc
    bundle.trained = config.epochs > 0
    bundle.optimizer = opt.hyperparameters()
    return bundle, history


def training_loss(bundle, geometries, zports):
    xr, xi, sc = _inputs(bundle, geometries)
    y = bundle.target_norm.normalize(targets_from_zport(zports))
    d = bundle.forward(xr, xi, sc) - y
    return float(np.mean(d * d))


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------

def predict_batch(bundle, geometries, require_trained=True):
    if require_trained and not bundle.trained:
        raise DomainError("bundle has not been trained")
    for g in geometries:
        if g.elements != 2:
            raise DomainError("two-port prediction needs a two-element geometry")
    xr, xi, sc = _inputs(bundle, geometries)
    out = bundle.target_norm.denormalize(bundle.forward(xr, xi, sc))
    warns = _range_warnings(bundle, geometry_scalars(geometries))
    preds = []
    for row, w in zip(out, warns):
        preds.append(TwoPortPrediction(complex(row[0], row[1]),
                                       complex(row[2], row[3]),
                                       complex(row[4], row[5]), w))
    return preds


def predict_two_port(bundle, d_m, l_m, r_m, f_hz, segments=None):
    from .geometry import DipoleSpec
    n = segments or bundle.pann.segments
    geom = ArrayGeometry(DipoleSpec(l_m, r_m, n), (0.0, d_m), f_hz)
    return predict_batch(bundle, [geom])[0]


def relative_error(pred, zport):
    """Frobenius relative error of a predicted 2 x 2 matrix."""
    zp = np.asarray(zport)
    return float(np.linalg.norm(pred.reconstructed - zp) / np.linalg.norm(zp))


def check_shapes(bundle):
    side = bundle.pann.side
    if bundle.fusion.width != side:
        raise ShapeError("fusion width does not match the Green grid")
