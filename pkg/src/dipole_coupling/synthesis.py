"""Constrained layouts, MoM datasets and large-array impedance synthesis.

A large linear array is assembled from two-element predictions: each
element pair closer than the cutoff gets the predicted mutual impedance at
its separation, every other pair starts at exactly zero, and each diagonal
entry is the two-port self impedance at the element's nearest-neighbour
spacing.  A second LSTM then walks each row of the packed upper triangle
outward from the diagonal and emits a correction per entry.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import sici

from .errors import ConstraintError, DomainError, SolverError, TrainingError
from .geometry import ArrayGeometry, DipoleSpec, pack_upper, unpack_upper, wavelength
from .mom import QUAD_POINTS, solve_ports
from .nn import checkpoint
from .nn.core import Adam, Dense, collect
from .nn.lstm import StackedLSTM
from .pclstm import ModelBundle, predict_batch, split_indices

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Layout constraints and sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpacingConstraints:
    """Spacing rules in wavelengths."""
    d1_min: float = 0.1
    d1_max: float = 0.5
    pair_sum_min: float = 0.6
    cutoff: float = 0.6

    def __post_init__(self):
        if not 0 < self.d1_min < self.d1_max:
            raise DomainError("need 0 < d1_min < d1_max")
        if self.pair_sum_min < self.d1_max:
            raise DomainError("pair_sum_min must be >= d1_max")

    def violations(self, spacings_lambda, tol=1e-12):
        """Offending items as ``(kind, index, value)`` tuples; empty if valid."""
        s = np.asarray(spacings_lambda, dtype=np.float64)
        bad = []
        for i, v in enumerate(s):
            if v < self.d1_min - tol or v > self.d1_max + tol:
                bad.append(("spacing", i, float(v)))
        for i in range(len(s) - 1):
            if s[i] + s[i + 1] < self.pair_sum_min - tol:
                bad.append(("pair_sum", i, float(s[i] + s[i + 1])))
        return bad

    def to_dict(self):
        return dict(self.__dict__)


def pair_accepted(d1, d2, constraints):
    return not constraints.violations([d1, d2])


def sample_spacings(m_elements, constraints=None, rng=None, max_tries=100_000):
    """Random spacings (in wavelengths) for an ``m_elements`` linear array.

    Spacings are drawn left to right; each uniform proposal is rejected
    until it is in range and its sum with the previous spacing meets the
    pair-sum rule.  Returns an array of length ``m_elements - 1``.
    """
    if m_elements < 2:
        raise DomainError(f"need at least two elements, got {m_elements}")
    c = constraints or SpacingConstraints()
    rng = rng if rng is not None else np.random.default_rng()
    out = []
    tries = 0
    while len(out) < m_elements - 1:
        tries += 1
        if tries > max_tries:
            raise ConstraintError("rejection sampler made no progress", offending=[])
        s = rng.uniform(c.d1_min, c.d1_max)
        if out and out[-1] + s < c.pair_sum_min:
            continue
        out.append(s)
    return np.asarray(out)


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

@dataclass
class Sample:
    geometry: ArrayGeometry
    zport: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    samples: list
    seed: int
    train_indices: list
    holdout_indices: list
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    @property
    def train(self):
        return [self.samples[i] for i in self.train_indices]

    @property
    def holdout(self):
        return [self.samples[i] for i in self.holdout_indices]

    def to_jsonl(self):
        hold = set(self.holdout_indices)
        lines = []
        for i, s in enumerate(self.samples):
            meta = dict(s.meta, index=i, seed=self.seed,
                        split="holdout" if i in hold else "train")
            lines.append(json.dumps({"geometry": s.geometry.to_dict(),
                                     "z_port": pack_upper(s.zport).tolist(),
                                     "meta": meta}, sort_keys=True))
        for sk in self.skipped:
            lines.append(json.dumps({"geometry": sk["geometry"], "z_port": None,
                                     "meta": {"seed": self.seed, "skipped": sk["reason"],
                                              "draw": sk["draw"]}}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text):
        samples, skipped, train, hold, seed = [], [], [], [], None
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DomainError(f"line {n}: {exc}") from exc
            meta = doc.get("meta", {})
            seed = meta.get("seed", seed)
            if doc.get("z_port") is None:
                skipped.append({"geometry": doc["geometry"], "reason": meta.get("skipped"),
                                "draw": meta.get("draw")})
                continue
            idx = len(samples)
            samples.append(Sample(ArrayGeometry.from_dict(doc["geometry"]),
                                  unpack_upper(doc["z_port"]),
                                  {k: v for k, v in meta.items()
                                   if k not in ("index", "seed", "split")}))
            (hold if meta.get("split") == "holdout" else train).append(idx)
        return cls(samples, seed, train, hold, skipped)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def gen_dataset(n_samples, m_elements, dipole, f_hz, seed=42, constraints=None,
                holdout_fraction=0.2, workers=1, points=QUAD_POINTS):
    """MoM-labelled layouts drawn with :func:`sample_spacings`.

    Layouts are drawn up front from one seeded generator, so results do not
    depend on ``workers``.  A sample whose solve fails is logged and kept in
    ``Dataset.skipped`` rather than dropped.
    """
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    c = constraints or SpacingConstraints()
    rng = np.random.default_rng(seed)
    lam = wavelength(f_hz)
    geoms = [ArrayGeometry.from_spacings(dipole, sample_spacings(m_elements, c, rng) * lam,
                                         f_hz) for _ in range(n_samples)]

    def solve(g):
        try:
            return solve_ports(g, points).entries, None
        except (SolverError, DomainError) as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve, geoms))
    else:
        results = [solve(g) for g in geoms]
    samples, skipped = [], []
    for i, (g, (z, err)) in enumerate(zip(geoms, results)):
        if z is None:
            log.warning("sample %d skipped: %s", i, err)
            skipped.append({"geometry": g.to_dict(), "reason": err, "draw": i})
            continue
        samples.append(Sample(g, z, {"draw": i}))
    train, hold = split_indices(len(samples), holdout_fraction, seed)
    return Dataset(samples, seed, train.tolist(), hold.tolist(), skipped)


# --------------------------------------------------------------------------
# Prior assembly
# --------------------------------------------------------------------------

@dataclass
class SynthesizedMatrix:
    real: np.ndarray
    imag: np.ndarray
    prior: np.ndarray = None
    warnings: list = field(default_factory=list)

    @property
    def packed(self):
        return np.concatenate([self.real, self.imag])

    @property
    def elements(self):
        return int(round((math.sqrt(8 * len(self.real) + 1) - 1) / 2))

    def matrix(self):
        return unpack_upper(self.packed)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "re_or_im", "value"])
        for i, v in enumerate(self.real):
            w.writerow([i, "re", repr(float(v))])
        n = len(self.real)
        for i, v in enumerate(self.imag):
            w.writerow([n + i, "im", repr(float(v))])
        return buf.getvalue()

    def to_json(self):
        m = self.matrix()
        return json.dumps({"elements": self.elements,
                           "z_port": [[[float(v.real), float(v.imag)] for v in row]
                                      for row in m],
                           "warnings": self.warnings})


def _check_layout(spacings_lambda, constraints):
    bad = constraints.violations(spacings_lambda)
    if bad:
        desc = ", ".join(f"{k}[{i}]={v:.4g}" for k, i, v in bad)
        raise ConstraintError(f"layout violates spacing constraints: {desc}",
                              offending=bad)


def _pair_predictions(twoport, dipole, f_hz, spacings_m):
    geoms = [ArrayGeometry(dipole, (0.0, float(d)), f_hz) for d in spacings_m]
    return predict_batch(twoport, geoms)


def assemble_prior(twoport, spacings_m, dipole, f_hz, constraints=None,
                   predictions=None):
    """Pairwise prior impedance matrix; exact zeros beyond the cutoff."""
    c = constraints or SpacingConstraints()
    sp = np.asarray(spacings_m, dtype=np.float64)
    lam = wavelength(f_hz)
    m = len(sp) + 1
    preds = predictions or _pair_predictions(twoport, dipole, f_hz, sp)
    pos = np.concatenate([[0.0], np.cumsum(sp)])
    z = np.zeros((m, m), dtype=np.complex128)
    for p in range(m):
        nbr = [i for i in (p - 1, p) if 0 <= i < m - 1]
        near = min(nbr, key=lambda i: sp[i])
        z[p, p] = 0.5 * (preds[near].z11 + preds[near].z22)
        for q in range(p + 1, m):
            if (pos[q] - pos[p]) / lam <= c.cutoff:
                # only adjacent pairs can be this close under the constraints
                if q == p + 1:
                    z[p, q] = z[q, p] = preds[p].z12
                else:
                    pr = _pair_predictions(twoport, dipole, f_hz, [pos[q] - pos[p]])[0]
                    z[p, q] = z[q, p] = pr.z12
    warns = sorted({w for pr in preds for w in pr.warnings})
    return z, warns


def induced_emf_mutual(separation_lambda, length_lambda):
    """Closed-form mutual impedance of parallel side-by-side thin dipoles.

    Sinusoidal-current induced-EMF result, referred to the current maximum;
    used only as an input feature.
    """
    s = np.asarray(separation_lambda, dtype=np.float64)
    k = 2.0 * math.pi
    r = np.sqrt(s * s + length_lambda ** 2)
    si0, ci0 = sici(k * s)
    si1, ci1 = sici(k * (r + length_lambda))
    si2, ci2 = sici(k * (r - length_lambda))
    return 30.0 * (2 * ci0 - ci1 - ci2) - 30.0j * (2 * si0 - si1 - si2)


N_ENTRY_FEATURES = 19


def row_features(spacings_lambda, prior, length_lambda, scale, cutoff=0.6):
    """Per-entry features, one padded sequence per upper-triangle row.

    Returns ``(x, prior_rows, lengths)`` with ``x`` of shape (M, M, F):
    row ``p`` holds entries (p, p), (p, p+1), ... and is zero-padded at the
    end.  The LSTM is causal, so padding never changes valid outputs.
    """
    sp = np.asarray(spacings_lambda, dtype=np.float64)
    m = len(sp) + 1
    pos = np.concatenate([[0.0], np.cumsum(sp)])

    def g(i):
        return sp[i] if 0 <= i < m - 1 else 0.0

    x = np.zeros((m, m, N_ENTRY_FEATURES))
    pr = np.zeros((m, m), dtype=np.complex128)
    for p in range(m):
        for j, q in enumerate(range(p, m)):
            s = pos[q] - pos[p]
            e = 0j if p == q else complex(induced_emf_mutual(s, length_lambda))
            z = prior[p, q]
            pr[p, j] = z
            x[p, j] = (z.real / scale, z.imag / scale, e.real / scale, e.imag / scale,
                       s, 1.0 / s if s > 0 else 0.0, p == q, s > cutoff,
                       g(p - 1), g(p - 2), g(p), g(q - 1), g(q), g(q + 1),
                       p == 0, q == m - 1, min(p, 5) / 5, min(m - 1 - q, 5) / 5, j / 10)
    return x, pr, m - np.arange(m)


def rows_to_packed(rows):
    """(M, M) row-padded complex entries -> packed upper-triangle order."""
    m = rows.shape[0]
    return np.concatenate([rows[p, :m - p] for p in range(m)])


# --------------------------------------------------------------------------
# Second-stage model
# --------------------------------------------------------------------------

@dataclass
class SynthesisConfig:
    epochs: int = 600
    learning_rate: float = 5e-3
    final_learning_rate: float = 5e-5
    seed: int = 42
    hidden: int = 32
    layers: int = 2

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


class SynthesisBundle:
    def __init__(self, twoport, lstm, head, scale, dipole, frequency_hz,
                 constraints, config, trained=False):
        self.twoport = twoport
        self.lstm = lstm
        self.head = head
        self.scale = float(scale)
        self.dipole = dipole
        self.frequency_hz = float(frequency_hz)
        self.constraints = constraints
        self.config = config
        self.trained = trained

    @property
    def length_lambda(self):
        return self.dipole.length_m / wavelength(self.frequency_hz)

    def named_layers(self):
        layers = dict(self.lstm.named_layers("lstm"))
        layers["head"] = self.head
        return layers

    def forward(self, x, prior_rows):
        """x: (B, T, F) rows; returns corrected (B, T) complex entries."""
        hs = self.lstm.forward(x.transpose(1, 0, 2))
        out = self.head.forward(hs).transpose(1, 0, 2)
        base = np.stack([prior_rows.real, prior_rows.imag], axis=-1) / self.scale
        return out + base

    def backward(self, d_out):
        dh = self.head.backward(d_out.transpose(1, 0, 2))
        self.lstm.backward(dh)

    def to_doc(self, epoch=0, loss=None, optimizer=None):
        tp = self.twoport.to_doc()
        extra = {"kind": "synthesis", "twoport": tp, "twoport_digest": checkpoint.digest(tp),
                 "scale": self.scale,
                 "dipole": {"length_m": self.dipole.length_m, "radius_m": self.dipole.radius_m,
                            "segments": self.dipole.segments},
                 "frequency_hz": self.frequency_hz,
                 "constraints": self.constraints.to_dict(),
                 "config": self.config.to_dict(), "trained": self.trained}
        return checkpoint.checkpoint_doc(self.named_layers(), seed=self.config.seed,
                                         epoch=epoch, loss=loss, optimizer=optimizer,
                                         extra=extra)

    @classmethod
    def from_doc(cls, doc):
        ex = doc["extra"]
        if ex.get("kind") != "synthesis":
            raise ValueError("not a synthesis bundle")
        layers = checkpoint.layers_from_doc(doc["layers"])
        n = sum(1 for k in layers if k.startswith("lstm"))
        lstm = StackedLSTM([layers[f"lstm{i}"] for i in range(n)])
        return cls(ModelBundle.from_doc(ex["twoport"]), lstm, layers["head"], ex["scale"],
                   DipoleSpec(**ex["dipole"]), ex["frequency_hz"],
                   SpacingConstraints(**ex["constraints"]),
                   SynthesisConfig.from_dict(ex["config"]), ex.get("trained", False))


def _layout_inputs(bundle, spacings_m):
    lam = wavelength(bundle.frequency_hz)
    sp = np.asarray(spacings_m, dtype=np.float64)
    prior, warns = assemble_prior(bundle.twoport, sp, bundle.dipole, bundle.frequency_hz,
                                  bundle.constraints)
    x, pr, lengths = row_features(sp / lam, prior, bundle.length_lambda, bundle.scale,
                                  bundle.constraints.cutoff)
    return x, pr, lengths, prior, warns


def synthesize_array(bundle, spacings_m, dipole=None, f_hz=None):
    """Port impedance of a linear array from the two-element model.

    ``spacings_m`` are the M-1 adjacent spacings in metres.  Two-element
    layouts return the two-port prediction unchanged.
    """
    dipole = dipole or bundle.dipole
    f_hz = bundle.frequency_hz if f_hz is None else f_hz
    if dipole != bundle.dipole or not math.isclose(f_hz, bundle.frequency_hz):
        raise DomainError("bundle was trained for a different dipole or frequency")
    sp = np.atleast_1d(np.asarray(spacings_m, dtype=np.float64))
    lam = wavelength(f_hz)
    _check_layout(sp / lam, bundle.constraints)
    if len(sp) == 1:
        pred = _pair_predictions(bundle.twoport, dipole, f_hz, sp)[0]
        z = pred.reconstructed
        u = z[np.triu_indices(2)]
        return SynthesizedMatrix(u.real.copy(), u.imag.copy(), z, pred.warnings)
    if not bundle.trained:
        raise DomainError("synthesis bundle has not been trained")
    x, pr, _, prior, warns = _layout_inputs(bundle, sp)
    out = bundle.forward(x, pr) * bundle.scale
    packed = rows_to_packed(out[..., 0] + 1j * out[..., 1])
    return SynthesizedMatrix(packed.real.copy(), packed.imag.copy(), prior, warns)


def _bucket(items):
    """Group (x_row, prior_row, target_row, tag) by valid length."""
    groups = {}
    for x, pr, tg, tag in items:
        groups.setdefault(x.shape[0], []).append((x, pr, tg, tag))
    return [(np.stack([a[0] for a in g]), np.stack([a[1] for a in g]),
             np.stack([a[2] for a in g]), np.array([a[3] for a in g]))
            for _, g in sorted(groups.items())]


def _rows(bundle, sample, scale):
    lam = wavelength(bundle.frequency_hz)
    sp = np.asarray(sample.geometry.spacings_m)
    prior, _ = assemble_prior(bundle.twoport, sp, bundle.dipole, bundle.frequency_hz,
                              bundle.constraints)
    x, pr, lengths = row_features(sp / lam, prior, bundle.length_lambda, scale,
                                  bundle.constraints.cutoff)
    z = sample.zport
    m = len(lengths)
    out = []
    for p in range(m):
        n = lengths[p]
        tg = z[p, p:]
        out.append((x[p, :n], pr[p, :n], tg))
    return out


def train_synthesis(datasets, twoport, config=None, callback=None):
    """Fit the row-wise correction LSTM jointly on several array sizes.

    ``datasets`` maps element count to :class:`Dataset`; all must share the
    two-port bundle's dipole and frequency.  Returns ``(bundle, histories)``
    with one normalised-loss curve per array size.
    """
    config = config or SynthesisConfig()
    first = next(iter(datasets.values())).samples[0].geometry
    dipole, f_hz = first.dipole, first.frequency_hz
    tz = np.concatenate([np.concatenate([pack_upper(s.zport) for s in ds.train])
                         for ds in datasets.values()])
    scale = float(np.sqrt(2.0 * np.mean(tz ** 2)))
    rng = np.random.default_rng(config.seed)
    lstm = StackedLSTM.init(rng, N_ENTRY_FEATURES, config.hidden, config.layers)
    head = Dense.init(rng, config.hidden, 2)
    bundle = SynthesisBundle(twoport, lstm, head, scale, dipole, f_hz,
                             SpacingConstraints(), config)
    items, counts = [], {}
    for m, ds in datasets.items():
        counts[m] = 0
        for s in ds.train:
            if s.geometry.dipole != dipole or not math.isclose(s.geometry.frequency_hz, f_hz):
                raise DomainError("datasets mix dipoles or frequencies")
            for x, pr, tg in _rows(bundle, s, scale):
                items.append((x, pr, tg, m))
                counts[m] += 2 * len(tg)
    buckets = _bucket(items)
    opt = Adam(config.learning_rate)
    histories = {m: [] for m in datasets}
    ratio = config.final_learning_rate / config.learning_rate
    for epoch in range(config.epochs):
        for layer in bundle.named_layers().values():
            layer.zero_grad()
        sums = dict.fromkeys(datasets, 0.0)
        for x, pr, tg, tags in buckets:
            out = bundle.forward(x, pr)
            t = np.stack([tg.real, tg.imag], axis=-1) / scale
            d = out - t
            w = np.array([1.0 / counts[m] for m in tags])[:, None, None]
            for m in datasets:
                sel = tags == m
                if sel.any():
                    sums[m] += float(np.sum(d[sel] ** 2)) / counts[m]
            bundle.backward(2.0 * d * w)
        if not all(math.isfinite(v) for v in sums.values()):
            raise TrainingError(f"synthesis loss diverged at epoch {epoch}", epoch=epoch)
        for m in datasets:
            histories[m].append({"epoch": epoch, "loss": sums[m]})
        if callback is not None:
            callback(epoch, sums)
        params, grads = collect(bundle.named_layers())
        lr = config.learning_rate * ratio ** (epoch / max(config.epochs - 1, 1))
        try:
            opt.step(params, grads, lr)
        except TrainingError as exc:
            raise TrainingError(f"{exc} at epoch {epoch}", epoch=epoch, path=exc.path) from exc
    bundle.trained = config.epochs > 0
    bundle.optimizer = opt.hyperparameters()
    return bundle, histories


def normalized_rms(pred, true):
    """rms(pred - true) / rms(true) over packed upper-triangle values."""
    p = pack_upper(pred) if np.ndim(pred) == 2 else np.asarray(pred)
    t = pack_upper(true) if np.ndim(true) == 2 else np.asarray(true)
    return float(np.sqrt(np.sum((p - t) ** 2) / np.sum(t ** 2)))


def holdout_errors(bundle, dataset):
    """Per-layout normalised RMS and the pooled value over all layouts."""
    errs, num, den = [], 0.0, 0.0
    for s in dataset.holdout:
        pred = synthesize_array(bundle, s.geometry.spacings_m).packed
        true = pack_upper(s.zport)
        errs.append(normalized_rms(pred, true))
        num += float(np.sum((pred - true) ** 2))
        den += float(np.sum(true ** 2))
    return np.asarray(errs), math.sqrt(num / den)
