"""Dipole array geometry and the free-space Green's function.

Dipoles are parallel to z, centred at z = 0, and placed along x at
``positions_m``.  Each dipole is cut into ``segments`` equal pieces and the
Green's function is sampled at segment centres, element-major.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError

C0 = 299_792_458.0
MU0 = 4e-7 * math.pi
EPS0 = 1.0 / (MU0 * C0 * C0)
Z0 = math.sqrt(MU0 / EPS0)


def wavelength(frequency_hz):
    if not frequency_hz > 0:
        raise DomainError(f"frequency must be positive, got {frequency_hz!r}")
    return C0 / frequency_hz


def wavenumber(frequency_hz):
    return 2.0 * math.pi / wavelength(frequency_hz)


def scalar_green(distance_m, wavenumber):
    """exp(-j k R) / (4 pi R)."""
    if not distance_m > 0:
        raise DomainError(
            f"distance must be positive, got {distance_m!r}; "
            "apply the thin-wire radius regularisation first")
    return complex(np.exp(-1j * wavenumber * distance_m)
                   / (4.0 * math.pi * distance_m))


def k_factor(frequency_hz, segments):
    """Frequency factor f N / (2 pi c) pulled out of the Green's function."""
    if not frequency_hz > 0:
        raise DomainError(f"frequency must be positive, got {frequency_hz!r}")
    if int(segments) != segments or segments < 1:
        raise DomainError(f"segments must be a positive integer, got {segments!r}")
    return frequency_hz * segments / (2.0 * math.pi * C0)


def factored_green(delta, segments):
    """Frequency-free Green's term exp(-j pi delta / N) / delta.

    ``delta`` is the separation counted in half-wave segment lengths
    lambda / (2N); for a half-wave dipole that is the index gap |m - n|.
    It may be fractional for cross-dipole pairs.
    """
    if segments < 1:
        raise DomainError(f"segments must be positive, got {segments!r}")
    if delta == 0:
        raise DomainError("delta = 0 is the self term; use the thin-wire "
                          "regularised diagonal of green_matrix")
    if delta < 0:
        raise DomainError(f"delta must be non-negative, got {delta!r}")
    return complex(np.exp(-1j * math.pi * delta / segments) / delta)


@dataclass(frozen=True)
class DipoleSpec:
    length_m: float
    radius_m: float
    segments: int

    def __post_init__(self):
        if not self.length_m > 0:
            raise DomainError(f"length_m must be positive, got {self.length_m}")
        if not self.radius_m > 0:
            raise DomainError(f"radius_m must be positive, got {self.radius_m}")
        if not self.radius_m < self.length_m / 50:
            raise DomainError("thin-wire model needs radius_m < length_m / 50")
        if int(self.segments) != self.segments or self.segments < 2:
            raise DomainError(f"segments must be an integer >= 2, got {self.segments}")
        object.__setattr__(self, "segments", int(self.segments))

    @property
    def segment_length(self):
        return self.length_m / self.segments


@dataclass(frozen=True)
class ArrayGeometry:
    dipole: DipoleSpec
    positions_m: tuple
    frequency_hz: float

    def __post_init__(self):
        pos = tuple(float(p) for p in np.atleast_1d(self.positions_m))
        object.__setattr__(self, "positions_m", pos)
        if len(pos) < 1:
            raise DomainError("array needs at least one element")
        if any(not math.isfinite(p) for p in pos):
            raise DomainError("positions must be finite")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise DomainError("positions must be strictly increasing")
        if not self.frequency_hz > 0:
            raise DomainError(f"frequency_hz must be positive, got {self.frequency_hz}")
        object.__setattr__(self, "frequency_hz", float(self.frequency_hz))

    @classmethod
    def from_spacings(cls, dipole, spacings_m, frequency_hz, start_m=0.0):
        pos = start_m + np.concatenate([[0.0], np.cumsum(spacings_m)])
        return cls(dipole, tuple(pos), frequency_hz)

    @property
    def elements(self):
        return len(self.positions_m)

    @property
    def spacings_m(self):
        return tuple(np.diff(self.positions_m))

    @property
    def wavelength(self):
        return wavelength(self.frequency_hz)

    @property
    def k(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def total_segments(self):
        return self.elements * self.dipole.segments

    def segment_starts(self):
        """(z_start, x, element) for every segment, element-major."""
        d = self.dipole
        z = -0.5 * d.length_m + d.segment_length * np.arange(d.segments)
        m = self.elements
        return (np.tile(z, m),
                np.repeat(np.asarray(self.positions_m), d.segments),
                np.repeat(np.arange(m), d.segments))

    def segment_centers(self):
        z, x, el = self.segment_starts()
        return z + 0.5 * self.dipole.segment_length, x, el

    def translated(self, offset_m):
        return ArrayGeometry(self.dipole,
                             tuple(p + offset_m for p in self.positions_m),
                             self.frequency_hz)

    def with_frequency(self, frequency_hz):
        return ArrayGeometry(self.dipole, self.positions_m, frequency_hz)

    def to_dict(self):
        return {
            "schema_version": 1,
            "length_m": self.dipole.length_m,
            "radius_m": self.dipole.radius_m,
            "segments": self.dipole.segments,
            "positions_m": list(self.positions_m),
            "frequency_hz": self.frequency_hz,
        }

    @classmethod
    def from_dict(cls, doc):
        """Build from the geometry JSON document.

        Accepts either ``positions_m`` or ``spacings_m`` (positions then start
        at 0).  Missing keys and bad values raise :class:`DomainError`.
        """
        try:
            dipole = DipoleSpec(float(doc["length_m"]), float(doc["radius_m"]),
                                int(doc["segments"]))
            f = float(doc["frequency_hz"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"invalid geometry document: {exc}") from exc
        if "positions_m" in doc:
            return cls(dipole, tuple(doc["positions_m"]), f)
        if "spacings_m" in doc:
            return cls.from_spacings(dipole, doc["spacings_m"], f)
        raise DomainError("geometry needs positions_m or spacings_m")


def half_wave_dipole(frequency_hz, radius_over_lambda=0.002, segments=16):
    lam = wavelength(frequency_hz)
    return DipoleSpec(0.5 * lam, radius_over_lambda * lam, segments)


class GreenKind(str, enum.Enum):
    FULL = "full"
    FREQUENCY_FACTORED = "frequency_factored"


@dataclass(frozen=True)
class GreenMatrix:
    entries: np.ndarray
    kind: GreenKind
    geometry: ArrayGeometry = field(repr=False)

    @property
    def side(self):
        return self.entries.shape[0]

    def upper(self):
        """Upper triangle including the diagonal, row-major."""
        return self.entries[np.triu_indices(self.side)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "n", "re", "im"])
        for m in range(self.side):
            for n in range(self.side):
                v = self.entries[m, n]
                w.writerow([m, n, repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "geometry": self.geometry.to_dict(),
            "kind": self.kind.value,
            "side": self.side,
            "entries": [[[float(v.real), float(v.imag)] for v in row]
                        for row in self.entries],
        })


def factored_unit(geometry):
    """Half-wave segment length lambda / (2N): the unit of the factored delta."""
    return geometry.wavelength / (2.0 * geometry.dipole.segments)


def green_matrix(geometry, kind=GreenKind.FULL):
    """Green's function between all segment centres of ``geometry``.

    Off-diagonal entries use exact centre distances.  The diagonal uses the
    thin-wire regularised distance R = radius.  ``FREQUENCY_FACTORED`` entries
    equal the full entries divided by :func:`k_factor`.
    """
    kind = GreenKind(kind)
    z, x, el = geometry.segment_centers()
    if kind is GreenKind.FULL:
        scale, unit = 1.0 / (4.0 * math.pi), 1.0
    else:
        scale, unit = 1.0, factored_unit(geometry)
    entries = _kernels.green_fill(z, x, el, geometry.dipole.radius_m,
                                  geometry.k, scale, unit)
    entries.setflags(write=False)
    return GreenMatrix(entries, kind, geometry)


def pack_upper(matrix):
    """Symmetric complex matrix -> real vector [re(upper) ..., im(upper) ...]."""
    matrix = np.asarray(matrix)
    u = matrix[np.triu_indices(matrix.shape[0])]
    return np.concatenate([u.real, u.imag])


def unpack_upper(vector):
    """Inverse of :func:`pack_upper`; the result is exactly symmetric."""
    vector = np.asarray(vector, dtype=np.float64)
    half = vector.shape[0] // 2
    side = int(round((math.sqrt(8 * half + 1) - 1) / 2))
    if vector.shape[0] % 2 or side * (side + 1) // 2 != half:
        raise DomainError(f"length {vector.shape[0]} is not M(M+1) for any M")
    iu = np.triu_indices(side)
    out = np.zeros((side, side), dtype=np.complex128)
    out[iu] = vector[:half] + 1j * vector[half:]
    out[iu[1], iu[0]] = out[iu]
    return out
