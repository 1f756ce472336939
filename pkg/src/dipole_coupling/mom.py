"""Thin-wire Galerkin method of moments for parallel dipole arrays.

Currents are expanded in triangular (rooftop) functions on the interior
nodes of each dipole, so every dipole carries ``N - 1`` unknowns and the
current vanishes at the wire ends.  The impedance entries are

    Z_mn = j k Z0 int int G(R) [psi_m psi_n - (1/k^2) psi_m' psi_n'] dz dz'

with the reduced thin-wire kernel on each wire.  Ports are delta gaps at
the basis nearest each dipole centre; the port impedance matrix is
``(M Z^-1 M^T)^-1``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import ConversionError, DomainError, ReductionError, SolverError
from .geometry import Z0, ArrayGeometry

QUAD_POINTS = 8
COND_LIMIT = 1e12

# Slot 0 is the rising half of a triangle (first segment of its support),
# slot 1 the falling half.  Entries: local shape index used by the moment
# kernel (phi_1 = u rises, phi_0 = 1 - u falls) and derivative sign.
_SLOT_SHAPE = np.array([1, 0])
_SLOT_SIGN = np.array([1.0, -1.0])


@dataclass(frozen=True)
class BasisSet:
    """Triangular basis functions, element-major.

    ``support[b]`` holds the two segment indices under basis ``b``;
    ``peaks_m[b]`` the z coordinate of its apex and ``element[b]`` its dipole.
    """
    support: np.ndarray
    peaks_m: np.ndarray
    element: np.ndarray
    segment_length: float

    @property
    def count(self):
        return self.support.shape[0]

    def evaluate(self, b, z):
        """Value of basis ``b`` at axial coordinate(s) ``z`` on its dipole."""
        t = 1.0 - np.abs(np.asarray(z, dtype=float) - self.peaks_m[b]) / self.segment_length
        return np.clip(t, 0.0, None)

    def slope(self, b, z):
        """d psi_b / dz, +1/dl on the rising segment and -1/dl on the falling one."""
        z = np.asarray(z, dtype=float)
        dl = self.segment_length
        rising = (z > self.peaks_m[b] - dl) & (z < self.peaks_m[b])
        falling = (z > self.peaks_m[b]) & (z < self.peaks_m[b] + dl)
        return np.where(rising, 1.0 / dl, 0.0) - np.where(falling, 1.0 / dl, 0.0)


def build_basis(geometry):
    n = geometry.dipole.segments
    if n < 2:
        raise DomainError("need at least 2 segments per dipole")
    dl = geometry.dipole.segment_length
    nodes = np.arange(1, n)
    per = n - 1
    m = geometry.elements
    element = np.repeat(np.arange(m), per)
    first = element * n + np.tile(nodes - 1, m)
    support = np.stack([first, first + 1], axis=1)
    peaks = np.tile(-0.5 * geometry.dipole.length_m + dl * nodes, m)
    return BasisSet(support, peaks, element, dl)


def port_indices(geometry):
    """Basis index of each port: the interior node nearest the dipole centre."""
    n = geometry.dipole.segments
    local = int(np.argmin(np.abs(np.arange(1, n) - 0.5 * n)))
    return np.arange(geometry.elements) * (n - 1) + local


def quadrature_rule(points=QUAD_POINTS):
    x, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class QuadratureWeights:
    """Weights w[a, b, p, r] pairing a G sample at node pair (p, r) with Z.

    ``a`` and ``b`` are support slots (0 rising, 1 falling) of the testing and
    source basis, ``p`` and ``r`` Gauss nodes on the respective segments:

        w = j k Z0 dz dz' (psi_m psi_n - psi_m' psi_n' / k^2)
    """
    w: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    k: float
    segment_length: float
    z0: float


def quadrature_weights(basis, geometry, points=QUAD_POINTS, z0=Z0):
    nodes, weights = quadrature_rule(points)
    k = geometry.k
    dl = basis.segment_length
    # basis value on each slot at the local node (rising: u, falling: 1 - u)
    val = np.stack([nodes, 1.0 - nodes])                      # (2, q)
    grad = _SLOT_SIGN / dl                                    # (2,)
    dr = dl * weights
    w = (val[:, None, :, None] * val[None, :, None, :]
         - (grad[:, None] * grad[None, :])[:, :, None, None] / k ** 2)
    w = 1j * k * z0 * dr[None, None, :, None] * dr[None, None, None, :] * w
    return QuadratureWeights(w, nodes, weights, k, dl, z0)


@dataclass(frozen=True)
class MoMSystem:
    impedance: np.ndarray
    port_map: np.ndarray
    excitation: np.ndarray
    geometry: ArrayGeometry

    @property
    def ports(self):
        return self.port_map.shape[0]


@dataclass(frozen=True)
class PortImpedance:
    entries: np.ndarray
    frequency_hz: float

    @property
    def ports(self):
        return self.entries.shape[0]

    def to_csv(self):
        return _matrix_csv(self.entries)

    def to_json(self):
        return json.dumps({"frequency_hz": self.frequency_hz,
                           "z_port": _matrix_json(self.entries)})


def _matrix_csv(mat):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "q", "re", "im"])
    for p in range(mat.shape[0]):
        for q in range(mat.shape[1]):
            w.writerow([p, q, repr(float(mat[p, q].real)),
                        repr(float(mat[p, q].imag))])
    return buf.getvalue()


def _matrix_json(mat):
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def _check_separation(geometry):
    pos = np.asarray(geometry.positions_m)
    if pos.size > 1 and np.min(np.diff(pos)) <= 2.0 * geometry.dipole.radius_m:
        raise DomainError("dipoles overlap: spacing must exceed one wire diameter")


def segment_moments(geometry, points=QUAD_POINTS):
    nodes, weights = quadrature_rule(points)
    z, x, el = geometry.segment_starts()
    return _kernels.segment_moments(z, x, el, geometry.dipole.segment_length,
                                    geometry.dipole.radius_m, geometry.k,
                                    nodes, weights)


def assemble_impedance(geometry, points=QUAD_POINTS, z0=Z0):
    """Galerkin impedance matrix, port map and unit-voltage excitation."""
    _check_separation(geometry)
    basis = build_basis(geometry)
    mom = segment_moments(geometry, points)
    k = geometry.k
    dl = basis.segment_length
    kt = mom.sum(axis=(2, 3))
    z = np.zeros((basis.count, basis.count), dtype=np.complex128)
    for a in range(2):
        s = basis.support[:, a]
        for b in range(2):
            t = basis.support[:, b]
            vec = mom[s[:, None], t[None, :], _SLOT_SHAPE[a], _SLOT_SHAPE[b]]
            chg = kt[s[:, None], t[None, :]]
            z += vec - (_SLOT_SIGN[a] * _SLOT_SIGN[b] / (k * dl) ** 2) * chg
    z *= 1j * k * z0
    z = 0.5 * (z + z.T)
    ports = port_indices(geometry)
    pmap = np.zeros((len(ports), basis.count))
    pmap[np.arange(len(ports)), ports] = 1.0
    z.setflags(write=False)
    return MoMSystem(z, pmap, np.ones(len(ports), dtype=np.complex128), geometry)


def _condition(mat):
    try:
        return float(np.linalg.cond(mat))
    except np.linalg.LinAlgError:
        return math.inf


def _solve(mat, rhs, err=SolverError, what="impedance matrix"):
    cond = _condition(mat)
    if not cond < COND_LIMIT:
        raise err(f"{what} is singular or ill-conditioned (cond ~ {cond:.3g})",
                  condition=cond)
    return scipy.linalg.solve(mat, rhs)


def solve_currents(system, voltage):
    """Basis currents I with Z I = V."""
    z = system.impedance if isinstance(system, MoMSystem) else np.asarray(system)
    v = np.asarray(voltage, dtype=np.complex128)
    if v.shape[0] != z.shape[0]:
        raise DomainError(f"voltage length {v.shape[0]} != system size {z.shape[0]}")
    return _solve(z, v)


def port_currents(system, port_voltages=None):
    """Delta-gap solve: drive the port bases, return all basis currents."""
    vp = system.excitation if port_voltages is None else np.asarray(port_voltages)
    return solve_currents(system, system.port_map.T @ vp)


def port_reduce(system):
    """Z_port = (M Z^-1 M^T)^-1, symmetrised."""
    z = system.impedance
    pmap = system.port_map
    y = pmap @ _solve(z, pmap.T.astype(np.complex128), ReductionError)
    zp = _solve(y, np.eye(y.shape[0], dtype=np.complex128), ReductionError,
                "port admittance matrix")
    zp = 0.5 * (zp + zp.T)
    return PortImpedance(zp, system.geometry.frequency_hz
                         if system.geometry is not None else float("nan"))


def solve_ports(geometry, points=QUAD_POINTS):
    return port_reduce(assemble_impedance(geometry, points))


def z_to_s(zport, ref_ohms=50.0):
    """S = (Z - Z0 I)(Z + Z0 I)^-1 for a real reference impedance."""
    if not ref_ohms > 0:
        raise DomainError(f"reference impedance must be positive, got {ref_ohms}")
    z = zport.entries if isinstance(zport, PortImpedance) else np.asarray(zport)
    z = np.atleast_2d(np.asarray(z, dtype=np.complex128))
    eye = np.eye(z.shape[0])
    s = _solve((z + ref_ohms * eye).T, (z - ref_ohms * eye).T, ConversionError,
               "Z + Z0 I").T
    if np.allclose(z, z.T, rtol=0, atol=1e-12 * max(1.0, np.abs(z).max())):
        s = 0.5 * (s + s.T)
    return s


@dataclass(frozen=True)
class SweepPoint:
    frequency_hz: float
    zport: PortImpedance
    s: np.ndarray


def frequency_grid(f_start, f_stop, n_points):
    if not f_start < f_stop:
        raise DomainError("f_start must be below f_stop")
    if n_points < 2:
        raise DomainError("a sweep needs at least 2 points")
    return np.linspace(f_start, f_stop, int(n_points))


def frequency_sweep(geometry, f_start, f_stop, n_points, ref_ohms=50.0,
                    workers=1, points=QUAD_POINTS):
    """Port impedance and S-matrix at each frequency, in frequency order."""
    grid = frequency_grid(f_start, f_stop, n_points)

    def one(f):
        zp = solve_ports(geometry.with_frequency(float(f)), points)
        return SweepPoint(float(f), zp, z_to_s(zp, ref_ohms))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, grid))
    return [one(f) for f in grid]


def sweep_csv(sweep):
    """CSV rows f_hz, then s/z entries of the upper triangle as re/im pairs."""
    p = sweep[0].zport.ports
    iu = list(zip(*np.triu_indices(p)))
    head = ["f_hz"]
    for tag in ("s", "z"):
        for i, j in iu:
            head += [f"{tag}{j + 1}{i + 1}_re" if tag == "s" and i != j
                     else f"{tag}{i + 1}{j + 1}_re",
                     f"{tag}{j + 1}{i + 1}_im" if tag == "s" and i != j
                     else f"{tag}{i + 1}{j + 1}_im"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for pt in sweep:
        row = [repr(pt.frequency_hz)]
        for mat in (pt.s, pt.zport.entries):
            for i, j in iu:
                row += [repr(float(mat[i, j].real)), repr(float(mat[i, j].imag))]
        w.writerow(row)
    return buf.getvalue()
