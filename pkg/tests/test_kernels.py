"""The numba and numpy kernel paths must agree to rounding."""
import numpy as np
import pytest

from dipole_coupling import _accel, _kernels
from dipole_coupling.geometry import ArrayGeometry, half_wave_dipole, wavelength
from dipole_coupling.mom import quadrature_rule

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _geometry(m=3, n=8, f=3e9):
    lam = wavelength(f)
    return ArrayGeometry.from_spacings(half_wave_dipole(f, 0.002, n),
                                       [0.21 * lam, 0.37 * lam][: m - 1], f)


def test_backend_flag_matches_environment():
    assert _accel.backend() in ("numba", "numpy")
    assert (_accel.backend() == "numba") == _accel.USE_NUMBA


def test_green_fill_paths_agree():
    g = _geometry()
    z, x, el = g.segment_centers()
    args = (z, x, el.astype(np.int64), g.dipole.radius_m, g.k, 0.3, 0.01)
    a = _kernels._green_fill_numba(*args)
    b = _kernels._green_fill_numpy(*args)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=0)
    assert np.array_equal(a, a.T) and np.array_equal(b, b.T)


@pytest.mark.parametrize("points", [2, 5, 8])
def test_segment_moments_paths_agree(points):
    g = _geometry()
    z0, x, el = g.segment_starts()
    nodes, weights = quadrature_rule(points)
    args = (z0, x, el.astype(np.int64), g.dipole.segment_length, g.dipole.radius_m,
            g.k, nodes, weights)
    a = _kernels._segment_moments_numba(*args)
    b = _kernels._segment_moments_numpy(*args)
    scale = np.abs(b).max()
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * scale)


def test_lstm_paths_agree():
    rng = np.random.default_rng(3)
    t, bsz, d, h = 5, 4, 3, 6
    xs = rng.normal(size=(t, bsz, d))
    wx = rng.normal(scale=0.5, size=(d, 4 * h))
    wh = rng.normal(scale=0.5, size=(h, 4 * h))
    b = rng.normal(size=4 * h)
    fa = _kernels._lstm_forward_numba(xs, wx, wh, b)
    fb = _kernels._lstm_forward_numpy(xs, wx, wh, b)
    for u, v in zip(fa, fb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)
    dhs = rng.normal(size=(t, bsz, h))
    ga = _kernels._lstm_backward_numba(xs, wx, wh, *fb, dhs)
    gb = _kernels._lstm_backward_numpy(xs, wx, wh, *fb, dhs)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-13)


def test_conv_paths_agree():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 9, 7))
    w = rng.normal(size=(3, 5))
    np.testing.assert_allclose(_kernels._conv2d_numba(x, w), _kernels._conv2d_numpy(x, w),
                               rtol=1e-13, atol=1e-14)


def test_public_dispatch_uses_selected_backend(monkeypatch):
    g = _geometry(m=1)
    z, x, el = g.segment_centers()
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    a = _kernels.green_fill(z, x, el, g.dipole.radius_m, g.k, 1.0, 1.0)
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    b = _kernels.green_fill(z, x, el, g.dipole.radius_m, g.k, 1.0, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-13)
