"""Hot numeric kernels, each with a numba loop form and a numpy form.

The public wrappers at the bottom pick one according to
:data:`dipole_coupling._accel.USE_NUMBA`.  Both forms must agree to
rounding; ``tests/test_kernels.py`` holds them to that.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

FOUR_PI = 4.0 * math.pi


# --------------------------------------------------------------------------
# Green's function fill over segment centres
# --------------------------------------------------------------------------

@njit
def _green_fill_numba(z, x, element, radius, k, scale, unit):
    n = z.shape[0]
    out = np.empty((n, n), dtype=np.complex128)
    for m in range(n):
        out[m, m] = scale * np.exp(-1j * k * radius) / (radius / unit)
        for q in range(m + 1, n):
            dz = z[m] - z[q]
            dx = x[m] - x[q]
            r = math.sqrt(dz * dz + dx * dx)
            v = scale * np.exp(-1j * k * r) / (r / unit)
            out[m, q] = v
            out[q, m] = v
    return out


def _green_fill_numpy(z, x, element, radius, k, scale, unit):
    dz = z[:, None] - z[None, :]
    dx = x[:, None] - x[None, :]
    r = np.sqrt(dz * dz + dx * dx)
    np.fill_diagonal(r, radius)
    out = scale * np.exp(-1j * k * r) / (r / unit)
    # upper triangle mirrored so the result is symmetric bit for bit
    iu = np.triu_indices(len(z), 1)
    out[iu[1], iu[0]] = out[iu]
    return out


def green_fill(z, x, element, radius, k, scale, unit):
    """Green's values between segment centres.

    Entry ``(m, q)`` is ``scale * exp(-j k R) / (R / unit)`` with ``R`` the
    centre distance, and ``R = radius`` on the diagonal.  With ``unit = 1``
    and ``scale = 1 / (4 pi)`` this is the free-space kernel.
    """
    fn = _green_fill_numba if _accel.USE_NUMBA else _green_fill_numpy
    return fn(np.ascontiguousarray(z, dtype=np.float64),
              np.ascontiguousarray(x, dtype=np.float64),
              np.ascontiguousarray(element, dtype=np.int64),
              float(radius), float(k), float(scale), float(unit))


# --------------------------------------------------------------------------
# Segment-pair shape moments of the thin-wire kernel
# --------------------------------------------------------------------------
#
# K[s, t, a, b] = int_s int_t phi_a(u) phi_b(v) G(R) dz dz'
#   phi_0 = 1 - u (falling half of a triangle), phi_1 = u (rising half)
#   R = sqrt((z - z')^2 + rho^2), rho = wire radius on the same dipole,
#   else the axis separation.
# Outer integral: Gauss-Legendre.  Inner integral: the 1/R part in closed
# form, (exp(-jkR) - 1)/R by the same Gauss rule.


@njit
def _segment_moments_numba(z0, x, element, dz, radius, k, nodes, weights):
    ns = z0.shape[0]
    nq = nodes.shape[0]
    out = np.zeros((ns, ns, 2, 2), dtype=np.complex128)
    for s in range(ns):
        for t in range(ns):
            if element[s] == element[t]:
                rho = radius
            else:
                rho = abs(x[s] - x[t])
            rho2 = rho * rho
            k00 = 0j
            k01 = 0j
            k10 = 0j
            k11 = 0j
            for p in range(nq):
                zo = z0[s] + dz * nodes[p]
                a = z0[t] - zo
                b = a + dz
                i0 = math.asinh(b / rho) - math.asinh(a / rho)
                i1 = math.sqrt(b * b + rho2) - math.sqrt(a * a + rho2)
                m0 = i0 + 0j
                m1 = (i1 - a * i0) / dz + 0j
                for r in range(nq):
                    u = a + dz * nodes[r]
                    rr = math.sqrt(u * u + rho2)
                    f = (np.exp(-1j * k * rr) - 1.0) / rr
                    m0 += dz * weights[r] * f
                    m1 += dz * weights[r] * nodes[r] * f
                m0 /= FOUR_PI
                m1 /= FOUR_PI
                wo = dz * weights[p]
                up = nodes[p]
                fall = m0 - m1
                k00 += wo * (1.0 - up) * fall
                k01 += wo * (1.0 - up) * m1
                k10 += wo * up * fall
                k11 += wo * up * m1
            out[s, t, 0, 0] = k00
            out[s, t, 0, 1] = k01
            out[s, t, 1, 0] = k10
            out[s, t, 1, 1] = k11
    return out


def _segment_moments_numpy(z0, x, element, dz, radius, k, nodes, weights,
                           chunk=64):
    ns = z0.shape[0]
    out = np.empty((ns, ns, 2, 2), dtype=np.complex128)
    shape_o = np.stack([1.0 - nodes, nodes])            # (2, q)
    for lo in range(0, ns, chunk):
        sl = slice(lo, min(lo + chunk, ns))
        same = element[sl, None] == element[None, :]
        rho = np.where(same, radius, np.abs(x[sl, None] - x[None, :]))
        rho = rho[:, :, None]                            # (c, ns, 1)
        zo = z0[sl, None] + dz * nodes[None, :]          # (c, q)
        a = z0[None, :, None] - zo[:, None, :]           # (c, ns, q)
        b = a + dz
        i0 = np.arcsinh(b / rho) - np.arcsinh(a / rho)
        i1 = np.sqrt(b * b + rho * rho) - np.sqrt(a * a + rho * rho)
        m0 = i0.astype(np.complex128)
        m1 = ((i1 - a * i0) / dz).astype(np.complex128)
        u = a[..., None] + dz * nodes                    # (c, ns, q, q)
        rr = np.sqrt(u * u + rho[..., None] ** 2)
        f = (np.exp(-1j * k * rr) - 1.0) / rr
        m0 = m0 + dz * (f @ weights)
        m1 = m1 + dz * (f @ (weights * nodes))
        m0 /= FOUR_PI
        m1 /= FOUR_PI
        inner = np.stack([m0 - m1, m1], axis=-1)         # (c, ns, q, 2)
        outer = (dz * weights)[None, :] * shape_o        # (2, q)
        out[sl] = np.einsum("ap,stpb->stab", outer, inner)
    return out


def segment_moments(z0, x, element, dz, radius, k, nodes, weights):
    """Shape moments ``K[s, t, a, b]`` for every segment pair.

    ``z0`` holds segment start coordinates along the dipole axis, ``x`` the
    element position of each segment.  The result is symmetrised so that
    ``K[s, t, a, b] == K[t, s, b, a]`` exactly.
    """
    args = (np.ascontiguousarray(z0, dtype=np.float64),
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(element, dtype=np.int64),
            float(dz), float(radius), float(k),
            np.ascontiguousarray(nodes, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64))
    raw = (_segment_moments_numba if _accel.USE_NUMBA
           else _segment_moments_numpy)(*args)
    return 0.5 * (raw + raw.transpose(1, 0, 3, 2))


# --------------------------------------------------------------------------
# LSTM layer over a batch of sequences
# --------------------------------------------------------------------------
#
# Gate layout along the 4H axis: forget, input, output, candidate.
# xs: (T, B, D); wx: (D, 4H); wh: (H, 4H); b: (4H,)
# Returns hidden states (T, B, H), cell states (T, B, H), gate activations
# (T, B, 4H) for the backward pass.


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


@njit
def _lstm_forward_numba(xs, wx, wh, b):
    nt, nb, _ = xs.shape
    nh = wh.shape[0]
    hs = np.zeros((nt, nb, nh))
    cs = np.zeros((nt, nb, nh))
    gates = np.zeros((nt, nb, 4 * nh))
    h = np.zeros((nb, nh))
    c = np.zeros((nb, nh))
    for t in range(nt):
        pre = np.dot(xs[t], wx) + np.dot(h, wh)
        for i in range(nb):
            for j in range(nh):
                f = 0.5 * (1.0 + math.tanh(0.5 * (pre[i, j] + b[j])))
                g = 0.5 * (1.0 + math.tanh(0.5 * (pre[i, nh + j] + b[nh + j])))
                o = 0.5 * (1.0 + math.tanh(
                    0.5 * (pre[i, 2 * nh + j] + b[2 * nh + j])))
                cc = math.tanh(pre[i, 3 * nh + j] + b[3 * nh + j])
                c[i, j] = f * c[i, j] + g * cc
                h[i, j] = o * math.tanh(c[i, j])
                gates[t, i, j] = f
                gates[t, i, nh + j] = g
                gates[t, i, 2 * nh + j] = o
                gates[t, i, 3 * nh + j] = cc
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def _lstm_forward_numpy(xs, wx, wh, b):
    nt, nb, _ = xs.shape
    nh = wh.shape[0]
    hs = np.zeros((nt, nb, nh))
    cs = np.zeros((nt, nb, nh))
    gates = np.zeros((nt, nb, 4 * nh))
    h = np.zeros((nb, nh))
    c = np.zeros((nb, nh))
    proj = xs @ wx + b
    for t in range(nt):
        pre = proj[t] + h @ wh
        sg = _sigmoid(pre[:, :3 * nh])
        cc = np.tanh(pre[:, 3 * nh:])
        c = sg[:, :nh] * c + sg[:, nh:2 * nh] * cc
        h = sg[:, 2 * nh:] * np.tanh(c)
        gates[t, :, :3 * nh] = sg
        gates[t, :, 3 * nh:] = cc
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


@njit
def _lstm_backward_numba(xs, wx, wh, hs, cs, gates, dhs):
    nt, nb, nd = xs.shape
    nh = wh.shape[0]
    dxs = np.zeros((nt, nb, nd))
    dwx = np.zeros(wx.shape)
    dwh = np.zeros(wh.shape)
    db = np.zeros(4 * nh)
    dh = np.zeros((nb, nh))
    dc = np.zeros((nb, nh))
    dpre = np.zeros((nb, 4 * nh))
    whT = np.ascontiguousarray(wh.T)
    wxT = np.ascontiguousarray(wx.T)
    for t in range(nt - 1, -1, -1):
        for i in range(nb):
            for j in range(nh):
                f = gates[t, i, j]
                g = gates[t, i, nh + j]
                o = gates[t, i, 2 * nh + j]
                cc = gates[t, i, 3 * nh + j]
                ct = cs[t, i, j]
                cprev = cs[t - 1, i, j] if t > 0 else 0.0
                tc = math.tanh(ct)
                dht = dh[i, j] + dhs[t, i, j]
                dct = dc[i, j] + dht * o * (1.0 - tc * tc)
                dpre[i, j] = dct * cprev * f * (1.0 - f)
                dpre[i, nh + j] = dct * cc * g * (1.0 - g)
                dpre[i, 2 * nh + j] = dht * tc * o * (1.0 - o)
                dpre[i, 3 * nh + j] = dct * g * (1.0 - cc * cc)
                dc[i, j] = dct * f
        hprev = hs[t - 1] if t > 0 else np.zeros((nb, nh))
        dwx += np.dot(np.ascontiguousarray(xs[t].T), dpre)
        dwh += np.dot(np.ascontiguousarray(hprev.T), dpre)
        for j in range(4 * nh):
            for i in range(nb):
                db[j] += dpre[i, j]
        dxs[t] = np.dot(dpre, wxT)
        dh = np.dot(dpre, whT)
    return dxs, dwx, dwh, db


def _lstm_backward_numpy(xs, wx, wh, hs, cs, gates, dhs):
    nt, nb, nd = xs.shape
    nh = wh.shape[0]
    dpres = np.empty((nt, nb, 4 * nh))
    dh = np.zeros((nb, nh))
    dc = np.zeros((nb, nh))
    for t in range(nt - 1, -1, -1):
        f = gates[t, :, :nh]
        g = gates[t, :, nh:2 * nh]
        o = gates[t, :, 2 * nh:3 * nh]
        cc = gates[t, :, 3 * nh:]
        cprev = cs[t - 1] if t > 0 else np.zeros((nb, nh))
        tc = np.tanh(cs[t])
        dht = dh + dhs[t]
        dct = dc + dht * o * (1.0 - tc * tc)
        dpre = dpres[t]
        dpre[:, :nh] = dct * cprev * f * (1.0 - f)
        dpre[:, nh:2 * nh] = dct * cc * g * (1.0 - g)
        dpre[:, 2 * nh:3 * nh] = dht * tc * o * (1.0 - o)
        dpre[:, 3 * nh:] = dct * g * (1.0 - cc * cc)
        dc = dct * f
        dh = dpre @ wh.T
    hprev = np.concatenate([np.zeros((1, nb, nh)), hs[:-1]], axis=0)
    dwx = np.einsum("tbd,tbg->dg", xs, dpres)
    dwh = np.einsum("tbh,tbg->hg", hprev, dpres)
    db = dpres.sum(axis=(0, 1))
    dxs = dpres @ wx.T
    return dxs, dwx, dwh, db


def lstm_forward(xs, wx, wh, b):
    fn = _lstm_forward_numba if _accel.USE_NUMBA else _lstm_forward_numpy
    return fn(np.ascontiguousarray(xs, dtype=np.float64),
              np.ascontiguousarray(wx), np.ascontiguousarray(wh),
              np.ascontiguousarray(b))


def lstm_backward(xs, wx, wh, hs, cs, gates, dhs):
    fn = _lstm_backward_numba if _accel.USE_NUMBA else _lstm_backward_numpy
    return fn(np.ascontiguousarray(xs, dtype=np.float64),
              np.ascontiguousarray(wx), np.ascontiguousarray(wh),
              hs, cs, gates, np.ascontiguousarray(dhs, dtype=np.float64))


# --------------------------------------------------------------------------
# Valid-mode 2-D correlation with a small kernel, batched over leading axis
# --------------------------------------------------------------------------

@njit
def _conv2d_numba(x, w):
    nb, n0, n1 = x.shape
    k0, k1 = w.shape
    o0 = n0 - k0 + 1
    o1 = n1 - k1 + 1
    out = np.zeros((nb, o0, o1))
    for b in range(nb):
        for i in range(o0):
            for j in range(o1):
                acc = 0.0
                for u in range(k0):
                    for v in range(k1):
                        acc += w[u, v] * x[b, i + u, j + v]
                out[b, i, j] = acc
    return out


def _conv2d_numpy(x, w):
    win = np.lib.stride_tricks.sliding_window_view(x, w.shape, axis=(1, 2))
    return np.einsum("bijuv,uv->bij", win, w)


def conv2d_batch(x, w):
    fn = _conv2d_numba if _accel.USE_NUMBA else _conv2d_numpy
    return fn(np.ascontiguousarray(x, dtype=np.float64),
              np.ascontiguousarray(w, dtype=np.float64))
