"""Acceptance criteria 1-11.

Each test records a one-line verdict through ``record``; the lines are
printed in the terminal summary (see conftest.py) and the test then asserts.
"""
import time

import numpy as np
import pytest

from conftest import CASE_F, record
from gradcheck import TOL, numeric_grad, rel_error

from dipole_coupling.cli import FIG12, SYNTH_DIPOLE, TABLE2, benchmark_report
from dipole_coupling.fusion import FusionBlock, fuse
from dipole_coupling.geometry import (ArrayGeometry, DipoleSpec, half_wave_dipole,
                                      wavelength)
from dipole_coupling.mom import MoMSystem, assemble_impedance, port_reduce, solve_ports
from dipole_coupling.nn.core import (Dense, conv2d, conv2d_backward, mse, mse_grad,
                                     softmax, softmax_backward)
from dipole_coupling.nn.lstm import StackedLSTM
from dipole_coupling.pann import PannConfig, train_pann
from dipole_coupling.pclstm import build_kernel, predict_batch, relative_error

pytestmark = pytest.mark.slow


def _rel(a, b):
    return abs(a - b) / abs(b)


# 1 -----------------------------------------------------------------------------------

def test_criterion_01_pann_convergence():
    t0 = time.perf_counter()
    _, hist = train_pann(PannConfig(seed=42, segments=16))
    secs = time.perf_counter() - t0
    final = hist[-1]["L_total"]
    ok = len(hist) <= 1200 and final <= 1e-8 and secs <= 120
    record(1, ok, f"PANN L_total {final:.3g} after {len(hist)} epochs in {secs:.1f} s "
                  "(need <= 1e-8, <= 1200 epochs, <= 120 s)")
    assert ok


# 2 -----------------------------------------------------------------------------------

def test_criterion_02_adaptive_loss_benefit():
    rows = []
    for seed in range(42, 47):
        ad = train_pann(PannConfig(seed=seed))[1][-1]
        fx = train_pann(PannConfig(seed=seed, adaptive=False))[1][-1]
        rows.append((seed, ad["mse"], fx["mse"], ad["L_total"], fx["L_total"]))
    wins = sum(a <= f for _, a, f, _, _ in rows)
    runs = "; ".join(f"seed {s}: mse {a:.2g} vs {f:.2g} (L_total {la:.2g} vs {lf:.2g})"
                     for s, a, f, la, lf in rows)
    ok = wins >= 4
    record(2, ok, f"adaptive <= fixed in {wins}/5 runs (need >= 4). {runs}")
    assert ok


# 3 -----------------------------------------------------------------------------------

def test_criterion_03_mom_table_two():
    dip = half_wave_dipole(CASE_F, 0.002, 16)
    lam = wavelength(CASE_F)
    parts, ok = [], True
    for name, ref in TABLE2.items():
        t0 = time.perf_counter()
        z = solve_ports(ArrayGeometry(dip, (0.0, ref["spacing_lambda"] * lam), CASE_F)).entries
        secs = time.perf_counter() - t0
        e11, e12 = _rel(z[0, 0], ref["z11"]), _rel(z[0, 1], ref["z12"])
        ok &= e11 <= 0.15 and e12 <= 0.15 and secs <= 10
        parts.append(f"{name} Z11 {e11:.1%} Z12 {e12:.1%} in {secs:.2f} s")
    record(3, ok, "; ".join(parts) + " (need <= 15%, <= 10 s)")
    assert ok


# 4 -----------------------------------------------------------------------------------

def _block_solve(z, ports):
    t, p = z.shape[0], len(ports)
    m = np.zeros((p, t))
    m[np.arange(p), ports] = 1
    block = np.zeros((t + p, t + p), complex)
    block[:t, :t], block[:t, t:], block[t:, :t] = z, -m.T, m
    rhs = np.zeros((t + p, p), complex)
    rhs[t:] = np.eye(p)
    return np.linalg.solve(block, rhs)[t:]


def test_criterion_04_mna_equivalence():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        t = int(rng.integers(1, 13))
        p = int(rng.integers(1, min(3, t) + 1))
        a = rng.normal(size=(t, t)) + 1j * rng.normal(size=(t, t))
        z = a + a.T + 2 * t * np.eye(t)
        ports = rng.choice(t, size=p, replace=False)
        pm = np.zeros((p, t))
        pm[np.arange(p), ports] = 1
        got = port_reduce(MoMSystem(z, pm, np.ones(p, complex), None)).entries
        ref = _block_solve(z, ports)
        worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    ok = worst <= 1e-10
    record(4, ok, f"max relative deviation {worst:.2g} over 100 instances (need <= 1e-10)")
    assert ok


# 5 -----------------------------------------------------------------------------------

def _asym(z):
    return np.abs(z - z.T).max() / np.abs(z).max()


def test_criterion_05_reciprocity():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        f = rng.uniform(1e9, 6e9)
        m = int(rng.integers(1, 5))
        n = int(rng.choice([4, 6, 8, 12, 16]))
        sp = rng.uniform(0.05, 1.0, size=m - 1) * wavelength(f)
        sysm = assemble_impedance(ArrayGeometry.from_spacings(
            half_wave_dipole(f, rng.uniform(0.001, 0.005), n), sp, f))
        worst = max(worst, _asym(sysm.impedance), _asym(port_reduce(sysm).entries))
    ok = worst <= 1e-10
    record(5, ok, f"max relative asymmetry {worst:.2g} over 50 geometries (need <= 1e-10)")
    assert ok


# 6 -----------------------------------------------------------------------------------

def _grad_dense(rng):
    layer = Dense(rng.normal(size=(4, 5)), rng.normal(size=4), "tanh")
    x, r = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))

    def f():
        return float(np.sum(r * layer.forward(x)))
    f()
    layer.zero_grad()
    dx = layer.backward(r)
    return max([rel_error(layer.grads[k], numeric_grad(f, layer.params[k])) for k in "wb"]
               + [rel_error(dx, numeric_grad(f, x))])


def _grad_conv(rng):
    x, k, r = rng.normal(size=(2, 6, 5)), rng.normal(size=(3, 3)), rng.normal(size=(2, 4, 3))

    def f():
        return float(np.sum(r * conv2d(x, k)))
    dx, dk = conv2d_backward(x, k, r)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dk, numeric_grad(f, k)))


def _grad_softmax(rng):
    z, r = rng.normal(size=(3, 5)) * 2, rng.normal(size=(3, 5))

    def f():
        return float(np.sum(r * softmax(z)))
    return rel_error(softmax_backward(softmax(z), r), numeric_grad(f, z))


def _grad_fusion(rng):
    blk = FusionBlock.init(rng, 4)
    for layer in (blk.map_r, blk.map_i, blk.attn):
        layer.params["b"][:] = rng.normal(scale=0.3, size=layer.n_out)
    xr, xi, r = (rng.normal(size=(2, 4, 4)) for _ in range(3))

    def f():
        return float(np.sum(r * blk.forward(xr, xi).matrix))
    f()
    blk.zero_grad()
    dxr, dxi = blk.backward(r)
    errs = [rel_error(layer.grads[k], numeric_grad(f, layer.params[k]))
            for layer in (blk.map_r, blk.map_i, blk.attn) for k in "wb"]
    return max(errs + [rel_error(dxr, numeric_grad(f, xr)), rel_error(dxi, numeric_grad(f, xi))])


def _grad_lstm(rng):
    stack = StackedLSTM.init(rng, 3, 8, 2)
    for layer in stack.layers:
        layer.params["b"][:] = rng.normal(scale=0.5, size=32)
    xs, r = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 2, 8))

    def f():
        return float(np.sum(r * stack.forward(xs)))
    f()
    for layer in stack.layers:
        layer.zero_grad()
    dxs = stack.backward(r)
    errs = [rel_error(layer.grads[k], numeric_grad(f, layer.params[k]))
            for layer in stack.layers for k in ("wx", "wh", "b")]
    return max(errs + [rel_error(dxs, numeric_grad(f, xs))])


def _grad_head(rng):
    stack = StackedLSTM.init(rng, 3, 5, 1)
    head = Dense.init(rng, 5, 6)
    head.params["b"][:] = rng.normal(size=6)
    xs, y = rng.normal(size=(4, 2, 3)), rng.normal(size=(2, 6))

    def f():
        return mse(head.forward(stack.forward(xs)[-1]), y)
    out = head.forward(stack.forward(xs)[-1])
    head.zero_grad()
    stack.layers[0].zero_grad()
    dhs = np.zeros((4, 2, 5))
    dhs[-1] = head.backward(mse_grad(out, y))
    stack.backward(dhs)
    return max([rel_error(head.grads[k], numeric_grad(f, head.params[k])) for k in "wb"]
               + [rel_error(stack.layers[0].grads["wx"],
                            numeric_grad(f, stack.layers[0].params["wx"]))])


def test_criterion_06_gradient_suite():
    checks = {"dense": _grad_dense, "conv": _grad_conv, "softmax": _grad_softmax,
              "fusion": _grad_fusion, "lstm": _grad_lstm, "head": _grad_head}
    worst = {name: max(fn(np.random.default_rng(seed)) for seed in range(20))
             for name, fn in checks.items()}
    ok = max(worst.values()) <= TOL
    record(6, ok, "max relative gradient error over 20 seeds: "
                  + ", ".join(f"{k} {v:.1g}" for k, v in worst.items()) + f" (need <= {TOL})")
    assert ok


# 7 -----------------------------------------------------------------------------------

def test_criterion_07_two_port_learning(case_dataset, case_training):
    bundle, hist = case_training.bundle, case_training.history
    final = hist[-1]["loss"]
    hold = case_dataset.holdout
    preds = predict_batch(bundle, [s.geometry for s in hold])
    errs = [relative_error(p, s.zport) for p, s in zip(preds, hold)]
    secs = case_training.seconds
    ok = final <= 5e-3 and len(hold) == 20 and max(errs) <= 0.05 and secs <= 900
    record(7, ok, f"training loss {final:.3g}, holdout relative error max {max(errs):.2%} "
                  f"mean {np.mean(errs):.2%} on {len(hold)} unseen spacings, {secs:.0f} s "
                  "(need <= 5e-3, <= 5%, <= 900 s)")
    assert ok


# 8 -----------------------------------------------------------------------------------

def test_criterion_08_large_array_synthesis(synth_run):
    from dipole_coupling.synthesis import holdout_errors
    parts, ok = [], True
    for m, ref in FIG12.items():
        loss = synth_run["histories"][m][-1]["loss"]
        _, pooled = holdout_errors(synth_run["bundle"], synth_run["datasets"][m])
        ok &= loss <= ref["loss_tol"] and pooled <= ref["rms_tol"]
        parts.append(f"M={m} loss {loss:.3g} (<= {ref['loss_tol']:g}) "
                     f"holdout nRMS {pooled:.2%} (<= {ref['rms_tol']:.0%})")
    secs = synth_run["wall_seconds"]
    ok &= secs <= 1800
    record(8, ok, "; ".join(parts) + f"; {secs:.0f} s (<= 1800 s)")
    assert ok


# 9 -----------------------------------------------------------------------------------

def test_criterion_09_mutual_coupling_cutoff():
    f = SYNTH_DIPOLE["frequency_hz"]
    lam = wavelength(f)
    dip = DipoleSpec(SYNTH_DIPOLE["length_m"], SYNTH_DIPOLE["radius_m"],
                     SYNTH_DIPOLE["segments"])
    d = np.linspace(0.1, 1.0, 19)
    z = [solve_ports(ArrayGeometry(dip, (0.0, s * lam), f)).entries for s in d]
    ratio = np.array([abs(e[0, 1]) / abs(e[0, 0]) for e in z])
    mag = np.array([abs(e[0, 1]) for e in z])
    smooth = np.convolve(mag, np.ones(3) / 3, mode="valid")
    monotone = bool(np.all(np.diff(smooth) <= 0))
    far = ratio[d > 0.6 + 1e-9]
    ok = monotone and bool(np.all(far < 0.10))
    record(9, ok, f"smoothed |Z12| non-increasing: {monotone}; |Z12|/|Z11| beyond 0.6 lambda "
                  f"ranges {far.min():.3f} to {far.max():.3f} (need < 0.10)")
    assert ok


# 10 ----------------------------------------------------------------------------------

def test_criterion_10_inference_faster_than_mom(synth_run):
    rep = benchmark_report(synth_run["bundle"], repeats=3)
    r30 = rep["30"]
    ok = r30["inference_seconds"] < r30["mom_solve_seconds"]
    record(10, ok, "M=30 MoM {:.3f} s, inference {:.4f} s, ratio {} "
                   "(M=2 ratio {}, M=10 ratio {}); published 7x is context only".format(
                       r30["mom_solve_seconds"], r30["inference_seconds"], r30["ratio"],
                       rep["2"]["ratio"], rep["10"]["ratio"]))
    assert ok


# 11 ----------------------------------------------------------------------------------

def test_criterion_11_structural_properties():
    simplex = convex = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        blk = FusionBlock.init(rng, 6)
        blk.attn.params["w"] *= rng.uniform(0.1, 30)
        xr, xi = rng.normal(size=(3, 6, 6)) * 10, rng.normal(size=(3, 6, 6))
        out = fuse(xr, xi, blk)
        simplex = max(simplex, np.abs(out.alpha_r + out.alpha_i - 1).max())
        lo = np.minimum(out.mapped_r, out.mapped_i)
        hi = np.maximum(out.mapped_r, out.mapped_i)
        convex = max(convex, (lo - out.matrix).max(), (out.matrix - hi).max())
    ksum, krot = 0.0, True
    for side in (3, 5, 7, 9):
        for decay in (0.1, 1.0, 5.0):
            w = build_kernel(side, decay).weights
            ksum = max(ksum, abs(w.sum() - 1))
            krot &= bool(np.array_equal(w, w[::-1, ::-1]))
    ok = simplex <= 1e-12 and convex <= 1e-12 and ksum <= 1e-12 and krot
    record(11, ok, f"alpha simplex error {simplex:.1g}, convexity overshoot {max(convex, 0):.1g}, "
                   f"kernel sum error {ksum:.1g}, 180-degree symmetric {krot}")
    assert ok
