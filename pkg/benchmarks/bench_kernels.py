"""Time the numba and numpy versions of every hot kernel side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both paths are called directly, so the environment switch does not matter
here.  Each row also reports the largest absolute difference between the
two outputs.
"""
import argparse
import json
import time

import numpy as np

from dipole_coupling import _kernels
from dipole_coupling.geometry import ArrayGeometry, half_wave_dipole, wavelength
from dipole_coupling.mom import quadrature_rule


def _time(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation for the numba path
    best = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best.append(time.perf_counter() - t0)
    return float(np.median(best)), out


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _array(m, f=3e9):
    lam = wavelength(f)
    return ArrayGeometry.from_spacings(half_wave_dipole(f), [0.3 * lam] * (m - 1), f)


def cases():
    rng = np.random.default_rng(0)
    out = []
    for m in (2, 10, 30):
        g = _array(m)
        z, x, el = g.segment_centers()
        out.append((f"green_fill M={m}", _kernels._green_fill_numba,
                    _kernels._green_fill_numpy,
                    (z, x, el.astype(np.int64), g.dipole.radius_m, g.k, 1.0, 1.0)))
    nodes, weights = quadrature_rule(8)
    for m in (2, 10):
        g = _array(m)
        z0, x, el = g.segment_starts()
        out.append((f"segment_moments M={m}", _kernels._segment_moments_numba,
                    _kernels._segment_moments_numpy,
                    (z0, x, el.astype(np.int64), g.dipole.segment_length,
                     g.dipole.radius_m, g.k, nodes, weights)))
    for t, b, d, h in ((30, 80, 94, 64), (30, 800, 19, 32)):
        xs = rng.normal(size=(t, b, d))
        wx = rng.normal(scale=0.2, size=(d, 4 * h))
        wh = rng.normal(scale=0.2, size=(h, 4 * h))
        bias = rng.normal(scale=0.1, size=4 * h)
        out.append((f"lstm_forward T={t} B={b} H={h}", _kernels._lstm_forward_numba,
                    _kernels._lstm_forward_numpy, (xs, wx, wh, bias)))
        hs, cs, gates = _kernels._lstm_forward_numpy(xs, wx, wh, bias)
        dhs = rng.normal(size=hs.shape)
        out.append((f"lstm_backward T={t} B={b} H={h}", _kernels._lstm_backward_numba,
                    _kernels._lstm_backward_numpy, (xs, wx, wh, hs, cs, gates, dhs)))
    out.append(("conv2d 80x32x32 k3", _kernels._conv2d_numba, _kernels._conv2d_numpy,
                (rng.normal(size=(80, 32, 32)), rng.normal(size=(3, 3)))))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)
    rows = []
    print(f"{'kernel':36s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    for name, fast, ref, fargs in cases():
        t_nb, a = _time(fast, fargs, args.repeat)
        t_np, b = _time(ref, fargs, args.repeat)
        row = {"kernel": name, "numba_seconds": t_nb, "numpy_seconds": t_np,
               "speedup": t_np / t_nb, "max_abs_diff": _diff(a, b)}
        rows.append(row)
        print(f"{name:36s} {t_nb:10.4f} {t_np:10.4f} {row['speedup']:8.2f} "
              f"{row['max_abs_diff']:10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
