"""Command-line entry point.

Exit codes: 0 success, 2 user error, 3 numerical failure, 4 training
divergence.  Every command writes ``manifest.json`` into its output
directory with the fully resolved configuration; passing that manifest back
through ``--config`` reruns the command with identical settings.

CSV outputs
-----------
zport.csv          p,q,re,im (ohms)
s_matrix.csv       p,q,re,im
sweep.csv          f_hz then s/z upper-triangle entries as <name>_re,<name>_im
loss_history.csv   pann: epoch,L_r,L_i,w_r,w_i,L_total
                   twoport: epoch,loss
                   synthesis: epoch,loss_m<M>... (one column per array size)
synthesis.csv      index,re_or_im,value (real parts first, then imaginary)
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__, _accel
from .errors import (ConstraintError, DomainError, ShapeError, SolverError,
                     TrainingError)
from .geometry import ArrayGeometry, DipoleSpec, half_wave_dipole, wavelength
from .nn import checkpoint

log = logging.getLogger("dipole_coupling")

EXIT_OK, EXIT_USER, EXIT_NUMERIC, EXIT_DIVERGED = 0, 2, 3, 4

# Reference values used by ``reproduce``.
TABLE1 = {"pann_mse": 1e-13, "epochs": 1200, "tolerance": 1e-8}
TABLE2 = {
    "case1": {"spacing_lambda": 0.052, "z11": complex(87.11, 39.20),
              "z12": complex(85.42, 18.69)},
    "case2": {"spacing_lambda": 0.206, "z11": complex(80.55, 41.58),
              "z12": complex(53.46, -30.06)},
}
TABLE2_TOL = 0.15
FIG12 = {10: {"loss": 1.1e-3, "loss_tol": 5e-3, "rms_tol": 0.05, "samples": 300},
         30: {"loss": 3e-3, "loss_tol": 1e-2, "rms_tol": 0.08, "samples": 100}}
FIG12_HOLDOUT = 20

# Defaults for the synthesis dipole (6.25 cm long, 0.05 cm radius).
SYNTH_DIPOLE = {"length_m": 0.0625, "radius_m": 0.0005, "segments": 16,
                "frequency_hz": 2.4e9}

DEFAULTS = {
    "seed": 42,
    "points": 8,
    "ref_ohms": 50.0,
    "workers": 1,
    "epochs": None,
    "learning_rate": None,
    "final_learning_rate": None,
    "alpha": 0.5,
    "fixed_weights": False,
    "segments": 16,
    "kernel_side": 3,
    "kernel_decay": 1.0,
    "n_samples": 100,
    "elements": 2,
    "frequency_hz": SYNTH_DIPOLE["frequency_hz"],
    "length_m": SYNTH_DIPOLE["length_m"],
    "radius_m": SYNTH_DIPOLE["radius_m"],
    "d_min": 0.1,
    "d_max": 0.5,
    "f_start": None,
    "f_stop": None,
    "n_points": 11,
}


class UserError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _resolve(args, keys):
    """CLI flags > --config file > defaults."""
    cfg = {k: DEFAULTS.get(k) for k in keys}
    if getattr(args, "config", None):
        doc = _read_json(args.config)
        doc = doc.get("config", doc)
        for k in keys:
            if k in doc:
                cfg[k] = doc[k]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            cfg[k] = v
    return cfg


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UserError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: malformed JSON ({exc})") from exc


def _outdir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(out, name, text):
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _manifest(out, command, config, outputs, extra=None):
    doc = {"command": command, "version": __version__, "backend": _accel.backend(),
           "config": config, "outputs": sorted(os.path.basename(p) for p in outputs)}
    if extra:
        doc.update(extra)
    _write(out, "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _load_geometry(path):
    return ArrayGeometry.from_dict(_read_json(path))


def _load_bundle(path, kind):
    if not path:
        raise UserError(f"--bundle is required ({kind} checkpoint)")
    doc = _read_json(path)
    try:
        if doc.get("schema_version") != checkpoint.SCHEMA_VERSION:
            raise UserError(f"{path}: unsupported checkpoint schema")
        found = doc.get("extra", {}).get("kind")
        if found != kind:
            raise UserError(f"{path}: expected a {kind} checkpoint, found {found!r}")
    except AttributeError as exc:
        raise UserError(f"{path}: not a checkpoint") from exc
    if kind == "twoport":
        from .pclstm import ModelBundle
        return ModelBundle.from_doc(doc), checkpoint.digest(doc)
    if kind == "synthesis":
        from .synthesis import SynthesisBundle
        return SynthesisBundle.from_doc(doc), checkpoint.digest(doc)
    from .pann import PannModel
    return PannModel.from_doc(doc), checkpoint.digest(doc)


def _dipole(cfg):
    return DipoleSpec(float(cfg["length_m"]), float(cfg["radius_m"]), int(cfg["segments"]))


def _constraints(cfg):
    from .synthesis import SpacingConstraints
    return SpacingConstraints(d1_min=float(cfg["d_min"]), d1_max=float(cfg["d_max"]),
                              pair_sum_min=max(0.6, float(cfg["d_max"])))


def _cplx(z):
    return [float(z.real), float(z.imag)]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_mom_solve(args):
    from .mom import solve_ports, z_to_s
    cfg = _resolve(args, ["points", "ref_ohms"])
    cfg["geometry"] = args.geometry
    geom = _load_geometry(args.geometry)
    zp = solve_ports(geom, int(cfg["points"]))
    s = z_to_s(zp, float(cfg["ref_ohms"]))
    out = _outdir(args)
    from .mom import _matrix_csv
    files = [_write(out, "zport.csv", zp.to_csv()),
             _write(out, "zport.json", zp.to_json()),
             _write(out, "s_matrix.csv", _matrix_csv(s)),
             _write(out, "s_matrix.json", json.dumps(
                 {"ref_ohms": cfg["ref_ohms"],
                  "s": [[_cplx(v) for v in row] for row in s]}))]
    _manifest(out, "mom-solve", cfg, files, {"geometry": geom.to_dict()})
    print(zp.to_json())
    return EXIT_OK


def cmd_sweep(args):
    from .mom import frequency_sweep, sweep_csv
    cfg = _resolve(args, ["points", "ref_ohms", "f_start", "f_stop", "n_points", "workers"])
    cfg["geometry"] = args.geometry
    geom = _load_geometry(args.geometry)
    if cfg["f_start"] is None or cfg["f_stop"] is None:
        raise UserError("--f-start and --f-stop are required")
    sw = frequency_sweep(geom, float(cfg["f_start"]), float(cfg["f_stop"]),
                         int(cfg["n_points"]), float(cfg["ref_ohms"]),
                         int(cfg["workers"]), int(cfg["points"]))
    out = _outdir(args)
    files = [_write(out, "sweep.csv", sweep_csv(sw))]
    _manifest(out, "sweep", cfg, files, {"geometry": geom.to_dict()})
    return EXIT_OK


def _train_pann(args, out):
    from .pann import PannConfig, train_pann
    cfg = _resolve(args, ["seed", "epochs", "learning_rate", "final_learning_rate",
                          "alpha", "fixed_weights", "segments"])
    base = PannConfig()
    pc = PannConfig(epochs=base.epochs if cfg["epochs"] is None else int(cfg["epochs"]),
                    learning_rate=cfg["learning_rate"] or base.learning_rate,
                    final_learning_rate=cfg["final_learning_rate"] or base.final_learning_rate,
                    seed=int(cfg["seed"]), alpha=float(cfg["alpha"]),
                    adaptive=not cfg["fixed_weights"], segments=int(cfg["segments"]))
    model, hist = train_pann(pc)
    rows = [[h["epoch"], h["L_r"], h["L_i"], h["w_r"], h["w_i"], h["L_total"]] for h in hist]
    last = hist[-1]["L_total"] if hist else None
    doc = model.to_doc(seed=pc.seed, epoch=len(hist), loss=last)
    files = [_write(out, "checkpoint.json", checkpoint.dumps(doc)),
             _write(out, "loss_history.csv",
                    _csv(["epoch", "L_r", "L_i", "w_r", "w_i", "L_total"], rows))]
    final = {"L_total": last, "mse": hist[-1]["mse"] if hist else None}
    _manifest(out, "train pann", dict(cfg, resolved=pc.to_dict()), files, {"final": final})
    print(json.dumps(final))
    return EXIT_OK


def _two_port_dataset(cfg, args):
    from .synthesis import Dataset, gen_dataset
    if args.dataset:
        return Dataset.load(args.dataset[0])
    if not args.generate:
        raise UserError("need --dataset or --generate")
    return gen_dataset(int(cfg["n_samples"]), 2, _dipole(cfg), float(cfg["frequency_hz"]),
                       int(cfg["seed"]), _constraints(cfg), workers=int(cfg["workers"]),
                       points=int(cfg["points"]))


def _train_twoport(args, out):
    from .pclstm import TwoPortConfig, train_two_port
    keys = ["seed", "epochs", "learning_rate", "final_learning_rate", "kernel_side",
            "kernel_decay", "n_samples", "frequency_hz", "length_m", "radius_m",
            "segments", "d_min", "d_max", "workers", "points"]
    cfg = _resolve(args, keys)
    ds = _two_port_dataset(cfg, args)
    base = TwoPortConfig()
    tc = TwoPortConfig(epochs=base.epochs if cfg["epochs"] is None else int(cfg["epochs"]),
                       learning_rate=cfg["learning_rate"] or base.learning_rate,
                       final_learning_rate=cfg["final_learning_rate"] or base.final_learning_rate,
                       seed=int(cfg["seed"]), kernel_side=int(cfg["kernel_side"]),
                       kernel_decay=float(cfg["kernel_decay"]))
    if args.pann_epochs is not None:
        tc.pann_epochs = args.pann_epochs
        cfg["pann_epochs"] = args.pann_epochs
    bundle, hist = train_two_port(ds, tc)
    last = hist[-1]["loss"] if hist else None
    doc = bundle.to_doc(seed=tc.seed, epoch=len(hist), loss=last,
                        optimizer=getattr(bundle, "optimizer", None))
    files = [_write(out, "bundle.json", checkpoint.dumps(doc)),
             _write(out, "loss_history.csv",
                    _csv(["epoch", "loss"], [[h["epoch"], h["loss"]] for h in hist]))]
    if args.generate and not args.dataset:
        files.append(_write(out, "dataset.jsonl", ds.to_jsonl()))
    _manifest(out, "train twoport", dict(cfg, resolved=tc.to_dict(),
                                         dataset=args.dataset, generate=args.generate),
              files, {"final_loss": last})
    print(json.dumps({"final_loss": last}))
    return EXIT_OK


def _train_synth(args, out):
    from .synthesis import Dataset, SynthesisConfig, gen_dataset, train_synthesis
    keys = ["seed", "epochs", "learning_rate", "final_learning_rate", "n_samples",
            "frequency_hz", "length_m", "radius_m", "segments", "workers", "points"]
    cfg = _resolve(args, keys)
    twoport, tp_hash = _load_bundle(args.bundle, "twoport")
    datasets = {}
    if args.dataset:
        for path in args.dataset:
            ds = Dataset.load(path)
            if not ds.samples:
                raise UserError(f"{path}: empty dataset")
            datasets[ds.samples[0].geometry.elements] = ds
    elif args.generate:
        for m in args.sizes:
            datasets[m] = gen_dataset(int(cfg["n_samples"]), m, _dipole(cfg),
                                      float(cfg["frequency_hz"]), int(cfg["seed"]),
                                      workers=int(cfg["workers"]), points=int(cfg["points"]))
            _write(out, f"dataset_m{m}.jsonl", datasets[m].to_jsonl())
    else:
        raise UserError("need --dataset (one per array size) or --generate")
    base = SynthesisConfig()
    sc = SynthesisConfig(epochs=base.epochs if cfg["epochs"] is None else int(cfg["epochs"]),
                         learning_rate=cfg["learning_rate"] or base.learning_rate,
                         final_learning_rate=cfg["final_learning_rate"] or base.final_learning_rate,
                         seed=int(cfg["seed"]))
    bundle, hists = train_synthesis(datasets, twoport, sc)
    sizes = sorted(hists)
    rows = [[e] + [hists[m][e]["loss"] for m in sizes] for e in range(sc.epochs)]
    final = {f"m{m}": (hists[m][-1]["loss"] if hists[m] else None) for m in sizes}
    doc = bundle.to_doc(epoch=sc.epochs, loss=final, optimizer=getattr(bundle, "optimizer", None))
    files = [_write(out, "bundle.json", checkpoint.dumps(doc)),
             _write(out, "loss_history.csv",
                    _csv(["epoch"] + [f"loss_m{m}" for m in sizes], rows))]
    _manifest(out, "train synthesis", dict(cfg, resolved=sc.to_dict(), twoport=args.bundle,
                                           twoport_hash=tp_hash, dataset=args.dataset),
              files, {"final_loss": final})
    print(json.dumps({"final_loss": final}))
    return EXIT_OK


def cmd_train(args):
    out = _outdir(args)
    return {"pann": _train_pann, "twoport": _train_twoport,
            "synthesis": _train_synth}[args.target](args, out)


def cmd_predict(args):
    from .pclstm import predict_two_port
    bundle, digest = _load_bundle(args.bundle, "twoport")
    cfg = {"bundle": args.bundle, "d_m": args.d, "l_m": args.l, "r_m": args.r, "f_hz": args.f}
    pred = predict_two_port(bundle, args.d, args.l, args.r, args.f)
    doc = {"geometry": {"spacing_m": args.d, "length_m": args.l, "radius_m": args.r,
                        "frequency_hz": args.f},
           "z_port": [[_cplx(v) for v in row] for row in pred.reconstructed],
           "provenance": {"bundle_hash": digest, "warnings": pred.warnings}}
    out = _outdir(args)
    files = [_write(out, "prediction.json", json.dumps(doc, indent=2))]
    _manifest(out, "predict", cfg, files)
    print(json.dumps(doc))
    return EXIT_OK


def _spacings_m(args, f_hz):
    if args.spacings and args.spacings_lambda:
        raise UserError("give --spacings or --spacings-lambda, not both")
    raw = args.spacings or args.spacings_lambda
    if not raw:
        raise UserError("--spacings or --spacings-lambda is required")
    try:
        vals = np.array([float(v) for v in raw.split(",")])
    except ValueError as exc:
        raise UserError(f"bad spacing list {raw!r}") from exc
    return vals * wavelength(f_hz) if args.spacings_lambda else vals


def cmd_synthesize(args):
    from .synthesis import synthesize_array
    bundle, digest = _load_bundle(args.bundle, "synthesis")
    sp = _spacings_m(args, bundle.frequency_hz)
    res = synthesize_array(bundle, sp)
    out = _outdir(args)
    files = [_write(out, "synthesis.csv", res.to_csv()),
             _write(out, "synthesis.json", res.to_json())]
    _manifest(out, "synthesize", {"bundle": args.bundle, "spacings_m": sp.tolist()}, files,
              {"bundle_hash": digest, "warnings": res.warnings})
    return EXIT_OK


def cmd_gen_data(args):
    from .synthesis import gen_dataset
    keys = ["seed", "n_samples", "elements", "frequency_hz", "length_m", "radius_m",
            "segments", "d_min", "d_max", "workers", "points"]
    cfg = _resolve(args, keys)
    ds = gen_dataset(int(cfg["n_samples"]), int(cfg["elements"]), _dipole(cfg),
                     float(cfg["frequency_hz"]), int(cfg["seed"]), _constraints(cfg),
                     workers=int(cfg["workers"]), points=int(cfg["points"]))
    out = _outdir(args)
    files = [_write(out, "dataset.jsonl", ds.to_jsonl())]
    _manifest(out, "gen-data", cfg, files,
              {"samples": len(ds), "skipped": len(ds.skipped)})
    return EXIT_OK


def benchmark_report(bundle, sizes=(2, 10, 30), seed=42, repeats=1):
    """Wall-clock MoM solve vs trained-model inference for each array size."""
    from .mom import solve_ports
    from .synthesis import sample_spacings, synthesize_array
    rng = np.random.default_rng(seed)
    lam = wavelength(bundle.frequency_hz)
    report = {}
    for m in sizes:
        sp = sample_spacings(m, bundle.constraints, rng) * lam
        geom = ArrayGeometry.from_spacings(bundle.dipole, sp, bundle.frequency_hz)
        solve_ports(geom)
        synthesize_array(bundle, sp)
        t0 = time.perf_counter()
        for _ in range(repeats):
            solve_ports(geom)
        t_mom = (time.perf_counter() - t0) / repeats
        t0 = time.perf_counter()
        for _ in range(repeats):
            synthesize_array(bundle, sp)
        t_inf = (time.perf_counter() - t0) / repeats
        ratio = t_mom / t_inf
        report[str(m)] = {"mom_solve_seconds": t_mom, "inference_seconds": t_inf,
                          "ratio": float(f"{ratio:.3g}")}
    return report


def cmd_benchmark(args):
    bundle, digest = _load_bundle(args.bundle, "synthesis")
    cfg = _resolve(args, ["seed"])
    cfg["bundle"] = args.bundle
    cfg["repeats"] = args.repeats
    report = benchmark_report(bundle, seed=int(cfg["seed"]), repeats=args.repeats)
    doc = {"sizes": report, "backend": _accel.backend(),
           "context": "published figure of 7x over a commercial solver is not reproduced"}
    out = _outdir(args)
    files = [_write(out, "benchmark.json", json.dumps(doc, indent=2))]
    _manifest(out, "benchmark", cfg, files, {"bundle_hash": digest})
    print(json.dumps(doc))
    return EXIT_OK


# -- reproduce ---------------------------------------------------------------

def _verdict(ok):
    return "PASS" if ok else "FAIL"


def reproduce_table1(seed=42):
    from .pann import PannConfig, train_pann
    t0 = time.perf_counter()
    _, hist = train_pann(PannConfig(seed=seed))
    secs = time.perf_counter() - t0
    last = hist[-1]
    return [{"item": "PANN L_total", "computed": last["L_total"],
             "published": TABLE1["pann_mse"], "tolerance": f"<= {TABLE1['tolerance']:g}",
             "verdict": _verdict(last["L_total"] <= TABLE1["tolerance"])},
            {"item": "PANN epochs", "computed": len(hist), "published": TABLE1["epochs"],
             "tolerance": f"<= {TABLE1['epochs']}",
             "verdict": _verdict(len(hist) <= TABLE1["epochs"])},
            {"item": "PANN runtime s", "computed": secs, "published": None,
             "tolerance": "<= 120", "verdict": _verdict(secs <= 120)}]


def reproduce_table2(points=8, twoport=None):
    from .mom import solve_ports
    from .pclstm import predict_two_port
    f = 3e9
    lam = wavelength(f)
    dip = half_wave_dipole(f, 0.002, 16)
    rows = []
    for case, ref in TABLE2.items():
        geom = ArrayGeometry(dip, (0.0, ref["spacing_lambda"] * lam), f)
        z = solve_ports(geom, points).entries
        for name, val in (("z11", z[0, 0]), ("z12", z[0, 1])):
            err = abs(val - ref[name]) / abs(ref[name])
            rows.append({"item": f"{case} {name} MoM", "computed": complex(val),
                         "published": ref[name], "tolerance": f"rel <= {TABLE2_TOL}",
                         "note": f"rel error {err:.4g}", "verdict": _verdict(err <= TABLE2_TOL)})
        if twoport is not None:
            pred = predict_two_port(twoport, ref["spacing_lambda"] * lam, dip.length_m,
                                    dip.radius_m, f)
            for name, val, mom in (("z11", pred.z11, z[0, 0]), ("z12", pred.z12, z[0, 1])):
                err = abs(val - mom) / abs(mom)
                rows.append({"item": f"{case} {name} PC-LSTM vs MoM", "computed": val,
                             "published": complex(mom), "tolerance": "rel <= 0.05",
                             "note": f"rel error {err:.4g}", "verdict": _verdict(err <= 0.05)})
    return rows


def fig12_pipeline(seed=42, n_samples=100, workers=1, twoport_epochs=None,
                   synthesis_epochs=None, sizes=(10, 30), array_samples=None):
    """Two-port fit, array datasets and the synthesis fit, with stage timings.

    ``n_samples`` sizes the two-port dataset.  Each array dataset holds
    ``array_samples[m]`` layouts (default from ``FIG12``), of which
    ``FIG12_HOLDOUT`` (at most a fifth) are held out.
    """
    from .pclstm import TwoPortConfig, train_two_port
    from .synthesis import SynthesisConfig, gen_dataset, train_synthesis
    dip = DipoleSpec(SYNTH_DIPOLE["length_m"], SYNTH_DIPOLE["radius_m"],
                     SYNTH_DIPOLE["segments"])
    f = SYNTH_DIPOLE["frequency_hz"]
    times = {}
    t0 = time.perf_counter()
    tc = TwoPortConfig(seed=seed)
    if twoport_epochs is not None:
        tc.epochs = twoport_epochs
    tp_ds = gen_dataset(n_samples, 2, dip, f, seed, workers=workers)
    twoport, tp_hist = train_two_port(tp_ds, tc)
    times["twoport"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    counts = {m: FIG12.get(m, {}).get("samples", n_samples) for m in sizes}
    counts.update(array_samples or {})
    datasets = {m: gen_dataset(counts[m], m, dip, f, seed + m,
                               holdout_fraction=min(0.2, FIG12_HOLDOUT / counts[m]),
                               workers=workers)
                for m in sizes}
    times["datasets"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sc = SynthesisConfig(seed=seed)
    if synthesis_epochs is not None:
        sc.epochs = synthesis_epochs
    bundle, hists = train_synthesis(datasets, twoport, sc)
    times["synthesis"] = time.perf_counter() - t0
    return {"twoport": twoport, "twoport_history": tp_hist, "datasets": datasets,
            "bundle": bundle, "histories": hists, "seconds": times}


def fig12_rows(run):
    from .synthesis import holdout_errors
    rows = []
    for m in sorted(run["datasets"]):
        ref = FIG12.get(m, {"loss": None, "loss_tol": 1e-2, "rms_tol": 0.08})
        hist = run["histories"][m]
        loss = hist[-1]["loss"] if hist else float("nan")
        errs, pooled = holdout_errors(run["bundle"], run["datasets"][m])
        rows.append({"item": f"M={m} final loss", "computed": loss, "published": ref["loss"],
                     "tolerance": f"<= {ref['loss_tol']:g}",
                     "verdict": _verdict(loss <= ref["loss_tol"])})
        rows.append({"item": f"M={m} holdout normalized RMS (pooled)", "computed": pooled,
                     "published": None, "tolerance": f"<= {ref['rms_tol']:g}",
                     "verdict": _verdict(pooled <= ref["rms_tol"]),
                     "note": f"per-layout max {errs.max():.4g}, mean {errs.mean():.4g}"})
    total = sum(run["seconds"].values())
    rows.append({"item": "pipeline runtime s", "computed": total, "published": None,
                 "tolerance": "<= 1800", "verdict": _verdict(total <= 1800)})
    return rows


def reproduce_fig12(seed=42, n_samples=100, workers=1, twoport_epochs=None,
                    synthesis_epochs=None, sizes=(10, 30)):
    return fig12_rows(fig12_pipeline(seed, n_samples, workers, twoport_epochs,
                                     synthesis_epochs, sizes))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, complex):
        return f"{v.real:.4g}{v.imag:+.4g}j"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _reproduce_rows(args, cfg):
    if args.table == "table1":
        return reproduce_table1(int(cfg["seed"]))
    if args.table == "table2":
        twoport = _load_bundle(args.bundle, "twoport")[0] if args.bundle else None
        return reproduce_table2(int(cfg["points"]), twoport)
    return reproduce_fig12(int(cfg["seed"]), workers=int(cfg["workers"]),
                           n_samples=args.n_samples, twoport_epochs=args.twoport_epochs,
                           synthesis_epochs=args.synthesis_epochs)


def cmd_reproduce(args):
    cfg = _resolve(args, ["seed", "points", "workers"])
    cfg["table"] = args.table
    t0 = time.perf_counter()
    try:
        rows = _reproduce_rows(args, cfg)
    except Exception as exc:
        print(f"error: reproduce stage {args.table} failed", file=sys.stderr)
        raise exc
    out = _outdir(args)
    head = ["item", "computed", "published", "tolerance", "verdict", "note"]
    md = [f"# {args.table}", "", "| " + " | ".join(head) + " |",
          "|" + "---|" * len(head)]
    md += ["| " + " | ".join(_fmt(r.get(h)) for h in head) + " |" for r in rows]
    md += ["", f"runtime: {time.perf_counter() - t0:.1f} s", ""]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for r in rows:
        w.writerow([_fmt(r.get(h)) for h in head])
    files = [_write(out, f"{args.table}.md", "\n".join(md)),
             _write(out, f"{args.table}.csv", buf.getvalue())]
    _manifest(out, f"reproduce {args.table}", cfg, files)
    print("\n".join(md))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(p, *, seed=False):
    p.add_argument("--out", "-o", help="output directory (default: .)")
    p.add_argument("--config", help="JSON config or a previous manifest.json")
    if seed:
        p.add_argument("--seed", type=int, help="random seed (default 42)")


def _geometry_opts(p):
    p.add_argument("--frequency-hz", dest="frequency_hz", type=float)
    p.add_argument("--length-m", dest="length_m", type=float)
    p.add_argument("--radius-m", dest="radius_m", type=float)
    p.add_argument("--segments", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--points", type=int, help="Gauss points per segment")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dipole-coupling",
        description="Thin-wire MoM and learned mutual-coupling models for dipole arrays.",
        epilog="CSV outputs:\n" + __doc__.split("-----------\n", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mom-solve", help="port impedance and S-matrix of a geometry file")
    p.add_argument("geometry")
    p.add_argument("--points", type=int)
    p.add_argument("--ref-ohms", dest="ref_ohms", type=float)
    _common(p)
    p.set_defaults(func=cmd_mom_solve)

    p = sub.add_parser("sweep", help="frequency sweep of Z and S")
    p.add_argument("geometry")
    p.add_argument("--f-start", dest="f_start", type=float)
    p.add_argument("--f-stop", dest="f_stop", type=float)
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--ref-ohms", dest="ref_ohms", type=float)
    p.add_argument("--workers", type=int)
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train pann | twoport | synthesis")
    p.add_argument("target", choices=["pann", "twoport", "synthesis"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--final-learning-rate", dest="final_learning_rate", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--fixed-weights", dest="fixed_weights", action="store_true",
                   help="pann: keep loss weights at (0.5, 0.5)")
    p.add_argument("--kernel-side", dest="kernel_side", type=int)
    p.add_argument("--kernel-decay", dest="kernel_decay", type=float)
    p.add_argument("--pann-epochs", dest="pann_epochs", type=int)
    p.add_argument("--dataset", action="append", help="JSONL dataset (repeatable)")
    p.add_argument("--generate", action="store_true", help="generate data with the MoM solver")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 30])
    p.add_argument("--d-min", dest="d_min", type=float)
    p.add_argument("--d-max", dest="d_max", type=float)
    p.add_argument("--bundle", help="synthesis: trained two-port bundle")
    _geometry_opts(p)
    _common(p, seed=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="two-port impedance from a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--d", type=float, required=True, help="spacing (m)")
    p.add_argument("--l", type=float, required=True, help="dipole length (m)")
    p.add_argument("--r", type=float, required=True, help="wire radius (m)")
    p.add_argument("--f", type=float, required=True, help="frequency (Hz)")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synthesize", help="large-array impedance from a synthesis bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--spacings", help="comma-separated spacings in metres")
    p.add_argument("--spacings-lambda", dest="spacings_lambda",
                   help="comma-separated spacings in wavelengths")
    _common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("gen-data", help="MoM-labelled random layouts as JSONL")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--elements", type=int)
    p.add_argument("--d-min", dest="d_min", type=float)
    p.add_argument("--d-max", dest="d_max", type=float)
    _geometry_opts(p)
    _common(p, seed=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("benchmark", help="MoM vs trained-model timing for M = 2, 10, 30")
    p.add_argument("--bundle", help="synthesis bundle")
    p.add_argument("--repeats", type=int, default=1)
    _common(p, seed=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("reproduce", help="compare against published tables")
    p.add_argument("table", help="table1 | table2 | fig12")
    p.add_argument("--bundle", help="table2: optional two-port bundle to include")
    p.add_argument("--points", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=100)
    p.add_argument("--twoport-epochs", dest="twoport_epochs", type=int)
    p.add_argument("--synthesis-epochs", dest="synthesis_epochs", type=int)
    _common(p, seed=True)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "reproduce" and args.table not in ("table1", "table2", "fig12"):
        print(f"error: unknown table {args.table!r} (table1, table2, fig12)", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SolverError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UserError, DomainError, ShapeError, ConstraintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
