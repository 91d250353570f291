"""Command-line interface: simulate, trajectory, recon, metrics, export.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import AppConfig, ConfigError, load_config
from .fileformat import DatasetFile, FormatError, RunManifest, config_hash
from .manifold import ManifoldError
from .metrics import MetricError, RegionOfInterest, report, write_reports_csv
from .operators import (CoilMaps, MultiCoilKSpace, OperatorError, SamplingOperator,
                        add_noise, compress_coils, noise_sigma_for_snr,
                        simulate_coilmaps)
from .phantom import PhantomError, generate_phantom
from .solvers import (SolverError, lowrank_recon, storm_iterative, storm_selfnav,
                      storm_sense)
from .trajectory import (SpiralAcquisition, SpiralInterleaf, TrajectoryError,
                         make_acquisition, write_trajectory_csv)

__all__ = ["main", "simulate_dataset", "operator_from_dataset", "write_pgm",
           "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERICAL"]

log = logging.getLogger("spiralstorm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
METHODS = ("storm-iterative", "storm-selfnav", "storm-sense", "lowrank")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def write_pgm(path, image8: np.ndarray) -> None:
    """Binary 8-bit greyscale PGM (P5)."""
    image8 = np.asarray(image8, dtype=np.uint8)
    h, w = image8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image8.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise DataError(f"{path} is not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], np.uint8).reshape(h, w)


def _window(mag):
    hi = float(mag.max())
    return 0.0, (hi if hi > 0 else 1.0)


def _to_uint8(mag, lo, hi):
    scaled = np.clip((mag - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255).astype(np.uint8)


def acquisition_from_config(cfg: AppConfig) -> SpiralAcquisition:
    a = cfg.acquisition
    return make_acquisition(grid_size=cfg.phantom.grid_size,
                            n_interleaves=a.n_interleaves,
                            spirals_per_frame=a.spirals_per_frame,
                            samples_per_readout=a.samples_per_readout,
                            density_inner=a.density_inner,
                            density_outer=a.density_outer,
                            inner_extent=a.inner_extent,
                            navigator_every=a.navigator_every)


def simulate_dataset(cfg: AppConfig):
    """Phantom, acquisition and (compressed) noisy k-space for ``cfg``.

    Returns ``(truth, acquisition, operator, kspace)``; the operator carries
    the coil maps matching the returned (possibly compressed) data.
    """
    truth = generate_phantom(cfg.phantom)
    acq = acquisition_from_config(cfg)
    if acq.n_frames != truth.n_frames:
        raise ConfigError(
            f"acquisition yields {acq.n_frames} frames but the phantom has "
            f"{truth.n_frames}; set n_interleaves = n_frames * spirals_per_frame")
    maps = simulate_coilmaps(cfg.phantom.grid_size, cfg.acquisition.n_coils)
    op = SamplingOperator.from_acquisition(acq, maps)
    clean = op.forward(truth.frames)
    sigma = noise_sigma_for_snr(clean, cfg.acquisition.snr_db)
    b = add_noise(clean, sigma, seed=cfg.acquisition.noise_seed)
    if cfg.acquisition.coil_compression > 0:
        b, maps = compress_coils(b, maps, cfg.acquisition.coil_compression)
        op = SamplingOperator.from_acquisition(acq, maps)
    return truth, acq, op, b


def kspace_dataset(op: SamplingOperator, b: MultiCoilKSpace, provenance,
                   acquired_coils: int | None = None) -> DatasetFile:
    """``n_coils`` counts stored (possibly compressed) channels; ``acquired_coils``
    the simulated receive array."""
    nav = op.navigator if op.navigator is not None else np.zeros(len(op.coords), bool)
    return DatasetFile("kspace", {"data": b.data, "offsets": b.offsets,
                                  "coords": op.coords, "navigator": nav,
                                  "coil_maps": op.coil_maps.maps},
                       {"grid_size": op.grid_size, "noise_sigma": b.noise_sigma,
                        "n_frames": op.n_frames, "n_coils": op.n_coils,
                        "acquired_coils": op.n_coils if acquired_coils is None else acquired_coils},
                       provenance)


def operator_from_dataset(ds: DatasetFile):
    if ds.kind != "kspace":
        raise DataError(f"expected a kspace dataset, got {ds.kind!r}")
    try:
        a = ds.arrays
        op = SamplingOperator(a["coords"], a["offsets"], CoilMaps(a["coil_maps"]),
                              int(ds.attrs["grid_size"]), a["navigator"].astype(bool))
        b = MultiCoilKSpace(a["data"], a["offsets"], float(ds.attrs.get("noise_sigma", 0.0)))
    except KeyError as exc:
        raise DataError(f"kspace dataset lacks {exc}") from None
    return op, b


def trajectory_dataset(acq: SpiralAcquisition, provenance) -> DatasetFile:
    return DatasetFile("trajectory", {
        "samples": np.stack([il.samples for il in acq.interleaves]),
        "rotation_angle": np.array([il.rotation_angle for il in acq.interleaves]),
        "is_navigator": np.array([il.is_navigator for il in acq.interleaves]),
        "frames": np.array([list(f) for f in acq.frames], dtype=np.int64),
    }, {"grid_size": acq.grid_size, "samples_per_readout": acq.samples_per_readout,
        "density_inner": acq.density_inner, "density_outer": acq.density_outer,
        "inner_extent": acq.inner_extent}, provenance)


def acquisition_from_dataset(ds: DatasetFile) -> SpiralAcquisition:
    a, t = ds.arrays, ds.attrs
    interleaves = tuple(SpiralInterleaf(s, float(ang), bool(nav)) for s, ang, nav in
                        zip(a["samples"], a["rotation_angle"], a["is_navigator"]))
    return SpiralAcquisition(interleaves, int(t["grid_size"]), int(t["samples_per_readout"]),
                             float(t["density_inner"]), float(t["density_outer"]),
                             float(t["inner_extent"]),
                             tuple(range(int(f[0]), int(f[-1]) + 1) for f in a["frames"]))


def _images_dataset(frames, provenance, **attrs) -> DatasetFile:
    return DatasetFile("images", {"frames": np.asarray(frames, complex)}, attrs, provenance)


def scatter_image(acq: SpiralAcquisition, frames=None, size: int = 512) -> np.ndarray:
    """k-space scatter plot: imaging samples white, navigators grey."""
    img = np.zeros((size, size), np.uint8)
    frames = range(acq.n_frames) if frames is None else frames
    for f in frames:
        for m in acq.frames[f]:
            il = acq.interleaves[m]
            k = il.samples
            col = np.clip(((k[:, 0] + 0.5) * (size - 1)).round().astype(int), 0, size - 1)
            row = np.clip(((k[:, 1] + 0.5) * (size - 1)).round().astype(int), 0, size - 1)
            img[row, col] = 128 if il.is_navigator else 255
    return img


# ---------------------------------------------------------------- commands

def _load(args) -> AppConfig:
    return load_config(args.config, args.overrides)


def _provenance(cfg: AppConfig) -> dict:
    return {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.phantom.seed,
            "noise_seed": cfg.acquisition.noise_seed, "version": __version__}


def cmd_simulate(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    man = RunManifest("simulate", cfg.to_dict())
    t0 = time.perf_counter()
    truth, acq, op, b = simulate_dataset(cfg)
    man.timings["simulate"] = time.perf_counter() - t0
    prov = _provenance(cfg)
    paths = {"truth": os.path.join(args.out, "truth.ssd"),
             "kspace": os.path.join(args.out, "kspace.ssd"),
             "trajectory": os.path.join(args.out, "trajectory.ssd"),
             "config": os.path.join(args.out, "config.ini")}
    DatasetFile("images", {"frames": truth.frames, "cardiac_phase": truth.cardiac_phase,
                           "respiratory_phase": truth.respiratory_phase},
                {"role": "ground_truth", "grid_size": cfg.phantom.grid_size}, prov
                ).write(paths["truth"])
    kspace_dataset(op, b, prov, cfg.acquisition.n_coils).write(paths["kspace"])
    trajectory_dataset(acq, prov).write(paths["trajectory"])
    with open(paths["config"], "w") as fh:
        fh.write(cfg.to_ini())
    for p in paths.values():
        man.add_output(p)
    man.extra = {"n_frames": op.n_frames, "n_coils": op.n_coils,
                 "noise_sigma": b.noise_sigma, "has_navigators": acq.has_navigators}
    man.write(os.path.join(args.out, "manifest.json"))
    print(f"wrote {args.out}: {op.n_frames} frames, {op.n_coils} coils")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    acq = acquisition_from_config(cfg)
    if args.frames:
        frames = [int(f) for f in args.frames.split(",")]
        bad = [f for f in frames if not 0 <= f < acq.n_frames]
        if bad:
            raise UsageError(f"frames {bad} out of range for {acq.n_frames} frames")
    else:
        frames = [0]
    csv_path = os.path.join(args.out, "trajectory.csv")
    pgm_path = os.path.join(args.out, "trajectory.pgm")
    write_trajectory_csv(acq, csv_path)
    write_pgm(pgm_path, scatter_image(acq, frames, args.size))
    man = RunManifest("trajectory", cfg.to_dict())
    man.add_output(csv_path)
    man.add_output(pgm_path)
    man.extra = {"frames_plotted": frames}
    man.write(os.path.join(args.out, "manifest.json"))
    print(f"wrote {csv_path} and {pgm_path}")
    return EXIT_OK


def cmd_recon(args) -> int:
    cfg = _load(args)
    ds = DatasetFile.read(args.input, "kspace")
    op, b = operator_from_dataset(ds)
    if args.method == "storm-selfnav" and (op.navigator is None or not op.navigator.any()):
        raise DataError(f"{args.input} has no navigator interleaves; storm-selfnav needs "
                        "data simulated with navigator_every set (e.g. --navigator_every 6)")
    os.makedirs(args.out, exist_ok=True)
    rc = cfg.recon
    t0 = time.perf_counter()
    if args.method == "storm-iterative":
        res = storm_iterative(op, b, rc, callback=lambda i, v: log.info("iter %d: %.6g", i, v))
    elif args.method == "storm-sense":
        res = storm_sense(op, b, rc)
    elif args.method == "storm-selfnav":
        res = storm_selfnav(op, b, rc)
    else:
        res = lowrank_recon(op, b, cfg=rc)
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(res.images)):
        raise SolverError("reconstruction produced non-finite values")
    prov = dict(_provenance(cfg), input_sha256=ds.payload_digest())
    man = RunManifest("recon", cfg.to_dict())
    man.add_input(args.input)
    img_path = os.path.join(args.out, "images.ssd")
    _images_dataset(res.images, prov, method=args.method).write(img_path)
    man.add_output(img_path)
    if res.laplacian is not None:
        lap_path = os.path.join(args.out, "laplacian.ssd")
        DatasetFile("laplacian", {"L": res.laplacian.L, "W": res.laplacian.W},
                    {"method": args.method,
                     "gamma": res.laplacian.gamma if res.laplacian.gamma is not None else "none"},
                    prov).write(lap_path)
        man.add_output(lap_path)
    obj_path = os.path.join(args.out, "objective.csv")
    with open(obj_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(res.objective_trace, 1):
            w.writerow([i, repr(float(v))])
    man.add_output(obj_path)
    man.timings = dict(res.timings, total=elapsed)
    man.extra = {"method": args.method}
    if args.method == "lowrank":
        man.extra.update(p=rc.lowrank_p, lambda_lr=rc.lowrank_lambda)
    man.write(os.path.join(args.out, "manifest.json"))
    print(f"{args.method}: wrote {img_path} ({elapsed:.1f} s)")
    return EXIT_OK


def _parse_roi(text, shape):
    if text is None:
        return RegionOfInterest.centered(shape[-1])
    try:
        r0, c0, h, w = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError("--roi expects row0,col0,height,width") from None
    roi = RegionOfInterest(r0, c0, h, w)
    roi.validate(shape)
    return roi


def cmd_metrics(args) -> int:
    truth = DatasetFile.read(args.truth, "images").arrays["frames"]
    roi = _parse_roi(args.roi, truth.shape)
    labels = args.label or []
    reports = []
    for i, path in enumerate(args.recon):
        ds = DatasetFile.read(path, "images")
        rec = ds.arrays["frames"]
        if rec.shape != truth.shape:
            raise DataError(f"{path}: shape {rec.shape} differs from truth {truth.shape}")
        label = labels[i] if i < len(labels) else str(ds.attrs.get("method", path))
        reports.append(report(truth, rec, roi, label))
    if args.out:
        write_reports_csv(reports, args.out)
        if args.per_frame:
            base, ext = os.path.splitext(args.out)
            for r in reports:
                with open(f"{base}_{r.label}_frames{ext or '.csv'}", "w") as fh:
                    fh.write(r.to_csv(per_frame=True))
    for r in reports:
        s = r.summary()
        print(f"{s['label']}: SER {s['ser_mean']:.2f} +/- {s['ser_std']:.2f} dB, "
              f"SSIM {s['ssim_mean']:.3f} +/- {s['ssim_std']:.3f}, "
              f"HFEN {s['hfen_norm_mean']:.4f} +/- {s['hfen_norm_std']:.4f}")
    return EXIT_OK


def cmd_export(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    man = RunManifest(f"export {args.what}")
    man.add_input(args.input)
    if args.what == "weights":
        ds = DatasetFile.read(args.input, "laplacian")
        M = ds.arrays[args.matrix]
        if not args.frames:
            raise UsageError("export weights needs --frames i,j,...")
        rows = [int(v) for v in args.frames.split(",")]
        bad = [r for r in rows if not 0 <= r < M.shape[0]]
        if bad:
            raise UsageError(f"frames {bad} out of range for {M.shape[0]} frames")
        path = os.path.join(args.out, f"{args.matrix.lower()}_rows.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", *range(M.shape[1])])
            for r in rows:
                w.writerow([r, *(repr(float(v)) for v in M[r])])
        man.add_output(path)
    else:
        frames = DatasetFile.read(args.input, "images").arrays["frames"]
        mag = np.abs(frames)
        if args.what == "frames":
            lo, hi = _window(mag)
            for i, f in enumerate(mag):
                path = os.path.join(args.out, f"frame_{i:04d}.pgm")
                write_pgm(path, _to_uint8(f, lo, hi))
                man.add_output(path)
            man.extra = {"window": [lo, hi]}
        else:
            if (args.row is None) == (args.col is None):
                raise UsageError("export profile needs exactly one of --row or --col")
            n = mag.shape[-1]
            idx = args.row if args.row is not None else args.col
            if not 0 <= idx < n:
                raise UsageError(f"cut index {idx} out of range [0, {n})")
            cut = mag[:, idx, :] if args.row is not None else mag[:, :, idx]
            path = os.path.join(args.out, "profile.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frame", *range(n)])
                for i, line in enumerate(cut):
                    w.writerow([i, *(repr(float(v)) for v in line)])
            man.add_output(path)
            man.extra = {"row": args.row, "col": args.col}
    man.write(os.path.join(args.out, "manifest.json"))
    print(f"exported {args.what} to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parsing

def _split_overrides(extra):
    """``--key value`` pairs left over by argparse -> dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"--{key} needs a value")
            value = extra[i + 1]
            i += 2
        out[key.split(".")[-1]] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spiralstorm",
        description="Manifold reconstruction of free-breathing spiral cardiac MRI. "
                    "Any config key can be overridden with --key value.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="phantom + spiral acquisition + noisy k-space")
    s.add_argument("--config")
    s.add_argument("--out", required=True)

    t = sub.add_parser("trajectory", help="trajectory CSV and k-space scatter image")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--frames", help="comma-separated frames to plot (default 0)")
    t.add_argument("--size", type=int, default=512)

    r = sub.add_parser("recon", help="reconstruct a kspace dataset")
    r.add_argument("method", choices=METHODS)
    r.add_argument("--input", required=True)
    r.add_argument("--config")
    r.add_argument("--out", required=True)

    m = sub.add_parser("metrics", help="SER / SSIM / HFEN against a ground truth")
    m.add_argument("--truth", required=True)
    m.add_argument("--recon", required=True, action="append")
    m.add_argument("--label", action="append")
    m.add_argument("--roi", help="row0,col0,height,width (default: centred half-side square)")
    m.add_argument("--out")
    m.add_argument("--per-frame", action="store_true")

    e = sub.add_parser("export", help="PGM frames, a temporal profile or weight rows")
    e.add_argument("what", choices=("frames", "profile", "weights"))
    e.add_argument("--input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--row", type=int)
    e.add_argument("--col", type=int)
    e.add_argument("--frames")
    e.add_argument("--matrix", choices=("W", "L"), default="W")
    return p


COMMANDS = {"simulate": cmd_simulate, "trajectory": cmd_trajectory,
            "recon": cmd_recon, "metrics": cmd_metrics, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.overrides = _split_overrides(extra)
        if args.overrides and args.command not in ("simulate", "trajectory", "recon"):
            raise UsageError(f"{args.command} takes no config overrides")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"spiralstorm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OperatorError, TrajectoryError, PhantomError,
            MetricError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"spiralstorm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, ManifoldError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"spiralstorm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
