"""Batch command-line front end.

Subcommands: simulate, reconstruct, benchmark, calibrate-gamma,
fit-retardance, select-patterns, classify, geom-fit.

Configuration comes from an optional JSON file (``--config``); command-line
flags override file values, and the effective merged configuration is written
next to the outputs for provenance. Exit codes: 0 success, 1 usage error,
2 data error, 3 numeric failure.

Reruns with the same configuration and seed produce byte-identical outputs at
any ``--threads`` setting: BLAS pools are pinned to one thread below, and the
jitted kernels are serial (``--threads``, or ``SLMSPEC_THREADS``, only caps
the worker ceiling).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .errors import DataError, NumericError, SlmSpecError, UsageError  # noqa: E402


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_grid(text: str):
    from .data_model import SpectralGrid
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise UsageError("grid spec is lo:hi:bands[:lambda|wavenumber]")
    lo, hi, bands = float(parts[0]), float(parts[1]), int(parts[2])
    mode = parts[3] if len(parts) == 4 else "wavenumber"
    if mode == "wavenumber":
        return SpectralGrid.uniform_wavenumber(lo, hi, bands)
    if mode == "lambda":
        return SpectralGrid.uniform(lo, hi, bands)
    raise UsageError(f"unknown grid mode {mode!r}")


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    if cfg.get("version", 1) != 1:
        raise DataError(f"{path}: unsupported config version")
    return cfg


def _merge(config: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    """Flag values override config-file values; None flags fall back."""
    merged = {"version": 1}
    for key in keys:
        flag = getattr(args, key.replace("-", "_"), None)
        merged[key] = flag if flag is not None else config.get(key)
    return merged


def _write_effective(cfg: dict, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.effective.json").write_text(
        json.dumps(cfg, indent=1, sort_keys=True), encoding="utf-8")


def _noise_from(cfg: dict):
    from .forward_sim import NoiseConfig
    return NoiseConfig(
        max_electrons=float(cfg.get("max-electrons") or 1000.0),
        read_noise_electrons=float(cfg["read-noise"] if cfg.get("read-noise")
                                   is not None else 2.0),
        seed=int(cfg.get("noise-seed") or 0),
        enabled=bool(cfg.get("noise")),
    )


def _resolve_patterns(spec: str, width: int, height: int, master_seed: int):
    from . import patterns as pt
    if spec == "enumerate92":
        return pt.enumerate_92(width, height, master_seed)
    if spec == "fullscan":
        return None  # handled by simulate_full_scan
    if spec.startswith("constant:"):
        out = []
        for idx in _parse_int_list(spec.split(":", 1)[1]):
            p = pt.generate(pt.PatternSpec("constant", level=idx), width, height)
            out.append(p)
        return out
    if spec.startswith("pgm:"):
        return [pt.load_pattern(p) for p in spec.split(":", 1)[1].split(",")]
    raise UsageError(f"unknown pattern spec {spec!r}")


def _cmd_simulate(args) -> int:
    from . import forward_sim as fs
    from .data_model import load_cube
    from .lc_optics import load_filter_bank

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["cube", "bank", "patterns", "master-seed",
                                  "noise", "max-electrons", "read-noise",
                                  "noise-seed", "out", "threads"])
    for key in ("cube", "bank", "out"):
        if not cfg.get(key):
            raise UsageError(f"simulate needs --{key}")
    cube = load_cube(cfg["cube"])
    bank = load_filter_bank(cfg["bank"])
    noise = _noise_from(cfg)
    pattern_spec = cfg.get("patterns") or "fullscan"
    cfg["patterns"] = pattern_spec
    pats = _resolve_patterns(pattern_spec, cube.width, cube.height,
                             int(cfg.get("master-seed") or 0))
    if pats is None:
        captures = fs.simulate_full_scan(cube, bank, noise=noise)
    else:
        captures = fs.simulate_capture_set(cube, pats, bank, noise=noise)
    outdir = Path(cfg["out"])
    fs.save_capture_set(captures, outdir)
    _write_effective(cfg, outdir)
    print(f"wrote {len(captures)} frames to {outdir}")
    return 0


def _cmd_reconstruct(args) -> int:
    from . import analysis
    from . import reconstruct as rc
    from .data_model import load_cube, load_guide, save_cube
    from .forward_sim import load_capture_set

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["captures", "method", "guide", "reference",
                                  "out", "eta-tv", "eta-spectral", "iterations",
                                  "learning-rate", "superpixels", "ridge-eta",
                                  "compactness", "postfilter", "threads"])
    for key in ("captures", "method", "out"):
        if not cfg.get(key):
            raise UsageError(f"reconstruct needs --{key}")
    import time

    captures = load_capture_set(cfg["captures"])
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    metrics: dict = {"method": cfg["method"], "frames": len(captures)}
    t_start = time.monotonic()

    if cfg["method"] == "lsq":
        cube = rc.reconstruct_lsq(captures)
    elif cfg["method"] == "tv":
        tv_cfg = rc.TvConfig(
            eta_tv=float(cfg["eta-tv"]) if cfg.get("eta-tv") is not None
            else rc.default_eta_tv(captures.noise.max_electrons),
            eta_spectral=float(cfg["eta-spectral"])
            if cfg.get("eta-spectral") is not None else rc.DEFAULT_ETA_SPECTRAL,
            iterations=int(cfg.get("iterations") or 200),
            learning_rate=float(cfg.get("learning-rate") or 1e-2))
        info: dict = {}
        cube = rc.reconstruct_tv(captures, tv_cfg, info=info)
        metrics["objective_trace"] = info["objective_trace"]
    elif cfg["method"] == "rank1":
        if not cfg.get("guide"):
            raise UsageError("rank-1 reconstruction needs --guide")
        guide = load_guide(cfg["guide"])
        gcfg = rc.GuidedConfig(
            q_superpixels=int(cfg.get("superpixels") or 32),
            ridge_eta=float(cfg["ridge-eta"]) if cfg.get("ridge-eta") is not None
            else None,
            compactness=float(cfg.get("compactness") or 0.1),
            postfilter=bool(cfg.get("postfilter")))
        info = {}
        cube = rc.reconstruct_rank1(captures, guide, gcfg, info=info)
        metrics.update(info)
    else:
        raise UsageError(f"unknown method {cfg['method']!r}")

    elapsed = time.monotonic() - t_start
    save_cube(cube, outdir / "reconstruction.hsi")
    if cfg.get("reference"):
        ref = load_cube(cfg["reference"])
        metrics["psnr_db"] = analysis.psnr(ref, cube)
        metrics["sam_median_deg"] = analysis.sam_median(ref, cube)
    (outdir / "metrics.json").write_text(json.dumps(metrics, indent=1),
                                         encoding="utf-8")
    _write_effective(cfg, outdir)
    # timings stay in the log so rerun outputs remain byte-identical
    print(f"wrote reconstruction to {outdir} ({elapsed:.2f}s)")
    return 0


def _cmd_benchmark(args) -> int:
    from . import analysis
    from . import patterns as pt
    from .data_model import load_cube, load_guide
    from .forward_sim import simulate_guide
    from .lc_optics import load_filter_bank

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["mode", "cube", "bank", "guide", "counts",
                                  "select", "first", "lines", "master-seed",
                                  "noise", "max-electrons", "read-noise",
                                  "noise-seed", "out", "method", "threads"])
    if not cfg.get("mode") or not cfg.get("out"):
        raise UsageError("benchmark needs --mode and --out")
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    noise = _noise_from(cfg)
    mode = cfg["mode"]

    if mode == "fwhm":
        if not cfg.get("bank"):
            raise UsageError("fwhm mode needs --bank")
        bank = load_filter_bank(cfg["bank"])
        lines = [float(v) for v in (cfg.get("lines") or "532,635,850").split(",")]
        widths = analysis.fwhm_probe(bank, bank.grid, lines)
        report = analysis.EvalReport()
        for line, width in zip(lines, widths):
            report.add(line_nm=line, fwhm_nm=width)
    else:
        if not (cfg.get("cube") and cfg.get("bank")):
            raise UsageError(f"{mode} mode needs --cube and --bank")
        cube = load_cube(cfg["cube"])
        bank = load_filter_bank(cfg["bank"])
        guide = load_guide(cfg["guide"]) if cfg.get("guide") \
            else simulate_guide(cube)
        master_seed = int(cfg.get("master-seed") or 0)
        pats = pt.enumerate_92(cube.width, cube.height, master_seed)
        if mode == "patterns":
            report = analysis.pattern_benchmark(
                cube, bank, pats, method=cfg.get("method") or "rank1",
                guide=guide, noise=noise)
        elif mode == "multiframe":
            count = int(cfg.get("select") or 16)
            order = pt.greedy_select(pats, count, first=cfg.get("first"))
            by_id = {p.pattern_id: p for p in pats}
            selected = [by_id[i] for i in order]
            counts = _parse_int_list(cfg.get("counts") or "1,2,4,8,16")
            report = analysis.multiframe_sweep(cube, bank, selected, counts,
                                               guide=guide, noise=noise,
                                               baseline_seed=master_seed)
        else:
            raise UsageError(f"unknown benchmark mode {mode!r}")

    report.write_csv(outdir / f"{mode}.csv")
    report.write_json(outdir / f"{mode}.json")
    _write_effective(cfg, outdir)
    print(f"wrote {len(report.rows)} rows to {outdir}")
    return 0


def _cmd_calibrate_gamma(args) -> int:
    from .lc_optics import (build_filter_bank, design_gamma_curve,
                            load_retardance_curve, save_filter_bank,
                            save_gamma_curve)

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["curve", "v-min", "v-max", "out", "bank",
                                  "grid", "extra-retardance", "threads"])
    for key in ("curve", "out"):
        if not cfg.get(key):
            raise UsageError(f"calibrate-gamma needs --{key}")
    curve = load_retardance_curve(cfg["curve"])
    v_min = float(cfg["v-min"]) if cfg.get("v-min") is not None \
        else float(curve.control[0])
    v_max = float(cfg["v-max"]) if cfg.get("v-max") is not None \
        else float(curve.control[-1])
    gamma = design_gamma_curve(curve, v_min, v_max)
    save_gamma_curve(gamma, cfg["out"])
    print(f"gamma curve written to {cfg['out']} "
          f"(c0 = {gamma.c0_nm_per_index:.4f} nm/index)")
    if cfg.get("bank"):
        grid = _parse_grid(cfg.get("grid") or "420:940:53:wavenumber")
        bank = build_filter_bank(gamma, curve, grid,
                                 float(cfg.get("extra-retardance") or 0.0))
        save_filter_bank(bank, cfg["bank"])
        print(f"filter bank written to {cfg['bank']}")
    _write_effective(cfg, Path(cfg["out"]).resolve().parent)
    return 0


def _cmd_fit_retardance(args) -> int:
    from .data_model import load_spectrum_csv
    from .lc_optics import fit_retardance_from_spectrum

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["spectrum", "search-min", "search-max",
                                  "step", "json-out", "threads"])
    if not cfg.get("spectrum"):
        raise UsageError("fit-retardance needs --spectrum")
    grid, values = load_spectrum_csv(cfg["spectrum"])
    ret = fit_retardance_from_spectrum(
        values, grid,
        float(cfg.get("search-min") or 300.0),
        float(cfg.get("search-max") or 3000.0),
        float(cfg.get("step") or 1.0))
    print(f"retardance_nm {ret}")
    if cfg.get("json-out"):
        Path(cfg["json-out"]).write_text(
            json.dumps({"retardance_nm": ret}, indent=1), encoding="utf-8")
    return 0


def _cmd_select_patterns(args) -> int:
    from . import patterns as pt

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["width", "height", "count", "master-seed",
                                  "first", "out", "threads"])
    width = int(cfg.get("width") or 256)
    height = int(cfg.get("height") or 256)
    count = int(cfg.get("count") or 16)
    pats = pt.enumerate_92(width, height, int(cfg.get("master-seed") or 0))
    order = pt.greedy_select(pats, count, first=cfg.get("first"))
    text = json.dumps(order, indent=1)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text, encoding="utf-8")
        print(f"selection written to {cfg['out']}")
    else:
        print(text)
    return 0


def _cmd_classify(args) -> int:
    from . import material_id as mid
    from .data_model import load_cube
    from .lc_optics import load_filter_bank

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["cube", "bank", "library", "k", "noise",
                                  "max-electrons", "read-noise", "noise-seed",
                                  "out", "threads"])
    for key in ("cube", "bank", "library", "out"):
        if not cfg.get(key):
            raise UsageError(f"classify needs --{key}")
    cube = load_cube(cfg["cube"])
    bank = load_filter_bank(cfg["bank"])
    library = mid.load_library_csv(cfg["library"])
    k = int(cfg.get("k") or 3)
    noise = _noise_from(cfg)
    indices = mid.select_discriminative_filters(library, k)
    measurement = mid.tile_and_capture(cube, bank, indices, noise=noise)
    labels = mid.demosaic_classify(measurement, indices, library)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    mid.save_label_map(labels, library, outdir / "labels.pgm")
    (outdir / "chosen_indices.json").write_text(json.dumps(indices),
                                                encoding="utf-8")
    _write_effective(cfg, outdir)
    print(f"labels written to {outdir} (indices {indices})")
    return 0


def _cmd_geom_fit(args) -> int:
    import numpy as np

    from . import geom_calibration as geo

    file_cfg = _load_config(args.config)
    cfg = _merge(file_cfg, args, ["mode", "observations", "correspondences",
                                  "threshold", "max-iters", "seed", "axis",
                                  "out", "threads"])
    mode = cfg.get("mode") or "polynomial"
    if not cfg.get("out"):
        raise UsageError("geom-fit needs --out")
    out = Path(cfg["out"])

    if mode == "polynomial":
        if not cfg.get("observations"):
            raise UsageError("polynomial mode needs --observations")
        rows = [ln.split(",") for ln in
                Path(cfg["observations"]).read_text(encoding="utf-8")
                .strip().splitlines()[1:] if ln.strip()]
        try:
            data = np.asarray([[float(v) for v in row] for row in rows])
        except ValueError as exc:
            raise DataError(f"malformed observations CSV: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != 3:
            raise DataError("observations CSV needs columns x_c,y_c,target")
        obs = geo.ScanObservation(data[:, :2], data[:, 2],
                                  axis=cfg.get("axis") or "row")
        model, inliers = geo.fit_polynomial_ransac(
            obs, threshold_px=float(cfg.get("threshold") or 0.5),
            max_iters=int(cfg.get("max-iters") or 500),
            seed=int(cfg.get("seed") or 0))
        payload = {
            "kind": "polynomial-map",
            "axis": obs.axis,
            "coeffs": [float(c) for c in model.coeffs],
            "normalization": {"x_center": model.x_center, "x_half": model.x_half,
                              "y_center": model.y_center, "y_half": model.y_half},
            "inlier_count": int(inliers.sum()),
            "total": len(obs),
        }
    elif mode == "homography":
        if not cfg.get("correspondences"):
            raise UsageError("homography mode needs --correspondences")
        rows = [ln.split(",") for ln in
                Path(cfg["correspondences"]).read_text(encoding="utf-8")
                .strip().splitlines()[1:] if ln.strip()]
        try:
            data = np.asarray([[float(v) for v in row] for row in rows])
        except ValueError as exc:
            raise DataError(f"malformed correspondences CSV: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != 4:
            raise DataError("correspondences CSV needs columns x1,y1,x2,y2")
        h = geo.fit_homography(data[:, :2], data[:, 2:])
        errs = geo.reprojection_errors(h, data[:, :2], data[:, 2:])
        payload = {
            "kind": "homography",
            "matrix": [[float(v) for v in row] for row in h.matrix],
            "max_reprojection_px": float(errs.max()),
            "rms_reprojection_px": float(np.sqrt((errs ** 2).mean())),
        }
    else:
        raise UsageError(f"unknown geom-fit mode {mode!r}")

    out.write_text(json.dumps(payload, indent=1), encoding="utf-8")
    print(f"fit written to {out}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SLMSPEC_THREADS", "1")),
                   help="worker cap (outputs are identical at any setting)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slmspec",
                     description="Programmable spectral filter array toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a capture set from a cube")
    _add_common(p)
    p.add_argument("--cube")
    p.add_argument("--bank")
    p.add_argument("--patterns",
                   help="enumerate92 | fullscan | constant:i,j,... | pgm:paths")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--noise", action="store_const", const=True, default=None)
    p.add_argument("--max-electrons", type=float, dest="max_electrons")
    p.add_argument("--read-noise", type=float, dest="read_noise")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="recover a cube from a capture set")
    _add_common(p)
    p.add_argument("--captures")
    p.add_argument("--method", choices=("lsq", "tv", "rank1"))
    p.add_argument("--guide")
    p.add_argument("--reference")
    p.add_argument("--eta-tv", type=float, dest="eta_tv")
    p.add_argument("--eta-spectral", type=float, dest="eta_spectral")
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--superpixels", type=int)
    p.add_argument("--ridge-eta", type=float, dest="ridge_eta")
    p.add_argument("--compactness", type=float)
    p.add_argument("--postfilter", action="store_const", const=True, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("benchmark", help="pattern / multiframe / fwhm sweeps")
    _add_common(p)
    p.add_argument("--mode", choices=("patterns", "multiframe", "fwhm"))
    p.add_argument("--cube")
    p.add_argument("--bank")
    p.add_argument("--guide")
    p.add_argument("--method")
    p.add_argument("--counts")
    p.add_argument("--select", type=int)
    p.add_argument("--first")
    p.add_argument("--lines")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--noise", action="store_const", const=True, default=None)
    p.add_argument("--max-electrons", type=float, dest="max_electrons")
    p.add_argument("--read-noise", type=float, dest="read_noise")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("calibrate-gamma",
                       help="design a linearizing gamma curve from a "
                            "retardance curve")
    _add_common(p)
    p.add_argument("--curve")
    p.add_argument("--v-min", type=float, dest="v_min")
    p.add_argument("--v-max", type=float, dest="v_max")
    p.add_argument("--out")
    p.add_argument("--bank")
    p.add_argument("--grid")
    p.add_argument("--extra-retardance", type=float, dest="extra_retardance")
    p.set_defaults(func=_cmd_calibrate_gamma)

    p = sub.add_parser("fit-retardance",
                       help="brute-force retardance from a measured spectrum")
    _add_common(p)
    p.add_argument("--spectrum")
    p.add_argument("--search-min", type=float, dest="search_min")
    p.add_argument("--search-max", type=float, dest="search_max")
    p.add_argument("--step", type=float)
    p.add_argument("--json-out", dest="json_out")
    p.set_defaults(func=_cmd_fit_retardance)

    p = sub.add_parser("select-patterns",
                       help="greedy coverage ordering of the 92-pattern set")
    _add_common(p)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--first")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_select_patterns)

    p = sub.add_parser("classify",
                       help="single-shot material classification")
    _add_common(p)
    p.add_argument("--cube")
    p.add_argument("--bank")
    p.add_argument("--library")
    p.add_argument("--k", type=int)
    p.add_argument("--noise", action="store_const", const=True, default=None)
    p.add_argument("--max-electrons", type=float, dest="max_electrons")
    p.add_argument("--read-noise", type=float, dest="read_noise")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("geom-fit",
                       help="polynomial RANSAC or homography fitting")
    _add_common(p)
    p.add_argument("--mode", choices=("polynomial", "homography"))
    p.add_argument("--observations")
    p.add_argument("--correspondences")
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--seed", type=int)
    p.add_argument("--axis", choices=("row", "col"))
    p.add_argument("--out")
    p.set_defaults(func=_cmd_geom_fit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None and args.threads > 1:
            # serial kernels ignore this; it only caps any numba worker pool
            try:
                import numba
                numba.set_num_threads(min(args.threads,
                                          numba.config.NUMBA_NUM_THREADS))
            except ImportError:
                pass
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, SlmSpecError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
