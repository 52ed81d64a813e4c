"""
Command-line interface.

    lineaments run --raster scene.bsq --dem dem.asc --occurrences occ.csv --out-dir out
    lineaments synth --out-dir scene --seed 0
    lineaments score --found out/lineaments.geojson --truth scene/truth.geojson

``run`` reads an optional ``key = value`` config file (``--config``); any
key can be overridden by the flag of the same name, and flags win.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, analyze, dimred, enhance, hydro, synth, vectorize
from .pipeline import (MODE_EDGE_GRADIENT, PipelineConfig, StageError, is_validation_error, read_config_file,
                       read_raster, run_pipeline)
from .raster import (read_lineaments, read_points, write_ascii_grid, write_lineaments,
                     write_multiband, write_points)

logger = logging.getLogger("lineaments")

THREADS_ENV = "LINEAMENT_THREADS"


class UsageError(ValueError):
    pass


def resolve_threads(flag: int | None) -> int:
    """``--threads`` if given, else $LINEAMENT_THREADS, else 1."""
    if flag is not None:
        n = flag
    else:
        env = os.environ.get(THREADS_ENV, "").strip()
        if not env:
            return 1
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _flag(name: str) -> list:
    dashed = "--" + name.replace("_", "-")
    return [dashed] if dashed == "--" + name else [dashed, "--" + name]


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("extraction thresholds")
    g.add_argument(*_flag("filter_radius"), type=int, default=argparse.SUPPRESS)
    g.add_argument(*_flag("edge_gradient"), type=float, default=argparse.SUPPRESS,
                   help="default: 50 for directional, 10 for laplacian")
    g.add_argument(*_flag("curve_length"), type=int, default=argparse.SUPPRESS)
    g.add_argument(*_flag("line_fitting_error"), type=float, default=argparse.SUPPRESS)
    g.add_argument(*_flag("angular_difference"), type=float, default=argparse.SUPPRESS)
    g.add_argument(*_flag("linking_distance"), type=float, default=argparse.SUPPRESS)
    g.add_argument("--force", action="store_const", const=True, default=argparse.SUPPRESS,
                   help="allow thresholds outside their validated ranges")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lineaments",
                                 description="Geological lineament extraction from multiband rasters.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--threads", type=int, default=None,
                    help=f"worker threads (default ${THREADS_ENV} or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    # run: every PipelineConfig field is a flag
    p = sub.add_parser("run", help="full pipeline", argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument(*_flag("raster"), help="multiband raster (.bsq/.hdr.json) or .asc")
    p.add_argument(*_flag("dem"), help="DEM on the same grid (.asc or .bsq)")
    p.add_argument(*_flag("occurrences"), help="occurrences CSV with header x,y,label")
    p.add_argument(*_flag("out_dir"))
    p.add_argument(*_flag("dimred"), choices=("pca", "ica", "mnf"))
    p.add_argument(*_flag("component"), type=int)
    p.add_argument(*_flag("mode"), choices=("directional", "laplacian"))
    _add_threshold_flags(p)
    for name in ("lee_window", "median_window", "min_cells", "buffer_radius_px", "cell_size_px", "seed"):
        p.add_argument(*_flag(name), type=int)
    p.add_argument(*_flag("search_radius_px"), type=float)

    p = sub.add_parser("dimred", help="dimension reduction and component selection")
    p.add_argument("--raster", required=True)
    p.add_argument("--method", choices=("pca", "ica", "mnf"), default="mnf")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output prefix for the component stack")
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--gray", help="write the selected component, stretched to 0..255, as .asc")

    p = sub.add_parser("extract", help="denoise, enhance and extract lineaments from a grey image")
    p.add_argument("--image", required=True, help="single-band .asc or .bsq")
    p.add_argument("--mode", choices=("directional", "laplacian"), default="directional")
    p.add_argument("--no-denoise", action="store_true", help="skip the Lee and median filters")
    p.add_argument("--out", required=True, help="output .geojson (or .csv)")
    _add_threshold_flags(p)

    p = sub.add_parser("hydro", help="stream mask from a DEM; optionally filter lineaments")
    p.add_argument("--dem", required=True)
    p.add_argument("--min-cells", type=int, default=1000)
    p.add_argument("--buffer-radius", type=int, default=5)
    p.add_argument("--streams", required=True, help="output stream mask .asc")
    p.add_argument("--buffer-out", help="output buffered mask .asc")
    p.add_argument("--lineaments", help="lineaments to filter (.geojson)")
    p.add_argument("--out", help="filtered lineaments output (.geojson)")

    p = sub.add_parser("analyze", help="density, rose, occurrence correlation and FCC ranking")
    p.add_argument("--lineaments", required=True)
    p.add_argument("--grid", required=True, help="raster defining the extent (.asc or .bsq)")
    p.add_argument("--occurrences")
    p.add_argument("--cell-size", type=int, default=10)
    p.add_argument("--search-radius", type=float, default=50.0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", help="write a synthetic test scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=None, help="per-band noise sigma (reflectance)")

    p = sub.add_parser("score", help="compare lineaments with a truth set")
    p.add_argument("--found", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tol", type=float, default=3.0)
    for sp in sub.choices.values():
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    return ap


def _threshold_kwargs(ns, mode: str) -> dict:
    kw = {k: getattr(ns, k) for k in ("filter_radius", "edge_gradient", "curve_length",
                                     "line_fitting_error", "angular_difference",
                                     "linking_distance", "force") if hasattr(ns, k)}
    kw.setdefault("edge_gradient", MODE_EDGE_GRADIENT[mode])
    return kw


def cmd_run(ns) -> int:
    cfg_keys = {f.name for f in fields(PipelineConfig)}
    merged = read_config_file(ns.config) if getattr(ns, "config", None) else {}
    merged.update({k: v for k, v in vars(ns).items() if k in cfg_keys and k != "threads"})
    # thread count: flag, then config file, then environment
    if ns.threads is not None or "threads" not in merged:
        merged["threads"] = ns.threads_resolved
    cfg = PipelineConfig.from_dict(merged)
    if not cfg.raster or not cfg.dem:
        raise UsageError("run needs --raster and --dem (or raster/dem keys in the config file)")
    rep = run_pipeline(cfg)
    c = rep["counts"]
    print(f"{c['lineaments_raw']} raw lineaments, {c['lineaments_final']} after stream removal; "
          f"outputs in {cfg.out_dir}")
    return 0


def cmd_dimred(ns) -> int:
    r = read_raster(ns.raster)
    cs = dimred.reduce(r, ns.method, seed=ns.seed)
    write_multiband(cs.raster, ns.out)
    cs.report.write(Path(str(ns.out) + ".report.json"))
    if ns.gray:
        write_ascii_grid(dimred.select_component(cs, ns.component), ns.gray)
    print(json.dumps(cs.report.to_dict()))
    return 0


def cmd_extract(ns) -> int:
    img = read_raster(ns.image)
    if img.bands != 1:
        raise UsageError(f"{ns.image}: expected a single-band image, found {img.bands} bands")
    p = vectorize.ExtractionParams(**_threshold_kwargs(ns, ns.mode))
    if not ns.no_denoise:
        img = enhance.denoise(img)
    lset = vectorize.extract(img, p, mode=ns.mode, workers=ns.threads_resolved)
    fmt = "csv" if str(ns.out).lower().endswith(".csv") else "geojson"
    write_lineaments(lset, ns.out, fmt)
    print(f"{len(lset)} lineaments -> {ns.out}")
    return 0


def cmd_hydro(ns) -> int:
    dem = read_raster(ns.dem)
    _, st, buf = hydro.stream_mask_from_dem(dem, ns.min_cells, ns.buffer_radius)
    write_ascii_grid(st.as_raster(), ns.streams)
    if ns.buffer_out:
        write_ascii_grid(buf.as_raster(), ns.buffer_out)
    msg = f"{int(st.mask.sum())} stream cells"
    if ns.lineaments:
        if not ns.out:
            raise UsageError("--lineaments needs --out")
        lset = read_lineaments(ns.lineaments)
        kept = hydro.remove_stream_lineaments(lset, buf)
        write_lineaments(kept, ns.out)
        msg += f"; kept {len(kept)} of {len(lset)} lineaments"
    print(msg)
    return 0


def cmd_analyze(ns) -> int:
    grid = read_raster(ns.grid)
    lset = read_lineaments(ns.lineaments)
    if not lset.georef.aligned(grid.georef):
        raise hydro.GridMismatchError("lineaments and --grid raster have different georefs")
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = analyze.density(lset, (grid.height, grid.width), ns.cell_size, ns.search_radius, grid.georef)
    analyze.write_density(d, out / "density.asc")
    r = analyze.rose(lset)
    r.write_csv(out / "rose.csv")
    summary = {"lineaments": len(lset), "dominant_bin_deg": None if r.empty else list(r.dominant_bin())}
    if ns.occurrences:
        curve = analyze.correlate_occurrences(d, read_points(ns.occurrences))
        curve.write_csv(out / "correlation.csv")
        summary["correlation_auc"] = curve.auc
    if grid.bands >= 3:
        ranking, _ = analyze.rank_fcc_triplets(grid)
        with open(out / "fcc.csv", "w") as fh:
            fh.write("rank,bands,score\n")
            for k, t in enumerate(ranking, start=1):
                fh.write(f"{k},{'-'.join(map(str, t.bands))},{t.score!r}\n")
        summary["best_fcc"] = list(ranking[0].bands)
    print(json.dumps(summary))
    return 0


def cmd_synth(ns) -> int:
    spec = synth.default_scene()
    if ns.noise is not None:
        from dataclasses import replace
        spec = replace(spec, noise_sigma=ns.noise)
    sc = synth.make_synthetic(spec, seed=ns.seed)
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_multiband(sc.raster, out / "scene")
    write_ascii_grid(sc.dem, out / "dem.asc")
    write_points(sc.occurrences, out / "occurrences.csv")
    write_lineaments(sc.truth, out / "truth.geojson")
    print(f"scene {spec.width}x{spec.height}x{spec.bands}, {len(sc.truth)} truth lineaments -> {out}")
    return 0


def cmd_score(ns) -> int:
    found = read_lineaments(ns.found)
    truth = read_lineaments(ns.truth)
    s = synth.score_against_truth(found, truth, ns.tol)
    print(json.dumps(s.to_dict()))
    return 0


COMMANDS = {"run": cmd_run, "dimred": cmd_dimred, "extract": cmd_extract, "hydro": cmd_hydro,
            "analyze": cmd_analyze, "synth": cmd_synth, "score": cmd_score}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage; usage problems are validation errors here
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ns.threads_resolved = resolve_threads(ns.threads)
        return COMMANDS[ns.command](ns)
    except StageError as e:
        logger.error("%s", e)
        return 1 if is_validation_error(e) else 2
    except (ValueError, FileNotFoundError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        logger.error("%s: %s", type(e).__name__, e)
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
