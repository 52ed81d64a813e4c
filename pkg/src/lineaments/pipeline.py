"""
End-to-end lineament pipeline.

dimension reduction -> component selection -> Lee -> median -> edge
enhancement -> extraction -> stream masking -> density, rose and
occurrence analyses. Every artifact is written as soon as its stage
finishes, so a failure part way through leaves the earlier outputs on disk
next to a report naming the failed stage.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import analyze, dimred, enhance, hydro, vectorize
from .raster import (MultibandRaster, RasterFormatError, read_ascii_grid, read_multiband,
                     read_points, same_grid, write_ascii_grid, write_lineaments)

logger = logging.getLogger(__name__)

MODES = ("directional", "laplacian")
METHODS = ("pca", "ica", "mnf")
# proposed edge_gradient per enhancement mode; every other threshold shares one default
MODE_EDGE_GRADIENT = {"directional": 50.0, "laplacian": 10.0}

OUTPUT_FILES = ("lineaments.geojson", "lineaments_raw.geojson", "streams.asc", "density.asc",
                "rose.csv", "correlation.csv", "report.json")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    raster: str = ""
    dem: str = ""
    occurrences: str | None = None
    out_dir: str = "out"
    dimred: str = "mnf"
    component: int = 0
    mode: str = "directional"
    filter_radius: int = 5
    edge_gradient: float | None = None       # None -> the mode's proposed value
    curve_length: int = 50
    line_fitting_error: float = 5.0
    angular_difference: float = 10.0
    linking_distance: float = 50.0
    force: bool = False
    lee_window: int = 3
    median_window: int = 3
    min_cells: int = 1000
    buffer_radius_px: int = 5
    cell_size_px: int = 10
    search_radius_px: float = 50.0
    seed: int = 42
    threads: int = 1

    def __post_init__(self):
        if self.dimred not in METHODS:
            raise ConfigError(f"dimred must be one of {', '.join(METHODS)}, got {self.dimred!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.component < 0:
            raise ConfigError("component must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("lee_window", "median_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.min_cells < 1:
            raise ConfigError("min_cells must be >= 1")
        if self.buffer_radius_px < 0:
            raise ConfigError("buffer_radius_px must be >= 0")
        if self.cell_size_px < 1 or self.search_radius_px < self.cell_size_px:
            raise ConfigError("need cell_size_px >= 1 and search_radius_px >= cell_size_px")
        # range checks for the six thresholds happen here so a bad config
        # fails before any stage runs
        self.extraction_params()

    @property
    def effective_edge_gradient(self) -> float:
        if self.edge_gradient is None:
            return MODE_EDGE_GRADIENT[self.mode]
        return float(self.edge_gradient)

    def extraction_params(self) -> vectorize.ExtractionParams:
        return vectorize.ExtractionParams(
            filter_radius=self.filter_radius, edge_gradient=self.effective_edge_gradient,
            curve_length=self.curve_length, line_fitting_error=self.line_fitting_error,
            angular_difference=self.angular_difference, linking_distance=self.linking_distance,
            force=self.force)

    def mode_warnings(self) -> list:
        out = []
        eg = self.effective_edge_gradient
        if eg != MODE_EDGE_GRADIENT[self.mode]:
            out.append(f"edge_gradient={eg:g} is non-default for mode {self.mode} "
                       f"(proposed {MODE_EDGE_GRADIENT[self.mode]:g})")
        return out

    def to_dict(self) -> dict:
        """Effective parameters (the mode default is filled in)."""
        d = dataclasses.asdict(self)
        d["edge_gradient"] = self.effective_edge_gradient
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        """Build from a mapping; string values (config files, CLI) are coerced."""
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = _coerce(k, known[k].type, v)
        return cls(**kw)


def _coerce(name: str, typ: str, v):
    if v is None:
        return None
    if not isinstance(v, str):
        if "float" in typ and isinstance(v, int) and not isinstance(v, bool):
            return float(v)
        return v
    s = v.strip()
    if "None" in typ and s.lower() in ("", "none", "default"):
        return None
    try:
        if typ.startswith("bool"):
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if typ.startswith("int"):
            return int(s)
        if typ.startswith("float"):
            return float(s)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {v!r} as {typ.split(' ')[0]}") from None
    return s


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        k, v = (t.strip() for t in line.split("=", 1))
        if not k:
            raise ConfigError(f"{path}:{n}: empty key")
        out[k] = v
    return out


def read_raster(path) -> MultibandRaster:
    """ASCII grid for ``.asc`` paths, otherwise the BSQ + JSON header pair."""
    p = Path(path)
    if p.suffix.lower() == ".asc":
        return read_ascii_grid(p)
    return read_multiband(p)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class _Run:
    """Mutable run state: timings, counts, warnings and files written so far."""

    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.timings = {}
        self.counts = {}
        self.warnings = []
        self.files = []
        self.extra = {}

    def warn(self, msg: str) -> None:
        logger.warning("%s", msg)
        self.warnings.append(msg)

    @contextmanager
    def stage(self, name: str):
        logger.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            self.timings[name] = time.perf_counter() - t0
            raise StageError(name, e) from e
        self.timings[name] = time.perf_counter() - t0

    def wrote(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def report(self, status: str, error: StageError | None = None) -> dict:
        rep = {
            "status": status,
            "parameters": self.cfg.to_dict(),
            "counts": self.counts,
            "warnings": self.warnings,
            "outputs": self.files + ["report.json"],
            "timings_s": self.timings,
        }
        rep.update(self.extra)
        if error is not None:
            rep["error"] = {"stage": error.stage, "type": type(error.cause).__name__,
                            "message": str(error.cause)}
        return rep

    def flush(self, status: str, error: StageError | None = None) -> dict:
        rep = self.report(status, error)
        (self.out / "report.json").write_text(
            json.dumps(rep, indent=2, sort_keys=True, default=_json_default) + "\n")
        return rep


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage and write the artifacts into ``cfg.out_dir``.

    Returns the report dictionary (also written as report.json). Raises
    StageError when a stage fails; report.json then carries the error.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)
    for msg in cfg.mode_warnings():
        run.warn(msg)
    try:
        _stages(cfg, run)
    except StageError as e:
        logger.error("%s", e)
        run.flush("failed", e)
        raise
    return run.flush("ok")


def _stages(cfg: PipelineConfig, run: _Run) -> None:
    p = cfg.extraction_params()

    with run.stage("load"):
        raster = read_raster(cfg.raster)
        dem = read_raster(cfg.dem)
        if dem.bands != 1:
            raise RasterFormatError(f"{cfg.dem}: DEM must have one band, found {dem.bands}")
        if not same_grid(raster, dem):
            raise hydro.GridMismatchError(
                f"DEM grid {dem.height}x{dem.width} @ {dem.georef} does not match raster grid "
                f"{raster.height}x{raster.width} @ {raster.georef}")
        # the DEM shares the raster's grid; carry one georef through every stage
        dem = MultibandRaster(dem.samples, dem.mask, raster.georef)
        pts = read_points(cfg.occurrences) if cfg.occurrences else None
        run.counts.update(bands=raster.bands, height=raster.height, width=raster.width,
                          valid_pixels=int(raster.valid.sum()))

    with run.stage("dimred"):
        cs = dimred.reduce(raster, cfg.dimred, seed=cfg.seed)
        rep = cs.report.to_dict() if cs.report is not None else {}
        run.extra["dimred"] = rep
        if rep.get("converged") is False:
            run.warn(f"{cfg.dimred} did not converge; using the best iterate")
        gray = dimred.select_component(cs, cfg.component)

    with run.stage("denoise"):
        den = enhance.denoise(gray, cfg.lee_window, None, cfg.median_window)

    with run.stage("enhance"):
        images = enhance.enhance(den, cfg.mode)

    with run.stage("extract"):
        results = vectorize.extract_images(images, p, cfg.threads)
        raw = vectorize.union([ls for _, _, ls in results], raster.georef, cfg.mode)
        run.counts["edge_pixels"] = {name: e.count() for name, e, _ in results}
        run.counts["lineaments_per_image"] = {name: len(ls) for name, _, ls in results}
        run.counts["lineaments_raw"] = len(raw)
        write_lineaments(raw, run.wrote("lineaments_raw.geojson"))

    with run.stage("hydro"):
        flow, st, buf = hydro.stream_mask_from_dem(dem, cfg.min_cells, cfg.buffer_radius_px)
        final = hydro.remove_stream_lineaments(raw, buf).renumbered()
        run.counts.update(stream_cells=int(st.mask.sum()), buffer_cells=int(buf.mask.sum()),
                          lineaments_final=len(final))
        write_ascii_grid(st.as_raster(), run.wrote("streams.asc"))
        write_lineaments(final, run.wrote("lineaments.geojson"))

    with run.stage("analyze"):
        d = analyze.density(final, (raster.height, raster.width), cfg.cell_size_px,
                            cfg.search_radius_px, raster.georef)
        analyze.write_density(d, run.wrote("density.asc"))
        r = analyze.rose(final)
        r.write_csv(run.wrote("rose.csv"))
        run.extra["rose"] = {"dominant_bin_deg": None if r.empty else list(r.dominant_bin()),
                             "total_length_px": float(r.length_sum.sum())}
        run.extra["density"] = {"max_raw_m": float(d.raw.max()), "shape": list(d.raw.shape)}
        if raster.bands >= 3:
            ranking, _ = analyze.rank_fcc_triplets(raster)
            run.extra["fcc_ranking"] = [{"bands": list(t.bands), "score": t.score} for t in ranking[:5]]
        if pts is not None:
            curve = analyze.correlate_occurrences(d, pts)
            curve.write_csv(run.wrote("correlation.csv"))
            run.counts["occurrences"] = curve.n_points
            run.counts["occurrences_outside"] = curve.n_outside
            if curve.n_outside:
                run.warn(f"{curve.n_outside} occurrence point(s) outside the density grid")
            run.extra["correlation_auc"] = curve.auc


def is_validation_error(e: BaseException) -> bool:
    """Errors caused by bad input or parameters, as opposed to runtime failures."""
    cause = e.cause if isinstance(e, StageError) else e
    return isinstance(cause, (ValueError, FileNotFoundError))
