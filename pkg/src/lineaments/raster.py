"""
Raster and vector data model plus file I/O.

Formats handled here:

* ESRI ASCII grid (``.asc``) for single-band rasters (DEM, components,
  stream masks, density grids).
* Raw band-sequential little-endian float32 (``<name>.bsq``) with a JSON
  sidecar (``<name>.hdr.json``) for multiband rasters.
* GeoJSON / CSV for lineament vectors, CSV for occurrence points.

Pixel (row, col) centres map to world coordinates as::

    x = origin_x + (col + 0.5) * pixel_size
    y = origin_y - (row + 0.5) * pixel_size

where (origin_x, origin_y) is the outer (north-west) corner of pixel (0, 0).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .vectorize import LineamentSet

logger = logging.getLogger(__name__)

DEFAULT_NODATA = -9999.0


class RasterFormatError(ValueError):
    """Malformed raster or sidecar file."""


@dataclass(frozen=True)
class GeoRef:
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0
    epsg_hint: str = ""

    def __post_init__(self):
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise ValueError("origin must be finite")

    def to_world(self, col, row):
        """Pixel coordinates (col, row) -> world (x, y). Works on arrays."""
        col = np.asarray(col, dtype=np.float64)
        row = np.asarray(row, dtype=np.float64)
        return (self.origin_x + (col + 0.5) * self.pixel_size,
                self.origin_y - (row + 0.5) * self.pixel_size)

    def to_pixel(self, x, y):
        """World (x, y) -> continuous pixel coordinates (col, row)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return ((x - self.origin_x) / self.pixel_size - 0.5,
                (self.origin_y - y) / self.pixel_size - 0.5)

    def to_dict(self) -> dict:
        return {"origin_x": self.origin_x, "origin_y": self.origin_y,
                "pixel_size": self.pixel_size, "epsg_hint": self.epsg_hint}

    def aligned(self, other: "GeoRef") -> bool:
        """Same origin and pixel size; the EPSG hint is informational only."""
        return (self.origin_x, self.origin_y, self.pixel_size) == (
            other.origin_x, other.origin_y, other.pixel_size)

    @classmethod
    def from_dict(cls, d: dict) -> "GeoRef":
        return cls(float(d["origin_x"]), float(d["origin_y"]),
                   float(d["pixel_size"]), str(d.get("epsg_hint") or ""))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MultibandRaster:
    """B x H x W samples (float64) with a per-pixel nodata mask.

    ``mask`` is True where a pixel is *invalid*. Arrays are made read-only
    on construction; derive new rasters with :meth:`replace`.
    """

    samples: np.ndarray
    mask: np.ndarray
    georef: GeoRef = field(default_factory=GeoRef)

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValueError(f"samples must be (bands, height, width), got {s.shape}")
        m = np.zeros(s.shape[1:], dtype=bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if m.shape != s.shape[1:]:
            raise ValueError(f"mask shape {m.shape} != raster shape {s.shape[1:]}")
        m |= ~np.isfinite(s).all(axis=0)
        s[:, m] = 0.0
        object.__setattr__(self, "samples", _frozen(s))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def bands(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def valid(self) -> np.ndarray:
        return ~self.mask

    @property
    def plane(self) -> np.ndarray:
        """The single plane of a greyscale image."""
        if self.bands != 1:
            raise ValueError(f"expected a 1-band image, raster has {self.bands} bands")
        return self.samples[0]

    def replace(self, samples=None, mask=None) -> "MultibandRaster":
        return MultibandRaster(self.samples if samples is None else samples,
                               self.mask if mask is None else mask,
                               self.georef)


# A GrayImage is a MultibandRaster with exactly one band.
GrayImage = MultibandRaster


def gray(plane, georef: GeoRef | None = None, mask=None) -> MultibandRaster:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("a grey image needs a 2-D plane")
    return MultibandRaster(plane[None], mask, georef or GeoRef())


@dataclass(frozen=True)
class PointSet:
    xs: tuple
    ys: tuple
    labels: tuple

    def __post_init__(self):
        if not (len(self.xs) == len(self.ys) == len(self.labels)):
            raise ValueError("xs, ys and labels must have equal length")
        if not all(math.isfinite(v) for v in (*self.xs, *self.ys)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return len(self.xs)

    @classmethod
    def from_points(cls, pts: Iterable[tuple]) -> "PointSet":
        xs, ys, labels = [], [], []
        for p in pts:
            xs.append(float(p[0]))
            ys.append(float(p[1]))
            labels.append(str(p[2]) if len(p) > 2 else "")
        return cls(tuple(xs), tuple(ys), tuple(labels))


# ---------------------------------------------------------------------------
# ESRI ASCII grid
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("ncols", "nrows", "cellsize")


def read_ascii_grid(path) -> MultibandRaster:
    """Read an ESRI ASCII grid into a 1-band raster."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()

    header = {}
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        key = parts[0].lower()
        if key[0].isalpha():
            if len(parts) != 2:
                raise RasterFormatError(f"{path}:{lineno + 1}: malformed header line")
            try:
                header[key] = float(parts[1])
            except ValueError:
                raise RasterFormatError(
                    f"{path}:{lineno + 1}: non-numeric value for {key!r}") from None
            lineno += 1
        else:
            break

    if "cellsize" not in header and "dx" in header and header.get("dx") == header.get("dy"):
        header["cellsize"] = header["dx"]
    elif "dx" in header or "dy" in header:
        raise RasterFormatError(f"{path}: non-square pixels (dx/dy) are not supported")
    for key in _REQUIRED_KEYS:
        if key not in header:
            raise RasterFormatError(f"{path}: missing required key {key!r}")
    if "xllcorner" in header:
        xll = header["xllcorner"]
    elif "xllcenter" in header:
        xll = header["xllcenter"] - header["cellsize"] / 2
    else:
        raise RasterFormatError(f"{path}: missing required key 'xllcorner'")
    if "yllcorner" in header:
        yll = header["yllcorner"]
    elif "yllcenter" in header:
        yll = header["yllcenter"] - header["cellsize"] / 2
    else:
        raise RasterFormatError(f"{path}: missing required key 'yllcorner'")

    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1 or ncols != header["ncols"] or nrows != header["nrows"]:
        raise RasterFormatError(f"{path}: ncols/nrows must be positive integers")
    nodata = header.get("nodata_value")

    data = np.empty((nrows, ncols), dtype=np.float64)
    row = 0
    for i in range(lineno, len(lines)):
        parts = lines[i].split()
        if not parts:
            continue
        if row >= nrows:
            raise RasterFormatError(f"{path}:{i + 1}: more than {nrows} data rows")
        if len(parts) != ncols:
            raise RasterFormatError(
                f"{path}:{i + 1}: expected {ncols} values, found {len(parts)}")
        try:
            data[row] = [float(p) for p in parts]
        except ValueError:
            raise RasterFormatError(f"{path}:{i + 1}: non-numeric cell value") from None
        row += 1
    if row != nrows:
        raise RasterFormatError(f"{path}: expected {nrows} data rows, found {row}")

    mask = ~np.isfinite(data)
    if nodata is not None:
        mask |= data == nodata
    cs = header["cellsize"]
    georef = GeoRef(xll, yll + nrows * cs, cs)
    return MultibandRaster(data[None], mask, georef)


def _fmt(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_ascii_grid(img: MultibandRaster, path, nodata: float = DEFAULT_NODATA) -> None:
    """Write a 1-band raster as an ESRI ASCII grid (masked cells -> nodata)."""
    plane = img.plane
    g = img.georef
    if np.any(plane[img.valid] == nodata):
        raise ValueError(f"valid samples collide with nodata value {nodata}")
    h, w = plane.shape
    out = [
        f"ncols {w}",
        f"nrows {h}",
        f"xllcorner {_fmt(g.origin_x)}",
        f"yllcorner {_fmt(g.origin_y - h * g.pixel_size)}",
        f"cellsize {_fmt(g.pixel_size)}",
        f"NODATA_value {_fmt(nodata)}",
    ]
    nd = _fmt(nodata)
    for r in range(h):
        vals = plane[r]
        m = img.mask[r]
        out.append(" ".join(nd if m[c] else _fmt(vals[c]) for c in range(w)))
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Multiband raw (BSQ + JSON sidecar)
# ---------------------------------------------------------------------------

def _bsq_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    if name.endswith(".hdr.json"):
        stem = name[: -len(".hdr.json")]
    elif name.endswith(".bsq"):
        stem = name[: -len(".bsq")]
    else:
        stem = name
    return p.with_name(stem + ".bsq"), p.with_name(stem + ".hdr.json")


def read_multiband(path) -> MultibandRaster:
    """Read ``<name>.bsq`` + ``<name>.hdr.json``."""
    bsq, hdr_path = _bsq_paths(path)
    try:
        hdr = json.loads(hdr_path.read_text())
    except json.JSONDecodeError as e:
        raise RasterFormatError(f"{hdr_path}: invalid JSON ({e})") from None
    try:
        w, h, b = int(hdr["width"]), int(hdr["height"]), int(hdr["bands"])
        georef = GeoRef(float(hdr["origin_x"]), float(hdr["origin_y"]),
                        float(hdr["pixel_size"]), str(hdr.get("epsg_hint") or ""))
    except KeyError as e:
        raise RasterFormatError(f"{hdr_path}: missing required key {e.args[0]!r}") from None
    for key in ("rotation", "skew_x", "skew_y"):
        if float(hdr.get(key) or 0.0) != 0.0:
            raise RasterFormatError(f"{hdr_path}: rotated or skewed grids are not supported ({key})")
    if b < 1:
        raise RasterFormatError(f"{hdr_path}: bands must be >= 1, got {b}")
    if w < 1 or h < 1:
        raise RasterFormatError(f"{hdr_path}: width/height must be >= 1")
    payload = bsq.read_bytes()
    expected = w * h * b * 4
    if len(payload) != expected:
        raise RasterFormatError(
            f"{bsq}: payload size mismatch (expected {expected} bytes, found {len(payload)})")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(b, h, w)
    mask = ~np.isfinite(data).all(axis=0)
    nodata = hdr.get("nodata")
    if nodata is not None:
        mask |= (data == float(nodata)).any(axis=0)
    return MultibandRaster(data, mask, georef)


def write_multiband(r: MultibandRaster, path, nodata: float | None = None) -> None:
    bsq, hdr_path = _bsq_paths(path)
    data = r.samples.astype("<f4")
    if r.mask.any():
        nodata = DEFAULT_NODATA if nodata is None else nodata
        data[:, r.mask] = nodata
    g = r.georef
    hdr = {"width": r.width, "height": r.height, "bands": r.bands,
           "origin_x": g.origin_x, "origin_y": g.origin_y, "pixel_size": g.pixel_size}
    if nodata is not None:
        hdr["nodata"] = nodata
    if g.epsg_hint:
        hdr["epsg_hint"] = g.epsg_hint
    bsq.write_bytes(data.tobytes(order="C"))
    hdr_path.write_text(json.dumps(hdr, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Vectors and points
# ---------------------------------------------------------------------------

def write_lineaments(lset: "LineamentSet", path, format: str = "geojson") -> None:
    """Serialize a LineamentSet in world coordinates.

    GeoJSON carries the georef and provenance as foreign members so the file
    can be read back into pixel space; CSV holds one row per vertex.
    """
    g = lset.georef
    if format == "geojson":
        features = []
        for lin in lset.lineaments:
            xs, ys = g.to_world(lin.vertices[:, 0], lin.vertices[:, 1])
            features.append({
                "type": "Feature",
                "geometry": {"type": "LineString",
                             "coordinates": [[float(x), float(y)] for x, y in zip(xs, ys)]},
                "properties": {
                    "id": lin.id,
                    "length_m": lin.pixel_length() * g.pixel_size,
                    "mean_azimuth_deg": lin.mean_azimuth(),
                },
            })
        doc = {"type": "FeatureCollection", "georef": g.to_dict(),
               "provenance": lset.provenance, "features": features}
        text = json.dumps(doc, indent=1)
        Path(path).write_text(text + "\n")
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["id", "seq", "x", "y"])
            for lin in lset.lineaments:
                xs, ys = g.to_world(lin.vertices[:, 0], lin.vertices[:, 1])
                for seq, (x, y) in enumerate(zip(xs, ys)):
                    wr.writerow([lin.id, seq, repr(float(x)), repr(float(y))])
    else:
        raise ValueError(f"unknown lineament format {format!r}")


def read_lineaments(path, georef: GeoRef | None = None) -> "LineamentSet":
    """Read a GeoJSON file produced by :func:`write_lineaments`."""
    from .vectorize import Lineament, LineamentSet

    doc = json.loads(Path(path).read_text())
    if doc.get("type") != "FeatureCollection":
        raise RasterFormatError(f"{path}: not a GeoJSON FeatureCollection")
    if georef is None:
        if "georef" not in doc:
            raise RasterFormatError(f"{path}: no georef member; pass one explicitly")
        georef = GeoRef.from_dict(doc["georef"])
    lins = []
    for i, feat in enumerate(doc["features"]):
        geom = feat["geometry"]
        if geom["type"] != "LineString":
            raise RasterFormatError(f"{path}: feature {i} is {geom['type']}, expected LineString")
        xy = np.asarray(geom["coordinates"], dtype=np.float64)
        col, row = georef.to_pixel(xy[:, 0], xy[:, 1])
        fid = feat.get("properties", {}).get("id", i)
        lins.append(Lineament(np.column_stack([col, row]), int(fid)))
    return LineamentSet(tuple(lins), georef, str(doc.get("provenance", "")))


def read_points(path) -> PointSet:
    """Read an occurrences CSV with header ``x,y,label``."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or not {"x", "y"} <= set(rd.fieldnames):
            raise RasterFormatError(f"{path}: expected header x,y,label")
        pts = []
        for n, rec in enumerate(rd, start=2):
            try:
                pts.append((float(rec["x"]), float(rec["y"]), rec.get("label") or ""))
            except (TypeError, ValueError):
                raise RasterFormatError(f"{path}:{n}: non-numeric coordinate") from None
    return PointSet.from_points(pts)


def write_points(pts: PointSet, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y", "label"])
        for x, y, lab in zip(pts.xs, pts.ys, pts.labels):
            wr.writerow([repr(x), repr(y), lab])


def same_grid(a: MultibandRaster, b: MultibandRaster) -> bool:
    """Same pixel grid: shape, origin and pixel size (EPSG hints may differ)."""
    return a.georef.aligned(b.georef) and a.samples.shape[1:] == b.samples.shape[1:]


def stack(planes: Sequence[np.ndarray], georef: GeoRef, mask=None) -> MultibandRaster:
    return MultibandRaster(np.stack([np.asarray(p, dtype=np.float64) for p in planes]), mask, georef)
