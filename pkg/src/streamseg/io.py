"""TCK tractogram files, atlas configuration and report documents."""
from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DEFAULT_POINTS, TRANSFORM_KINDS, Transform, Tractogram
from .registration import OptimizerConfig
from .segmentation import (DEFAULT_SCHEDULE_STEPS, DEFAULT_START_FACTOR, BundleModel,
                           RegistrationConfig)

logger = logging.getLogger(__name__)

TCK_MAGIC = "mrtrix tracks"
_FLOAT32_EXACT = 2.0 ** 24
_RESERVED_KEYS = ("count", "datatype", "file")


class TckFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------- TCK

def read_tck(path) -> Tractogram:
    """Read an MRtrix ``.tck`` file (``Float32LE`` payload).

    Extra header keys land in ``metadata['header']``.
    """
    path = Path(path)
    data = path.read_bytes()
    first, _, _ = data.partition(b"\n")
    if first.strip() != TCK_MAGIC.encode():
        raise TckFormatError("%s: not a tck file (bad magic line %r)" % (path, first[:40]))
    end = data.find(b"\nEND\n")
    if end < 0:
        raise TckFormatError("%s: header has no END line" % path)
    header = {}
    for line in data[len(first) + 1:end].decode("utf-8", "replace").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise TckFormatError("%s: malformed header line %r" % (path, line))
        header[key.strip()] = value.strip()

    datatype = header.get("datatype")
    if datatype != "Float32LE":
        raise TckFormatError("%s: unsupported datatype %r (only Float32LE)" % (path, datatype))
    try:
        dot, offset = header["file"].split()
        offset = int(offset)
        if dot != ".":
            raise ValueError
    except (KeyError, ValueError):
        raise TckFormatError("%s: missing or unsupported 'file: . <offset>' entry" % path)
    if offset < end + 5 or offset > len(data):
        raise TckFormatError("%s: data offset %d outside the file" % (path, offset))

    n_triplets = (len(data) - offset) // 12
    rows = np.frombuffer(data, dtype="<f4", count=n_triplets * 3, offset=offset)
    rows = rows.reshape(-1, 3)
    inf_rows = np.nonzero(np.all(np.isposinf(rows), axis=1))[0]
    if len(inf_rows) == 0:
        raise TckFormatError("%s: truncated payload, no end-of-file (Inf) triplet before "
                             "byte offset %d" % (path, offset + n_triplets * 12))
    rows = rows[:inf_rows[0]]
    nan_rows = np.all(np.isnan(rows), axis=1)
    bad = ~nan_rows & ~np.all(np.isfinite(rows), axis=1)
    if bad.any():
        at = offset + 12 * int(np.argmax(bad))
        raise TckFormatError("%s: non-finite coordinate at byte offset %d" % (path, at))

    breaks = np.nonzero(nan_rows)[0]
    streamlines, prev, n_empty = [], 0, 0
    for b in breaks:
        if b > prev:
            streamlines.append(rows[prev:b].astype(float))
        else:
            n_empty += 1
        prev = b + 1
    if prev < len(rows):
        logger.warning("%s: last streamline is not NaN-terminated", path)
        streamlines.append(rows[prev:].astype(float))
    if n_empty:
        logger.warning("%s: skipped %d empty streamlines", path, n_empty)

    if "count" in header:
        try:
            declared = int(header["count"])
        except ValueError:
            declared = None
        if declared != len(streamlines):
            warnings.warn("%s: header count %s but %d streamlines parsed"
                          % (path, header["count"], len(streamlines)))
    extra = {k: v for k, v in header.items() if k not in _RESERVED_KEYS}
    return Tractogram(streamlines, str(path), {"header": extra})


def _tck_header(count, extra):
    lines = [TCK_MAGIC, "count: %d" % count, "datatype: Float32LE"]
    for key in sorted(extra):
        key_s, val_s = str(key).strip(), str(extra[key]).replace("\n", " ").strip()
        if not key_s or ":" in key_s or key_s in _RESERVED_KEYS or key_s == "END":
            raise ValueError("invalid tck header key %r" % key)
        lines.append("%s: %s" % (key_s, val_s))
    head = "\n".join(lines) + "\n"
    offset = len(head.encode()) + len("file: . \nEND\n")
    while True:
        text = head + "file: . %d\nEND\n" % offset
        if len(text.encode()) == offset:
            return text.encode()
        offset = len(text.encode())


def write_tck(tractogram, path, header: Optional[dict] = None):
    """Write streamlines as a ``Float32LE`` tck file with deterministic bytes."""
    streamlines = list(getattr(tractogram, "streamlines", tractogram))
    if header is None:
        header = getattr(tractogram, "metadata", {}).get("header", {})
    parts = [_tck_header(len(streamlines), header or {})]
    sep = np.full(3, np.nan, dtype="<f4").tobytes()
    lossy = False
    for s in streamlines:
        s = np.asarray(s, dtype=float)
        lossy = lossy or bool(np.any(np.abs(s) > _FLOAT32_EXACT))
        parts.append(s.astype("<f4").tobytes())
        parts.append(sep)
    parts.append(np.full(3, np.inf, dtype="<f4").tobytes())
    if lossy:
        warnings.warn("coordinates above 2**24 lose precision in float32 tck output")
    Path(path).write_bytes(b"".join(parts))


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class BundleEntry:
    name: str
    model_file: str
    prune_radius_mm: float
    schedule_steps: int = DEFAULT_SCHEDULE_STEPS
    start_factor: float = DEFAULT_START_FACTOR


@dataclass(frozen=True)
class AtlasConfig:
    bundles: tuple
    resample_points: int = DEFAULT_POINTS
    voxel_size: float = 1.0
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    global_affine: Optional[Transform] = None
    base_dir: str = "."

    def model_path(self, entry: BundleEntry) -> Path:
        return Path(self.base_dir) / entry.model_file

    def load_models(self):
        """Read and resample every bundle model, in config order."""
        models = []
        for entry in self.bundles:
            tract = read_tck(self.model_path(entry))
            if len(tract) == 0:
                raise ConfigError("bundle %r: model file %s has no streamlines"
                                  % (entry.name, self.model_path(entry)))
            models.append(BundleModel.from_streamlines(
                entry.name, tract.streamlines, entry.prune_radius_mm, self.resample_points,
                entry.schedule_steps, entry.start_factor))
        return models


_OPTIMIZER_KEYS = ("max_iterations", "translation_step", "rotation_step", "scale_step",
                   "convergence_tol", "min_step_ratio")


def _parse_affine(value):
    arr = np.asarray(value, dtype=float)
    if arr.size != 16:
        raise ConfigError("global_affine needs 16 numbers (4x4, row-major)")
    try:
        return Transform(arr.reshape(4, 4), "affine")
    except ValueError as exc:
        raise ConfigError("global_affine: %s" % exc)


def parse_config(doc: dict, base_dir=".") -> AtlasConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    m = doc.get("resample_points", DEFAULT_POINTS)
    if not isinstance(m, int) or m < 2:
        raise ConfigError("resample_points must be an integer >= 2, got %r" % (m,))
    voxel = doc.get("voxel_size", 1.0)
    if not isinstance(voxel, (int, float)) or not voxel > 0:
        raise ConfigError("voxel_size must be positive, got %r" % (voxel,))

    reg_doc = dict(doc.get("registration") or {})
    kind = reg_doc.pop("kind", "rigid")
    if kind not in TRANSFORM_KINDS:
        raise ConfigError("registration kind must be one of %s, got %r" % (TRANSFORM_KINDS, kind))
    enabled = bool(reg_doc.pop("enabled", True))
    unknown = set(reg_doc) - set(_OPTIMIZER_KEYS)
    if unknown:
        raise ConfigError("unknown registration settings: %s" % sorted(unknown))
    try:
        optimizer = OptimizerConfig(**reg_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError("registration: %s" % exc)

    raw_bundles = doc.get("bundles")
    if not isinstance(raw_bundles, list):
        raise ConfigError("config needs a 'bundles' list")
    entries, seen = [], set()
    for i, b in enumerate(raw_bundles):
        label = b.get("name", "#%d" % i) if isinstance(b, dict) else "#%d" % i
        if not isinstance(b, dict):
            raise ConfigError("bundle %s: entry must be an object" % label)
        for key in ("name", "model_file", "prune_radius_mm"):
            if key not in b:
                raise ConfigError("bundle %s: missing required field %r" % (label, key))
        unknown = set(b) - {f for f in BundleEntry.__dataclass_fields__}
        if unknown:
            raise ConfigError("bundle %s: unknown fields %s" % (label, sorted(unknown)))
        entry = BundleEntry(**b)
        if entry.name in seen:
            raise ConfigError("bundle %s: duplicate name" % label)
        seen.add(entry.name)
        if not isinstance(entry.prune_radius_mm, (int, float)) or not entry.prune_radius_mm > 0:
            raise ConfigError("bundle %s: prune_radius_mm must be positive, got %r"
                              % (label, entry.prune_radius_mm))
        if not isinstance(entry.schedule_steps, int) or entry.schedule_steps < 1:
            raise ConfigError("bundle %s: schedule_steps must be an integer >= 1" % label)
        if not entry.start_factor >= 1:
            raise ConfigError("bundle %s: start_factor must be >= 1" % label)
        model = Path(base_dir) / entry.model_file
        if not model.is_file() or not os.access(model, os.R_OK):
            raise ConfigError("bundle %s: model file %s is not readable" % (label, model))
        entries.append(entry)

    affine = doc.get("global_affine")
    return AtlasConfig(
        bundles=tuple(entries), resample_points=m, voxel_size=float(voxel),
        registration=RegistrationConfig(kind, enabled, optimizer),
        global_affine=None if affine is None else _parse_affine(affine),
        base_dir=str(base_dir))


def load_config(path) -> AtlasConfig:
    """Load a JSON atlas config; model paths are relative to its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except json.JSONDecodeError as exc:
        raise ConfigError("%s: invalid JSON (%s)" % (path, exc))
    return parse_config(doc, path.parent)


# ----------------------------------------------------------------- reports

def _num(x):
    """Round to 6 significant digits for stable, diffable output."""
    if x is None:
        return None
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    return float("%.6g" % float(x))


def bundle_record(result, streamlines, voxel_size=1.0):
    """Report entry for one segmented bundle (``streamlines`` = its selection)."""
    from .metrics import mean_length, volume, voxelize

    return {
        "name": result.name,
        "streamline_count": len(result.selected_ids),
        "volume_mm3": _num(volume(voxelize(streamlines, voxel_size=voxel_size))),
        "mean_length_mm": _num(mean_length(streamlines)),
        "final_transform": [[_num(v) for v in row] for row in result.final_transform.matrix],
        "iteration_log": [{"radius_mm": _num(it.radius), "matches": it.n_matches,
                           "cost_mm": _num(it.cost)} for it in result.iteration_log],
        "warning": result.warning,
        "selected_ids": [int(i) for i in result.selected_ids],
    }


def comparison_record(report):
    return {k: (v if isinstance(v, str) else _num(v)) for k, v in asdict(report).items()}


def write_report(path, bundles=(), comparisons=(), source=None):
    """Write a JSON report; identical inputs give identical bytes.

    ``bundles`` are records from :func:`bundle_record`, ``comparisons`` are
    ComparisonReport objects.
    """
    doc = {
        "format": "streamseg-report",
        "version": 1,
        "source": source,
        "bundles": list(bundles),
        "comparisons": [comparison_record(c) for c in comparisons],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


BUNDLE_COLUMNS = ("name", "streamline_count", "volume_mm3", "mean_length_mm", "warning")


def write_table(path, rows, columns):
    """Tab-separated table of ``rows`` (dicts) restricted to ``columns``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else row.get(c) for c in columns])
