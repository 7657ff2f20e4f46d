"""Command-line interface: ``streamseg <segment|compare|search|synth|info>``.

Exit status is 0 on success, 1 for invalid input (bad flags, unreadable or
malformed files, config errors) and 2 for any other failure. Logs go to
standard error; listings and reports go to standard output or files.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import DegenerateStreamlineError, length, resample_many
from .io import (BUNDLE_COLUMNS, ConfigError, TckFormatError, bundle_record,
                 comparison_record, load_config, read_tck, write_report, write_table,
                 write_tck)
from .metrics import GridMismatchError, compare_bundles
from .search import build_index, radius_search
from .segmentation import segment_all
from .synth import SynthSpec, compose_scene, generate

logger = logging.getLogger("streamseg")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

COMPARE_COLUMNS = ("name", "mode", "dice", "adjacency", "volume_delta", "count_delta",
                   "mean_length_delta", "streamline_dice")


class UsageError(Exception):
    """Invalid invocation or input; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, "%s: error: %s\n" % (self.prog, message))


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive, got %s" % text)
    return value


def _build_arg_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="Only log warnings and errors.")
    p = _Parser(prog="streamseg", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("segment", parents=[common],
                       help="Segment atlas bundles from a tractogram.")
    s.add_argument("--tractogram", required=True, help="Input whole-brain tractogram (.tck).")
    s.add_argument("--config", required=True, help="Atlas configuration (JSON).")
    s.add_argument("--out", required=True, help="Output directory.")
    s.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="Bundles segmented in parallel [%(default)s].")
    s.add_argument("--overwrite", action="store_true", help="Replace existing outputs.")
    s.add_argument("--no-figures", action="store_true", help="Skip the PNG figure.")

    c = sub.add_parser("compare", parents=[common],
                       help="Agreement measures between two bundle files.")
    c.add_argument("--a", required=True, help="First bundle (.tck).")
    c.add_argument("--b", required=True, help="Second bundle (.tck).")
    c.add_argument("--mode", required=True, choices=("run-rerun", "scan-rescan"))
    c.add_argument("--voxel-size", type=_positive, default=1.0,
                   help="Isotropic voxel size in mm [%(default)s].")
    c.add_argument("--name", default=None, help="Bundle label in the report.")
    c.add_argument("--out", default=None,
                   help="Directory for report.json, report.tsv and a figure.")
    c.add_argument("--overwrite", action="store_true")

    q = sub.add_parser("search", parents=[common],
                       help="List streamlines within an MDF radius of queries.")
    q.add_argument("--tractogram", required=True)
    q.add_argument("--queries", required=True, help="Query streamlines (.tck).")
    q.add_argument("--radius", required=True, type=_positive, help="MDF radius in mm.")
    q.add_argument("--points", type=int, default=32, help="Resampling points [%(default)s].")

    y = sub.add_parser("synth", parents=[common],
                       help="Generate a synthetic scene, models and atlas config.")
    y.add_argument("--spec", required=True, help="Scene description (JSON).")
    y.add_argument("--out", required=True, help="Output directory.")
    y.add_argument("--overwrite", action="store_true")

    i = sub.add_parser("info", parents=[common],
                       help="Summary statistics of a tractogram.")
    i.add_argument("path")
    return p


def _read(path):
    if not Path(path).is_file():
        raise UsageError("file not found: %s" % path)
    return read_tck(path)


def _claim_outputs(paths, overwrite):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise UsageError("refusing to overwrite %s (use --overwrite)" % ", ".join(existing))


def cmd_segment(args):
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    config = load_config(args.config)
    tract = _read(args.tractogram)
    out = Path(args.out)
    outputs = [out / ("%s.tck" % b.name) for b in config.bundles]
    outputs += [out / "report.json", out / "report.tsv"]
    if not args.no_figures:
        outputs.append(out / "report_iterations.png")
    _claim_outputs(outputs, args.overwrite)
    out.mkdir(parents=True, exist_ok=True)

    source = str(args.tractogram)
    logger.info("indexing %d streamlines", len(tract))
    idx = build_index(tract, config.resample_points)
    models = config.load_models()
    results = segment_all(idx, models, config.registration, config.global_affine,
                          threads=args.threads, provenance=source)
    records = []
    for res in results:
        selected = [tract.streamlines[i] for i in res.selected_ids]
        write_tck(selected, out / ("%s.tck" % res.name), {"source": source, "bundle": res.name})
        records.append(bundle_record(res, selected, config.voxel_size))
        logger.info("%s: %d streamlines%s", res.name, len(selected),
                    " (%s)" % res.warning if res.warning else "")
    write_report(out / "report.json", records, source=source)
    write_table(out / "report.tsv", records, BUNDLE_COLUMNS)
    if not args.no_figures:
        from .plotting import plot_iterations
        plot_iterations(records, out / "report_iterations.png")
    return EXIT_OK


def cmd_compare(args):
    a, b = _read(args.a), _read(args.b)
    for t, path in ((a, args.a), (b, args.b)):
        t.provenance = t.metadata["header"].get("source", str(path))
    name = args.name or a.metadata["header"].get("bundle") or Path(args.a).stem
    report = compare_bundles(a, b, args.mode, voxel_size=args.voxel_size, name=name)
    record = comparison_record(report)
    if args.out:
        out = Path(args.out)
        files = [out / "report.json", out / "report.tsv", out / "report_comparison.png"]
        _claim_outputs(files, args.overwrite)
        out.mkdir(parents=True, exist_ok=True)
        write_report(files[0], comparisons=[report])
        write_table(files[1], [record], COMPARE_COLUMNS)
        from .plotting import plot_comparison
        plot_comparison([report], files[2])
    print(json.dumps(record, indent=2))
    return EXIT_OK


def cmd_search(args):
    if args.points < 2:
        raise UsageError("--points must be >= 2")
    tract = _read(args.tractogram)
    queries = _read(args.queries)
    if len(tract) == 0:
        raise UsageError("tractogram %s is empty" % args.tractogram)
    idx = build_index(tract, args.points)
    matches = radius_search(idx, resample_many(queries.streamlines, args.points), args.radius)
    lines = ["query_id\ttarget_id\tdistance_mm"]
    lines += ["%d\t%d\t%.6f" % row for row in matches.sorted_by_distance()]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _scene_from_doc(doc):
    """Scene JSON -> (bundle (spec, offset, radius) list, decoy spec, decoy offset)."""
    bundles = []
    for entry in doc.get("bundles", []):
        entry = dict(entry)
        offset = entry.pop("offset", (0.0, 0.0, 0.0))
        radius = entry.pop("prune_radius_mm", 8.0)
        bundles.append((SynthSpec.from_dict(entry), offset, radius))
    decoys, decoy_offset = None, (0.0, 0.0, 0.0)
    if doc.get("decoys"):
        d = dict(doc["decoys"])
        decoy_offset = d.pop("offset", decoy_offset)
        decoys = SynthSpec.from_dict(dict(d, name="decoys"))
    return bundles, decoys, decoy_offset


def cmd_synth(args):
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise UsageError("file not found: %s" % spec_path)
    try:
        doc = json.loads(spec_path.read_text(encoding="utf-8"))
        bundles, decoys, decoy_offset = _scene_from_doc(doc)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError("%s: invalid scene description (%s)" % (spec_path, exc))
    out = Path(args.out)
    outputs = [out / "tractogram.tck", out / "ground_truth.json", out / "atlas.json"]
    outputs += [out / "models" / ("%s.tck" % spec.name) for spec, _, _ in bundles]
    _claim_outputs(outputs, args.overwrite)
    (out / "models").mkdir(parents=True, exist_ok=True)

    tract, truth = compose_scene([(s, o) for s, o, _ in bundles], decoys, decoy_offset)
    write_tck(tract, out / "tractogram.tck", {"source": "synthetic"})
    (out / "ground_truth.json").write_text(json.dumps(truth) + "\n", encoding="utf-8")
    seed_offset = int(doc.get("model_seed_offset", 1000))
    entries = []
    for spec, offset, radius in bundles:
        model_spec = replace(spec, seed=(spec.seed + seed_offset) % 2 ** 64)
        model = [s + np.asarray(offset, dtype=float) for s in generate(model_spec).streamlines]
        write_tck(model, out / "models" / ("%s.tck" % spec.name), {"bundle": spec.name})
        entries.append({"name": spec.name, "model_file": "models/%s.tck" % spec.name,
                        "prune_radius_mm": radius})
    atlas = {"resample_points": int(doc.get("resample_points", 32)), "bundles": entries}
    (out / "atlas.json").write_text(json.dumps(atlas, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %d streamlines and %d models to %s", len(tract), len(entries), out)
    return EXIT_OK


def _stats(values):
    if len(values) == 0:
        return None
    values = np.asarray(values, dtype=float)
    return {"min": float(values.min()), "mean": float(values.mean()),
            "max": float(values.max()), "std": float(values.std())}


def cmd_info(args):
    tract = _read(args.path)
    summary = {"path": args.path, "count": len(tract)}
    summary["points"] = _stats([len(s) for s in tract.streamlines])
    summary["length_mm"] = _stats([length(s) for s in tract.streamlines])
    if len(tract):
        pts = np.concatenate(tract.streamlines)
        summary["bbox_mm"] = {"min": pts.min(axis=0).tolist(), "max": pts.max(axis=0).tolist()}
    else:
        summary["bbox_mm"] = None
    summary["header"] = tract.metadata.get("header", {})
    print(json.dumps(summary, indent=2))
    return EXIT_OK


COMMANDS = {"segment": cmd_segment, "compare": cmd_compare, "search": cmd_search,
            "synth": cmd_synth, "info": cmd_info}


def main(argv=None):
    args = _build_arg_parser().parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING if quiet else logging.INFO)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream closed the pipe (e.g. `| head`); not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (UsageError, ConfigError, TckFormatError, GridMismatchError,
            DegenerateStreamlineError, FileNotFoundError, PermissionError,
            IsADirectoryError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
