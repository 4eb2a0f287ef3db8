"""``woundfill`` command line: gen, train, segment, extract, compare, info.

Reports go to stdout as JSON (or to ``--out``); progress and summaries go to
stderr.  Exit codes: 0 success, 1 usage error, 2 data or contract error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .filling import (
    FillingError,
    WoundSegmentation,
    as_predictor,
    cases_from_samples,
    compare_methods,
    extract_filling,
    save_filling,
    segment_wound,
)
from .losses import LOSS_KINDS
from .mesh import MeshError, check_watertight, mesh_volume
from .meshio import MeshLoadError, labels_path, load_mesh, write_labels
from .synthgen import InfeasiblePackingError, generate_dataset, read_dataset, write_dataset
from .trainer import (
    CheckpointError,
    NumericalError,
    Sample,
    load_checkpoint,
    select_best_model,
    training_report,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("woundfill")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj, out: Path | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# subcommands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _config(args)
    overrides = {}
    if args.bases is not None:
        overrides["bases"] = args.bases
    if args.wounds is not None:
        overrides["wound_count"] = args.wounds
    if args.level is not None:
        overrides["level"] = args.level
    if args.radius_range is not None:
        overrides["radius_range"] = tuple(args.radius_range)
    if args.depth_range is not None:
        overrides["depth_range"] = tuple(args.depth_range)
    synth = replace(cfg.synth, **overrides)
    samples = generate_dataset(synth)
    manifest = write_dataset(samples, args.out, synth)
    log.info("wrote %d samples to %s", len(samples), args.out)
    _emit({"out": str(args.out), "samples": len(manifest["samples"]), "config": synth.to_dict()})
    return EXIT_OK


def _load_samples(data_dir) -> list:
    _, pairs = read_dataset(data_dir)
    return pairs


def cmd_train(args) -> int:
    cfg = _config(args)
    train_cfg = cfg.train
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    losses = args.loss or list(LOSS_KINDS)
    pairs = _load_samples(args.data)
    dataset = [Sample.from_mesh(p.sample_id, p.wounded) for p in pairs]
    log.info("training %s on %d meshes", ", ".join(losses), len(dataset))
    report, results = select_best_model(dataset, losses, train_cfg, out_dir=args.out, parallel=args.parallel)
    full = training_report(report, results, train_cfg)
    full["run_config"] = replace(cfg, train=train_cfg).to_dict()
    if args.out is not None:
        _emit(full, Path(args.out) / "training_report.json")
    _emit(report.to_dict())
    log.info("chosen loss %s with validation mIoU %.5f", report.chosen_loss, report.best_mious[report.chosen_index])
    return EXIT_OK


def cmd_segment(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    mesh = load_mesh(args.mesh)
    seg = segment_wound(ckpt, mesh)
    labels = np.zeros(mesh.n_faces, dtype=np.int64)
    labels[seg.wound_faces] = 1
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_labels(args.out, labels)
    _emit({"mesh": str(args.mesh), "faces": mesh.n_faces, "wound_faces": int(len(seg)),
           "wound_vertices": int(len(seg.wound_vertices)), "labels": None if args.out is None else str(args.out)})
    return EXIT_OK


def cmd_extract(args) -> int:
    m_in = load_mesh(args.mesh)
    m_recon = load_mesh(args.recon)
    if args.checkpoint is not None:
        seg = segment_wound(load_checkpoint(args.checkpoint), m_in)
    else:
        lab = args.labels if args.labels is not None else labels_path(args.mesh)
        seg = WoundSegmentation.from_labels(m_in, load_mesh(args.mesh, labels=lab).labels)
    result = extract_filling(m_in, m_recon, seg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    json_path = save_filling(result, args.out)
    log.info("filler volume %.4f mm^3, %d faces -> %s", result.volume, result.mesh.n_faces, args.out)
    _emit({**result.summary(), "stl": str(args.out), "diagnostics": str(json_path)})
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.ground_truth and args.checkpoint is None:
        raise UsageError("compare needs --checkpoint or --ground-truth")
    cfg = _config(args)
    cases = cases_from_samples(_load_samples(args.data))
    if args.ground_truth:
        def model(mesh):
            # stub that echoes the stored labels as one-hot probabilities
            return np.eye(2)[mesh.labels]
    else:
        model = as_predictor(load_checkpoint(args.checkpoint))
    threshold = cfg.filling.threshold if args.threshold is None else args.threshold
    factor = cfg.filling.depth_factor if args.depth_factor is None else args.depth_factor
    if args.threshold is not None:
        factor = None
    report = compare_methods(cases, model, threshold=threshold, depth_factor=factor)
    out = report.to_dict()
    out["run_config"] = cfg.to_dict()
    _emit(out, args.out)
    log.info("mean accuracy ours %.7f, old %.7f over %d meshes",
             report.mean_accuracy_ours, report.mean_accuracy_old, len(report.rows))
    return EXIT_OK


def cmd_info(args) -> int:
    path = Path(args.path)
    if path.suffix == ".tsgw":
        ckpt = load_checkpoint(path)
        info = {
            "kind": "checkpoint",
            "version": ckpt.version,
            "model": ckpt.model_config.to_dict(),
            "meta": ckpt.meta,
            "parameters": int(sum(a.size for _, a in ckpt.arrays)),
            "arrays": len(ckpt.arrays),
        }
    else:
        mesh = load_mesh(path)
        report = check_watertight(mesh)
        info = {
            "kind": "mesh",
            "vertices": mesh.n_vertices,
            "faces": mesh.n_faces,
            "bounds": [mesh.vertices.min(0).tolist(), mesh.vertices.max(0).tolist()],
            "watertight": report.as_dict(),
            "volume_mm3": mesh_volume(mesh) if report.is_watertight else None,
            "wound_faces": None if mesh.labels is None else int(np.sum(mesh.labels == 1)),
        }
    _emit(info)
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="woundfill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(p, seed=True):
        p.add_argument("--config", type=Path, help="JSON run config (see README)")
        if seed:
            p.add_argument("--seed", type=int, help="overrides the config and WOUNDFILL_SEED")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--bases", type=int)
    p.add_argument("--wounds", type=int, help="wounded variants per base")
    p.add_argument("--level", type=int, help="icosphere subdivision level")
    p.add_argument("--radius-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--depth-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model per loss and select the best")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory with manifest.json")
    p.add_argument("--loss", action="append", choices=LOSS_KINDS, help="repeatable; default all four")
    p.add_argument("--epochs", type=int)
    p.add_argument("--parallel", type=int, default=1, help="loss runs trained concurrently")
    p.add_argument("--out", type=Path, help="directory for checkpoints and the training report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="predict per-face wound labels")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--out", type=Path, help="labels file to write")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("extract", help="extract the watertight filler as STL + JSON")
    p.add_argument("--mesh", type=Path, required=True, help="injured mesh")
    p.add_argument("--recon", type=Path, required=True, help="reconstructed healthy mesh")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--labels", type=Path, help="per-face labels (default: sidecar of --mesh)")
    src.add_argument("--checkpoint", type=Path, help="segment with a trained model instead")
    p.add_argument("--out", type=Path, required=True, help="STL path; diagnostics go to the same stem .json")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("compare", help="vertex accuracy of the filler against the threshold baseline")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--ground-truth", action="store_true", help="segment with the stored labels")
    p.add_argument("--threshold", type=float, help="baseline displacement threshold in mm")
    p.add_argument("--depth-factor", type=float, help="baseline threshold as a fraction of crater depth")
    p.add_argument("--out", type=Path, help="report path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("info", help="inspect a mesh or checkpoint")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"woundfill {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"woundfill {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FillingError as exc:
        print(f"woundfill {args.command}: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(exc.diagnostics, sort_keys=True), file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, CheckpointError, MeshLoadError, MeshError, InfeasiblePackingError,
            ValueError, KeyError, OSError) as exc:
        print(f"woundfill {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
