"""Command-line entry point: ``beamalign <subcommand> [--config cfg.json] ...``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
anything that fails while running.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .aligner import HierarchicalAligner, load_model, save_model
from .baselines import MethodSpec, measurement_count
from .channel import save_dataset
from .errors import BeamAlignError, ConfigError, UsageError
from .harness import (ExperimentConfig, ExperimentReport, TrainedModels,
                      evaluate_methods, export_patterns, load_or_generate, prepare_data,
                      report_plot_data, resolve_output_dir, run_accuracy_vs_measurements,
                      run_accuracy_vs_noise, train_learned)
from .labeling import build_labels, save_labels

logger = logging.getLogger("beamalign")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON experiment config (defaults to the desk experiment)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads (1 = bit-exact mode)")
    p.add_argument("--noise-reps", type=int, help="average accuracy over R noise realisations")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="beamalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[common], help="synthesize a channel dataset")
    p = sub.add_parser("label", parents=[common], help="write the label cache")
    p.add_argument("--dataset")
    p = sub.add_parser("train", parents=[common], help="train one learned aligner")
    p.add_argument("--dataset")
    p.add_argument("--method", choices=("learned-hier", "learned-single"),
                   default="learned-hier")
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p = sub.add_parser("eval", parents=[common], help="evaluate methods on the test split")
    p.add_argument("--dataset")
    p.add_argument("--model", action="append", default=[],
                   help="checkpoint to evaluate (repeatable)")
    for name in ("sweep-measurements", "sweep-noise"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--dataset")
    p = sub.add_parser("export-patterns", parents=[common], help="beam pattern CSVs")
    p.add_argument("--dataset")
    p.add_argument("--model", required=True)
    p = sub.add_parser("report", parents=[common], help="report CSV to plot-data JSON")
    p.add_argument("--input", required=True)
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.noise_reps is not None:
        d.setdefault("evaluation", {})["noise_reps"] = args.noise_reps
    if getattr(args, "dataset", None):
        d["dataset"] = {"path": args.dataset}
    return ExperimentConfig.from_dict(d)


def _file_out(args, cfg, default_name: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = resolve_output_dir(cfg) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _dir_out(args, cfg) -> Path:
    path = resolve_output_dir(cfg, args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(report: ExperimentReport, cfg: ExperimentConfig, path: Path):
    report.write_csv(path)
    report.write_metadata(path.with_suffix(".meta.json"))
    cfg.to_json(path.with_suffix(".config.json"))
    logger.info("wrote %s (%d rows)", path, len(report.rows))


def cmd_gen(args, cfg):
    ds = load_or_generate(cfg)
    path = _file_out(args, cfg, "dataset.baln")
    save_dataset(ds, path)
    logger.info("wrote %d channels to %s", len(ds), path)


def cmd_label(args, cfg):
    data = prepare_data(cfg)
    ds = load_or_generate(cfg)
    labels = build_labels(ds, data.codebook, cfg.n_fine_grid, cfg.n_groups, cfg.seed,
                          clusters=data.train_labels.clusters)
    save_labels(labels, _file_out(args, cfg, "labels.csv"))


def cmd_train(args, cfg):
    n1 = cfg.n1 if args.n1 is None else args.n1
    n2 = cfg.n2 if args.n2 is None else args.n2
    if n1 < 1 or n2 < n1:
        raise ConfigError(f"split ({n1}, {n2}) must satisfy 1 <= n1 <= n2")
    data = prepare_data(cfg)
    models = train_learned(cfg, data, n1, n2, methods=(args.method,))
    model = models.hierarchical if args.method == "learned-hier" else models.single
    save_model(model, _file_out(args, cfg, "model.balm"))


def cmd_eval(args, cfg):
    data = prepare_data(cfg)
    report = ExperimentReport(metadata={"config_hash": cfg.hash(), "code_version": __version__,
                                        "experiment": "eval"})
    psd = cfg.noise_psd_dbm_per_hz
    baselines = [m for m in cfg.methods if not m.startswith("learned")]
    for row in evaluate_methods(cfg, data, cfg.n1, cfg.n2, psd, TrainedModels(), baselines):
        report.add(row)
    for path in args.model:
        model = load_model(path, expect=cfg.alignment())
        if isinstance(model, HierarchicalAligner):
            models, kind = TrainedModels(hierarchical=model), "learned-hier"
        else:
            models, kind = TrainedModels(single=model), "learned-single"
        c = model.config
        for row in evaluate_methods(cfg, data, c.n1, c.n2, psd, models, (kind,)):
            report.add(row)
    _write_report(report, cfg, _file_out(args, cfg, "report.csv"))


def cmd_sweep(args, cfg, kind: str):
    out = _dir_out(args, cfg)
    name = "report_measurements.csv" if kind == "measurements" else "report_noise.csv"
    path = out / name
    run = run_accuracy_vs_measurements if kind == "measurements" else run_accuracy_vs_noise
    report = run(cfg, out_path=path)
    _write_report(report, cfg, path)


def cmd_export(args, cfg):
    data = prepare_data(cfg)
    model = load_model(args.model, expect=cfg.alignment())
    if not isinstance(model, HierarchicalAligner):
        raise ConfigError("pattern export needs a hierarchical checkpoint")
    for p in export_patterns(model, data.train_labels, _dir_out(args, cfg)):
        logger.info("wrote %s", p)


def cmd_report(args, cfg):
    report = ExperimentReport.read_csv(args.input)
    for r in report.rows:
        spec = MethodSpec(r.method, r.n1, r.n2, wide_size=r.n1 + r.n2)
        if r.measurements != measurement_count(spec, cfg.n_beams):
            logger.warning("row %s: measurement count %d disagrees with the method's budget",
                           r.key(), r.measurements)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".plot.json")
    out.write_text(json.dumps(report_plot_data(report), indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "gen": cmd_gen,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-measurements": lambda a, c: cmd_sweep(a, c, "measurements"),
    "sweep-noise": lambda a, c: cmd_sweep(a, c, "noise"),
    "export-patterns": cmd_export,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        limit = contextlib.nullcontext()
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            limit = threadpool_limits(args.threads)
        with limit:
            COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"beamalign: config error: {exc}", file=sys.stderr)
        return 1
    except (BeamAlignError, OSError, ValueError) as exc:
        print(f"beamalign: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
