"""Command-line driver: filter pretraining, evaluation sweeps and plot export.

Exit codes: 0 success, 2 usage or input error, 3 runtime failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import (
    config_from_values,
    flatten_config,
    read_config,
    read_summary_csv,
    export_plot_data,
    run_experiment,
    write_config,
    write_details_csv,
    write_summary_csv,
)
from .nn import TrainingDivergedError
from .omniglot import IngestionError, load_omniglot
from .vision import preprocess, reconstruction_mse, save_filters, scae_pretrain

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _parse_hp(pairs):
    values = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"--hp expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        values[f"hp.{key.strip()}"] = value.strip()
    return values


def _collect_values(args):
    """Merge config file values with command-line overrides."""
    values = {}
    if args.config:
        for line in Path(args.config).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{args.config}: malformed line {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    for key in ("dataset_root", "filters_path", "out_dir", "models", "tasks",
                "kinds", "levels", "seeds", "runs", "workers"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    values.update(_parse_hp(args.hp))
    return values


def cmd_pretrain(args):
    values = _collect_values(args)
    config = config_from_values(values)
    if not config.dataset_root:
        raise ValueError("--dataset-root is required")
    if not config.filters_path:
        raise ValueError("--filters-path is required (output location)")
    print(f"loading background split from {config.dataset_root}", flush=True)
    store = load_omniglot(config.dataset_root)
    raw = store.background_images()
    print(f"preprocessing {len(raw)} background images", flush=True)
    images = np.stack([preprocess(img) for img in raw])
    print(f"pretraining: {config.hp.vc.pretrain_batches} batches "
          f"of {config.hp.vc.pretrain_batch_size}", flush=True)
    layer = scae_pretrain(images, config.hp.vc, seed=args.seed,
                          log_every=args.log_every)
    Path(config.filters_path).parent.mkdir(parents=True, exist_ok=True)
    save_filters(config.filters_path, layer)
    sample = images[np.random.default_rng(args.seed).choice(
        len(images), size=min(256, len(images)), replace=False)]
    final = reconstruction_mse(sample, layer, config.hp.vc.k_pretrain,
                               config.hp.vc.stride_pretrain)
    print(f"wrote {config.filters_path}")
    print(f"final reconstruction mse {final:.6f}")
    return EXIT_OK


def cmd_evaluate(args):
    values = _collect_values(args)
    config = config_from_values(values)
    if not config.dataset_root or not config.filters_path:
        raise ValueError("--dataset-root and --filters-path are required")
    if not Path(config.filters_path).is_file():
        raise IngestionError(f"filters file not found: {config.filters_path}")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "config.txt")

    def progress(cell):
        task, kind, level, seed = cell
        print(f"cell done: task={task} kind={kind} level={level:g} seed={seed}",
              flush=True)

    records, failures = run_experiment(config, progress=progress)
    for cell, message in failures:
        print(f"cell failed: {cell}: {message}", file=sys.stderr, flush=True)
    if not records:
        print("no cell succeeded", file=sys.stderr)
        return EXIT_RUNTIME
    write_summary_csv(records, out_dir / "summary.csv")
    write_details_csv(records, out_dir / "details.csv")

    print(f"\nwrote {out_dir / 'summary.csv'} ({len(records)} records)")
    clean = [r for r in records if r.kind == "none" and r.level == 0.0]
    if clean:
        print("\nclean-condition accuracy (mean over seeds):")
        by_model_task = {}
        for r in clean:
            by_model_task.setdefault((r.task, r.model), []).append(r.accuracy)
        for (task, model), accs in sorted(by_model_task.items()):
            print(f"  {task:15s} {model:12s} {np.mean(accs) * 100:6.1f}%")
    return EXIT_OK


def cmd_export_plots(args):
    rows = read_summary_csv(args.csv)
    out_dir = Path(args.out_dir or Path(args.csv).parent)
    written = export_plot_data(rows, out_dir)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _add_config_flags(parser, include_eval=True):
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--dataset-root", dest="dataset_root")
    parser.add_argument("--filters-path", dest="filters_path")
    parser.add_argument("--hp", action="append", metavar="KEY=VALUE",
                        help="hyperparameter override, e.g. stm.ps.k=10")
    if include_eval:
        parser.add_argument("--out-dir", dest="out_dir")
        parser.add_argument("--models", help="comma list from ltm,aha,fastnn")
        parser.add_argument("--tasks", help="comma list from classification,instance")
        parser.add_argument("--kinds", help="comma list from none,occlusion,noise")
        parser.add_argument("--levels", help="comma list of corruption levels")
        parser.add_argument("--seeds", help="comma list of integer seeds")
        parser.add_argument("--runs", type=int)
        parser.add_argument("--workers", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="engram",
        description="One-shot episodic memory benchmark driver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("pretrain", help="train vision filters on the background split")
    _add_config_flags(p_pre, include_eval=False)
    p_pre.add_argument("--seed", type=int, default=0)
    p_pre.add_argument("--log-every", type=int, default=200)
    p_pre.set_defaults(func=cmd_pretrain)

    p_eval = sub.add_parser("evaluate", help="run the evaluation sweep")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_plot = sub.add_parser("export-plots", help="export plot data from a summary CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out-dir", dest="out_dir")
    p_plot.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (IngestionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
