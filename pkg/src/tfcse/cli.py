"""Command-line interface.

Subcommands: ``synth`` (generate a labelled dataset), ``features`` (cache
features), ``train`` (train and evaluate, optionally over several
cross-validation splits), ``eval`` (score a checkpoint on a manifest),
``params`` (print the parameter count of a configuration) and ``gradcheck``
(run the finite-difference suite).

Every flag can also be given in a JSON config file (same names, dashes as
underscores) passed with ``--config``; explicit flags override the file.
The ``TFCSE_THREADS`` environment variable caps the worker pool used for
synthesis and feature extraction.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .attention import AGGREGATIONS, EXCITE_OPS, SQUEEZE_OPS
from .datasets import SceneParams, synthesize_dataset
from .estimator import SE_VARIANT_FLAGS, se_config_from_flags
from .experiment import (
    ExperimentConfig,
    cache_features,
    evaluate_scene_set,
    run_experiment,
    scene_set_from_manifest,
)
from .metrics import format_record, write_class_csv
from .model import CrnnConfig, build_model, count_parameters, load_checkpoint, save_checkpoint


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--se", choices=SE_VARIANT_FLAGS, default="none",
                        help="attention variant")
    parser.add_argument("--agg", choices=AGGREGATIONS, default=None,
                        help="aggregation for the concurrent variant (default max)")
    parser.add_argument("--r", type=int, default=8, help="bottleneck reduction ratio")
    parser.add_argument("--squeeze", choices=SQUEEZE_OPS, default="avg")
    parser.add_argument("--excite", choices=EXCITE_OPS, default="sigmoid")
    parser.add_argument("--conv-filters", type=int, default=64)
    parser.add_argument("--gru-units", type=int, default=128)
    parser.add_argument("--fc-units", type=int, default=128)
    parser.add_argument("--pool-widths", default="8,8,2",
                        help="comma-separated frequency pool widths")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f32")


def _resolve_aggregation(args) -> str:
    if args.agg is not None and args.se != "tfc-concurrent":
        warnings.warn(f"--agg {args.agg} has no effect for --se {args.se}")
    return args.agg or "max"


def _event_duration(args) -> tuple[float, float]:
    raw = getattr(args, "event_duration", "0.4,2.5")
    if isinstance(raw, (list, tuple)):
        lo, hi = raw
    else:
        lo, hi = (float(v) for v in str(raw).split(","))
    return float(lo), float(hi)


def _pool_widths(args) -> tuple[int, ...]:
    if isinstance(args.pool_widths, (list, tuple)):
        return tuple(int(w) for w in args.pool_widths)
    return tuple(int(w) for w in str(args.pool_widths).split(","))


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="tfcse",
                                     description="Multi-channel sound event detection "
                                                 "with squeeze-excitation attention")
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--scenes-train", type=int, default=40)
    synth.add_argument("--scenes-test", type=int, default=10)
    synth.add_argument("--duration", type=float, default=10.0)
    synth.add_argument("--sample-rate", type=int, default=16000)
    synth.add_argument("--mics", type=int, default=4)
    synth.add_argument("--classes", type=int, default=4)
    synth.add_argument("--max-overlap", type=int, default=2)
    synth.add_argument("--events", type=int, default=10)
    synth.add_argument("--event-duration", default="0.4,2.5",
                       help="comma-separated min,max event length in seconds")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--splits", type=int, default=1,
                       help="number of cross-validation splits to generate")
    synth.add_argument("--audio-format", choices=("wav", "f32"), default="wav")

    feats = sub.add_parser("features", help="cache features for a manifest")
    feats.add_argument("--manifest", required=True)
    feats.add_argument("--out", required=True)
    feats.add_argument("--window", type=int, default=256)
    feats.add_argument("--frames", type=int, default=128)
    feats.add_argument("--classes", type=int, default=4)
    feats.add_argument("--workers", type=int, default=None)

    tr = sub.add_parser("train", help="train a model and report test metrics")
    _add_model_flags(tr)
    tr.add_argument("--manifest", default=None,
                    help="dataset manifest; omit to synthesize in memory")
    tr.add_argument("--scenes-train", type=int, default=40)
    tr.add_argument("--scenes-test", type=int, default=10)
    tr.add_argument("--duration", type=float, default=10.0)
    tr.add_argument("--sample-rate", type=int, default=16000)
    tr.add_argument("--mics", type=int, default=4)
    tr.add_argument("--classes", type=int, default=4)
    tr.add_argument("--max-overlap", type=int, default=2)
    tr.add_argument("--events", type=int, default=10)
    tr.add_argument("--event-duration", default="0.4,2.5",
                    help="comma-separated min,max event length in seconds")
    tr.add_argument("--window", type=int, default=256)
    tr.add_argument("--frames", type=int, default=128)
    tr.add_argument("--epochs", type=int, default=1000)
    tr.add_argument("--batch", type=int, default=64)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--patience", type=int, default=100)
    tr.add_argument("--threshold", type=float, default=0.5)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--split", type=int, default=1,
                    help="number of cross-validation splits to run and average")
    tr.add_argument("--monitor", choices=("heldout", "test"), default="heldout",
                    help="early-stopping split: held-out training fraction or test")
    tr.add_argument("--val-fraction", type=float, default=0.1)
    tr.add_argument("--workers", type=int, default=None)
    tr.add_argument("--out", default=None, help="directory for checkpoints and reports")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--split-label", default="test")
    ev.add_argument("--window", type=int, default=256)
    ev.add_argument("--frames", type=int, default=128)
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--segment-seconds", type=float, default=1.0)
    ev.add_argument("--workers", type=int, default=None)
    ev.add_argument("--out-csv", default=None, help="per-class breakdown CSV path")

    pr = sub.add_parser("params", help="print the parameter count of a configuration")
    _add_model_flags(pr)
    pr.add_argument("--frames", type=int, default=256)
    pr.add_argument("--freq-bins", type=int, default=256)
    pr.add_argument("--channels", type=int, default=16)
    pr.add_argument("--classes", type=int, default=11)

    gc = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    gc.add_argument("--step", type=float, default=1e-5)

    return parser, {"synth": synth, "features": feats, "train": tr, "eval": ev,
                    "params": pr, "gradcheck": gc}


def _apply_config_file(parser: argparse.ArgumentParser,
                       subparsers: dict[str, argparse.ArgumentParser],
                       argv: list[str]) -> argparse.Namespace:
    probe, _ = parser.parse_known_args(argv)
    if getattr(probe, "config", None):
        values = json.loads(Path(probe.config).read_text())
        known = {a.replace("-", "_"): v for a, v in values.items()}
        # subparsers parse into a fresh namespace, so defaults must be set
        # on the subcommand parser as well as the root one
        parser.set_defaults(**known)
        if probe.command in subparsers:
            subparsers[probe.command].set_defaults(**known)
    return parser.parse_args(argv)


def cmd_synth(args) -> int:
    params = SceneParams(num_events=args.events, num_classes=args.classes,
                         duration=args.duration, sample_rate=args.sample_rate,
                         mics=args.mics, max_overlap=args.max_overlap,
                         event_duration=_event_duration(args))
    per_split = {}
    for i in range(args.splits):
        suffix = str(i) if args.splits > 1 else ""
        per_split["train" + suffix] = args.scenes_train
        per_split["test" + suffix] = args.scenes_test
    manifest = synthesize_dataset(args.out, params, per_split, seed=args.seed,
                                  audio_format=args.audio_format)
    print(f"manifest={manifest}")
    return 0


def cmd_features(args) -> int:
    manifest = cache_features(args.manifest, args.out, args.classes,
                              args.window, args.frames, args.workers)
    print(f"manifest={manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = ExperimentConfig(
        manifest=args.manifest, scenes_train=args.scenes_train,
        scenes_test=args.scenes_test, scene_duration=args.duration,
        sample_rate=args.sample_rate, mics=args.mics, num_classes=args.classes,
        max_overlap=args.max_overlap, events_per_scene=args.events,
        event_duration=_event_duration(args),
        window=args.window, frames=args.frames,
        se_variant=args.se, aggregation=_resolve_aggregation(args),
        reduction_ratio=args.r, squeeze_op=args.squeeze, excite_op=args.excite,
        conv_filters=args.conv_filters, gru_units=args.gru_units,
        fc_units=args.fc_units, pool_widths=_pool_widths(args),
        precision=args.precision, epochs=args.epochs, batch_size=args.batch,
        learning_rate=args.lr, patience=args.patience, threshold=args.threshold,
        val_fraction=args.val_fraction, monitor=args.monitor,
        seed=args.seed, splits=args.split, workers=args.workers)

    outcome = run_experiment(cfg)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for result in outcome["splits"]:
        i = result["split"]
        print(f"split={i} " + format_record(result["metrics"])
              + f" best_epoch={result['best_epoch']}"
              + f" seq_f1={result['sequence_report']['f1']:.6f}")
        if out_dir:
            save_checkpoint(result["model"], out_dir / f"split{i}.ckpt")
            write_class_csv(out_dir / f"split{i}_classes.csv", result["counts"])
            (out_dir / f"split{i}_history.json").write_text(
                json.dumps(result["history"], indent=2))
    print("mean " + format_record(outcome["mean"]))
    print(f"parameters={outcome['n_parameters']}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    scene_set = scene_set_from_manifest(args.manifest, args.split_label,
                                        model.cfg.num_classes, args.window,
                                        args.frames, args.workers)
    metrics, counts, sequence_report = evaluate_scene_set(
        model, scene_set, args.threshold, args.segment_seconds)
    print(format_record(metrics) + f" seq_f1={sequence_report['f1']:.6f}")
    if args.out_csv:
        write_class_csv(args.out_csv, counts)
    return 0


def cmd_params(args) -> int:
    cfg = CrnnConfig(frames=args.frames, freq_bins=args.freq_bins,
                     in_channels=args.channels, conv_filters=args.conv_filters,
                     pool_widths=_pool_widths(args), gru_units=args.gru_units,
                     fc_units=args.fc_units, num_classes=args.classes,
                     se=se_config_from_flags(args.se, _resolve_aggregation(args),
                                             args.r, args.squeeze, args.excite),
                     precision=args.precision)
    print(count_parameters(build_model(cfg)))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_full_suite

    rows = run_full_suite(h=args.step)
    failed = 0
    for name, err, tol in rows:
        ok = err <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:40s} max_rel_err={err:.3e} tol={tol:.0e}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser, subparsers = build_parser()
    args = _apply_config_file(parser, subparsers, argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
