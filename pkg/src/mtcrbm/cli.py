"""Operator surface: batch subcommands that read and write files.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Errors go to stderr with the machine-parsable prefix ``E:``. Every command
is deterministic given its ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import data as data_mod
from . import morphing as morph_mod
from .errors import (ConfigError, DataError, MtcrbmError, NumericError,
                     ShapeError)
from .inference import classify_dataset, classify_sequence_full
from .model import (FrameSequence, ModelConfig, load_model, new_model,
                    save_model)
from .training import (GridCell, TrainConfig, grid_search, train,
                       write_grid_csv)

KIND_FLAGS = {
    "crbm": "crbm",
    "dcrbm": "dcrbm",
    "mtcrbm": "mtcrbm",
    "mtcrbm-deep": "mtcrbm_deep",
    "mtmcrbm": "mtmcrbm",
    "mtmcrbm-deep": "mtmcrbm_deep",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad integer list {text!r}: {exc}")


def build_parser():
    parser = _Parser(prog="mtcrbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--modalities", type=int, default=1)
    p.add_argument("--dim", type=int, default=12)
    p.add_argument("--actors", type=int, default=30)
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True, choices=sorted(KIND_FLAGS))
    p.add_argument("--hidden", type=int, default=30)
    p.add_argument("--history", type=int, default=10)
    p.add_argument("--fusion-hidden", type=int, default=None)
    p.add_argument("--deep-hidden", type=int, default=None)
    p.add_argument("--deep-history", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=2e-4)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--cd-steps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None,
                   help="write the training report (JSON; .csv twin beside it)")
    p.add_argument("--split", choices=["train", "all"], default="train",
                   help="train on the source-disjoint train split or on all")
    p.add_argument("--split-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--config", default=None)

    p = sub.add_parser("gridsearch", help="hidden/history grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=_int_list, default=[10, 20, 30, 50, 70, 100, 200])
    p.add_argument("--history", type=_int_list, default=[5, 10])
    p.add_argument("--kind", choices=sorted(KIND_FLAGS), default="mtcrbm")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="accuracy tables and confusion matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--split-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="accuracy CSV (default stdout)")
    p.add_argument("--confusion-dir", default=None)
    p.add_argument("--jsonl", default=None, help="per-sequence JSON-lines output")
    p.add_argument("--config", default=None)

    p = sub.add_parser("classify", help="JSON-lines posteriors for sequences")
    p.add_argument("--model", required=True)
    p.add_argument("--seq", action="append", required=True,
                   help="frame CSV; repeat MOD=PATH for multimodal models")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--timeline-dir", default=None,
                   help="also write per-task posterior timelines as CSV")
    p.add_argument("--config", default=None)

    p = sub.add_parser("morph", help="re-target labelled factors of a sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--set", action="append", required=True, metavar="TASK=CLASS")
    p.add_argument("--blend", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("morph-eval",
                       help="before/after probability table for morphing")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True, help="task to morph (e.g. AF)")
    p.add_argument("--source-class", required=True)
    p.add_argument("--targets", default=None,
                   help="comma-separated target classes (default: all others)")
    p.add_argument("--group-task", default=None)
    p.add_argument("--blend", type=float, default=0.5)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--split-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    return parser


def _apply_config_file(args):
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config file {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(overrides, dict):
            raise DataError("config file must hold a JSON object")
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise _UsageError(f"config file sets unknown option {key!r}")
            setattr(args, attr, value)
    return args


def _select_split(sequences, split, fraction, seed):
    if split == "all":
        return sequences
    train_part, test_part = data_mod.split_by_source(sequences, fraction, seed)
    return train_part if split == "train" else test_part


def _cmd_synth(args):
    path = data_mod.make_synthetic(
        args.out, count=args.count, noise=args.noise, seed=args.seed,
        modalities=args.modalities, frame_dim=args.dim,
        actor_count=args.actors,
    )
    print(path)
    return 0


def _cmd_train(args):
    dataset = data_mod.load_dataset(args.data)
    sequences = _select_split(dataset.sequences, args.split,
                              args.split_fraction, args.split_seed)
    if not sequences:
        raise DataError("selected split is empty")
    kind = KIND_FLAGS[args.kind]
    dims = {m: sequences[0].parts[m].dim for m in sorted(sequences[0].parts)}
    tasks = dataset.tasks if kind != "crbm" else ()
    if kind == "dcrbm":
        tasks = dataset.tasks[:1]
    config = ModelConfig(
        kind=kind, tasks=tasks, visible_dims=dims, hidden_dim=args.hidden,
        history_order=args.history, fusion_hidden_dim=args.fusion_hidden,
        deep_hidden_dim=args.deep_hidden, deep_history_order=args.deep_history,
    )
    bundle = new_model(config, seed=args.seed)
    tc = TrainConfig(
        learning_rate=args.lr, momentum=args.momentum,
        weight_decay=args.weight_decay, epochs=args.epochs,
        minibatch_size=args.batch, cd_steps=args.cd_steps, seed=args.seed,
    )
    trained, report = train(bundle, sequences, tc)
    save_model(trained, args.out)
    if args.report:
        report.write_json(args.report)
        base, _ = os.path.splitext(args.report)
        report.write_csv(base + ".csv")
    for epoch in report.epochs[-1:]:
        acc = " ".join(f"{t}={v:.3f}" for t, v in sorted(
            epoch.task_accuracy.items()))
        print(f"trained kind={kind} epochs={len(report.epochs)} "
              f"recon={epoch.reconstruction_error:.5f} {acc}")
    return 0


def _cmd_gridsearch(args):
    dataset = data_mod.load_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    results = grid_search(
        dataset, hidden_values=args.hidden, history_values=args.history,
        kind=KIND_FLAGS[args.kind], config=cfg, folds=args.folds,
        workers=args.workers, seed=args.seed,
    )
    write_grid_csv(results, args.out)
    best = results[0]
    print(f"best hidden={best.hidden} history={best.history} "
          f"mean_accuracy={best.mean_accuracy}")
    return 0


def _cmd_eval(args):
    bundle = load_model(args.model)
    dataset = data_mod.load_dataset(args.data)
    sequences = _select_split(dataset.sequences, args.split,
                              args.split_fraction, args.split_seed)
    if not sequences:
        raise DataError("selected split is empty")
    results = classify_dataset(bundle, sequences)
    seq_metrics = data_mod.classification_metrics(
        results["sequence_predictions"], results["sequence_truth"],
        bundle.tasks,
    )
    frame_metrics = data_mod.classification_metrics(
        results["frame_predictions"], results["frame_truth"], bundle.tasks,
    )
    task_names = [t.name for t in bundle.tasks]
    rows = [
        ["metric"] + task_names,
        ["sequence_accuracy"] + [repr(seq_metrics.accuracy[t]) for t in task_names],
        ["frame_accuracy"] + [repr(frame_metrics.accuracy[t]) for t in task_names],
        ["chance"] + [repr(1.0 / bundle.task_by_name(t).class_count)
                      for t in task_names],
    ]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows(rows)
    else:
        for row in rows:
            print(",".join(str(x) for x in row))
    if args.confusion_dir:
        os.makedirs(args.confusion_dir, exist_ok=True)
        for t in bundle.tasks:
            mat = seq_metrics.confusion[t.name]
            names = [str(t.label_of(k)) for k in range(t.class_count)]
            out = os.path.join(args.confusion_dir, f"confusion_{t.name}.csv")
            with open(out, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"truth\\pred"] + names)
                for k, row in enumerate(mat):
                    writer.writerow([names[k]] + [int(x) for x in row])
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as fh:
            for seq, decisions in zip(sequences, results["decisions"]):
                for t in bundle.tasks:
                    d = decisions[t.name]
                    fh.write(json.dumps({
                        "sequence_id": seq.sequence_id,
                        "task": t.name,
                        "label": d.label,
                        "probability": d.probability,
                    }) + "\n")
    return 0


def _parse_seq_args(bundle, seq_args):
    parts = {}
    for spec in seq_args:
        if "=" in spec and not os.path.exists(spec):
            mod, path = spec.split("=", 1)
        else:
            mod, path = bundle.single_modality, spec
        parts[mod] = data_mod.parse_frame_csv(path)
    return parts


def _cmd_classify(args):
    bundle = load_model(args.model)
    parts = _parse_seq_args(bundle, args.seq)
    decisions, _ = classify_sequence_full(bundle, parts)
    seq_id = os.path.splitext(os.path.basename(args.seq[0].split("=")[-1]))[0]
    lines = []
    for t in bundle.tasks:
        d = decisions[t.name]
        record = {
            "sequence_id": seq_id,
            "task": t.name,
            "label": d.label,
            "probability": d.probability,
        }
        if args.timeline_dir:
            os.makedirs(args.timeline_dir, exist_ok=True)
            tpath = os.path.join(args.timeline_dir,
                                 f"{seq_id}_{t.name}_timeline.csv")
            data_mod.write_frame_csv(tpath, d.timeline)
            record["timeline_path"] = tpath
        lines.append(json.dumps(record))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_set_flags(bundle, set_flags):
    targets = {}
    for spec in set_flags:
        if "=" not in spec:
            raise _UsageError(f"--set expects TASK=CLASS, got {spec!r}")
        tname, cls = spec.split("=", 1)
        task = bundle.task_by_name(tname)  # raises ConfigError if unknown
        targets[tname] = task.class_index(cls)
    return targets


def _cmd_morph(args):
    bundle = load_model(args.model)
    frames = data_mod.parse_frame_csv(args.seq)
    targets = _parse_set_flags(bundle, args.set)
    seq = FrameSequence(modality_id=bundle.single_modality, frames=frames)
    morphed = morph_mod.morph_sequence(bundle, seq, targets, blend=args.blend)
    data_mod.write_frame_csv(args.out, morphed.frames)
    print(f"{args.out}: {morphed.frames.shape[0]} frames")
    return 0


def _cmd_morph_eval(args):
    bundle = load_model(args.model)
    dataset = data_mod.load_dataset(args.data)
    sequences = _select_split(dataset.sequences, args.split,
                              args.split_fraction, args.split_seed)
    targets = None
    if args.targets:
        targets = [t for t in args.targets.split(",") if t.strip()]
    result = morph_mod.morph_eval(
        bundle, sequences, morph_task=args.task,
        source_class=args.source_class, target_classes=targets,
        group_task=args.group_task, blend=args.blend,
    )
    result.write_csv(args.out)
    increased = sum(
        1 for c in result.cells
        if c.before is not None and c.after is not None and c.after > c.before
    )
    print(f"{args.out}: {increased}/{len(result.cells)} cells increased")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "gridsearch": _cmd_gridsearch,
    "eval": _cmd_eval,
    "classify": _cmd_classify,
    "morph": _cmd_morph,
    "morph-eval": _cmd_morph_eval,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"E: usage: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"E: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError) as exc:
        print(f"E: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"E: numeric failure: {exc}", file=sys.stderr)
        return 3
    except MtcrbmError as exc:  # anything else package-specific
        print(f"E: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
