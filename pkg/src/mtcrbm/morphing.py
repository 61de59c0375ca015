"""Generative sequence morphing: regenerate a sequence frame-by-frame under
clamped target labels so the output carries the target style while a linear
blend of histories preserves the original shape.

One hidden/visible mean update per frame, swept in order; the history window
at each step mixes the original and the regenerated prefix with the given
blend coefficient (blend=1 reproduces the original history exactly).
Morphing uses means only, so identical inputs give identical outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, NumericError
from .inference import classify_sequence
from .model import FrameSequence, ModelBundle, MultimodalSequence

MORPHABLE_KINDS = ("dcrbm", "mtcrbm")


def _as_frame_sequence(bundle, sequence):
    if isinstance(sequence, FrameSequence):
        return sequence
    if isinstance(sequence, MultimodalSequence):
        return sequence.parts[bundle.single_modality]
    return FrameSequence(modality_id=bundle.single_modality,
                         frames=np.asarray(sequence, dtype=np.float64))


def morph_sequence(bundle: ModelBundle, sequence, target_labels, blend=0.5):
    """Rewrite the labelled factors of a sequence while keeping its shape.

    ``target_labels`` maps task name to a class (index or name) to clamp;
    every other task is clamped to the sequence's own label, falling back to
    the classifier's argmax when the sequence is unlabelled. Operates in the
    model's standardized space and de-standardizes the result.
    """
    if bundle.kind not in MORPHABLE_KINDS:
        raise ConfigError(
            f"morphing needs label heads on the visible layer; kind "
            f"{bundle.kind!r} is not supported (use dcrbm or mtcrbm)"
        )
    if not 0.0 <= float(blend) <= 1.0:
        raise ConfigError("blend must lie in [0, 1]")
    seq = _as_frame_sequence(bundle, sequence)
    layer = bundle.single_layer
    if seq.dim != layer.visible_dim:
        raise DataError(
            f"sequence dimension {seq.dim} != model visible_dim "
            f"{layer.visible_dim}"
        )

    clamp = {}
    for t in bundle.tasks:
        if t.name in target_labels:
            clamp[t.name] = t.class_index(target_labels[t.name])
    unknown = set(target_labels) - set(clamp)
    if unknown:
        raise ConfigError(f"unknown task in target labels: {sorted(unknown)[0]!r}")

    fallback = None
    for t in bundle.tasks:
        if t.name in clamp:
            continue
        if t.name in seq.labels:
            clamp[t.name] = t.class_index(seq.labels[t.name])
        else:
            if fallback is None:
                fallback = classify_sequence(bundle, seq)
            clamp[t.name] = fallback[t.name].label_index

    label_term = np.zeros(layer.hidden_dim)
    for head in layer.heads:
        label_term += head.U[:, clamp[head.task.name]]

    norm = bundle.normalization[bundle.single_modality]
    std_frames = np.ascontiguousarray(norm.apply(seq.frames))
    gen = kernels.morph_sweep(
        std_frames, layer.a, layer.b, layer.A, layer.B, layer.W,
        label_term, float(blend),
    )
    if not np.isfinite(gen).all():
        raise NumericError("morphing produced non-finite values")
    out_labels = dict(seq.labels)
    out_labels.update(clamp)
    return FrameSequence(
        modality_id=seq.modality_id,
        frames=norm.invert(gen),
        labels=out_labels,
        source_id=seq.source_id,
    )


@dataclass
class MorphEvalCell:
    group: object         # e.g. the action class name
    target: object        # the target class name
    before: float | None  # mean classifier probability of the target class
    after: float | None
    count: int


@dataclass
class MorphEvalResult:
    morph_task: str
    group_task: str
    source_class: object
    cells: list  # of MorphEvalCell

    def cell(self, group, target):
        for c in self.cells:
            if c.group == group and c.target == target:
                return c
        raise KeyError((group, target))

    def write_csv(self, path):
        targets = []
        for c in self.cells:
            if c.target not in targets:
                targets.append(c.target)
        groups = []
        for c in self.cells:
            if c.group not in groups:
                groups.append(c.group)
        header = [f"{self.group_task}/{self.morph_task}"]
        for t in targets:
            header += [f"{t}-Before", f"{t}-After"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for g in groups:
                row = [g]
                for t in targets:
                    c = self.cell(g, t)
                    row += ["" if c.before is None else repr(c.before),
                            "" if c.after is None else repr(c.after)]
                writer.writerow(row)


def morph_eval(bundle: ModelBundle, sequences, morph_task, source_class,
               target_classes=None, group_task=None, blend=0.5):
    """Before/after classifier probabilities for morphing a source class.

    Takes every sequence labelled ``source_class`` on ``morph_task``, morphs
    it toward each target class, and averages the classifier probability of
    that target before and after, grouped by ``group_task`` (default: the
    first other task). Empty cells are marked, never fabricated.
    """
    task = bundle.task_by_name(morph_task)
    src_idx = task.class_index(source_class)
    if target_classes is None:
        targets = [k for k in range(task.class_count) if k != src_idx]
    else:
        targets = [task.class_index(t) for t in target_classes]
    if group_task is None:
        others = [t.name for t in bundle.tasks if t.name != morph_task]
        if not others:
            raise ConfigError("morph_eval needs a second task to group rows by")
        group_task = others[0]
    gtask = bundle.task_by_name(group_task)

    sums = {}
    for seq in sequences:
        if morph_task not in seq.labels:
            continue
        if task.class_index(seq.labels[morph_task]) != src_idx:
            continue
        g = gtask.class_index(seq.labels[group_task])
        frame_seq = _as_frame_sequence(bundle, seq)
        before_dec = classify_sequence(bundle, frame_seq)
        before_probs = before_dec[morph_task].timeline.mean(axis=0)
        for target in targets:
            morphed = morph_sequence(
                bundle, frame_seq, {morph_task: target}, blend=blend
            )
            after_dec = classify_sequence(bundle, morphed)
            after_probs = after_dec[morph_task].timeline.mean(axis=0)
            key = (g, target)
            b_sum, a_sum, n = sums.get(key, (0.0, 0.0, 0))
            sums[key] = (
                b_sum + float(before_probs[target]),
                a_sum + float(after_probs[target]),
                n + 1,
            )

    cells = []
    for g in range(gtask.class_count):
        for target in targets:
            b_sum, a_sum, n = sums.get((g, target), (0.0, 0.0, 0))
            cells.append(MorphEvalCell(
                group=gtask.label_of(g),
                target=task.label_of(target),
                before=b_sum / n if n else None,
                after=a_sum / n if n else None,
                count=n,
            ))
    return MorphEvalResult(
        morph_task=morph_task, group_task=group_task,
        source_class=task.label_of(src_idx), cells=cells,
    )
