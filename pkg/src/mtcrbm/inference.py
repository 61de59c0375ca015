"""Bottom-up multi-task classification of frames and sequences.

Test-time propagation computes the mean of each node from the activations
below it: label terms are dropped (labels are unknown), unimodal hidden
means feed the fusion layer (means, not samples), and the topmost layer's
softmax heads produce the per-task posteriors. Fusion models report the
fusion-level posterior as the decision and expose per-modality posteriors
for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .fusion import batch_fusion_posteriors
from .heads import batch_deep_task_forward, batch_label_posterior
from .layers import (batch_dynamic_biases, batch_hidden_mean, history_windows,
                     sigmoid)
from .model import (DEEP_KINDS, FUSION_KINDS, FrameSequence, ModelBundle,
                    MultimodalSequence)


@dataclass
class FramePosteriors:
    """Posteriors for a single time step."""

    tasks: dict  # task -> (Y,) simplex
    per_modality: dict = field(default_factory=dict)  # modality -> task -> (Y,)


@dataclass
class SequenceDecision:
    """Per-task outcome for one sequence."""

    task: str
    label_index: int
    label: object  # class name when known, else the index
    probability: float
    timeline: np.ndarray  # (T, Y) per-frame posteriors


def _check_standardized(frames, tolerance):
    mags = np.abs(frames).max() if frames.size else 0.0
    if mags > tolerance:
        raise DataError(
            f"input claims to be standardized but has magnitude {mags:.3g} "
            f"(> tolerance {tolerance}); pass raw data instead"
        )


def _standardize_parts(bundle, parts, input_standardized, tolerance):
    out = {}
    for m, frames in parts.items():
        if m not in bundle.unimodal:
            raise DataError(f"model has no modality {m!r}")
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.shape[1] != bundle.unimodal[m].visible_dim:
            raise ShapeError(
                f"modality {m!r}: frames have dimension {frames.shape[1]}, "
                f"model expects {bundle.unimodal[m].visible_dim}"
            )
        if input_standardized:
            _check_standardized(frames, tolerance)
            out[m] = frames
        else:
            out[m] = bundle.normalization[m].apply(frames)
    missing = set(bundle.unimodal) - set(out)
    if missing:
        raise DataError(f"missing modality {sorted(missing)[0]!r}")
    return out


def _posterior_timelines(bundle: ModelBundle, std_parts):
    """(T, Y) posterior per task, plus per-modality diagnostics timelines."""
    modalities = bundle.modality_order
    means = {}
    for m in modalities:
        layer = bundle.unimodal[m]
        hist = history_windows(std_parts[m], layer.history_order)
        _, d = batch_dynamic_biases(layer, hist)
        means[m] = batch_hidden_mean(layer, std_parts[m], d)

    per_modality = {
        m: {
            head.task.name: batch_label_posterior(head, means[m])
            for head in bundle.unimodal[m].heads
        }
        for m in modalities
    }

    if bundle.kind in FUSION_KINDS:
        fusion = bundle.fusion
        cat = np.concatenate([means[m] for m in modalities], axis=1)
        fhist = history_windows(cat, fusion.history_order)
        f_bias = fusion.b + fhist @ fusion.B
        top = sigmoid(f_bias + cat @ fusion.W)
        if bundle.kind == "mtmcrbm":
            posteriors = batch_fusion_posteriors(bundle.fusion_model(), top)
            return posteriors, per_modality
    else:
        top = means[modalities[0]]
        if bundle.kind in ("dcrbm", "mtcrbm"):
            layer = bundle.unimodal[modalities[0]]
            posteriors = {
                head.task.name: batch_label_posterior(head, top)
                for head in layer.heads
            }
            return posteriors, per_modality

    if bundle.kind in DEEP_KINDS:
        posteriors = {}
        for t in bundle.tasks:
            deep = bundle.deep_heads[t.name]
            dhist = history_windows(top, deep.history_order)
            _, probs = batch_deep_task_forward(deep, top, dhist)
            posteriors[t.name] = probs
        return posteriors, per_modality

    raise ConfigError(f"model kind {bundle.kind!r} has no classification heads")


def classify_frame(bundle: ModelBundle, frames, histories,
                   input_standardized=True, tolerance=50.0):
    """Posterior per task for a single time step.

    ``frames``/``histories`` are per-modality maps (or bare arrays for
    unimodal models); histories are raw window vectors in the same space as
    the frames. Frame-level classification has no access to past hidden
    means, so fusion/deep history windows are zero-padded here; use
    :func:`classify_sequence` for full-history decisions.
    """
    if not isinstance(frames, dict):
        frames = {bundle.single_modality: frames}
    if not isinstance(histories, dict):
        histories = {bundle.single_modality: histories}
    modalities = bundle.modality_order
    std = _standardize_parts(bundle, frames, input_standardized, tolerance)

    means = {}
    for m in modalities:
        layer = bundle.unimodal[m]
        if m not in histories:
            raise DataError(f"missing modality {m!r} in histories")
        hist = np.asarray(histories[m], dtype=np.float64).reshape(
            1, layer.history_dim
        )
        if not input_standardized and layer.history_order > 0:
            hist = bundle.normalization[m].apply(
                hist.reshape(layer.history_order, layer.visible_dim)
            ).reshape(1, layer.history_dim)
        _, d = batch_dynamic_biases(layer, hist)
        means[m] = batch_hidden_mean(layer, std[m], d)

    per_modality = {
        m: {
            head.task.name: batch_label_posterior(head, means[m])[0]
            for head in bundle.unimodal[m].heads
        }
        for m in modalities
    }

    if bundle.kind in FUSION_KINDS:
        fusion = bundle.fusion
        cat = np.concatenate([means[m] for m in modalities], axis=1)
        pre = fusion.b + np.zeros(fusion.history_dim) @ fusion.B + cat @ fusion.W
        top = sigmoid(pre)
    else:
        top = means[modalities[0]]

    if bundle.kind in ("dcrbm", "mtcrbm"):
        layer = bundle.unimodal[modalities[0]]
        tasks = {
            head.task.name: batch_label_posterior(head, top)[0]
            for head in layer.heads
        }
    elif bundle.kind == "mtmcrbm":
        tasks = {
            head.task.name: batch_label_posterior(head, top)[0]
            for head in bundle.fusion.heads
        }
    elif bundle.kind in DEEP_KINDS:
        tasks = {}
        for t in bundle.tasks:
            deep = bundle.deep_heads[t.name]
            dhist = np.zeros((1, deep.history_dim))
            _, probs = batch_deep_task_forward(deep, top, dhist)
            tasks[t.name] = probs[0]
    else:
        raise ConfigError(
            f"model kind {bundle.kind!r} has no classification heads"
        )
    return FramePosteriors(tasks=tasks, per_modality=per_modality)


def classify_sequence(bundle: ModelBundle, sequence,
                      input_standardized=False, tolerance=50.0):
    """Classify a whole sequence; returns {task: SequenceDecision}.

    Per-frame posteriors are averaged arithmetically over time and the
    argmax taken per task; ties break toward the lowest class index.
    """
    decisions, _ = classify_sequence_full(
        bundle, sequence, input_standardized=input_standardized,
        tolerance=tolerance,
    )
    return decisions


def classify_sequence_full(bundle: ModelBundle, sequence,
                           input_standardized=False, tolerance=50.0):
    """Like :func:`classify_sequence` but also returns per-modality
    posterior timelines for diagnostics (fusion models)."""
    if isinstance(sequence, FrameSequence):
        parts = {sequence.modality_id: sequence.frames}
    elif isinstance(sequence, MultimodalSequence):
        parts = {m: p.frames for m, p in sequence.parts.items()}
    elif isinstance(sequence, dict):
        parts = sequence
    else:
        parts = {bundle.single_modality: np.asarray(sequence)}
    std = _standardize_parts(bundle, parts, input_standardized, tolerance)
    posteriors, per_modality = _posterior_timelines(bundle, std)
    decisions = {}
    for t in bundle.tasks:
        timeline = posteriors[t.name]
        mean = timeline.mean(axis=0)
        idx = int(np.argmax(mean))
        decisions[t.name] = SequenceDecision(
            task=t.name, label_index=idx, label=t.label_of(idx),
            probability=float(mean[idx]), timeline=timeline,
        )
    return decisions, per_modality


def classify_dataset(bundle, sequences, input_standardized=False):
    """Sequence- and frame-level predictions for a list of sequences."""
    seq_pred = {t.name: [] for t in bundle.tasks}
    frame_pred = {t.name: [] for t in bundle.tasks}
    frame_truth = {t.name: [] for t in bundle.tasks}
    seq_truth = {t.name: [] for t in bundle.tasks}
    decisions_per_seq = []
    for seq in sequences:
        decisions, _ = classify_sequence_full(
            bundle, seq, input_standardized=input_standardized
        )
        decisions_per_seq.append(decisions)
        for t in bundle.tasks:
            d = decisions[t.name]
            seq_pred[t.name].append(d.label_index)
            frame_pred[t.name].extend(d.timeline.argmax(axis=1).tolist())
            if t.name in seq.labels:
                truth = t.class_index(seq.labels[t.name])
                seq_truth[t.name].append(truth)
                frame_truth[t.name].extend([truth] * d.timeline.shape[0])
    return {
        "sequence_predictions": seq_pred,
        "sequence_truth": seq_truth,
        "frame_predictions": frame_pred,
        "frame_truth": frame_truth,
        "decisions": decisions_per_seq,
    }
