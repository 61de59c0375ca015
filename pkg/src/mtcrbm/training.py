"""Contrastive-divergence learning for every model kind, plus grid search.

One CD step is a bottom-up pass (clamped labels, hidden layers sampled in
parallel) followed by a top-down pass (labels resampled from their posterior,
visible units regenerated with unit-variance noise). Gradients are the
data-phase statistics minus the reconstruction-phase statistics; each phase
statistic is the negative energy derivative for its parameter block, so the
dynamic-bias contributions cancel between phases and the update reduces to
the familiar data-minus-reconstruction correlation rules.

Deep kinds train greedily bottom-up: the headless base model first, then one
single-head task layer per task over the (frozen) base hidden means.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Dataset, fit_normalization, standardize_sequences
from .errors import ConfigError, DataError, NumericError
from .fusion import batch_fusion_posteriors
from .heads import batch_label_posterior
from .layers import (batch_dynamic_biases, batch_hidden_mean,
                     batch_visible_mean, history_windows, sample_hidden,
                     sample_visible, sigmoid)
from .model import (DEEP_KINDS, FUSION_KINDS, GAUSSIAN, CrbmLayerParams,
                    FrameSequence, FusionModel, ModelBundle, ModelConfig,
                    MultimodalSequence, Normalization, TaskHead, new_model,
                    rng_from_seed)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 10
    minibatch_size: int = 100
    cd_steps: int = 1
    seed: int = 0
    standardize: bool = True

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be a positive integer")
        if int(self.minibatch_size) < 1:
            raise ConfigError("minibatch_size must be a positive integer")
        if int(self.cd_steps) < 1:
            raise ConfigError("cd_steps must be a positive integer")
        return self


@dataclass
class EpochStats:
    epoch: int
    reconstruction_error: float
    task_accuracy: dict
    stage: str = "base"


@dataclass
class TrainReport:
    epochs: list
    config: dict
    wall_time_s: float = 0.0
    final_accuracy: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "config": self.config,
            "wall_time_s": self.wall_time_s,
            "final_accuracy": self.final_accuracy,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path):
        tasks = sorted({t for e in self.epochs for t in e.task_accuracy})
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "epoch", "reconstruction_error"]
                            + [f"acc_{t}" for t in tasks])
            for e in self.epochs:
                writer.writerow(
                    [e.stage, e.epoch, repr(e.reconstruction_error)]
                    + [repr(e.task_accuracy[t]) if t in e.task_accuracy else ""
                       for t in tasks]
                )


# -- gradient containers -------------------------------------------------


@dataclass
class LayerGrads:
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    s: dict = field(default_factory=dict)
    U: dict = field(default_factory=dict)

    def blocks(self, prefix=""):
        yield f"{prefix}a", self.a
        yield f"{prefix}b", self.b
        yield f"{prefix}A", self.A
        yield f"{prefix}B", self.B
        yield f"{prefix}W", self.W
        for t in self.s:
            yield f"{prefix}s[{t}]", self.s[t]
        for t in self.U:
            yield f"{prefix}U[{t}]", self.U[t]

    @classmethod
    def zeros_like(cls, layer):
        return cls(
            a=np.zeros_like(layer.a), b=np.zeros_like(layer.b),
            A=np.zeros_like(layer.A), B=np.zeros_like(layer.B),
            W=np.zeros_like(layer.W),
            s={h.task.name: np.zeros_like(h.s) for h in layer.heads},
            U={h.task.name: np.zeros_like(h.U) for h in layer.heads},
        )


def _sub(data: LayerGrads, recon: LayerGrads) -> LayerGrads:
    return LayerGrads(
        a=data.a - recon.a, b=data.b - recon.b, A=data.A - recon.A,
        B=data.B - recon.B, W=data.W - recon.W,
        s={t: data.s[t] - recon.s[t] for t in data.s},
        U={t: data.U[t] - recon.U[t] for t in data.U},
    )


@dataclass
class GradientSet:
    unimodal: dict  # modality -> LayerGrads
    fusion: LayerGrads | None = None

    def blocks(self):
        for m in sorted(self.unimodal):
            yield from self.unimodal[m].blocks(prefix=f"unimodal[{m!r}].")
        if self.fusion is not None:
            yield from self.fusion.blocks(prefix="fusion.")


def _check_finite(grads: GradientSet):
    for name, arr in grads.blocks():
        if arr.size and not np.isfinite(arr).all():
            raise NumericError(f"non-finite gradient in block {name}")


# -- phase statistics (the negative energy derivative per block) ----------


def phase_statistics(layer, v_matrix, c_matrix, hist_matrix, h_matrix,
                     y_onehots, visible_coupled=True):
    """Batch-mean of -dE/d(theta) for every block of one layer.

    ``visible_coupled=False`` drops the visible-side blocks (a, A): the
    fusion layer's energy carries no bias terms for its visible input.
    """
    n = v_matrix.shape[0]
    if visible_coupled:
        vis = v_matrix if layer.visible_kind != GAUSSIAN else v_matrix - c_matrix
        a = vis.mean(axis=0)
        a_mat = hist_matrix.T @ vis / n
    else:
        a = np.zeros_like(layer.a)
        a_mat = np.zeros_like(layer.A)
    stats = LayerGrads(
        a=a,
        b=h_matrix.mean(axis=0),
        A=a_mat,
        B=hist_matrix.T @ h_matrix / n,
        W=v_matrix.T @ h_matrix / n,
        s={t: y_onehots[t].mean(axis=0) for t in y_onehots},
        U={t: h_matrix.T @ y_onehots[t] / n for t in y_onehots},
    )
    return stats


def _batch_label_term(layer, y_onehots):
    if not layer.heads or not y_onehots:
        return None
    term = None
    for head in layer.heads:
        part = y_onehots[head.task.name] @ head.U.T
        term = part if term is None else term + part
    return term


def _sample_onehot_rows(probs, rng):
    u = rng.random((probs.shape[0], 1))
    idx = (u > np.cumsum(probs, axis=1)).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    out = np.zeros_like(probs)
    out[np.arange(probs.shape[0]), idx] = 1.0
    return out


def _sample_labels(heads, h_matrix, rng):
    return {
        head.task.name: _sample_onehot_rows(
            batch_label_posterior(head, h_matrix), rng
        )
        for head in heads
    }


# -- CD cores --------------------------------------------------------------


def _cd_unimodal(layer, v, hist, y, rng, cd_steps):
    """One CD-k step on a single layer. Returns (grads, recon_sq_error_sum)."""
    c, d = batch_dynamic_biases(layer, hist)
    lt = _batch_label_term(layer, y)
    hm_data = batch_hidden_mean(layer, v, d, lt)
    data = phase_statistics(layer, v, c, hist, hm_data, y)

    h_cur = sample_hidden(hm_data, rng)
    v_recon = hm_recon = y_recon = None
    recon_sq = 0.0
    for step in range(cd_steps):
        y_recon = _sample_labels(layer.heads, h_cur, rng) if layer.heads else {}
        v_mean = batch_visible_mean(layer, h_cur, c)
        if step == 0:
            recon_sq = float(((v - v_mean) ** 2).sum())
        v_recon = sample_visible(v_mean, rng, layer.visible_kind)
        hm_recon = batch_hidden_mean(layer, v_recon, d,
                                     _batch_label_term(layer, y_recon))
        if step < cd_steps - 1:
            h_cur = sample_hidden(hm_recon, rng)
    recon = phase_statistics(layer, v_recon, c, hist, hm_recon, y_recon)
    return _sub(data, recon), recon_sq


def _fusion_history_matrix(fm, past_v, past_hist, past_mask, y):
    """(B, N * sum H_m) history of masked unimodal hidden means.

    Layout matches the generic window convention: steps oldest-first, the
    modalities concatenated (lexicographically) inside each step.
    """
    order = fm.modality_order
    b_sz, n_steps = past_mask.shape
    per_m = []
    for m in order:
        layer = fm.unimodal[m]
        v2 = past_v[m].reshape(b_sz * n_steps, layer.visible_dim)
        h2 = past_hist[m].reshape(b_sz * n_steps, layer.history_dim)
        _, d2 = batch_dynamic_biases(layer, h2)
        lt = _batch_label_term(layer, y)
        lt2 = np.repeat(lt, n_steps, axis=0) if lt is not None else None
        hm = batch_hidden_mean(layer, v2, d2, lt2)
        hm = hm.reshape(b_sz, n_steps, layer.hidden_dim) * past_mask[:, :, None]
        per_m.append(hm)
    cat = np.concatenate(per_m, axis=2)
    return cat.reshape(b_sz, n_steps * cat.shape[2])


def _cd_mtm(fm, v, hist, fusion_hist, y, rng, cd_steps):
    """One CD-k step on a fusion model.

    Bottom-up: sample every unimodal hidden layer (labels clamped), then the
    fusion layer over the concatenated samples. Top-down: resample labels
    from the fusion posterior, regenerate unimodal hiddens from the fusion
    sample, then the visibles with noise, and close with a bottom-up
    recomputation for the reconstruction statistics.
    """
    order = fm.modality_order
    slices = fm.hidden_slices()
    fusion = fm.fusion

    c, d, hm_data, hs_data = {}, {}, {}, {}
    for m in order:
        layer = fm.unimodal[m]
        c[m], d[m] = batch_dynamic_biases(layer, hist[m])
        hm_data[m] = batch_hidden_mean(layer, v[m], d[m],
                                       _batch_label_term(layer, y))
        hs_data[m] = sample_hidden(hm_data[m], rng)
    vfus_data = np.concatenate([hs_data[m] for m in order], axis=1)
    f_bias = fusion.b + fusion_hist @ fusion.B
    ltf = _batch_label_term(fusion, y)
    pre = f_bias + vfus_data @ fusion.W
    hfm_data = sigmoid(pre if ltf is None else pre + ltf)

    data_uni = {
        m: phase_statistics(fm.unimodal[m], v[m], c[m], hist[m], hm_data[m], y)
        for m in order
    }
    data_fus = phase_statistics(fusion, vfus_data, None, fusion_hist, hfm_data,
                                y if fusion.heads else {}, visible_coupled=False)

    hf_cur = sample_hidden(hfm_data, rng)
    recon_sq = 0.0
    v_recon, hm_recon, hfm_recon, vfus_recon, y_recon = {}, {}, None, None, {}
    for step in range(cd_steps):
        y_recon = _sample_labels(fusion.heads, hf_cur, rng) if fusion.heads else {}
        hs_td = {}
        for m in order:
            layer = fm.unimodal[m]
            pre_td = d[m] + hf_cur @ fusion.W[slices[m], :].T
            lt_m = _batch_label_term(layer, y_recon)
            hm_td = sigmoid(pre_td if lt_m is None else pre_td + lt_m)
            hs_td[m] = sample_hidden(hm_td, rng)
        for m in order:
            layer = fm.unimodal[m]
            v_mean = batch_visible_mean(layer, hs_td[m], c[m])
            if step == 0:
                recon_sq += float(((v[m] - v_mean) ** 2).sum())
            v_recon[m] = sample_visible(v_mean, rng, layer.visible_kind)
        hs_recon = {}
        for m in order:
            layer = fm.unimodal[m]
            hm_recon[m] = batch_hidden_mean(layer, v_recon[m], d[m],
                                            _batch_label_term(layer, y_recon))
            hs_recon[m] = sample_hidden(hm_recon[m], rng)
        vfus_recon = np.concatenate([hs_recon[m] for m in order], axis=1)
        pre_r = f_bias + vfus_recon @ fusion.W
        ltf_r = _batch_label_term(fusion, y_recon)
        hfm_recon = sigmoid(pre_r if ltf_r is None else pre_r + ltf_r)
        if step < cd_steps - 1:
            hf_cur = sample_hidden(hfm_recon, rng)

    recon_uni = {
        m: phase_statistics(fm.unimodal[m], v_recon[m], c[m], hist[m],
                            hm_recon[m], y_recon)
        for m in order
    }
    recon_fus = phase_statistics(fusion, vfus_recon, None, fusion_hist,
                                 hfm_recon, y_recon if fusion.heads else {},
                                 visible_coupled=False)
    grads = GradientSet(
        unimodal={m: _sub(data_uni[m], recon_uni[m]) for m in order},
        fusion=_sub(data_fus, recon_fus),
    )
    return grads, recon_sq


# -- public cd_step ---------------------------------------------------------


@dataclass
class WindowSample:
    """One training window: current frame(s), history window(s), labels.

    For fusion models, ``past_frames``/``past_histories`` (oldest-first, N
    rows per modality) supply what is needed to build the fusion history;
    rows flagged 0 in ``past_mask`` are zero-padding before the sequence
    start. When omitted, the fusion history is fully zero-padded.
    """

    frames: object
    history: object
    labels: dict | None = None
    past_frames: dict | None = None
    past_histories: dict | None = None
    past_mask: np.ndarray | None = None


def _as_sample(item):
    if isinstance(item, WindowSample):
        return item
    frames, history, labels = item
    return WindowSample(frames=frames, history=history, labels=labels)


def cd_step(bundle: ModelBundle, minibatch, rng, cd_steps=1):
    """One contrastive-divergence step over a minibatch of windows.

    Returns a :class:`GradientSet` holding data-minus-reconstruction means
    for every parameter block. Raises on missing labels or non-finite
    results (naming the first offending block).
    """
    if not minibatch:
        raise ConfigError("minibatch must be non-empty")
    samples = [_as_sample(it) for it in minibatch]
    if bundle.kind in DEEP_KINDS:
        raise ConfigError(
            "cd_step drives a single training stage; deep kinds train via "
            "train(), which stages base and task layers"
        )

    def stack_labels(heads):
        y = {}
        for head in heads:
            task = head.task
            rows = []
            for smp in samples:
                if not smp.labels or task.name not in smp.labels:
                    raise ConfigError(f"missing label for task {task.name!r}")
                row = np.zeros(task.class_count)
                row[task.class_index(smp.labels[task.name])] = 1.0
                rows.append(row)
            y[task.name] = np.asarray(rows)
        return y

    if bundle.kind not in FUSION_KINDS:
        layer = bundle.single_layer
        v = np.asarray([np.asarray(s.frames, dtype=np.float64).ravel()
                        for s in samples])
        hist = np.asarray(
            [np.asarray(s.history, dtype=np.float64).ravel() for s in samples]
        ).reshape(len(samples), layer.history_dim)
        y = stack_labels(layer.heads)
        grads, _ = _cd_unimodal(layer, v, hist, y, rng, cd_steps)
        out = GradientSet(unimodal={bundle.single_modality: grads})
        _check_finite(out)
        return out

    fm = bundle.fusion_model()
    order = fm.modality_order
    n = fm.fusion.history_order
    v, hist, past_v, past_h = {}, {}, {}, {}
    for m in order:
        layer = fm.unimodal[m]
        v[m] = np.asarray(
            [np.asarray(s.frames[m], dtype=np.float64).ravel() for s in samples]
        )
        hist[m] = np.asarray(
            [np.asarray(s.history[m], dtype=np.float64).ravel() for s in samples]
        ).reshape(len(samples), layer.history_dim)
        past_v[m] = np.asarray([
            np.zeros((n, layer.visible_dim)) if s.past_frames is None
            else np.asarray(s.past_frames[m], dtype=np.float64)
            for s in samples
        ])
        past_h[m] = np.asarray([
            np.zeros((n, layer.history_dim)) if s.past_histories is None
            else np.asarray(s.past_histories[m], dtype=np.float64)
            for s in samples
        ])
    mask = np.asarray([
        np.zeros(n) if s.past_mask is None
        else np.asarray(s.past_mask, dtype=np.float64)
        for s in samples
    ])
    y = stack_labels(fm.fusion.heads or
                     next(iter(fm.unimodal.values())).heads)
    fusion_hist = _fusion_history_matrix(fm, past_v, past_h, mask, y)
    grads, _ = _cd_mtm(fm, v, hist, fusion_hist, y, rng, cd_steps)
    _check_finite(grads)
    return grads


# -- parameter updates -------------------------------------------------------


def _apply_layer_update(layer, grads: LayerGrads, vel: LayerGrads,
                        cfg: TrainConfig):
    lr, mom, wd = cfg.learning_rate, cfg.momentum, cfg.weight_decay
    for name in ("A", "B", "W"):
        g, v_, p = getattr(grads, name), getattr(vel, name), getattr(layer, name)
        v_ *= mom
        v_ += lr * (g - wd * p)
        p += v_
    for name in ("a", "b"):
        g, v_, p = getattr(grads, name), getattr(vel, name), getattr(layer, name)
        v_ *= mom
        v_ += lr * g
        p += v_
    for head in layer.heads:
        t = head.task.name
        vel.s[t] *= mom
        vel.s[t] += lr * grads.s[t]
        head.s += vel.s[t]
        vel.U[t] *= mom
        vel.U[t] += lr * (grads.U[t] - wd * head.U)
        head.U += vel.U[t]


# -- compiled datasets --------------------------------------------------------


@dataclass
class CompiledWindows:
    modalities: tuple
    v: dict           # modality -> (F, D)
    hist: dict        # modality -> (F, N*D)
    y: dict           # task -> (F, Y) one-hot
    pos: np.ndarray   # (F,) within-sequence index
    seq_bounds: list  # (start, length, sequence) per sequence
    n_windows: int


def compile_windows(layers: dict, tasks, sequences, with_labels=True):
    """Flatten standardized sequences into global window arrays."""
    modalities = tuple(sorted(layers))
    v = {m: [] for m in modalities}
    hist = {m: [] for m in modalities}
    pos, bounds = [], []
    y = {t.name: [] for t in tasks} if with_labels else {}
    start = 0
    for i, seq in enumerate(sequences):
        for m in modalities:
            if m not in seq.parts:
                raise DataError(f"sequence {i}: missing modality {m!r}")
            layer = layers[m]
            frames = seq.parts[m].frames
            if frames.shape[1] != layer.visible_dim:
                raise DataError(
                    f"sequence {i}: modality {m!r} dimension "
                    f"{frames.shape[1]} != model visible_dim {layer.visible_dim}"
                )
            v[m].append(frames)
            hist[m].append(history_windows(frames, layer.history_order))
        length = seq.length
        pos.append(np.arange(length))
        if with_labels:
            for t in tasks:
                if t.name not in seq.labels:
                    raise DataError(
                        f"sequence {i}: missing label for task {t.name!r}"
                    )
                idx = t.class_index(seq.labels[t.name])
                block = np.zeros((length, t.class_count))
                block[:, idx] = 1.0
                y[t.name].append(block)
        bounds.append((start, length, seq))
        start += length
    return CompiledWindows(
        modalities=modalities,
        v={m: np.concatenate(v[m], axis=0) for m in modalities},
        hist={m: np.concatenate(hist[m], axis=0) for m in modalities},
        y={t: np.concatenate(y[t], axis=0) for t in y},
        pos=np.concatenate(pos) if pos else np.zeros(0, dtype=np.int64),
        seq_bounds=bounds,
        n_windows=start,
    )


def _gather_past(compiled, idx, n_steps):
    """Past-frame rows (oldest first) with a validity mask for one batch."""
    offsets = np.arange(n_steps, 0, -1)  # N, N-1, ..., 1
    rows = idx[:, None] - offsets[None, :]
    valid = compiled.pos[idx][:, None] - offsets[None, :] >= 0
    safe = np.where(valid, rows, 0)
    past_v = {m: compiled.v[m][safe] for m in compiled.modalities}
    past_h = {m: compiled.hist[m][safe] for m in compiled.modalities}
    return past_v, past_h, valid.astype(np.float64)


def _batch_y(compiled, idx):
    return {t: compiled.y[t][idx] for t in compiled.y}


# -- training loops -----------------------------------------------------------


def _frame_accuracy(layers, fusion, compiled):
    """Per-task frame-level training accuracy from label-free posteriors."""
    modalities = tuple(sorted(layers))
    means = {}
    for m in modalities:
        layer = layers[m]
        _, d = batch_dynamic_biases(layer, compiled.hist[m])
        means[m] = batch_hidden_mean(layer, compiled.v[m], d)
    if fusion is not None:
        fm = FusionModel(unimodal=dict(layers), fusion=fusion)
        cat = np.concatenate([means[m] for m in modalities], axis=1)
        fhist = _timeline_windows(cat, compiled, fusion.history_order)
        f_bias = fusion.b + fhist @ fusion.B
        fus_means = sigmoid(f_bias + cat @ fusion.W)
        posteriors = batch_fusion_posteriors(fm, fus_means)
    else:
        layer = layers[modalities[0]]
        posteriors = {
            head.task.name: batch_label_posterior(head, means[modalities[0]])
            for head in layer.heads
        }
    out = {}
    for t, probs in posteriors.items():
        truth = compiled.y[t].argmax(axis=1)
        out[t] = float((probs.argmax(axis=1) == truth).mean())
    return out


def _timeline_windows(values, compiled, order):
    """Window-stack a per-window timeline (F, K) sequence by sequence."""
    blocks = []
    for start, length, _ in compiled.seq_bounds:
        blocks.append(history_windows(values[start:start + length], order))
    return np.concatenate(blocks, axis=0) if blocks else np.zeros(
        (0, order * values.shape[1])
    )


def _train_loop(layers, fusion, compiled, cfg, rng, stage="base",
                track_accuracy=True):
    """Run cfg.epochs of shuffled-minibatch CD on the given layers."""
    modalities = tuple(sorted(layers))
    vels = {m: LayerGrads.zeros_like(layers[m]) for m in modalities}
    vel_fus = LayerGrads.zeros_like(fusion) if fusion is not None else None
    fm = None
    if fusion is not None:
        fm = FusionModel(unimodal=dict(layers), fusion=fusion)

    n = compiled.n_windows
    if n == 0:
        raise DataError("empty dataset: no training windows")
    history = []
    denom = sum(
        n * layers[m].visible_dim for m in modalities
    )
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sq_total = 0.0
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            y = _batch_y(compiled, idx)
            if fusion is None:
                layer = layers[modalities[0]]
                grads_l, sq = _cd_unimodal(
                    layer, compiled.v[modalities[0]][idx],
                    compiled.hist[modalities[0]][idx], y, rng, cfg.cd_steps,
                )
                grads = GradientSet(unimodal={modalities[0]: grads_l})
            else:
                past_v, past_h, mask = _gather_past(compiled, idx,
                                                    fusion.history_order)
                fhist = _fusion_history_matrix(fm, past_v, past_h, mask, y)
                grads, sq = _cd_mtm(
                    fm, {m: compiled.v[m][idx] for m in modalities},
                    {m: compiled.hist[m][idx] for m in modalities},
                    fhist, y, rng, cfg.cd_steps,
                )
            _check_finite(grads)
            for m in modalities:
                _apply_layer_update(layers[m], grads.unimodal[m], vels[m], cfg)
            if fusion is not None:
                _apply_layer_update(fusion, grads.fusion, vel_fus, cfg)
            sq_total += sq
        acc = {}
        if track_accuracy and compiled.y and (
            fusion.heads if fusion is not None else layers[modalities[0]].heads
        ):
            acc = _frame_accuracy(layers, fusion, compiled)
        history.append(EpochStats(
            epoch=epoch + 1,
            reconstruction_error=sq_total / denom,
            task_accuracy=acc,
            stage=stage,
        ))
    return history


def _cd_deep(shared, task_layers, v, hist, past_v, past_hist, mask, y, rng,
             cd_steps, visible_coupled=True, visible_bias=None):
    """Joint CD over a headless base layer plus its per-task top layers.

    Bottom-up: sample the base hidden layer (no label terms), then every
    task layer (labels clamped). Top-down: resample each task's label from
    its posterior, regenerate the base hidden layer from the sampled
    task-layer states alone (this is the only path label information takes
    into the base gradients), then the visibles. ``visible_bias`` overrides
    the conditional visible bias when the base layer's visible input is a
    frozen lower stack (fusion-deep) rather than raw data.
    """
    task_names = sorted(task_layers)
    c, d = batch_dynamic_biases(shared, hist)
    if visible_bias is None:
        visible_bias = c
    hm0_data = batch_hidden_mean(shared, v, d)
    hs0 = sample_hidden(hm0_data, rng)

    b_sz, n_steps = mask.shape
    if n_steps:
        pv = past_v.reshape(b_sz * n_steps, shared.visible_dim)
        ph = past_hist.reshape(b_sz * n_steps, shared.history_dim)
        _, dp = batch_dynamic_biases(shared, ph)
        pm = batch_hidden_mean(shared, pv, dp)
        pm = pm.reshape(b_sz, n_steps, shared.hidden_dim) * mask[:, :, None]
        thist = pm.reshape(b_sz, n_steps * shared.hidden_dim)
    else:
        thist = np.zeros((b_sz, 0))

    f, hm_l, hs_l = {}, {}, {}
    for t in task_names:
        layer = task_layers[t]
        f[t] = layer.b + thist @ layer.B
        hm_l[t] = sigmoid(f[t] + hs0 @ layer.W + y[t] @ layer.heads[0].U.T)
        hs_l[t] = sample_hidden(hm_l[t], rng)

    data_shared = phase_statistics(shared, v, c, hist, hm0_data, {},
                                   visible_coupled)
    data_tasks = {
        t: phase_statistics(task_layers[t], hs0, None, thist, hm_l[t],
                            {t: y[t]}, visible_coupled=False)
        for t in task_names
    }

    h_l_cur = hs_l
    recon_sq = 0.0
    v_recon = hm0_recon = None
    hm_l_recon, y_recon = {}, {}
    for step in range(cd_steps):
        y_recon = {
            t: _sample_onehot_rows(
                batch_label_posterior(task_layers[t].heads[0], h_l_cur[t]), rng
            )
            for t in task_names
        }
        pre0 = d.copy()
        for t in task_names:
            pre0 += h_l_cur[t] @ task_layers[t].W.T
        hs0_td = sample_hidden(sigmoid(pre0), rng)
        v_mean = batch_visible_mean(shared, hs0_td, visible_bias)
        if step == 0:
            recon_sq = float(((v - v_mean) ** 2).sum())
        v_recon = sample_visible(v_mean, rng, shared.visible_kind)
        hm0_recon = batch_hidden_mean(shared, v_recon, d)
        hs0_r = sample_hidden(hm0_recon, rng)
        for t in task_names:
            layer = task_layers[t]
            hm_l_recon[t] = sigmoid(
                f[t] + hs0_r @ layer.W + y_recon[t] @ layer.heads[0].U.T
            )
        if step < cd_steps - 1:
            h_l_cur = {t: sample_hidden(hm_l_recon[t], rng) for t in task_names}

    recon_shared = phase_statistics(shared, v_recon, c, hist, hm0_recon, {},
                                    visible_coupled)
    recon_tasks = {
        t: phase_statistics(task_layers[t], hs0_r, None, thist, hm_l_recon[t],
                            {t: y_recon[t]}, visible_coupled=False)
        for t in task_names
    }
    grads = GradientSet(
        unimodal={"base": _sub(data_shared, recon_shared)},
        fusion=None,
    )
    task_grads = {t: _sub(data_tasks[t], recon_tasks[t]) for t in task_names}
    return grads, task_grads, recon_sq


def _deep_frame_accuracy(shared, task_layers, v_top, hist_top, compiled_top, y):
    _, d = batch_dynamic_biases(shared, hist_top)
    means = batch_hidden_mean(shared, v_top, d)
    out = {}
    for t in sorted(task_layers):
        layer = task_layers[t]
        thist = _timeline_windows(means, compiled_top, layer.history_order)
        f_bias = layer.b + thist @ layer.B
        task_means = sigmoid(f_bias + means @ layer.W)
        probs = batch_label_posterior(layer.heads[0], task_means)
        out[t] = float((probs.argmax(axis=1) == y[t].argmax(axis=1)).mean())
    return out


def train(bundle: ModelBundle, dataset, config: TrainConfig):
    """Train a copy of ``bundle`` on the dataset; returns (bundle, report).

    The dataset is standardized per modality (constants are stored in the
    returned bundle) unless ``config.standardize`` is false, in which case
    the input is assumed standardized already.
    """
    t0 = time.perf_counter()
    config.validate()
    sequences = _as_sequences(dataset)
    if not sequences:
        raise DataError("empty dataset")

    working = bundle.copy()
    rng = rng_from_seed(config.seed)
    if config.standardize:
        norms = {m: fit_normalization(sequences, m) for m in working.unimodal}
    else:
        norms = {
            m: Normalization.identity(layer.visible_dim)
            for m, layer in working.unimodal.items()
        }
    working.normalization = norms
    std_seqs = standardize_sequences(sequences, norms)

    if working.kind in DEEP_KINDS:
        epochs = _train_deep(working, std_seqs, config, rng)
    else:
        with_labels = working.kind != "crbm"
        compiled = compile_windows(working.unimodal, working.tasks, std_seqs,
                                   with_labels=with_labels)
        epochs = _train_loop(working.unimodal, working.fusion, compiled,
                             config, rng)
    working.validate()
    final_acc = epochs[-1].task_accuracy if epochs else {}
    report = TrainReport(
        epochs=epochs,
        config=asdict(config),
        wall_time_s=time.perf_counter() - t0,
        final_accuracy=dict(final_acc),
    )
    return working, report


def _train_deep(working, std_seqs, config, rng):
    """Greedy bottom-up training for the deep kinds.

    Stage 1 trains the base stack exactly like the corresponding flat model,
    with temporary label heads (drawn from the training RNG) that are
    discarded afterwards; the final architecture keeps no heads below the
    task layers. Stage 2 runs joint supervised CD over the topmost base
    layer plus all task layers; there, label information reaches the base
    gradients only through the sampled task-layer states. For the fusion
    kind, the unimodal layers freeze after stage 1 and the fusion layer
    plays the base role over their hidden means.
    """
    def with_temp_heads(layer):
        heads = tuple(
            TaskHead(
                task=t, s=np.zeros(t.class_count),
                U=rng.normal(0.0, 0.01, size=(layer.hidden_dim, t.class_count)),
            )
            for t in working.tasks
        )
        # shares the parameter arrays, so stage-1 updates land in `working`
        return CrbmLayerParams(
            visible_dim=layer.visible_dim, hidden_dim=layer.hidden_dim,
            history_order=layer.history_order, a=layer.a, b=layer.b,
            A=layer.A, B=layer.B, W=layer.W, heads=heads,
            visible_kind=layer.visible_kind,
        )

    pre_layers = {m: with_temp_heads(l) for m, l in sorted(working.unimodal.items())}
    pre_fusion = with_temp_heads(working.fusion) if working.fusion is not None else None
    compiled = compile_windows(pre_layers, working.tasks, std_seqs,
                               with_labels=True)
    epochs = _train_loop(pre_layers, pre_fusion, compiled, config, rng,
                         stage="base")

    compiled2 = compile_windows(working.unimodal, working.tasks, std_seqs,
                                with_labels=True)
    if working.kind == "mtcrbm_deep":
        shared = working.single_layer
        v_top = compiled2.v[working.single_modality]
        hist_top = compiled2.hist[working.single_modality]
        visible_bias = None
        visible_coupled = True
    else:
        shared = working.fusion
        modalities = tuple(sorted(working.unimodal))
        means, dbias = [], []
        for m in modalities:
            layer = working.unimodal[m]
            _, d = batch_dynamic_biases(layer, compiled2.hist[m])
            means.append(batch_hidden_mean(layer, compiled2.v[m], d))
            dbias.append(d)
        v_top = np.concatenate(means, axis=1)
        visible_bias = np.concatenate(dbias, axis=1)
        hist_top = _timeline_windows(v_top, compiled2, shared.history_order)
        visible_coupled = False
    compiled_top = CompiledWindows(
        modalities=("top",), v={"top": v_top}, hist={"top": hist_top},
        y=compiled2.y, pos=compiled2.pos, seq_bounds=compiled2.seq_bounds,
        n_windows=compiled2.n_windows,
    )

    task_layers = dict(working.deep_heads)
    deep_orders = {l.history_order for l in task_layers.values()}
    if len(deep_orders) != 1:
        raise ConfigError("deep task layers must share one history order")
    n_deep = deep_orders.pop()

    vel_shared = LayerGrads.zeros_like(shared)
    vel_tasks = {t: LayerGrads.zeros_like(l) for t, l in task_layers.items()}
    n = compiled_top.n_windows
    denom = n * shared.visible_dim
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sq_total = 0.0
        for lo in range(0, n, config.minibatch_size):
            idx = perm[lo:lo + config.minibatch_size]
            past_v, past_h, mask = _gather_past(compiled_top, idx, n_deep)
            grads, task_grads, sq = _cd_deep(
                shared, task_layers, v_top[idx], hist_top[idx],
                past_v["top"], past_h["top"], mask,
                _batch_y(compiled_top, idx), rng, config.cd_steps,
                visible_coupled=visible_coupled,
                visible_bias=None if visible_bias is None
                else visible_bias[idx],
            )
            _check_finite(grads)
            for t in task_layers:
                for name, arr in task_grads[t].blocks(prefix=f"deep[{t!r}]."):
                    if arr.size and not np.isfinite(arr).all():
                        raise NumericError(f"non-finite gradient in block {name}")
            _apply_layer_update(shared, grads.unimodal["base"], vel_shared,
                                config)
            for t, layer in task_layers.items():
                _apply_layer_update(layer, task_grads[t], vel_tasks[t], config)
            sq_total += sq
        acc = _deep_frame_accuracy(shared, task_layers, v_top, hist_top,
                                   compiled_top, compiled_top.y)
        epochs.append(EpochStats(
            epoch=epoch + 1, reconstruction_error=sq_total / denom,
            task_accuracy=acc, stage="supervised",
        ))
    return epochs


def _as_sequences(dataset):
    if isinstance(dataset, Dataset):
        return dataset.sequences
    out = []
    for seq in dataset:
        if isinstance(seq, MultimodalSequence):
            out.append(seq)
        elif isinstance(seq, FrameSequence):
            out.append(MultimodalSequence(
                parts={seq.modality_id: seq}, labels=dict(seq.labels)
            ))
        else:
            raise DataError(f"unsupported sequence object {type(seq)!r}")
    return out


# -- grid search ---------------------------------------------------------------


@dataclass
class GridCell:
    hidden: int
    history: int
    overrides: dict = field(default_factory=dict)


@dataclass
class GridCellResult:
    hidden: int
    history: int
    status: str  # "ok" | "failed"
    mean_accuracy: float | None = None
    task_accuracy: dict = field(default_factory=dict)
    error: str = ""
    rank: int | None = None


def _source_folds(sequences, folds, seed):
    sources = sorted({s.source_id for s in sequences})
    if len(sources) < 2:
        raise DataError("grid search needs at least 2 distinct source_ids")
    folds = max(1, min(folds, len(sources)))
    rng = rng_from_seed(seed)
    order = list(sources)
    rng.shuffle(order)
    groups = [set(order[f::folds]) for f in range(folds)]
    if folds == 1:  # single split: half the sources validate
        half = len(order) // 2
        groups = [set(order[:half])]
    return groups


def grid_search(dataset, hidden_values=(10, 20, 30, 50, 70, 100, 200),
                history_values=(5, 10), kind="mtcrbm", config=None, folds=2,
                workers=1, seed=0, cells=None):
    """Train one model per (hidden, history) cell, rank by validation accuracy.

    Cells whose training raises are marked failed (and rank last) without
    aborting the sweep. Per-cell seeds derive from (seed, cell index), so
    worker scheduling cannot change any result.
    """
    from .inference import classify_sequence  # local import; no cycle at import

    sequences = _as_sequences(dataset)
    tasks = dataset.tasks if isinstance(dataset, Dataset) else _infer_tasks(sequences)
    base_cfg = config or TrainConfig(epochs=5)
    if cells is None:
        cells = [GridCell(hidden=h, history=n)
                 for h in hidden_values for n in history_values]
    if not cells:
        raise ConfigError("grid is empty")
    val_groups = _source_folds(sequences, folds, seed)
    modalities = sorted(sequences[0].parts)
    dims = {m: sequences[0].parts[m].dim for m in modalities}

    def run_cell(cell_index, cell):
        try:
            accs = []
            per_task = {t.name: [] for t in tasks}
            for fold_i, val_sources in enumerate(val_groups):
                train_seqs = [s for s in sequences
                              if s.source_id not in val_sources]
                val_seqs = [s for s in sequences if s.source_id in val_sources]
                if not train_seqs or not val_seqs:
                    raise DataError("a fold produced an empty split")
                cfg = TrainConfig(**{**asdict(base_cfg), **cell.overrides,
                                     "seed": base_cfg.seed + 1000 * cell_index
                                             + fold_i})
                cfg.validate()
                model_cfg = ModelConfig(
                    kind=kind, tasks=tuple(tasks), visible_dims=dims,
                    hidden_dim=cell.hidden, history_order=cell.history,
                )
                model = new_model(model_cfg, seed=cfg.seed)
                trained, _ = train(model, train_seqs, cfg)
                pred = {t.name: [] for t in tasks}
                truth = {t.name: [] for t in tasks}
                for seq in val_seqs:
                    decisions = classify_sequence(trained, seq)
                    for t in tasks:
                        pred[t.name].append(decisions[t.name].label_index)
                        truth[t.name].append(t.class_index(seq.labels[t.name]))
                for t in tasks:
                    acc = float(np.mean(
                        np.asarray(pred[t.name]) == np.asarray(truth[t.name])
                    ))
                    per_task[t.name].append(acc)
                    accs.append(acc)
            return GridCellResult(
                hidden=cell.hidden, history=cell.history, status="ok",
                mean_accuracy=float(np.mean(accs)),
                task_accuracy={t: float(np.mean(v)) for t, v in per_task.items()},
            )
        except Exception as exc:  # keep the sweep alive; mark the cell
            return GridCellResult(
                hidden=cell.hidden, history=cell.history, status="failed",
                error=f"{type(exc).__name__}: {exc}",
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ic: run_cell(*ic),
                                    enumerate(cells)))
    else:
        results = [run_cell(i, c) for i, c in enumerate(cells)]

    results.sort(key=lambda r: (
        r.status != "ok",
        -(r.mean_accuracy if r.mean_accuracy is not None else -1.0),
        r.hidden, r.history,
    ))
    for rank, r in enumerate(results, start=1):
        r.rank = rank
    return results


def _infer_tasks(sequences):
    raise DataError(
        "grid_search needs task declarations; pass a Dataset from load_dataset"
    )


def write_grid_csv(results, path):
    tasks = sorted({t for r in results for t in r.task_accuracy})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "hidden", "history", "status", "mean_accuracy"]
                        + [f"acc_{t}" for t in tasks] + ["error"])
        for r in results:
            writer.writerow([
                r.rank, r.hidden, r.history, r.status,
                "" if r.mean_accuracy is None else repr(r.mean_accuracy),
            ] + [
                repr(r.task_accuracy[t]) if t in r.task_accuracy else ""
                for t in tasks
            ] + [r.error])
