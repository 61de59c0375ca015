"""Conditional RBM layer math: dynamic biases, conditional means, sampling,
and energies, for gaussian and binary visible units.

All functions are pure given their inputs plus an explicitly passed
generator, so callers may parallelize across frames or sequences freely.
Batched variants take row-per-frame matrices and are what training and
inference actually run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .model import BINARY, GAUSSIAN, CrbmLayerParams

sigmoid = kernels.sigmoid


@dataclass
class HistoryWindow:
    """The previous N frames of one sequence, concatenated oldest-first.

    ``padded_frames`` counts the zero-padded leading frames used before the
    start of a sequence (zero is the data mean after standardization).
    """

    values: np.ndarray  # (N*D,)
    padded_frames: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.padded_frames = int(self.padded_frames)
        if self.padded_frames < 0:
            raise ShapeError("padded_frames must be >= 0")

    @classmethod
    def at(cls, frames, order, t):
        """Window for frame ``t`` of a (T, D) sequence."""
        frames = np.asarray(frames, dtype=np.float64)
        win = kernels.window_stack(frames, order)[t]
        return cls(values=win, padded_frames=max(0, order - t))


def history_windows(frames, order):
    """(T, order*D) window matrix for a whole sequence, zero-padded starts."""
    return kernels.window_stack(np.ascontiguousarray(frames, dtype=np.float64), order)


def _hist_values(layer, hist):
    values = hist.values if isinstance(hist, HistoryWindow) else np.asarray(
        hist, dtype=np.float64
    ).ravel()
    if values.shape[0] != layer.history_dim:
        raise ShapeError(
            f"history window has length {values.shape[0]}, expected "
            f"{layer.history_dim} (N={layer.history_order} x D={layer.visible_dim})"
        )
    return values


def dynamic_biases(layer: CrbmLayerParams, hist):
    """History-shifted biases: c = a + A'h, d = b + B'h."""
    values = _hist_values(layer, hist)
    if layer.history_order == 0:
        return layer.a.copy(), layer.b.copy()
    c = layer.a + values @ layer.A
    d = layer.b + values @ layer.B
    return c, d


def batch_dynamic_biases(layer, hist_matrix):
    """Row-wise dynamic biases for a (B, N*D) window matrix."""
    hist_matrix = np.asarray(hist_matrix, dtype=np.float64)
    if hist_matrix.shape[1] != layer.history_dim:
        raise ShapeError(
            f"window matrix has width {hist_matrix.shape[1]}, expected "
            f"{layer.history_dim}"
        )
    c = layer.a + hist_matrix @ layer.A
    d = layer.b + hist_matrix @ layer.B
    return c, d


def _label_term(layer, label_onehots):
    """Sum of per-task head contributions U^l y^l for clamped labels."""
    if label_onehots is None:
        return None
    if not layer.heads:
        raise ConfigError("labels supplied for a head-less layer")
    if set(label_onehots) != {h.task.name for h in layer.heads}:
        raise ConfigError(
            f"label tasks {sorted(label_onehots)} do not match the layer heads "
            f"{[h.task.name for h in layer.heads]}"
        )
    term = np.zeros(layer.hidden_dim)
    for head in layer.heads:
        y = np.asarray(label_onehots[head.task.name], dtype=np.float64).ravel()
        if y.shape[0] != head.task.class_count:
            raise ShapeError(
                f"one-hot for task {head.task.name!r} has length {y.shape[0]}, "
                f"expected {head.task.class_count}"
            )
        if not np.isclose(y.sum(), 1.0):
            raise ConfigError(
                f"label vector for task {head.task.name!r} must sum to 1"
            )
        term += head.U @ y
    return term


def hidden_mean(layer, v, d, label_onehots=None):
    """p(h_j=1 | v, history[, labels]) = sigma(d_j + sum_i v_i w_ij + labels)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape[0] != layer.visible_dim:
        raise ShapeError(
            f"visible vector has length {v.shape[0]}, expected {layer.visible_dim}"
        )
    pre = d + v @ layer.W
    term = _label_term(layer, label_onehots)
    if term is not None:
        pre = pre + term
    return sigmoid(pre)


def batch_hidden_mean(layer, v_matrix, d_matrix, label_term=None):
    pre = d_matrix + v_matrix @ layer.W
    if label_term is not None:
        pre = pre + label_term
    return sigmoid(pre)


def visible_mean(layer, h, c):
    """Conditional visible mean: c + W h (gaussian) or sigma(c + W h) (binary)."""
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape[0] != layer.hidden_dim:
        raise ShapeError(
            f"hidden vector has length {h.shape[0]}, expected {layer.hidden_dim}"
        )
    mean = c + layer.W @ h
    if layer.visible_kind == BINARY:
        return sigmoid(mean)
    return mean


def batch_visible_mean(layer, h_matrix, c_matrix):
    mean = c_matrix + h_matrix @ layer.W.T
    if layer.visible_kind == BINARY:
        return sigmoid(mean)
    return mean


def sample_hidden(mean, rng):
    """Independent Bernoulli draws; returns a float 0/1 array."""
    mean = np.asarray(mean, dtype=np.float64)
    return (rng.random(mean.shape) < mean).astype(np.float64)


def sample_visible(mean, rng, visible_kind=GAUSSIAN):
    """Gaussian: mean + unit-variance noise per dimension; binary: Bernoulli."""
    mean = np.asarray(mean, dtype=np.float64)
    if visible_kind == BINARY:
        return (rng.random(mean.shape) < mean).astype(np.float64)
    return mean + rng.standard_normal(mean.shape)


def energy_crbm(layer, v, h, hist):
    """Layer energy given the history window.

    Gaussian visibles: sum_i (c_i - v_i)^2 / 2 - sum_j d_j h_j - v' W h.
    Binary visibles replace the quadratic term with -c.v.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    h = np.asarray(h, dtype=np.float64).ravel()
    if v.shape[0] != layer.visible_dim or h.shape[0] != layer.hidden_dim:
        raise ShapeError(
            f"state has shapes v={v.shape}, h={h.shape}; expected "
            f"({layer.visible_dim},), ({layer.hidden_dim},)"
        )
    c, d = dynamic_biases(layer, hist)
    if layer.visible_kind == BINARY:
        vis_term = -float(c @ v)
    else:
        diff = c - v
        vis_term = 0.5 * float(diff @ diff)
    return vis_term - float(d @ h) - float(v @ (layer.W @ h))


def energy_rbm(layer, v, h):
    """History-free special case of the layer energy."""
    if layer.history_order != 0:
        raise ConfigError("energy_rbm applies to layers with history_order=0")
    return energy_crbm(layer, v, h, np.zeros(0))
