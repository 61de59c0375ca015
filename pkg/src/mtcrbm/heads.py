"""Discriminative machinery: label posteriors, label-conditioned energies,
and the per-task deep representation layers."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (batch_dynamic_biases, batch_hidden_mean, dynamic_biases,
                     energy_crbm, hidden_mean)
from .model import CrbmLayerParams, TaskHead


def softmax(logits):
    """Row-wise softmax with max-subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def label_posterior(head: TaskHead, h):
    """p(y_k | h) = softmax_k(s_k + sum_j u_jk h_j)."""
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape[0] != head.U.shape[0]:
        raise ShapeError(
            f"hidden vector has length {h.shape[0]}, expected {head.U.shape[0]}"
        )
    return softmax(head.s + h @ head.U)


def batch_label_posterior(head, h_matrix):
    return softmax(head.s + h_matrix @ head.U)


def task_posteriors(heads, h):
    """One posterior per head, keyed by task name."""
    return {head.task.name: label_posterior(head, h) for head in heads}


def onehot(index, count):
    y = np.zeros(count)
    y[int(index)] = 1.0
    return y


def onehot_map(heads, labels):
    """Class indices -> one-hot vectors for each of the layer's heads."""
    out = {}
    for head in heads:
        if head.task.name not in labels:
            raise ConfigError(f"missing label for task {head.task.name!r}")
        out[head.task.name] = onehot(
            head.task.class_index(labels[head.task.name]), head.task.class_count
        )
    return out


def _check_onehots(heads, y_onehots):
    if set(y_onehots) != {h.task.name for h in heads}:
        raise ConfigError(
            f"one-hot tasks {sorted(y_onehots)} do not match heads "
            f"{[h.task.name for h in heads]}"
        )
    checked = {}
    for head in heads:
        y = np.asarray(y_onehots[head.task.name], dtype=np.float64).ravel()
        if y.shape[0] != head.task.class_count:
            raise ShapeError(
                f"one-hot for {head.task.name!r} has length {y.shape[0]}, "
                f"expected {head.task.class_count}"
            )
        if y.sum() != 1.0 or not np.all((y == 0.0) | (y == 1.0)):
            raise ConfigError(
                f"label vector for task {head.task.name!r} is not one-hot"
            )
        checked[head.task.name] = y
    return checked


def label_energy(heads, h, y_onehots):
    """-(sum_l s^l . y^l + h . U^l y^l): the label part of the energy."""
    h = np.asarray(h, dtype=np.float64).ravel()
    total = 0.0
    for head in heads:
        y = y_onehots[head.task.name]
        total -= float(head.s @ y) + float(h @ (head.U @ y))
    return total


def energy_mtcrbm(layer: CrbmLayerParams, v, h, y_onehots, hist):
    """Label-conditioned layer energy; reduces to the plain layer energy when
    the layer has no heads (or all head parameters are zero)."""
    if not layer.heads:
        if y_onehots:
            raise ConfigError("labels supplied for a head-less layer")
        return energy_crbm(layer, v, h, hist)
    y = _check_onehots(layer.heads, y_onehots or {})
    return energy_crbm(layer, v, h, hist) + label_energy(layer.heads, h, y)


def deep_task_head_forward(deep_layer: CrbmLayerParams, shared_h_mean,
                           deep_hist=None):
    """Run one per-task representation layer on top of a shared hidden mean.

    The shared hidden mean acts as the visible input of a single-head layer
    whose history ranges over past shared hidden means. Returns the task
    layer's hidden mean and its label posterior.
    """
    if len(deep_layer.heads) != 1:
        raise ConfigError("a deep task layer must carry exactly one head")
    shared_h_mean = np.asarray(shared_h_mean, dtype=np.float64).ravel()
    if shared_h_mean.shape[0] != deep_layer.visible_dim:
        raise ShapeError(
            f"shared hidden mean has length {shared_h_mean.shape[0]}, expected "
            f"{deep_layer.visible_dim}"
        )
    if deep_hist is None:
        deep_hist = np.zeros(deep_layer.history_dim)
    _, d = dynamic_biases(deep_layer, deep_hist)
    mean = hidden_mean(deep_layer, shared_h_mean, d)
    return mean, label_posterior(deep_layer.heads[0], mean)


def batch_deep_task_forward(deep_layer, shared_means, deep_hist_matrix):
    """(T, H_deep) hidden means and (T, Y) posteriors for a mean timeline."""
    _, d = batch_dynamic_biases(deep_layer, deep_hist_matrix)
    means = batch_hidden_mean(deep_layer, shared_means, d)
    return means, batch_label_posterior(deep_layer.heads[0], means)
