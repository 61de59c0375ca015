"""Multimodal fusion: per-modality layers feeding one fusion layer whose
visible input is the concatenation of unimodal hidden activities.

Concatenation order is lexicographic in modality id everywhere (fusion
input, fusion history, and the fusion weight matrix rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .heads import (batch_label_posterior, energy_mtcrbm, label_energy,
                    label_posterior, _check_onehots)
from .layers import dynamic_biases, hidden_mean, sigmoid
from .model import FusionModel


@dataclass
class FusionState:
    """One bottom-up pass through a fusion model at a single time step."""

    modality_order: tuple
    unimodal_means: dict            # modality -> (H_m,)
    fusion_input: np.ndarray        # (sum H_m,) concatenated unimodal activity
    fusion_hist: np.ndarray         # (N * sum H_m,) concatenated past activity
    fusion_mean: np.ndarray         # (H_f,)
    unimodal_posteriors: dict = field(default_factory=dict)


def fusion_dynamic_bias(model: FusionModel, fusion_hist):
    """f = e + C' h_hist, the history-shifted fusion hidden bias."""
    fusion_hist = np.asarray(fusion_hist, dtype=np.float64).ravel()
    layer = model.fusion
    if fusion_hist.shape[0] != layer.history_dim:
        raise ShapeError(
            f"fusion history has length {fusion_hist.shape[0]}, expected "
            f"{layer.history_dim}"
        )
    if layer.history_order == 0:
        return layer.b.copy()
    return layer.b + fusion_hist @ layer.B


def fusion_forward(model: FusionModel, frames, histories, fusion_history,
                   labels=None):
    """Bottom-up pass at one time step.

    ``frames``/``histories`` map modality id to the visible frame and its
    window; ``fusion_history`` holds the concatenated past unimodal hidden
    activity. With ``labels`` (one-hot map) the clamped label terms enter
    both the unimodal and fusion pre-activations; without, this is the
    test-time mean propagation.
    """
    order = model.modality_order
    for m in order:
        if m not in frames:
            raise ConfigError(f"missing modality {m!r} in frames")
        if m not in histories:
            raise ConfigError(f"missing modality {m!r} in histories")

    unimodal_means, unimodal_posteriors = {}, {}
    for m in order:
        layer = model.unimodal[m]
        _, d = dynamic_biases(layer, histories[m])
        mean = hidden_mean(
            layer, frames[m], d,
            label_onehots=labels if (labels is not None and layer.heads) else None,
        )
        unimodal_means[m] = mean
        unimodal_posteriors[m] = {
            head.task.name: label_posterior(head, mean) for head in layer.heads
        }

    fusion_input = np.concatenate([unimodal_means[m] for m in order])
    f = fusion_dynamic_bias(model, fusion_history)
    pre = f + fusion_input @ model.fusion.W
    if labels is not None and model.fusion.heads:
        y = _check_onehots(model.fusion.heads, labels)
        for head in model.fusion.heads:
            pre = pre + head.U @ y[head.task.name]
    fusion_mean = sigmoid(pre)
    return FusionState(
        modality_order=order,
        unimodal_means=unimodal_means,
        fusion_input=fusion_input,
        fusion_hist=np.asarray(fusion_history, dtype=np.float64).ravel(),
        fusion_mean=fusion_mean,
        unimodal_posteriors=unimodal_posteriors,
    )


def fusion_coupling_energy(model: FusionModel, fusion_input, fusion_hidden,
                           fusion_history):
    """-(f . h) - (input . W h): the fusion block of the joint energy."""
    f = fusion_dynamic_bias(model, fusion_history)
    fusion_input = np.asarray(fusion_input, dtype=np.float64).ravel()
    fusion_hidden = np.asarray(fusion_hidden, dtype=np.float64).ravel()
    return -float(f @ fusion_hidden) - float(
        fusion_input @ (model.fusion.W @ fusion_hidden)
    )


def energy_mtmcrbm(model: FusionModel, frames, hiddens, fusion_hidden,
                   y_onehots, histories, fusion_history):
    """Joint multimodal energy.

    Sum of per-modality label-conditioned layer energies, plus the fusion
    coupling term over the concatenated unimodal hidden states, plus the
    fusion-level label term. Zeroing the fusion block recovers the sum of
    unimodal energies exactly.
    """
    order = model.modality_order
    total = 0.0
    for m in order:
        layer = model.unimodal[m]
        total += energy_mtcrbm(
            layer, frames[m], hiddens[m],
            y_onehots if layer.heads else None, histories[m],
        )
    fusion_input = np.concatenate(
        [np.asarray(hiddens[m], dtype=np.float64).ravel() for m in order]
    )
    total += fusion_coupling_energy(model, fusion_input, fusion_hidden,
                                    fusion_history)
    if model.fusion.heads:
        y = _check_onehots(model.fusion.heads, y_onehots or {})
        total += label_energy(model.fusion.heads, fusion_hidden, y)
    return total


def fusion_task_posteriors(model: FusionModel, fusion_mean):
    """Decision-path posteriors, computed from the fusion hidden mean."""
    return {
        head.task.name: label_posterior(head, fusion_mean)
        for head in model.fusion.heads
    }


def batch_fusion_posteriors(model, fusion_means):
    return {
        head.task.name: batch_label_posterior(head, fusion_means)
        for head in model.fusion.heads
    }
