"""Weight-level updates: the alpha-CL ascent step and its baselines."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from alphacl.core import AlphaSource, Batch, DistanceSet, PairImportance
from alphacl.grad_engine.encoder import Encoder, Trace, encoder_backward, encoder_forward
from alphacl.grad_engine.gradients import (
    grad_composite_energy_wrt_outputs,
    grad_energy_wrt_outputs,
    grad_loss_wrt_outputs,
)
from alphacl.loss_family import LossSpec, distances_from_outputs


class WeightGradient(NamedTuple):
    """Per-layer gradients together with the batch quantities they were computed from."""

    grads: list[np.ndarray]
    dist: DistanceSet
    pi: PairImportance | None


def encode_batch(enc: Encoder, batch: Batch) -> tuple[Trace, np.ndarray, np.ndarray]:
    """Runs both halves of the batch through the encoder in one pass.

    Args:
        enc (Encoder): enc
        batch (Batch): batch

    Returns:
        tuple[Trace, np.ndarray, np.ndarray]: the trace over the stacked rows, z[i] and z[i']

    """
    n = len(batch)
    trace = encoder_forward(enc, np.vstack([batch.inputs, batch.inputs_aug]))
    return trace, trace.outputs[:n], trace.outputs[n:]


def alpha_cl_gradient(enc: Encoder, batch: Batch, alpha_source: AlphaSource) -> WeightGradient:
    """Gradient of E_alpha in the weights with alpha computed once and then held fixed.

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        alpha_source (AlphaSource): the min player

    Returns:
        WeightGradient: the ascent direction

    """
    trace, Z, Z_aug = encode_batch(enc, batch)
    dist = distances_from_outputs(Z, Z_aug)
    pi = alpha_source(dist)
    G, G_aug = grad_energy_wrt_outputs(pi, Z, Z_aug)
    grads = encoder_backward(enc, trace, np.vstack([G, G_aug]))
    return WeightGradient(grads=grads, dist=dist, pi=pi)


def loss_gradient(enc: Encoder, batch: Batch, spec: LossSpec) -> WeightGradient:
    """Gradient of L_{phi,psi} in the weights.

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        spec (LossSpec): spec

    Returns:
        WeightGradient: the descent direction's negative

    """
    trace, Z, Z_aug = encode_batch(enc, batch)
    G, G_aug = grad_loss_wrt_outputs(spec, Z, Z_aug)
    grads = encoder_backward(enc, trace, np.vstack([G, G_aug]))
    return WeightGradient(grads=grads, dist=distances_from_outputs(Z, Z_aug), pi=None)


def backprop_alpha_gradient(enc: Encoder, batch: Batch, spec: LossSpec) -> WeightGradient:
    """Gradient of the composite E_{alpha(theta)}(theta), alpha path included.

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        spec (LossSpec): an InfoNCE spec

    Returns:
        WeightGradient: the ascent direction on the composite

    """
    trace, Z, Z_aug = encode_batch(enc, batch)
    G, G_aug = grad_composite_energy_wrt_outputs(spec, Z, Z_aug)
    grads = encoder_backward(enc, trace, np.vstack([G, G_aug]))
    return WeightGradient(grads=grads, dist=distances_from_outputs(Z, Z_aug), pi=None)


def _ascend(enc: Encoder, grads: list[np.ndarray], eta: float) -> Encoder:
    return enc.with_weights([W + eta * g for W, g in zip(enc.weights, grads)])


def alpha_cl_step(enc: Encoder, batch: Batch, alpha_source: AlphaSource, eta: float) -> Encoder:
    """theta <- theta + eta * grad_theta E_{sg(alpha)}(theta).

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        alpha_source (AlphaSource): the min player
        eta (float): step size

    Returns:
        Encoder:

    """
    return _ascend(enc, alpha_cl_gradient(enc, batch, alpha_source).grads, eta)


def loss_descent_step(enc: Encoder, batch: Batch, spec: LossSpec, eta: float) -> Encoder:
    """theta <- theta - eta * grad_theta L.

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        spec (LossSpec): spec
        eta (float): step size

    Returns:
        Encoder:

    """
    return _ascend(enc, loss_gradient(enc, batch, spec).grads, -eta)


def backprop_through_alpha_step(enc: Encoder, batch: Batch, spec: LossSpec, eta: float) -> Encoder:
    """theta <- theta + eta * grad_theta E_{alpha(theta)}(theta), differentiating through alpha.

    Args:
        enc (Encoder): enc
        batch (Batch): batch
        spec (LossSpec): an InfoNCE spec
        eta (float): step size

    Returns:
        Encoder:

    """
    return _ascend(enc, backprop_alpha_gradient(enc, batch, spec).grads, eta)
