"""A small reversible MLP encoder with optional normalization heads.

Every activation satisfies h(x) = h'(x) x, so each layer is f_l = D_l W_l f_{l-1} with
D_l the diagonal of gates, and the backward pass only needs D_l and the head Jacobian.
"""

from __future__ import annotations

import io
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from alphacl.utils import (
    ShapeError,
    SingularityError,
    as_float_array,
    dump_arrays,
    load_arrays,
)


class Activation(Enum):
    """Reversible activations."""

    LINEAR = "linear"
    RELU = "relu"


class Head(Enum):
    """Normalization applied to the last layer's output."""

    NONE = "none"
    L2 = "l2_normalize"
    LAYER_NORM = "layer_norm"


@dataclass(frozen=True)
class LayerStack:
    """Weights W_1 ... W_L, W_l of shape n_l x n_{l-1}, with one activation per layer."""

    weights: tuple[np.ndarray, ...]
    activations: tuple[Activation, ...]

    def __post_init__(self):
        """Checks that shapes chain and tags match the layer count."""
        weights = tuple(
            as_float_array(W, f"W_{l + 1}", ndim=2) for l, W in enumerate(self.weights)
        )
        activations = tuple(Activation(a) for a in self.activations)
        if not weights:
            raise ShapeError("A layer stack needs at least one layer.")
        if len(activations) != len(weights):
            raise ShapeError(
                f"Got {len(weights)} weights but {len(activations)} activation tags."
            )
        for l in range(1, len(weights)):
            if weights[l].shape[1] != weights[l - 1].shape[0]:
                raise ShapeError(
                    f"W_{l + 1} {weights[l].shape} does not chain onto "
                    f"W_{l} {weights[l - 1].shape}."
                )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "activations", activations)

    def __len__(self) -> int:
        """Number of layers L."""
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        """Layer widths n_0, n_1, ..., n_L."""
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]


@dataclass(frozen=True)
class Encoder:
    """A layer stack plus a head. Values are immutable; steps return new encoders."""

    layers: LayerStack
    head: Head = Head.NONE

    def __post_init__(self):
        """Casts the head tag."""
        object.__setattr__(self, "head", Head(self.head))

    @property
    def weights(self) -> tuple[np.ndarray, ...]:
        """Shortcut to the layer weights."""
        return self.layers.weights

    def with_weights(self, weights: Sequence[np.ndarray]) -> Encoder:
        """Same architecture, new weights.

        Args:
            weights (Sequence[np.ndarray]): weights

        Returns:
            Encoder:

        """
        return Encoder(LayerStack(tuple(weights), self.layers.activations), self.head)

    @classmethod
    def initialize(
        cls,
        dims: Sequence[int],
        activations: Sequence[Activation | str] | Activation | str,
        head: Head | str,
        rng: np.random.Generator,
    ) -> Encoder:
        """Gaussian init scaled by 1 / sqrt(fan_in).

        Args:
            dims (Sequence[int]): widths n_0, ..., n_L
            activations (Sequence[Activation | str] | Activation | str): one tag per layer,
                or one for all
            head (Head | str): head
            rng (np.random.Generator): generator

        Returns:
            Encoder:

        """
        if len(dims) < 2:
            raise ShapeError(f"Need at least input and output widths, got {list(dims)}.")
        if isinstance(activations, (str, Activation)):
            activations = [activations] * (len(dims) - 1)
        weights = tuple(
            rng.standard_normal((dims[l + 1], dims[l])) / np.sqrt(dims[l])
            for l in range(len(dims) - 1)
        )
        return cls(LayerStack(weights, tuple(Activation(a) for a in activations)), Head(head))

    def dump(self, fileobj: io.BytesIO | io.BufferedRandom) -> None:
        """Dumps the encoder as a zip of `init_params.json` and one `.npy` per layer.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): target

        """
        init_params = {
            "head": self.head.value,
            "activations": [a.value for a in self.layers.activations],
        }
        dump_arrays(fileobj, init_params, self.weights)

    @classmethod
    def load(cls, fileobj: io.BytesIO | io.BufferedRandom) -> Encoder:
        """Loads an encoder written by `dump`.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): source

        Returns:
            Encoder:

        """
        init_params, weights = load_arrays(fileobj)
        return cls(
            LayerStack(tuple(weights), tuple(init_params["activations"])),
            Head(init_params["head"]),
        )


@dataclass(frozen=True)
class Trace:
    """Everything the forward pass caches for the backward pass.

    Args:
        activations (list[np.ndarray]): f_0 = X, f_1, ..., f_L, each rows-by-width
        gates (list[np.ndarray]): D_l as 0/1 arrays matching f_l
        outputs (np.ndarray): head output
        head_jacobians (np.ndarray | None): per-row symmetric Jacobians, absent without a head
    """

    activations: list[np.ndarray]
    gates: list[np.ndarray]
    outputs: np.ndarray
    head_jacobians: np.ndarray | None


def _gate(pre: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        # h'(0) = 0, so h(x) = h'(x) x holds at 0 too
        return (pre > 0).astype(np.float64)
    return np.ones_like(pre)


def head_forward(head: Head, F: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Applies the head row-wise and returns its Jacobians.

    l2: y = x / ||x||, J = (I - y y^T) / ||x||.
    layer_norm: y = P x / ||P x|| with P = I - 1 1^T / n, J = (P - y y^T) / ||P x||.

    Args:
        head (Head): head
        F (np.ndarray): last-layer activations, rows-by-width

    Returns:
        tuple[np.ndarray, np.ndarray | None]: outputs and the rows-by-width-by-width Jacobians

    """
    if head == Head.NONE:
        return F, None

    k = F.shape[1]
    if head == Head.L2:
        centered = F
        projector = np.eye(k)
    else:
        centered = F - F.mean(axis=1, keepdims=True)
        projector = np.eye(k) - np.full((k, k), 1.0 / k)

    norms = np.linalg.norm(centered, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise SingularityError(f"The {head.value} head got a zero vector at row {bad}.")

    Y = centered / norms[:, None]
    jacobians = (projector[None] - Y[:, :, None] * Y[:, None, :]) / norms[:, None, None]
    return Y, jacobians


def encoder_forward(enc: Encoder, X: np.ndarray) -> Trace:
    """Runs the encoder on the rows of X.

    Args:
        enc (Encoder): enc
        X (np.ndarray): rows-by-n_0 inputs

    Returns:
        Trace:

    """
    X = as_float_array(X, "X", ndim=2)
    if X.shape[1] != enc.layers.dims[0]:
        raise ShapeError(f"X has width {X.shape[1]} but the encoder expects {enc.layers.dims[0]}.")

    activations = [X]
    gates = []
    for W, activation in zip(enc.weights, enc.layers.activations):
        pre = activations[-1] @ W.T
        gate = _gate(pre, activation)
        gates.append(gate)
        activations.append(gate * pre)

    outputs, jacobians = head_forward(enc.head, activations[-1])
    return Trace(activations=activations, gates=gates, outputs=outputs, head_jacobians=jacobians)


def encoder_backward(enc: Encoder, trace: Trace, G_out: np.ndarray) -> list[np.ndarray]:
    """Chain rule through the cached gates and head Jacobians.

    Args:
        enc (Encoder): the encoder that produced `trace`
        trace (Trace): trace
        G_out (np.ndarray): gradient w.r.t. the head outputs, same shape as `trace.outputs`

    Returns:
        list[np.ndarray]: one gradient per layer, shaped like W_l

    """
    G_out = as_float_array(G_out, "G_out", ndim=2)
    if G_out.shape != trace.outputs.shape:
        raise ShapeError(
            f"G_out {G_out.shape} does not match the trace outputs {trace.outputs.shape}."
        )
    if len(trace.gates) != len(enc.weights) or any(
        gate.shape[1] != W.shape[0] for gate, W in zip(trace.gates, enc.weights)
    ):
        raise ShapeError("The trace was not produced by this encoder.")

    if trace.head_jacobians is None:
        g = G_out
    else:
        # head Jacobians are symmetric, so J^T g = J g
        g = np.einsum("nij,nj->ni", trace.head_jacobians, G_out)

    grads: list[np.ndarray] = [np.empty(0)] * len(enc.weights)
    for l in reversed(range(len(enc.weights))):
        g_pre = g * trace.gates[l]
        grads[l] = g_pre.T @ trace.activations[l]
        g = g_pre @ enc.weights[l]
    return grads
