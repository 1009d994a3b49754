"""Desk-scale training of the small encoder with each loss variant, scored by a linear readout."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Generator, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
from prefetch_generator import prefetch

from alphacl.core import AlphaSource, Batch
from alphacl.energy import energy_from_distances
from alphacl.grad_engine.encoder import Activation, Encoder, Head, encoder_forward
from alphacl.grad_engine.steps import (
    WeightGradient,
    alpha_cl_gradient,
    backprop_alpha_gradient,
    loss_gradient,
)
from alphacl.importance.regularized import RegularizerSpec
from alphacl.importance.sources import DirectAlpha, GradientAlpha, RegularizedAlpha
from alphacl.loss_family import LossKind, LossSpec, infonce_reference_loss
from alphacl.utils import DomainError, ShapeError, check_finite, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian clusters with additive-noise and scaling augmentations.

    Args:
        class_count (int): number of clusters
        samples_per_class (int): samples per cluster
        input_dim (int): dimension of the informative coordinates
        separation (float): norm of every cluster center
        cluster_std (float): within-cluster standard deviation
        noise_scale (float): std of the additive augmentation noise
        scale_range (tuple[float, float]): per-sample positive scaling applied by augmentation
        distractor_separation (float): when positive, one extra coordinate at +-half this value,
            drawn independently of the class and kept by augmentation
        nuisance_dims (int): extra pure-noise coordinates, redrawn for every view
        nuisance_std (float): std of the nuisance coordinates
        seed (int): seed
    """

    class_count: int = 4
    samples_per_class: int = 200
    input_dim: int = 16
    separation: float = 6.0
    cluster_std: float = 0.5
    noise_scale: float = 0.1
    scale_range: tuple[float, float] = (1.0, 1.0)
    distractor_separation: float = 0.0
    nuisance_dims: int = 0
    nuisance_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        """Checks ranges."""
        if self.class_count < 2 or self.samples_per_class < 1 or self.input_dim < 1:
            raise DomainError("Need class_count >= 2, samples_per_class >= 1 and input_dim >= 1.")
        if not 0 < self.scale_range[0] <= self.scale_range[1]:
            raise DomainError(f"scale_range must be positive and ordered, got {self.scale_range}.")
        scales = (self.noise_scale, self.cluster_std, self.nuisance_std, self.distractor_separation)
        if min(scales) < 0:
            raise DomainError("Standard deviations and the distractor separation must be >= 0.")

    @property
    def kept_width(self) -> int:
        """Width of the coordinates shared by both views: informative plus distractor."""
        return self.input_dim + int(self.distractor_separation > 0)

    @property
    def width(self) -> int:
        """Total input width, nuisance coordinates included."""
        return self.kept_width + self.nuisance_dims

    def generate(self) -> tuple[np.ndarray, np.ndarray]:
        """The clean dataset, bit-identical for a given seed.

        Returns:
            tuple[np.ndarray, np.ndarray]: inputs and integer labels

        """
        rng = make_rng(self.seed, 1)
        centers = rng.standard_normal((self.class_count, self.input_dim))
        centers *= self.separation / np.linalg.norm(centers, axis=1, keepdims=True)
        labels = np.repeat(np.arange(self.class_count), self.samples_per_class)
        X = centers[labels] + self.cluster_std * rng.standard_normal((labels.size, self.input_dim))
        if self.distractor_separation > 0:
            style = rng.choice([-0.5, 0.5], size=(labels.size, 1)) * self.distractor_separation
            style += self.cluster_std * rng.standard_normal(style.shape)
            X = np.hstack([X, style])
        if self.nuisance_dims:
            nuisance = self.nuisance_std * rng.standard_normal((labels.size, self.nuisance_dims))
            X = np.hstack([X, nuisance])
        return X, labels

    def augment(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One augmented view of X; the label is unchanged.

        Args:
            X (np.ndarray): clean inputs
            rng (np.random.Generator): generator

        Returns:
            np.ndarray:

        """
        view = X.copy()
        kept = view[:, : self.kept_width]
        kept += self.noise_scale * rng.standard_normal(kept.shape)
        kept *= rng.uniform(*self.scale_range, size=(X.shape[0], 1))
        if self.nuisance_dims:
            view[:, self.kept_width :] = self.nuisance_std * rng.standard_normal(
                (X.shape[0], self.nuisance_dims)
            )
        return view

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {
            "class_count": self.class_count,
            "samples_per_class": self.samples_per_class,
            "input_dim": self.input_dim,
            "separation": float(self.separation),
            "cluster_std": float(self.cluster_std),
            "noise_scale": float(self.noise_scale),
            "scale_low": float(self.scale_range[0]),
            "scale_high": float(self.scale_range[1]),
            "distractor_separation": float(self.distractor_separation),
            "nuisance_dims": self.nuisance_dims,
            "nuisance_std": float(self.nuisance_std),
            "seed": self.seed,
        }


class VariantKind(Enum):
    """Training objectives compared on the toy task."""

    INFONCE = "infonce"
    QUADRATIC = "quadratic"
    BACKPROP_ALPHA = "backprop_alpha"
    ALPHA_CL = "alpha_cl"
    ALPHA_CL_DIRECT = "alpha_cl_direct"


@dataclass(frozen=True)
class LossVariant:
    """A training objective and its constants.

    Args:
        kind (VariantKind): kind
        tau (float): temperature of infonce, backprop_alpha and direct alpha
        epsilon (float): InfoNCE offset
        regularizer (RegularizerSpec | None): for alpha_cl, defaults to entropy at `tau`
        p (float): exponent of direct alpha
        normalized (bool): whether direct alpha rows sum to one
    """

    kind: VariantKind = VariantKind.INFONCE
    tau: float = 0.5
    epsilon: float = 0.0
    regularizer: RegularizerSpec | None = None
    p: float = 4.0
    normalized: bool = True

    def __post_init__(self):
        """Casts the kind."""
        object.__setattr__(self, "kind", VariantKind(self.kind))

    @property
    def infonce(self) -> LossSpec:
        """The InfoNCE spec at this variant's temperature."""
        return LossSpec(LossKind.INFONCE, tau=self.tau, epsilon=self.epsilon)

    def alpha_source(self) -> AlphaSource:
        """The alpha source behind this variant, used for logging on loss variants too.

        Returns:
            AlphaSource:

        """
        if self.kind == VariantKind.QUADRATIC:
            return GradientAlpha(LossSpec(LossKind.QUADRATIC))
        if self.kind == VariantKind.ALPHA_CL:
            if self.regularizer is not None:
                return RegularizedAlpha(self.regularizer)
            # an InfoNCE offset shrinks the row budgets below one
            budget_spec = self.infonce if self.epsilon > 0 else None
            return RegularizedAlpha(RegularizerSpec(tau=self.tau), budget_spec)
        if self.kind == VariantKind.ALPHA_CL_DIRECT:
            return DirectAlpha(self.p, self.tau, self.normalized)
        return GradientAlpha(self.infonce)

    def ascent_direction(self, enc: Encoder, batch: Batch) -> WeightGradient:
        """The direction the weights move in, in the ascent convention.

        Args:
            enc (Encoder): enc
            batch (Batch): batch

        Returns:
            WeightGradient:

        """
        if self.kind in (VariantKind.INFONCE, VariantKind.QUADRATIC):
            spec = self.infonce
            if self.kind == VariantKind.QUADRATIC:
                spec = LossSpec(LossKind.QUADRATIC)
            descent = loss_gradient(enc, batch, spec)
            return descent._replace(grads=[-g for g in descent.grads])
        if self.kind == VariantKind.BACKPROP_ALPHA:
            return backprop_alpha_gradient(enc, batch, self.infonce)
        return alpha_cl_gradient(enc, batch, self.alpha_source())

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        params: dict[str, Any] = {
            "variant": self.kind.value,
            "tau": float(self.tau),
            "eps": float(self.epsilon),
        }
        if self.kind == VariantKind.ALPHA_CL:
            reg = self.regularizer or RegularizerSpec(tau=self.tau)
            params.update({f"reg_{k}": v for k, v in reg.to_params().items()})
        if self.kind == VariantKind.ALPHA_CL_DIRECT:
            params.update({"p": float(self.p), "normalized": self.normalized})
        return params


@dataclass(frozen=True)
class OptimizerConfig:
    """sgd(lr) or adam(lr, beta1, beta2, eps)."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        """Checks the kind and ranges."""
        if self.kind not in ("sgd", "adam"):
            raise DomainError(f"Unknown optimizer `{self.kind}`, expected sgd or adam.")
        if self.lr < 0:
            raise DomainError(f"lr must be nonnegative, got {self.lr}.")

    def build(self, shapes: Sequence[tuple[int, ...]]) -> SGD | Adam:
        """Instantiates the optimizer for weights of the given shapes.

        Args:
            shapes (Sequence[tuple[int, ...]]): shapes

        Returns:
            SGD | Adam:

        """
        if self.kind == "sgd":
            return SGD(self.lr)
        return Adam(shapes, self.lr, self.beta1, self.beta2, self.eps)

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        params: dict[str, Any] = {"optimizer": self.kind, "lr": float(self.lr)}
        if self.kind == "adam":
            params.update(
                {"beta1": float(self.beta1), "beta2": float(self.beta2), "eps_opt": float(self.eps)}
            )
        return params


class SGD:
    """Plain gradient descent."""

    def __init__(self, lr: float):
        """__init__.

        Args:
            lr (float): learning rate

        """
        self.lr = lr

    def step(self, weights: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Returns W - lr * g for every layer.

        Args:
            weights (Sequence[np.ndarray]): weights
            grads (Sequence[np.ndarray]): gradients of the quantity being minimized

        Returns:
            list[np.ndarray]:

        """
        return [W - self.lr * g for W, g in zip(weights, grads)]


class Adam:
    """Adam with bias correction."""

    def __init__(
        self,
        shapes: Sequence[tuple[int, ...]],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        """__init__.

        Args:
            shapes (Sequence[tuple[int, ...]]): weight shapes
            lr (float): learning rate
            beta1 (float): first-moment decay
            beta2 (float): second-moment decay
            eps (float): denominator floor

        """
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(shape) for shape in shapes]
        self.v = [np.zeros(shape) for shape in shapes]

    def step(self, weights: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        """One Adam update.

        Args:
            weights (Sequence[np.ndarray]): weights
            grads (Sequence[np.ndarray]): gradients of the quantity being minimized

        Returns:
            list[np.ndarray]:

        """
        self.t += 1
        updated = []
        for l, (W, g) in enumerate(zip(weights, grads)):
            self.m[l] = self.beta1 * self.m[l] + (1.0 - self.beta1) * g
            self.v[l] = self.beta2 * self.v[l] + (1.0 - self.beta2) * g**2
            m_hat = self.m[l] / (1.0 - self.beta1**self.t)
            v_hat = self.v[l] / (1.0 - self.beta2**self.t)
            updated.append(W - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run besides the task.

    Args:
        variant (LossVariant): objective
        optimizer (OptimizerConfig): optimizer
        batch_size (int): pairs per minibatch, at least 2
        epochs (int): passes over the data, at least 1
        hidden (tuple[int, ...]): hidden widths of the encoder
        output_dim (int): embedding width
        activation (str): activation of every hidden layer, the last layer is linear
        head (str): normalization head
        record_weights (bool): keep a weight snapshot after every step
        seed (int): seed
    """

    variant: LossVariant = field(default_factory=LossVariant)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 64
    epochs: int = 10
    hidden: tuple[int, ...] = (32,)
    output_dim: int = 8
    activation: str = "relu"
    head: str = "l2_normalize"
    record_weights: bool = False
    seed: int = 0

    def __post_init__(self):
        """Checks ranges."""
        if self.batch_size < 2:
            raise DomainError(f"batch_size must be at least 2, got {self.batch_size}.")
        if self.epochs < 1:
            raise DomainError(f"epochs must be at least 1, got {self.epochs}.")

    def build_encoder(self, input_dim: int) -> Encoder:
        """The seeded initial encoder.

        Args:
            input_dim (int): input width

        Returns:
            Encoder:

        """
        dims = [input_dim, *self.hidden, self.output_dim]
        activations = [Activation(self.activation)] * len(self.hidden) + [Activation.LINEAR]
        return Encoder.initialize(dims, activations, Head(self.head), make_rng(self.seed, 2))

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {
            **self.variant.to_params(),
            **self.optimizer.to_params(),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "hidden": "x".join(str(h) for h in self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "head": self.head,
            "seed": self.seed,
        }


@dataclass
class TrainingLog:
    """Per-epoch means and, optionally, per-step weight snapshots."""

    epoch_energy: list[float] = field(default_factory=list)
    epoch_infonce: list[float] = field(default_factory=list)
    epoch_alpha_entropy: list[float] = field(default_factory=list)
    steps: int = 0
    snapshots: list[list[np.ndarray]] = field(default_factory=list)

    header = ["epoch", "mean_energy", "mean_infonce", "mean_alpha_row_entropy"]

    def rows(self) -> np.ndarray:
        """rows.

        Returns:
            np.ndarray:

        """
        return np.asarray(
            [
                [epoch, e, loss, h]
                for epoch, (e, loss, h) in enumerate(
                    zip(self.epoch_energy, self.epoch_infonce, self.epoch_alpha_entropy)
                )
            ],
            dtype=np.float64,
        )


@prefetch(max_prefetch=1)
def iter_minibatches(
    task: SyntheticTask, X: np.ndarray, batch_size: int, seed: int, epoch: int
) -> Generator[Batch, None, None]:
    """Shuffles and augments one epoch in the background.

    Every batch has its own generator keyed by (seed, epoch, batch index), so the stream
    does not depend on how far the consumer has read. A trailing batch of one is dropped.

    Args:
        task (SyntheticTask): task providing the augmentation
        X (np.ndarray): clean inputs
        batch_size (int): batch_size
        seed (int): run seed
        epoch (int): epoch index

    Returns:
        Generator[Batch, None, None]:

    """
    order = make_rng(seed, 3, epoch).permutation(X.shape[0])
    for b, start in enumerate(range(0, X.shape[0], batch_size)):
        index = order[start : start + batch_size]
        if index.size < 2:
            break
        rng = make_rng(seed, 4, epoch, b)
        clean = X[index]
        yield Batch(task.augment(clean, rng), task.augment(clean, rng))


def train(task: SyntheticTask, config: TrainConfig) -> tuple[Encoder, TrainingLog]:
    """Minibatch training with the configured variant and optimizer.

    Args:
        task (SyntheticTask): task
        config (TrainConfig): config

    Returns:
        tuple[Encoder, TrainingLog]:

    """
    X, _ = task.generate()
    enc = config.build_encoder(task.width)
    optimizer = config.optimizer.build([W.shape for W in enc.weights])
    variant = config.variant
    log = TrainingLog()
    if config.record_weights:
        log.snapshots.append([W.copy() for W in enc.weights])

    for epoch in range(config.epochs):
        energies, losses, entropies = [], [], []
        for batch in iter_minibatches(task, X, config.batch_size, config.seed, epoch):
            direction = variant.ascent_direction(enc, batch)
            pi = direction.pi
            if pi is None:
                pi = variant.alpha_source()(direction.dist)

            weights = optimizer.step(enc.weights, [-g for g in direction.grads])
            log.steps += 1
            check_finite(weights, f"training with {variant.kind.value}", log.steps)
            enc = enc.with_weights(weights)

            energies.append(energy_from_distances(pi, direction.dist))
            losses.append(infonce_reference_loss(direction.dist, variant.tau, variant.epsilon))
            entropies.append(float(np.mean(pi.row_entropy())))
            if config.record_weights:
                log.snapshots.append([W.copy() for W in enc.weights])

        log.epoch_energy.append(float(np.mean(energies)))
        log.epoch_infonce.append(float(np.mean(losses)))
        log.epoch_alpha_entropy.append(float(np.mean(entropies)))
        logger.debug(
            "%s epoch %d: energy %.6g, infonce %.6g",
            variant.kind.value,
            epoch,
            log.epoch_energy[-1],
            log.epoch_infonce[-1],
        )
    return enc, log


def train_split(seed: int, n: int, train_fraction: float = 0.8) -> np.ndarray:
    """Boolean mask of training samples, stable per (seed, index).

    Args:
        seed (int): seed
        n (int): number of samples
        train_fraction (float): expected share of training samples

    Returns:
        np.ndarray:

    """
    mask = np.empty(n, dtype=bool)
    for i in range(n):
        digest = hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=8).digest()
        mask[i] = int.from_bytes(digest, "little") / 2**64 < train_fraction
    return mask


def linear_probe(
    enc: Encoder,
    task: SyntheticTask,
    labels: np.ndarray | None = None,
    ridge: float = 1e-4,
) -> float:
    """Held-out accuracy of a ridge one-vs-rest classifier on frozen embeddings.

    Args:
        enc (Encoder): encoder, frozen
        task (SyntheticTask): task
        labels (np.ndarray | None): overrides the task labels, e.g. shuffled ones
        ridge (float): ridge strength

    Returns:
        float:

    """
    X, task_labels = task.generate()
    labels = task_labels if labels is None else np.asarray(labels)
    if labels.shape != task_labels.shape:
        raise ShapeError(f"labels {labels.shape} do not match the task {task_labels.shape}.")

    mask = train_split(task.seed, X.shape[0])
    if mask.all() or not mask.any():
        raise ShapeError("The split left no training or held-out samples.")

    # columns standardized with training-split statistics
    features = encoder_forward(enc, X).outputs
    mean, std = features[mask].mean(axis=0), features[mask].std(axis=0)
    features = (features - mean) / np.where(std > 0, std, 1.0)
    features = np.hstack([features, np.ones((features.shape[0], 1))])
    targets = np.eye(task.class_count)[labels]

    F = features[mask]
    coef = np.linalg.solve(F.T @ F + ridge * np.eye(F.shape[1]), F.T @ targets[mask])
    predictions = np.argmax(features[~mask] @ coef, axis=1)
    return float(np.mean(predictions == labels[~mask]))


@dataclass
class VariantComparison:
    """Probe accuracies per variant name and seed."""

    seeds: list[int]
    accuracies: dict[str, list[float]]

    def median(self, name: str) -> float:
        """median.

        Args:
            name (str): variant name

        Returns:
            float:

        """
        return float(np.median(self.accuracies[name]))

    def to_dict(self) -> dict[str, Any]:
        """to_dict.

        Returns:
            dict[str, Any]:

        """
        return {
            "seeds": self.seeds,
            "accuracies": self.accuracies,
            "medians": {name: self.median(name) for name in self.accuracies},
        }


def compare_variants(
    task: SyntheticTask, configs: Mapping[str, TrainConfig], seeds: Iterable[int]
) -> VariantComparison:
    """Trains every named config on every seed and scores the result.

    The task and config seeds are both replaced by the sweep seed.

    Args:
        task (SyntheticTask): task
        configs (Mapping[str, TrainConfig]): named configs
        seeds (Iterable[int]): seeds

    Returns:
        VariantComparison:

    """
    seeds = list(seeds)
    accuracies: dict[str, list[float]] = {name: [] for name in configs}
    for seed in seeds:
        seeded_task = replace(task, seed=seed)
        for name, config in configs.items():
            enc, _ = train(seeded_task, replace(config, seed=seed))
            accuracies[name].append(linear_probe(enc, seeded_task))
            logger.info("seed %d %s: held-out accuracy %.4f", seed, name, accuracies[name][-1])
    return VariantComparison(seeds=seeds, accuracies=accuracies)


ORDINAL_VARIANTS = {
    "infonce": LossVariant(VariantKind.INFONCE, tau=0.5),
    "quadratic": LossVariant(VariantKind.QUADRATIC),
    "alpha_cl_direct": LossVariant(VariantKind.ALPHA_CL_DIRECT, tau=0.5, p=4.0),
}


def ordinal_task(class_count: int = 4, seed: int = 0) -> SyntheticTask:
    """The task of the ordinal variant comparison.

    The distractor coordinate carries more variance than any class direction and no label
    information, so an encoder that collapses onto its dominant input direction loses the
    classes.

    Args:
        class_count (int): number of classes
        seed (int): seed

    Returns:
        SyntheticTask:

    """
    return SyntheticTask(
        class_count=class_count,
        samples_per_class=128,
        input_dim=16,
        distractor_separation=20.0,
        seed=seed,
    )


def ordinal_configs(epochs: int = 15, batch_size: int = 64) -> dict[str, TrainConfig]:
    """Identical linear encoders and SGD settings for every variant of `ORDINAL_VARIANTS`.

    The rate is 0.01 / (2 * batch_size^2), so under uniform alpha one step multiplies the
    weights by about I + 0.01 * Cov.

    Args:
        epochs (int): epochs
        batch_size (int): batch_size

    Returns:
        dict[str, TrainConfig]:

    """
    optimizer = OptimizerConfig(kind="sgd", lr=0.01 / (2 * batch_size**2))
    return {
        name: TrainConfig(
            variant=variant,
            optimizer=optimizer,
            batch_size=batch_size,
            epochs=epochs,
            hidden=(),
            output_dim=8,
            activation="linear",
            head="none",
        )
        for name, variant in ORDINAL_VARIANTS.items()
    }
