"""Core batch types and the base pairwise-importance source."""

from __future__ import annotations

import os
from abc import abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from alphacl.utils import DomainError, ShapeError, as_float_array


@dataclass(frozen=True)
class Batch:
    """N paired samples x[i], x[i'] and, optionally, their outputs z[i], z[i']."""

    inputs: np.ndarray
    inputs_aug: np.ndarray
    outputs: np.ndarray | None = None
    outputs_aug: np.ndarray | None = None

    def __post_init__(self):
        """Casts to float64 and checks the pairing invariants."""
        object.__setattr__(self, "inputs", as_float_array(self.inputs, "inputs", ndim=2))
        object.__setattr__(
            self, "inputs_aug", as_float_array(self.inputs_aug, "inputs_aug", ndim=2)
        )
        if self.inputs.shape != self.inputs_aug.shape:
            raise ShapeError(
                f"inputs {self.inputs.shape} and inputs_aug {self.inputs_aug.shape} must match."
            )
        if self.inputs.shape[0] < 2:
            raise ShapeError(f"A batch needs N >= 2 pairs, got N = {self.inputs.shape[0]}.")

        if (self.outputs is None) != (self.outputs_aug is None):
            raise ShapeError("outputs and outputs_aug must be given together.")
        if self.outputs is not None:
            outputs = as_float_array(self.outputs, "outputs", ndim=2)
            outputs_aug = as_float_array(self.outputs_aug, "outputs_aug", ndim=2)
            if outputs.shape != outputs_aug.shape:
                raise ShapeError(
                    f"outputs {outputs.shape} and outputs_aug {outputs_aug.shape} must match."
                )
            if outputs.shape[0] != self.inputs.shape[0]:
                raise ShapeError(
                    f"outputs have {outputs.shape[0]} rows but inputs have {self.inputs.shape[0]}."
                )
            object.__setattr__(self, "outputs", outputs)
            object.__setattr__(self, "outputs_aug", outputs_aug)

    def __len__(self) -> int:
        """Number of pairs N."""
        return self.inputs.shape[0]

    @property
    def has_outputs(self) -> bool:
        """Whether encoder outputs are attached."""
        return self.outputs is not None

    def with_outputs(self, outputs: np.ndarray, outputs_aug: np.ndarray) -> Batch:
        """Returns a copy of this batch with encoder outputs attached.

        Args:
            outputs (np.ndarray): z[i], N x k
            outputs_aug (np.ndarray): z[i'], N x k

        Returns:
            Batch:

        """
        return Batch(self.inputs, self.inputs_aug, outputs, outputs_aug)


@dataclass(frozen=True)
class DistanceSet:
    """Intra-pair distances d2_i and cross-pair distances d2_ij.

    Both use the halved convention d2 = ||a - b||^2 / 2.
    """

    d2_intra: np.ndarray
    d2_cross: np.ndarray

    def __post_init__(self):
        """Checks shapes, symmetry, zero diagonal and nonnegativity."""
        d2_intra = as_float_array(self.d2_intra, "d2_intra", ndim=1)
        d2_cross = as_float_array(self.d2_cross, "d2_cross", ndim=2)
        n = d2_intra.shape[0]
        if d2_cross.shape != (n, n):
            raise ShapeError(f"d2_cross must be {n}x{n}, got {d2_cross.shape}.")
        if n < 2:
            raise ShapeError(f"A distance set needs N >= 2, got N = {n}.")
        if (d2_intra < 0).any() or (d2_cross < 0).any():
            raise DomainError("Squared distances must be nonnegative.")
        if np.any(np.diag(d2_cross) != 0.0):
            raise DomainError("d2_cross must have an exactly zero diagonal.")
        scale = max(1.0, float(np.abs(d2_cross).max()))
        if np.abs(d2_cross - d2_cross.T).max() > 1e-12 * scale:
            raise DomainError("d2_cross must be symmetric.")
        object.__setattr__(self, "d2_intra", d2_intra)
        object.__setattr__(self, "d2_cross", d2_cross)

    def __len__(self) -> int:
        """Number of pairs N."""
        return self.d2_intra.shape[0]

    @property
    def off_diagonal(self) -> np.ndarray:
        """Boolean N x N mask that is False on the diagonal."""
        return ~np.eye(len(self), dtype=bool)


@dataclass(frozen=True)
class PairImportance:
    """The alpha matrix with zero diagonal and its row sums beta."""

    alpha: np.ndarray
    beta: np.ndarray = field(default=None)  # pyright: ignore[reportGeneralTypeIssues]

    def __post_init__(self):
        """Zeroes the diagonal, fills beta and checks nonnegativity."""
        alpha = np.array(as_float_array(self.alpha, "alpha", ndim=2))
        n = alpha.shape[0]
        if alpha.shape != (n, n) or n < 2:
            raise ShapeError(f"alpha must be square with N >= 2, got {alpha.shape}.")
        np.fill_diagonal(alpha, 0.0)
        if (alpha < 0).any():
            raise DomainError(f"alpha must be nonnegative, min entry is {alpha.min()}.")
        object.__setattr__(self, "alpha", alpha)

        beta = alpha.sum(axis=1)
        if self.beta is not None:
            given = as_float_array(self.beta, "beta", ndim=1)
            if given.shape != beta.shape or np.abs(given - beta).max() > 1e-12 * max(
                1.0, float(np.abs(beta).max())
            ):
                raise DomainError("beta does not match the row sums of alpha.")
        object.__setattr__(self, "beta", beta)

    def __len__(self) -> int:
        """Number of pairs N."""
        return self.alpha.shape[0]

    @classmethod
    def uniform(cls, n: int, value: float | None = None) -> PairImportance:
        """Constant off-diagonal alpha, 1/(N-1) by default so that rows sum to one.

        Args:
            n (int): batch size
            value (float | None): the constant

        Returns:
            PairImportance:

        """
        value = 1.0 / (n - 1) if value is None else value
        return cls(np.full((n, n), value))

    def row_entropy(self) -> np.ndarray:
        """Shannon entropy of every row after normalising it to sum to one.

        Returns:
            np.ndarray: length-N vector, zero for all-zero rows

        """
        entropy = np.zeros(len(self))
        for i, (row, total) in enumerate(zip(self.alpha, self.beta)):
            if total <= 0:
                continue
            p = row[row > 0] / total
            entropy[i] = -np.sum(p * np.log(p))
        return entropy

    def to_csv(self, path: str | os.PathLike) -> None:
        """Writes the full N x N alpha, diagonal included, row-major.

        Args:
            path (str | os.PathLike): destination

        """
        np.savetxt(path, self.alpha, fmt="%.17g", delimiter=",")


class AlphaSource:
    """Base class for everything that produces pairwise importance from a batch.

    An alpha source is the min player: it looks at the current distances and returns
    alpha as plain data, which the max player then treats as a constant.
    """

    @abstractmethod
    def __call__(self, dist: DistanceSet) -> PairImportance:
        """Computes alpha for the given distances.

        Args:
            dist (DistanceSet): dist

        Returns:
            PairImportance:

        """
        raise NotImplementedError

    @abstractmethod
    def to_params(self) -> dict[str, Any]:
        """Flat parameters that reconstruct this source via `alpha_source_from_params`.

        Returns:
            dict[str, Any]:

        """
        raise NotImplementedError

    def __repr__(self) -> str:
        """Printouts parameters of this source.

        Returns
            str:

        """
        params = ", ".join(f"{k}={v}" for k, v in self.to_params().items())
        return f"{type(self).__name__}({params})"
