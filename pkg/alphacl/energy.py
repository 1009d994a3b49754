"""Contrastive covariance and the energy it induces.

    C_alpha[a, b] = sum_i sum_{j != i} alpha_ij (a[i] - a[j]) (b[i] - b[j])^T
                  - sum_i beta_i (a[i] - a[i']) (b[i] - b[i'])^T

    E_alpha = 1/2 tr C_alpha[z, z]
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from alphacl.core import DistanceSet, PairImportance
from alphacl.linalg import jacobi_eigh
from alphacl.utils import ShapeError, as_float_array, write_csv


@dataclass(frozen=True)
class ContrastiveCov:
    """A square contrastive covariance C_alpha[a, a] and the dimension of a."""

    matrix: np.ndarray
    source_dim: int

    def __post_init__(self):
        """Checks squareness."""
        matrix = as_float_array(self.matrix, "matrix", ndim=2)
        if matrix.shape != (self.source_dim, self.source_dim):
            raise ShapeError(
                f"Expected a {self.source_dim}x{self.source_dim} matrix, got {matrix.shape}."
            )
        object.__setattr__(self, "matrix", matrix)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues sorted descending, from the Jacobi oracle.

        Returns:
            np.ndarray:

        """
        return jacobi_eigh(self.matrix)[0]

    def to_csv(self, path: str | os.PathLike) -> None:
        """Writes the matrix as CSV and its eigenvalues to `<path>.eig.csv`.

        Args:
            path (str | os.PathLike): destination of the matrix

        """
        header = [f"c{j}" for j in range(self.source_dim)]
        write_csv(path, header, self.matrix)
        write_csv(f"{os.fspath(path)}.eig.csv", ["eigenvalue"], self.eigenvalues()[:, None])


def _check_rows(pi: PairImportance, **arrays: np.ndarray) -> dict[str, np.ndarray]:
    checked = {}
    for name, array in arrays.items():
        array = as_float_array(array, name, ndim=2)
        if array.shape[0] != len(pi):
            raise ShapeError(f"`{name}` has {array.shape[0]} rows but alpha is N = {len(pi)}.")
        checked[name] = array
    if checked["A"].shape != checked["A_aug"].shape:
        raise ShapeError(f"A {checked['A'].shape} and A_aug {checked['A_aug'].shape} must match.")
    if checked["B"].shape != checked["B_aug"].shape:
        raise ShapeError(f"B {checked['B'].shape} and B_aug {checked['B_aug'].shape} must match.")
    return checked


def contrastive_cov(
    pi: PairImportance,
    A: np.ndarray,
    A_aug: np.ndarray,
    B: np.ndarray,
    B_aug: np.ndarray,
    fast: bool = False,
) -> np.ndarray:
    """C_alpha[a, b] as a p x q matrix.

    The default path accumulates one outer-product block per row i and is the reference.
    `fast=True` uses the Laplacian form A^T (diag(r) + diag(c) - alpha - alpha^T) B with
    r, c the row and column sums of alpha.

    Args:
        pi (PairImportance): alpha; beta is recomputed from it
        A (np.ndarray): a[i], N x p
        A_aug (np.ndarray): a[i'], N x p
        B (np.ndarray): b[i], N x q
        B_aug (np.ndarray): b[i'], N x q
        fast (bool): use the Laplacian form

    Returns:
        np.ndarray:

    """
    arrays = _check_rows(pi, A=A, A_aug=A_aug, B=B, B_aug=B_aug)
    A, A_aug, B, B_aug = arrays["A"], arrays["A_aug"], arrays["B"], arrays["B_aug"]
    alpha = pi.alpha
    beta = alpha.sum(axis=1)
    gap_a = A - A_aug
    gap_b = B - B_aug

    if fast:
        laplacian = np.diag(alpha.sum(axis=1) + alpha.sum(axis=0)) - alpha - alpha.T
        return A.T @ laplacian @ B - gap_a.T @ (beta[:, None] * gap_b)

    cov = np.zeros((A.shape[1], B.shape[1]))
    for i in range(len(pi)):
        diff_a = A[i] - A
        diff_b = B[i] - B
        # the j = i term is zero since both differences vanish
        cov += (alpha[i][:, None] * diff_a).T @ diff_b
        cov -= beta[i] * np.outer(gap_a[i], gap_b[i])
    return cov


def energy(pi: PairImportance, Z: np.ndarray, Z_aug: np.ndarray) -> float:
    """E_alpha = 1/2 tr C_alpha[z, z].

    Args:
        pi (PairImportance): alpha, held fixed
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k

    Returns:
        float:

    """
    return 0.5 * float(np.trace(contrastive_cov(pi, Z, Z_aug, Z, Z_aug)))


def energy_from_distances(pi: PairImportance, dist: DistanceSet) -> float:
    """E_alpha = sum_i sum_{j != i} alpha_ij (d2_ij - d2_i), the distance form of the energy.

    Args:
        pi (PairImportance): pi
        dist (DistanceSet): dist

    Returns:
        float:

    """
    if len(pi) != len(dist):
        raise ShapeError(f"alpha is N = {len(pi)} but distances are N = {len(dist)}.")
    costs = dist.d2_cross - dist.d2_intra[:, None]
    return float(np.sum(pi.alpha * costs * dist.off_diagonal))


def export_x_alpha(path: str | os.PathLike, X_alpha: np.ndarray) -> ContrastiveCov:
    """Writes an input contrastive covariance and its eigenvalue sidecar.

    Args:
        path (str | os.PathLike): destination
        X_alpha (np.ndarray): square matrix

    Returns:
        ContrastiveCov:

    """
    X_alpha = as_float_array(X_alpha, "X_alpha", ndim=2)
    cov = ContrastiveCov(X_alpha, X_alpha.shape[0])
    cov.to_csv(path)
    return cov
