"""Output-level gradients of the loss family and of the energy, and the identity between them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from alphacl.core import PairImportance
from alphacl.importance.gradient import alpha_from_gradient
from alphacl.loss_family import (
    LossKind,
    LossSpec,
    distances_from_outputs,
    eval_loss,
    near_kink,
)
from alphacl.utils import ShapeError, UnsupportedCaseError, as_float_array


def _check_outputs(Z: np.ndarray, Z_aug: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = as_float_array(Z, "Z", ndim=2)
    Z_aug = as_float_array(Z_aug, "Z_aug", ndim=2)
    if Z.shape != Z_aug.shape:
        raise ShapeError(f"Z {Z.shape} and Z_aug {Z_aug.shape} must match.")
    return Z, Z_aug


def _grad_from_distance_weights(
    a: np.ndarray, b: np.ndarray, Z: np.ndarray, Z_aug: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of f = sum_i a_i d2_i + sum_{i != j} b_ij d2_ij in z[i] and z[i'].

    d/dz[i]  = a_i (z[i] - z[i']) + sum_j (b_ij + b_ji) (z[i] - z[j])
    d/dz[i'] = a_i (z[i'] - z[i])
    """
    sym = b + b.T
    np.fill_diagonal(sym, 0.0)
    gap = Z - Z_aug
    G = a[:, None] * gap + sym.sum(axis=1)[:, None] * Z - sym @ Z
    G_aug = -a[:, None] * gap
    return G, G_aug


def _loss_grad_from_alpha(
    pi: PairImportance, Z: np.ndarray, Z_aug: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Loss gradient in its per-sample form.

    dL/dz[i]  = sum_j alpha_ij (z[j] - z[i']) + sum_j alpha_ji (z[j] - z[i])
    dL/dz[i'] = beta_i (z[i'] - z[i])
    """
    alpha = pi.alpha
    beta = alpha.sum(axis=1)
    G = alpha @ Z - beta[:, None] * Z_aug + alpha.T @ Z - alpha.sum(axis=0)[:, None] * Z
    G_aug = beta[:, None] * (Z_aug - Z)
    return G, G_aug


def grad_loss_wrt_outputs(
    spec: LossSpec, Z: np.ndarray, Z_aug: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """dL/dz[i] and dL/dz[i'] with alpha from `alpha_from_gradient`.

    Args:
        spec (LossSpec): spec
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k

    Returns:
        tuple[np.ndarray, np.ndarray]:

    """
    Z, Z_aug = _check_outputs(Z, Z_aug)
    dist = distances_from_outputs(Z, Z_aug)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    return _loss_grad_from_alpha(pi, Z, Z_aug)


def grad_energy_wrt_outputs(
    pi: PairImportance, Z: np.ndarray, Z_aug: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of E_alpha = 1/2 tr C_alpha[z, z] in z with alpha held constant.

    Args:
        pi (PairImportance): alpha, plain data
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k

    Returns:
        tuple[np.ndarray, np.ndarray]:

    """
    Z, Z_aug = _check_outputs(Z, Z_aug)
    if Z.shape[0] != len(pi):
        raise ShapeError(f"Z has {Z.shape[0]} rows but alpha is N = {len(pi)}.")
    beta = pi.alpha.sum(axis=1)
    return _grad_from_distance_weights(-beta, pi.alpha, Z, Z_aug)


def composite_energy(spec: LossSpec, Z: np.ndarray, Z_aug: np.ndarray) -> float:
    """E_{alpha(z)}(z): the energy with alpha recomputed from the same outputs.

    Args:
        spec (LossSpec): spec
        Z (np.ndarray): Z
        Z_aug (np.ndarray): Z_aug

    Returns:
        float:

    """
    dist = distances_from_outputs(Z, Z_aug)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    costs = dist.d2_cross - dist.d2_intra[:, None]
    return float(np.sum(pi.alpha * costs * dist.off_diagonal))


def grad_composite_energy_wrt_outputs(
    spec: LossSpec, Z: np.ndarray, Z_aug: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of E_{alpha(z)}(z) including the path through alpha, InfoNCE only.

    With alpha_ij = exp(u_ij / tau) / (eps + xi_i), u_ij = d2_i - d2_ij and costs
    c_ij = d2_ij - d2_i, the alpha path contributes
    g_ik = alpha_ik / tau * (c_ik - sum_j c_ij alpha_ij) to the weight on u_ik.

    Args:
        spec (LossSpec): an InfoNCE spec
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k

    Returns:
        tuple[np.ndarray, np.ndarray]:

    """
    if spec.kind != LossKind.INFONCE:
        raise UnsupportedCaseError(
            f"Backpropagating through alpha is only implemented for infonce, got {spec.kind.value}."
        )
    Z, Z_aug = _check_outputs(Z, Z_aug)
    dist = distances_from_outputs(Z, Z_aug)
    _, xi = eval_loss(spec, dist)
    alpha = alpha_from_gradient(spec, dist, xi).alpha

    costs = dist.d2_cross - dist.d2_intra[:, None]
    np.fill_diagonal(costs, 0.0)
    expected_cost = np.sum(costs * alpha, axis=1)
    g = alpha / spec.tau * (costs - expected_cost[:, None])
    np.fill_diagonal(g, 0.0)

    a = -alpha.sum(axis=1) + g.sum(axis=1)
    b = alpha - g
    return _grad_from_distance_weights(a, b, Z, Z_aug)


@dataclass
class GradReport:
    """Output gradients of the loss and the energy, and how far they are from cancelling.

    Args:
        loss (str): loss kind
        grad_outputs (tuple[np.ndarray, np.ndarray]): dL/dz[i] and dL/dz[i']
        grad_energy (tuple[np.ndarray, np.ndarray]): dE/dz[i] and dE/dz[i'] with alpha frozen
        max_identity_residual (float): max-norm of dL/dz + dE/dz over both halves
        near_kink_pairs (int): pairs within the kink exclusion zone; nonzero means excluded
        grad_weights (list[np.ndarray]): per-layer weight gradients when an encoder was used
    """

    loss: str
    grad_outputs: tuple[np.ndarray, np.ndarray]
    grad_energy: tuple[np.ndarray, np.ndarray]
    max_identity_residual: float
    near_kink_pairs: int = 0
    grad_weights: list[np.ndarray] = field(default_factory=list)

    @property
    def excluded(self) -> bool:
        """Whether the batch sits at a kink where the identity is not claimed."""
        return self.near_kink_pairs > 0

    def passed(self, tol: float = 1e-8) -> bool:
        """Whether the residual is within `tol`, excluded batches count as passing.

        Args:
            tol (float): tolerance

        Returns:
            bool:

        """
        return self.excluded or self.max_identity_residual <= tol

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly summary without the raw arrays.

        Returns:
            dict[str, Any]:

        """
        G, G_aug = self.grad_outputs
        return {
            "loss": self.loss,
            "max_identity_residual": float(self.max_identity_residual),
            "near_kink_pairs": int(self.near_kink_pairs),
            "excluded": self.excluded,
            "grad_output_max_abs": float(max(np.abs(G).max(), np.abs(G_aug).max())),
            "grad_weight_norms": [float(np.linalg.norm(g)) for g in self.grad_weights],
        }

    def to_json(self) -> str:
        """to_json.

        Returns:
            str:

        """
        return json.dumps(self.to_dict(), sort_keys=True)


def verify_gradient_identity(
    spec: LossSpec, Z: np.ndarray, Z_aug: np.ndarray, kink_zone: float = 1e-4
) -> GradReport:
    """Measures dL/dz + dE/dz with alpha = alpha(z) frozen, which vanishes for the whole family.

    Args:
        spec (LossSpec): spec
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k
        kink_zone (float): half-width of the Triplet kink exclusion zone

    Returns:
        GradReport:

    """
    Z, Z_aug = _check_outputs(Z, Z_aug)
    dist = distances_from_outputs(Z, Z_aug)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)

    G, G_aug = _loss_grad_from_alpha(pi, Z, Z_aug)
    E, E_aug = grad_energy_wrt_outputs(pi, Z, Z_aug)
    residual = max(np.abs(G + E).max(), np.abs(G_aug + E_aug).max())
    return GradReport(
        loss=spec.kind.value,
        grad_outputs=(G, G_aug),
        grad_energy=(E, E_aug),
        max_identity_residual=float(residual),
        near_kink_pairs=near_kink(spec, dist, kink_zone),
    )
