"""Pairwise importance read off the gradient of the loss family, and feasibility checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from alphacl.core import DistanceSet, PairImportance
from alphacl.loss_family import LossSpec, eval_phi_pair, eval_psi_pair, psi_arguments
from alphacl.utils import ShapeError


def alpha_from_gradient(spec: LossSpec, dist: DistanceSet, xi: np.ndarray) -> PairImportance:
    """alpha_ij = phi'(xi_i) * psi'(d2_i - d2_ij) for j != i.

    Args:
        spec (LossSpec): spec
        dist (DistanceSet): dist
        xi (np.ndarray): the per-row sums returned by `eval_loss`

    Returns:
        PairImportance:

    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (len(dist),):
        raise ShapeError(f"xi must have shape ({len(dist)},), got {xi.shape}.")

    _, dphi = eval_phi_pair(spec, xi)
    _, dpsi = eval_psi_pair(spec, psi_arguments(dist))
    alpha = np.asarray(dphi)[:, None] * dpsi
    alpha[~dist.off_diagonal] = 0.0
    return PairImportance(alpha)


def budget_from_loss(spec: LossSpec, xi: np.ndarray) -> np.ndarray:
    """Row budgets tau^-1 * xi_i * phi'(xi_i) of the feasible set for exponential psi.

    For losses whose psi is not exponential, `spec.tau` stands in for the temperature.

    Args:
        spec (LossSpec): spec
        xi (np.ndarray): xi

    Returns:
        np.ndarray:

    """
    tau = spec.exponential_temperature
    tau = spec.tau if tau is None else tau
    _, dphi = eval_phi_pair(spec, np.asarray(xi, dtype=np.float64))
    return np.asarray(xi) * np.asarray(dphi) / tau


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-row budget residuals and sign violations of an alpha against the feasible set."""

    budget: np.ndarray
    residual: np.ndarray
    negative_entries: int
    applicable: bool
    tol: float

    @property
    def max_residual(self) -> float:
        """Largest row-sum residual."""
        return float(np.max(self.residual))

    @property
    def feasible(self) -> bool:
        """Whether every row meets its budget within `tol` and no entry is negative."""
        return self.negative_entries == 0 and self.max_residual <= self.tol


def check_feasible(
    pi: PairImportance, xi: np.ndarray, spec: LossSpec, tol: float = 1e-10
) -> FeasibilityReport:
    """Compares beta_i against the budget tau^-1 * xi_i * phi'(xi_i).

    Args:
        pi (PairImportance): pi
        xi (np.ndarray): xi
        spec (LossSpec): spec
        tol (float): residual tolerance used by `FeasibilityReport.feasible`

    Returns:
        FeasibilityReport:

    """
    budget = budget_from_loss(spec, xi)
    beta = pi.alpha.sum(axis=1)
    return FeasibilityReport(
        budget=budget,
        residual=np.abs(beta - budget),
        negative_entries=int(np.sum(pi.alpha < 0)),
        applicable=spec.exponential_temperature is not None,
        tol=tol,
    )
