"""Alpha as the minimiser of a linear cost minus a concave regularizer, row by row.

Each row i solves

    min_{alpha_i}  sum_{j != i} c_ij alpha_ij - sum_{j != i} r(alpha_ij)
    s.t.           sum_{j != i} alpha_ij = budget_i,  alpha_ij >= 0

with c_ij = d2_ij - d2_i, for the entropy, inverse and square regularizers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from alphacl.core import DistanceSet, PairImportance
from alphacl.utils import ConvergenceError, DomainError, ShapeError, UnsupportedCaseError


class RegularizerKind(Enum):
    """Available regularizers."""

    ENTROPY = "entropy"
    INVERSE = "inverse"
    SQUARE = "square"


@dataclass(frozen=True)
class RegularizerSpec:
    """Regularizer choice and its constants.

    Args:
        kind (RegularizerKind): which regularizer
        tau (float): strength
        gamma (float): exponent of the inverse regularizer, must exceed 1
        row_budget (np.ndarray | float): per-row budget, only the entropy solver accepts
            values other than 1
    """

    kind: RegularizerKind = RegularizerKind.ENTROPY
    tau: float = 1.0
    gamma: float = 2.0
    row_budget: Any = 1.0

    def __post_init__(self):
        """Checks constant ranges."""
        object.__setattr__(self, "kind", RegularizerKind(self.kind))
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}.")
        if self.kind == RegularizerKind.INVERSE and not self.gamma > 1:
            raise DomainError(f"The inverse regularizer needs gamma > 1, got {self.gamma}.")
        if np.any(np.asarray(self.row_budget) <= 0):
            raise DomainError("row_budget must be positive.")

    def budgets(self, n: int) -> np.ndarray:
        """The budget broadcast to a length-n vector.

        Args:
            n (int): number of rows

        Returns:
            np.ndarray:

        """
        budget = np.broadcast_to(np.asarray(self.row_budget, dtype=np.float64), (n,))
        return np.array(budget)

    def to_params(self) -> dict[str, Any]:
        """Flat parameters; vector budgets are not representable and must be scalar.

        Returns:
            dict[str, Any]:

        """
        if np.ndim(self.row_budget) != 0:
            raise UnsupportedCaseError("Only scalar row budgets can be written as flat text.")
        return {
            "regularizer": self.kind.value,
            "tau": float(self.tau),
            "gamma": float(self.gamma),
            "budget": float(self.row_budget),
        }


def costs_from_distances(dist: DistanceSet) -> np.ndarray:
    """c_ij = d2_ij - d2_i with a zero diagonal.

    Args:
        dist (DistanceSet): dist

    Returns:
        np.ndarray:

    """
    costs = dist.d2_cross - dist.d2_intra[:, None]
    np.fill_diagonal(costs, 0.0)
    return costs


def _check_costs(costs: np.ndarray) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1] or costs.shape[0] < 2:
        raise ShapeError(f"costs must be a square matrix with N >= 2, got {costs.shape}.")
    return costs


def _check_unit_budget(reg: RegularizerSpec, n: int) -> None:
    if not np.all(reg.budgets(n) == 1.0):
        raise UnsupportedCaseError(
            f"The {reg.kind.value} solver only supports a row budget of 1."
        )


def _off_diagonal_rows(costs: np.ndarray):
    """Yields (i, column indices j != i, the costs on them)."""
    n = costs.shape[0]
    columns = np.arange(n)
    for i in range(n):
        others = columns != i
        yield i, others, costs[i, others]


def alpha_entropy(costs: np.ndarray, reg: RegularizerSpec) -> PairImportance:
    """Entropy regularizer: each row is budget_i * softmax(-c_i / tau) over j != i.

    Args:
        costs (np.ndarray): N x N, diagonal ignored
        reg (RegularizerSpec): an entropy spec

    Returns:
        PairImportance:

    """
    costs = _check_costs(costs)
    if reg.kind != RegularizerKind.ENTROPY:
        raise UnsupportedCaseError(f"alpha_entropy got a {reg.kind.value} regularizer.")

    budgets = reg.budgets(costs.shape[0])
    alpha = np.zeros_like(costs)
    for i, others, row in _off_diagonal_rows(costs):
        # max-subtraction on the logits -c/tau
        logits = -row / reg.tau
        weights = np.exp(logits - logits.max())
        alpha[i, others] = budgets[i] * weights / weights.sum()
    return PairImportance(alpha)


def _inverse_row(row: np.ndarray, tau: float, gamma: float, max_iter: int, tol: float):
    """Solves one row of the inverse-regularized problem by bisection on the multiplier.

    Stationarity gives alpha_j = (tau / (c_j + mu))^(1/gamma) for mu > -min_j c_j, and
    sum_j alpha_j(mu) decreases strictly in mu.
    """
    if max_iter < 1:
        raise DomainError(f"The bisection needs max_iter >= 1, got {max_iter}.")

    def mass(mu: float) -> tuple[np.ndarray, float]:
        values = (tau / (row + mu)) ** (1.0 / gamma)
        return values, float(values.sum())

    floor = -float(row.min())
    lo = floor + 1e-12 * max(1.0, abs(floor))
    hi = floor + 1.0
    _, total = mass(hi)
    doublings = 0
    while total >= 1.0:
        hi = floor + 2.0 * (hi - floor)
        _, total = mass(hi)
        doublings += 1
        if doublings > 2000:
            raise ConvergenceError(
                "Could not bracket the inverse-regularizer multiplier.",
                diagnostics={"lo": lo, "hi": hi, "row_sum": total},
            )

    values, total = mass(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        values, total = mass(mid)
        if abs(total - 1.0) <= tol:
            return values, mid
        if total > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(np.float64).eps * max(1.0, abs(mid)):
            break

    if abs(total - 1.0) <= 1e3 * tol:
        return values, mid
    raise ConvergenceError(
        "Inverse-regularizer bisection did not converge.",
        diagnostics={"lo": lo, "hi": hi, "row_sum": total, "max_iter": max_iter},
    )


def alpha_inverse(
    costs: np.ndarray,
    reg: RegularizerSpec,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> PairImportance:
    """Inverse regularizer r(a) = tau / (1 - gamma) * a^(1 - gamma), rows on the unit simplex.

    All returned entries are strictly positive because the regularizer is a barrier at 0.

    Args:
        costs (np.ndarray): N x N, diagonal ignored
        reg (RegularizerSpec): an inverse spec
        max_iter (int): bisection iteration cap
        tol (float): tolerance on each row sum

    Returns:
        PairImportance:

    """
    costs = _check_costs(costs)
    if reg.kind != RegularizerKind.INVERSE:
        raise UnsupportedCaseError(f"alpha_inverse got a {reg.kind.value} regularizer.")
    _check_unit_budget(reg, costs.shape[0])

    alpha = np.zeros_like(costs)
    for i, others, row in _off_diagonal_rows(costs):
        alpha[i, others], _ = _inverse_row(row, reg.tau, reg.gamma, max_iter, tol)
    return PairImportance(alpha)


def inverse_multipliers(costs: np.ndarray, reg: RegularizerSpec) -> np.ndarray:
    """The per-row multipliers mu found by `alpha_inverse`, for KKT diagnostics.

    Args:
        costs (np.ndarray): costs
        reg (RegularizerSpec): reg

    Returns:
        np.ndarray:

    """
    costs = _check_costs(costs)
    mus = np.zeros(costs.shape[0])
    for i, _, row in _off_diagonal_rows(costs):
        _, mus[i] = _inverse_row(row, reg.tau, reg.gamma, 200, 1e-12)
    return mus


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex via sort and threshold.

    Args:
        v (np.ndarray): 1D vector

    Returns:
        np.ndarray:

    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    descending = np.sort(v)[::-1]
    thresholds = (np.cumsum(descending) - 1.0) / np.arange(1, n + 1)
    # largest k with descending[k] > thresholds[k]
    k = np.nonzero(descending > thresholds)[0][-1]
    return np.maximum(v - thresholds[k], 0.0)


def alpha_square(costs: np.ndarray, reg: RegularizerSpec) -> PairImportance:
    """Square regularizer r(a) = -tau / 2 * a^2, rows on the unit simplex.

    Each row is the projection of -c / tau onto the simplex, so exact zeros occur.

    Args:
        costs (np.ndarray): N x N, diagonal ignored
        reg (RegularizerSpec): a square spec

    Returns:
        PairImportance:

    """
    costs = _check_costs(costs)
    if reg.kind != RegularizerKind.SQUARE:
        raise UnsupportedCaseError(f"alpha_square got a {reg.kind.value} regularizer.")
    _check_unit_budget(reg, costs.shape[0])

    alpha = np.zeros_like(costs)
    for i, others, row in _off_diagonal_rows(costs):
        alpha[i, others] = project_to_simplex(-row / reg.tau)
    return PairImportance(alpha)


def solve_regularized(costs: np.ndarray, reg: RegularizerSpec) -> PairImportance:
    """Dispatches to the solver matching `reg.kind`.

    Args:
        costs (np.ndarray): costs
        reg (RegularizerSpec): reg

    Returns:
        PairImportance:

    """
    solvers = {
        RegularizerKind.ENTROPY: alpha_entropy,
        RegularizerKind.INVERSE: alpha_inverse,
        RegularizerKind.SQUARE: alpha_square,
    }
    return solvers[reg.kind](costs, reg)
