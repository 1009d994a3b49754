"""The general contrastive loss family L = sum_i phi(sum_{j != i} psi(d2_i - d2_ij)).

Every named loss is a pair of monotonously increasing pointwise functions (phi, psi).
Derivatives are hand-coded per catalog entry.

Distances use the halved convention: d2_i = ||z[i] - z[i']||^2 / 2 and
d2_ij = ||z[i] - z[j]||^2 / 2. Dropping the factor 1/2 rescales every temperature.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

from alphacl.config import format_flat, parse_flat
from alphacl.core import Batch, DistanceSet
from alphacl.utils import DomainError, NumericOverflowError, ShapeError

# exp overflows float64 just above this
_MAX_EXP_ARG = 709.0


class LossKind(Enum):
    """Named members of the loss family."""

    INFONCE = "infonce"
    MINE = "mine"
    TRIPLET = "triplet"
    SOFT_TRIPLET = "soft_triplet"
    N_PLUS_ONE_TUPLET = "n_plus_one_tuplet"
    LIFTED_STRUCTURED = "lifted_structured"
    MODIFIED_TRIPLET = "modified_triplet"
    TRIPLET_CONTRASTIVE = "triplet_contrastive"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class LossSpec:
    """A (phi, psi) pair tagged by name, with its hyperparameters.

    Args:
        kind (LossKind): which catalog entry
        tau (float): temperature, used by InfoNCE and Soft Triplet
        epsilon (float): offset, used by InfoNCE, Triplet, Soft Triplet and Lifted Structured
        c (float): sigmoid slope of Modified Triplet
    """

    kind: LossKind = LossKind.INFONCE
    tau: float = 1.0
    epsilon: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        """Checks hyperparameter ranges."""
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}.")
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}.")
        if self.kind == LossKind.MODIFIED_TRIPLET and not self.c >= 0:
            raise DomainError(f"Modified Triplet needs c >= 0 for a monotone psi, got {self.c}.")

    @property
    def exponential_temperature(self) -> float | None:
        """The tau for which psi' = psi / tau, or None when psi is not exponential."""
        if self.kind in (LossKind.INFONCE, LossKind.SOFT_TRIPLET):
            return self.tau
        if self.kind in (
            LossKind.MINE,
            LossKind.N_PLUS_ONE_TUPLET,
            LossKind.LIFTED_STRUCTURED,
        ):
            return 1.0
        return None

    @property
    def has_kink(self) -> bool:
        """Whether psi has a point of non-differentiability."""
        return self.kind == LossKind.TRIPLET

    def to_params(self) -> dict[str, Any]:
        """Flat parameters.

        Returns:
            dict[str, Any]:

        """
        return {
            "kind": self.kind.value,
            "tau": float(self.tau),
            "eps": float(self.epsilon),
            "c": float(self.c),
        }

    def to_flat(self) -> str:
        """Serializes as e.g. `kind=infonce tau=0.5 eps=0.0 c=1.0`.

        Returns:
            str:

        """
        return format_flat(self.to_params())

    @classmethod
    def from_params(cls, params: dict[str, Any]) -> LossSpec:
        """Builds a spec from flat parameters; missing keys take defaults.

        Args:
            params (dict[str, Any]): params

        Returns:
            LossSpec:

        """
        unknown = set(params) - {"kind", "tau", "eps", "epsilon", "c"}
        if unknown:
            raise DomainError(f"Unknown loss parameters {sorted(unknown)}.")
        return cls(
            kind=LossKind(str(params.get("kind", "infonce")).lower()),
            tau=float(params.get("tau", 1.0)),
            epsilon=float(params.get("eps", params.get("epsilon", 0.0))),
            c=float(params.get("c", 1.0)),
        )

    @classmethod
    def from_flat(cls, text: str) -> LossSpec:
        """Parses the flat text form.

        Args:
            text (str): text

        Returns:
            LossSpec:

        """
        return cls.from_params(parse_flat(text))


def _scalar_or_array(x: np.ndarray, like: Any) -> Any:
    """Returns a python float when the input was a scalar."""
    return float(x) if np.ndim(like) == 0 else x


def _safe_exp(arg: np.ndarray) -> np.ndarray:
    """exp that refuses to overflow.

    Args:
        arg (np.ndarray): arg

    Returns:
        np.ndarray:

    """
    if np.any(arg > _MAX_EXP_ARG):
        raise NumericOverflowError(
            f"exp overflow: argument {float(np.max(arg)):.6g} exceeds {_MAX_EXP_ARG}."
        )
    return np.exp(arg)


def _require(condition: np.ndarray, message: str) -> None:
    if not np.all(condition):
        raise DomainError(message)


def eval_phi_pair(spec: LossSpec, x: Any) -> tuple[Any, Any]:
    """Evaluates phi(x) and phi'(x).

    Works elementwise on arrays; scalars in give floats out.

    Args:
        spec (LossSpec): spec
        x (Any): point(s) of evaluation

    Returns:
        tuple[Any, Any]: (phi, dphi)

    """
    xa = np.asarray(x, dtype=np.float64)
    kind = spec.kind

    if kind == LossKind.INFONCE:
        shifted = xa + spec.epsilon
        _require(shifted > 0, f"InfoNCE phi needs x + eps > 0, got min {np.min(shifted)}.")
        phi, dphi = spec.tau * np.log(shifted), spec.tau / shifted
    elif kind in (LossKind.MINE,):
        _require(xa > 0, f"MINE phi needs x > 0, got min {np.min(xa)}.")
        phi, dphi = np.log(xa), 1.0 / xa
    elif kind == LossKind.SOFT_TRIPLET:
        _require(xa > -1, f"Soft Triplet phi needs x > -1, got min {np.min(xa)}.")
        phi, dphi = spec.tau * np.log1p(xa), spec.tau / (1.0 + xa)
    elif kind == LossKind.N_PLUS_ONE_TUPLET:
        _require(xa > -1, f"N+1 Tuplet phi needs x > -1, got min {np.min(xa)}.")
        phi, dphi = np.log1p(xa), 1.0 / (1.0 + xa)
    elif kind == LossKind.LIFTED_STRUCTURED:
        _require(xa > 0, f"Lifted Structured phi needs x > 0, got min {np.min(xa)}.")
        log_x = np.log(xa)
        positive = log_x > 0
        phi = np.where(positive, log_x**2, 0.0)
        dphi = np.where(positive, 2.0 * log_x / xa, 0.0)
    elif kind in (
        LossKind.TRIPLET,
        LossKind.MODIFIED_TRIPLET,
        LossKind.TRIPLET_CONTRASTIVE,
        LossKind.QUADRATIC,
    ):
        phi, dphi = xa.copy(), np.ones_like(xa)
    else:
        raise DomainError(f"Unknown loss kind {kind}.")

    return _scalar_or_array(phi, x), _scalar_or_array(dphi, x)


def eval_psi_pair(spec: LossSpec, x: Any) -> tuple[Any, Any]:
    """Evaluates psi(x) and psi'(x).

    For Triplet, psi(x) = [x + eps]_+ and the derivative at the kink x = -eps is 0.

    Args:
        spec (LossSpec): spec
        x (Any): point(s) of evaluation

    Returns:
        tuple[Any, Any]: (psi, dpsi)

    """
    xa = np.asarray(x, dtype=np.float64)
    kind = spec.kind

    if kind == LossKind.INFONCE:
        psi = _safe_exp(xa / spec.tau)
        dpsi = psi / spec.tau
    elif kind in (LossKind.MINE, LossKind.N_PLUS_ONE_TUPLET):
        psi = _safe_exp(xa)
        dpsi = psi.copy()
    elif kind == LossKind.SOFT_TRIPLET:
        psi = _safe_exp(xa / spec.tau + spec.epsilon)
        dpsi = psi / spec.tau
    elif kind == LossKind.LIFTED_STRUCTURED:
        psi = _safe_exp(xa + spec.epsilon)
        dpsi = psi.copy()
    elif kind == LossKind.TRIPLET:
        shifted = xa + spec.epsilon
        psi = np.maximum(shifted, 0.0)
        dpsi = (shifted > 0).astype(np.float64)
    elif kind == LossKind.MODIFIED_TRIPLET:
        # numerically stable logistic
        psi = np.where(
            xa >= 0,
            1.0 / (1.0 + np.exp(-spec.c * np.abs(xa))),
            np.exp(-spec.c * np.abs(xa)) / (1.0 + np.exp(-spec.c * np.abs(xa))),
        )
        dpsi = spec.c * psi * (1.0 - psi)
    elif kind in (LossKind.TRIPLET_CONTRASTIVE, LossKind.QUADRATIC):
        psi, dpsi = xa.copy(), np.ones_like(xa)
    else:
        raise DomainError(f"Unknown loss kind {kind}.")

    return _scalar_or_array(psi, x), _scalar_or_array(dpsi, x)


def pairwise_distances(batch: Batch) -> DistanceSet:
    """Computes d2_i = ||z[i] - z[i']||^2 / 2 and d2_ij = ||z[i] - z[j]||^2 / 2.

    Args:
        batch (Batch): a batch with outputs attached

    Returns:
        DistanceSet:

    """
    if not batch.has_outputs:
        raise ShapeError("pairwise_distances needs a batch with outputs.")
    return distances_from_outputs(batch.outputs, batch.outputs_aug)  # pyright: ignore


def distances_from_outputs(Z: np.ndarray, Z_aug: np.ndarray) -> DistanceSet:
    """Same as `pairwise_distances` but on raw output matrices.

    Args:
        Z (np.ndarray): z[i], N x k
        Z_aug (np.ndarray): z[i'], N x k

    Returns:
        DistanceSet:

    """
    Z = np.asarray(Z, dtype=np.float64)
    Z_aug = np.asarray(Z_aug, dtype=np.float64)
    if Z.ndim != 2 or Z.shape != Z_aug.shape:
        raise ShapeError(f"Z {Z.shape} and Z_aug {Z_aug.shape} must be matching 2D arrays.")
    if Z.shape[0] < 2:
        raise ShapeError(f"Need N >= 2, got N = {Z.shape[0]}.")

    d2_intra = 0.5 * np.sum((Z - Z_aug) ** 2, axis=1)
    diff = Z[:, None, :] - Z[None, :, :]
    d2_cross = 0.5 * np.sum(diff**2, axis=-1)
    d2_cross = 0.5 * (d2_cross + d2_cross.T)
    np.fill_diagonal(d2_cross, 0.0)
    return DistanceSet(d2_intra=d2_intra, d2_cross=d2_cross)


def psi_arguments(dist: DistanceSet) -> np.ndarray:
    """The matrix u_ij = d2_i - d2_ij; the diagonal is meaningless and set to 0.

    Args:
        dist (DistanceSet): dist

    Returns:
        np.ndarray:

    """
    u = dist.d2_intra[:, None] - dist.d2_cross
    np.fill_diagonal(u, 0.0)
    return u


def eval_loss(spec: LossSpec, dist: DistanceSet) -> tuple[float, np.ndarray]:
    """Evaluates L = sum_i phi(xi_i) with xi_i = sum_{j != i} psi(d2_i - d2_ij).

    Args:
        spec (LossSpec): spec
        dist (DistanceSet): dist

    Returns:
        tuple[float, np.ndarray]: the loss and the vector xi

    """
    psi, _ = eval_psi_pair(spec, psi_arguments(dist))
    psi = np.where(dist.off_diagonal, psi, 0.0)
    xi = psi.sum(axis=1)
    phi, _ = eval_phi_pair(spec, xi)
    return float(np.sum(phi)), xi


def infonce_reference_loss(dist: DistanceSet, tau: float, epsilon: float = 0.0) -> float:
    """InfoNCE in its -tau * log-softmax form, evaluated independently of the family.

    Args:
        dist (DistanceSet): dist
        tau (float): temperature
        epsilon (float): weight of the positive pair in the denominator

    Returns:
        float:

    """
    total = 0.0
    for i in range(len(dist)):
        negatives = -np.delete(dist.d2_cross[i], i) / tau
        positive = -dist.d2_intra[i] / tau
        logits = np.concatenate(([positive], negatives))
        weights = np.concatenate(([epsilon], np.ones_like(negatives)))
        shift = logits.max()
        log_denominator = shift + np.log(np.sum(weights * np.exp(logits - shift)))
        total += -tau * (positive - log_denominator)
    return total


def near_kink(spec: LossSpec, dist: DistanceSet, zone: float = 1e-4) -> int:
    """Counts off-diagonal pairs whose psi argument lies within `zone` of a kink.

    Args:
        spec (LossSpec): spec
        dist (DistanceSet): dist
        zone (float): half-width of the exclusion zone

    Returns:
        int:

    """
    if not spec.has_kink:
        return 0
    close = np.abs(psi_arguments(dist) + spec.epsilon) <= zone
    return int(np.sum(close & dist.off_diagonal))
