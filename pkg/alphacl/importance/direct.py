"""Directly set alpha from cross distances, without any loss behind it."""

from __future__ import annotations

from enum import Enum

import numpy as np

from alphacl.core import DistanceSet, PairImportance
from alphacl.utils import DomainError


class DirectDistance(Enum):
    """How d_ij is recovered from the halved squared distance d2_ij."""

    # ||z[i] - z[j]||, i.e. sqrt(2 * d2_ij)
    EUCLIDEAN = "euclidean"
    # sqrt(d2_ij)
    HALF_SQUARE_ROOT = "half_square_root"


def unsquared_distances(
    dist: DistanceSet, distance: DirectDistance | str = DirectDistance.EUCLIDEAN
) -> np.ndarray:
    """The N x N matrix d_ij under the chosen convention.

    Args:
        dist (DistanceSet): dist
        distance (DirectDistance | str): convention

    Returns:
        np.ndarray:

    """
    distance = DirectDistance(distance)
    if distance == DirectDistance.EUCLIDEAN:
        return np.sqrt(2.0 * dist.d2_cross)
    return np.sqrt(dist.d2_cross)


def alpha_direct(
    dist: DistanceSet,
    p: float,
    tau: float,
    normalized: bool = True,
    distance: DirectDistance | str = DirectDistance.EUCLIDEAN,
) -> PairImportance:
    """alpha_ij = exp(-d_ij^p / tau), row-normalized over j != i when `normalized`.

    With the euclidean convention and p = 2 this is the InfoNCE alpha at temperature tau / 2.

    Args:
        dist (DistanceSet): dist
        p (float): exponent, must exceed 1
        tau (float): temperature
        normalized (bool): whether rows sum to one
        distance (DirectDistance | str): how d_ij is recovered from d2_ij

    Returns:
        PairImportance:

    """
    if not p > 1:
        raise DomainError(f"Direct alpha needs p > 1, got {p}.")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}.")

    logits = -(unsquared_distances(dist, distance) ** p) / tau
    mask = dist.off_diagonal
    alpha = np.zeros_like(logits)

    if not normalized:
        alpha[mask] = np.exp(logits[mask])
        return PairImportance(alpha)

    for i in range(len(dist)):
        row = logits[i, mask[i]]
        weights = np.exp(row - row.max())
        alpha[i, mask[i]] = weights / weights.sum()
    return PairImportance(alpha)
