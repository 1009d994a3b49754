"""Concrete alpha sources: the min-player choices an alpha-CL step can be driven by."""

from __future__ import annotations

from typing import Any

from alphacl.config import parse_flat
from alphacl.core import AlphaSource, DistanceSet, PairImportance
from alphacl.importance.direct import DirectDistance, alpha_direct
from alphacl.importance.gradient import alpha_from_gradient, budget_from_loss
from alphacl.importance.regularized import (
    RegularizerKind,
    RegularizerSpec,
    costs_from_distances,
    solve_regularized,
)
from alphacl.loss_family import LossSpec, eval_loss
from alphacl.utils import DomainError, UnsupportedCaseError


class GradientAlpha(AlphaSource):
    """alpha read off the gradient of a loss in the family."""

    def __init__(self, spec: LossSpec):
        """__init__.

        Args:
            spec (LossSpec): the loss whose alpha is used

        """
        self.spec = spec

    def __call__(self, dist: DistanceSet) -> PairImportance:
        """__call__.

        Args:
            dist (DistanceSet): dist

        Returns:
            PairImportance:

        """
        _, xi = eval_loss(self.spec, dist)
        return alpha_from_gradient(self.spec, dist, xi)

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {"source": "gradient", **self.spec.to_params()}


class RegularizedAlpha(AlphaSource):
    """alpha from one of the regularized row problems.

    For the entropy regularizer, `budget_spec` swaps the unit budget for the loss-derived
    budget tau^-1 * xi_i * phi'(xi_i), which makes the solver reproduce `GradientAlpha` for
    any loss with exponential psi.
    """

    def __init__(self, reg: RegularizerSpec, budget_spec: LossSpec | None = None):
        """__init__.

        Args:
            reg (RegularizerSpec): regularizer
            budget_spec (LossSpec | None): loss supplying per-row budgets, entropy only

        """
        if budget_spec is not None:
            if reg.kind != RegularizerKind.ENTROPY:
                raise UnsupportedCaseError("Loss-derived budgets need the entropy regularizer.")
            if budget_spec.exponential_temperature is None:
                raise UnsupportedCaseError(
                    f"{budget_spec.kind.value} has no exponential psi, "
                    "so its budgets are undefined."
                )
        self.reg = reg
        self.budget_spec = budget_spec

    def __call__(self, dist: DistanceSet) -> PairImportance:
        """__call__.

        Args:
            dist (DistanceSet): dist

        Returns:
            PairImportance:

        """
        reg = self.reg
        if self.budget_spec is not None:
            _, xi = eval_loss(self.budget_spec, dist)
            reg = RegularizerSpec(
                kind=reg.kind,
                tau=reg.tau,
                gamma=reg.gamma,
                row_budget=budget_from_loss(self.budget_spec, xi),
            )
        return solve_regularized(costs_from_distances(dist), reg)

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        params: dict[str, Any] = {"source": "regularized", **self.reg.to_params()}
        if self.budget_spec is not None:
            params["budget_from"] = self.budget_spec.kind.value
            params["budget_eps"] = float(self.budget_spec.epsilon)
        return params


class DirectAlpha(AlphaSource):
    """alpha = exp(-d^p / tau), optionally normalized per row."""

    def __init__(
        self,
        p: float,
        tau: float,
        normalized: bool = True,
        distance: DirectDistance | str = DirectDistance.EUCLIDEAN,
    ):
        """__init__.

        Args:
            p (float): exponent, must exceed 1
            tau (float): temperature
            normalized (bool): whether rows sum to one
            distance (DirectDistance | str): how d_ij is recovered from d2_ij

        """
        if not p > 1:
            raise DomainError(f"Direct alpha needs p > 1, got {p}.")
        if not tau > 0:
            raise DomainError(f"tau must be positive, got {tau}.")
        self.p = float(p)
        self.tau = float(tau)
        self.normalized = bool(normalized)
        self.distance = DirectDistance(distance)

    def __call__(self, dist: DistanceSet) -> PairImportance:
        """__call__.

        Args:
            dist (DistanceSet): dist

        Returns:
            PairImportance:

        """
        return alpha_direct(dist, self.p, self.tau, self.normalized, self.distance)

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {
            "source": "direct",
            "p": self.p,
            "tau": self.tau,
            "normalized": self.normalized,
            "direct_alpha_distance": self.distance.value,
        }


class FixedAlpha(AlphaSource):
    """The same alpha for every batch, e.g. for flows where alpha is held fixed."""

    def __init__(self, pi: PairImportance):
        """__init__.

        Args:
            pi (PairImportance): the alpha to return

        """
        self.pi = pi

    def __call__(self, dist: DistanceSet) -> PairImportance:
        """__call__.

        Args:
            dist (DistanceSet): dist

        Returns:
            PairImportance:

        """
        if len(dist) != len(self.pi):
            raise DomainError(
                f"Fixed alpha is {len(self.pi)}x{len(self.pi)} but the batch has N = {len(dist)}."
            )
        return self.pi

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {"source": "fixed", "n": len(self.pi)}


def alpha_source_from_params(params: dict[str, Any]) -> AlphaSource:
    """Rebuilds an alpha source from its flat parameters.

    `source=fixed` is not representable as flat text and is rejected.

    Args:
        params (dict[str, Any]): params, as returned by `AlphaSource.to_params`

    Returns:
        AlphaSource:

    """
    params = dict(params)
    source = str(params.pop("source", "gradient")).lower()

    if source == "gradient":
        return GradientAlpha(LossSpec.from_params(params))

    if source == "regularized":
        budget_from = params.pop("budget_from", None)
        budget_eps = float(params.pop("budget_eps", 0.0))
        reg = RegularizerSpec(
            kind=RegularizerKind(str(params.pop("regularizer", "entropy")).lower()),
            tau=float(params.pop("tau", 1.0)),
            gamma=float(params.pop("gamma", 2.0)),
            row_budget=float(params.pop("budget", 1.0)),
        )
        if params:
            raise DomainError(f"Unknown regularized-source parameters {sorted(params)}.")
        budget_spec = None
        if budget_from is not None:
            budget_spec = LossSpec(kind=budget_from, tau=reg.tau, epsilon=budget_eps)
        return RegularizedAlpha(reg, budget_spec)

    if source == "direct":
        source_obj = DirectAlpha(
            p=float(params.pop("p", 4.0)),
            tau=float(params.pop("tau", 0.5)),
            normalized=bool(params.pop("normalized", True)),
            distance=str(params.pop("direct_alpha_distance", "euclidean")),
        )
        if params:
            raise DomainError(f"Unknown direct-source parameters {sorted(params)}.")
        return source_obj

    raise UnsupportedCaseError(f"Cannot build alpha source `{source}` from flat parameters.")


def alpha_source_from_flat(text: str) -> AlphaSource:
    """Parses e.g. `source=direct p=4 tau=0.5 normalized=true`.

    Args:
        text (str): text

    Returns:
        AlphaSource:

    """
    return alpha_source_from_params(parse_flat(text))

