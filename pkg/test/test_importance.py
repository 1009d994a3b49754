"""Tests the pairwise importance solvers and sources."""

from __future__ import annotations

import math
from itertools import product

import numpy as np
import pytest
from utils import (
    entropy_objective,
    inverse_objective,
    random_outputs,
    simplex_argmin,
    square_objective,
)

from alphacl.core import DistanceSet, PairImportance
from alphacl.importance import (
    DirectAlpha,
    DirectDistance,
    FixedAlpha,
    GradientAlpha,
    RegularizedAlpha,
    RegularizerKind,
    RegularizerSpec,
    alpha_direct,
    alpha_entropy,
    alpha_from_gradient,
    alpha_inverse,
    alpha_source_from_flat,
    alpha_square,
    budget_from_loss,
    check_feasible,
    costs_from_distances,
    project_to_simplex,
    solve_regularized,
)
from alphacl.importance.regularized import inverse_multipliers
from alphacl.loss_family import LossKind, LossSpec, distances_from_outputs, eval_loss
from alphacl.utils import DomainError, UnsupportedCaseError, make_rng


def _random_dist(seed: int, n: int = 6, k: int = 4) -> DistanceSet:
    return distances_from_outputs(*random_outputs(make_rng(seed), n=n, k=k))


def _row_costs(row: np.ndarray) -> np.ndarray:
    """Embeds one row of costs as row 0 of a square matrix."""
    n = len(row) + 1
    costs = np.zeros((n, n))
    costs[0, 1:] = row
    return costs


def _equal_distances(n: int, value: float = 0.7) -> DistanceSet:
    cross = np.full((n, n), value)
    np.fill_diagonal(cross, 0.0)
    return DistanceSet(np.full(n, 0.2), cross)


@pytest.mark.parametrize("n", [2, 3, 7])
def test_gradient_alpha_uniform(n: int):
    """Equal cross distances give uniform InfoNCE rows."""
    spec = LossSpec(LossKind.INFONCE, tau=0.5)
    dist = _equal_distances(n)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    off = dist.off_diagonal
    assert np.allclose(pi.alpha[off], 1.0 / (n - 1), rtol=0, atol=1e-15)


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_gradient_alpha_ratio(tau: float):
    """A distance gap of tau * ln 2 halves the weight."""
    gap = tau * math.log(2.0)
    cross = np.array([[0.0, 0.0, gap], [0.0, 0.0, 1.0], [gap, 1.0, 0.0]])
    dist = DistanceSet(np.zeros(3), cross)
    spec = LossSpec(LossKind.INFONCE, tau=tau)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    assert pi.alpha[0, 1] / pi.alpha[0, 2] == pytest.approx(2.0, rel=1e-14)


def test_gradient_alpha_quadratic():
    """Quadratic loss weighs every pair by one."""
    spec = LossSpec(LossKind.QUADRATIC)
    dist = _random_dist(0)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    assert np.all(pi.alpha[dist.off_diagonal] == 1.0)
    assert np.all(np.diag(pi.alpha) == 0.0)


@pytest.mark.parametrize("epsilon", [0.0, 1.0])
def test_feasibility_of_gradient_alpha(epsilon: float):
    """InfoNCE alpha meets the budget xi / (xi + eps)."""
    spec = LossSpec(LossKind.INFONCE, tau=0.5, epsilon=epsilon)
    dist = _random_dist(1, n=10)
    _, xi = eval_loss(spec, dist)
    pi = alpha_from_gradient(spec, dist, xi)
    report = check_feasible(pi, xi, spec)
    assert report.applicable
    assert report.feasible, f"{report.max_residual=}"
    assert np.allclose(report.budget, xi / (xi + epsilon), rtol=0, atol=1e-14)

    empty = check_feasible(PairImportance.uniform(10, value=0.0), xi, spec)
    assert not empty.feasible

    report = check_feasible(pi, xi, LossSpec(LossKind.TRIPLET))
    assert not report.applicable


@pytest.mark.parametrize("seed, tau", list(product(range(5), [0.3, 1.0, 2.5])))
def test_entropy_matches_infonce(seed: int, tau: float):
    """Entropy regularizer at budget 1 reproduces the InfoNCE alpha."""
    spec = LossSpec(LossKind.INFONCE, tau=tau)
    dist = _random_dist(seed, n=8)
    _, xi = eval_loss(spec, dist)
    expected = alpha_from_gradient(spec, dist, xi)
    actual = alpha_entropy(costs_from_distances(dist), RegularizerSpec(tau=tau))
    assert np.max(np.abs(actual.alpha - expected.alpha)) <= 1e-10


def test_entropy_budget_matches_infonce_with_epsilon():
    """With loss-derived budgets the entropy solver covers eps > 0 too."""
    spec = LossSpec(LossKind.INFONCE, tau=0.5, epsilon=1.0)
    dist = _random_dist(2, n=8)
    _, xi = eval_loss(spec, dist)
    expected = alpha_from_gradient(spec, dist, xi)
    actual = RegularizedAlpha(RegularizerSpec(tau=0.5), budget_spec=spec)(dist)
    assert np.max(np.abs(actual.alpha - expected.alpha)) <= 1e-10


@pytest.mark.parametrize("kind", list(RegularizerKind))
def test_equal_costs_give_uniform_rows(kind: RegularizerKind):
    """Every solver is symmetric in the columns."""
    costs = np.full((5, 5), 0.4)
    pi = solve_regularized(costs, RegularizerSpec(kind, tau=0.5))
    off = ~np.eye(5, dtype=bool)
    assert np.allclose(pi.alpha[off], 0.25, rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_entropy_matches_grid_search(seed: int):
    """One row of three against a brute-force simplex search."""
    row = make_rng(seed, 1).standard_normal(3)
    pi = alpha_entropy(_row_costs(row), RegularizerSpec(tau=1.0))
    oracle = simplex_argmin(entropy_objective(row, 1.0), 3)
    assert np.max(np.abs(pi.alpha[0, 1:] - oracle)) <= 1e-5, f"{pi.alpha[0, 1:]=}, {oracle=}"


@pytest.mark.parametrize("seed", range(3))
def test_inverse_matches_grid_search(seed: int):
    """One row of three against a brute-force simplex search, gamma = 2 and tau = 0.5."""
    row = make_rng(seed, 2).standard_normal(3)
    reg = RegularizerSpec(RegularizerKind.INVERSE, tau=0.5, gamma=2.0)
    pi = alpha_inverse(_row_costs(row), reg)
    oracle = simplex_argmin(inverse_objective(row, 0.5, 2.0), 3)
    assert np.max(np.abs(pi.alpha[0, 1:] - oracle)) <= 1e-5, f"{pi.alpha[0, 1:]=}, {oracle=}"


@pytest.mark.parametrize("seed", range(3))
def test_square_matches_grid_search(seed: int):
    """One row of four against a brute-force simplex search."""
    row = make_rng(seed, 3).standard_normal(4)
    pi = alpha_square(_row_costs(row), RegularizerSpec(RegularizerKind.SQUARE, tau=1.0))
    oracle = simplex_argmin(square_objective(row, 1.0), 4, ticks=40)
    assert np.max(np.abs(pi.alpha[0, 1:] - oracle)) <= 1e-5, f"{pi.alpha[0, 1:]=}, {oracle=}"


def test_square_by_hand():
    """Water filling on two columns."""
    reg = RegularizerSpec(RegularizerKind.SQUARE, tau=1.0)
    assert np.allclose(alpha_square(_row_costs(np.array([0.0, 0.0])), reg).alpha[0, 1:], 0.5)

    reg = RegularizerSpec(RegularizerKind.SQUARE, tau=0.1)
    alpha = alpha_square(_row_costs(np.array([0.0, 10.0])), reg).alpha
    assert np.array_equal(alpha[0, 1:], [1.0, 0.0])


@pytest.mark.parametrize("seed, gamma", list(product(range(4), [1.5, 2.0, 3.0])))
def test_inverse_rows(seed: int, gamma: float):
    """Inverse rows are strictly positive, sum to one and satisfy stationarity."""
    dist = _random_dist(seed, n=7)
    costs = costs_from_distances(dist)
    reg = RegularizerSpec(RegularizerKind.INVERSE, tau=0.5, gamma=gamma)
    pi = alpha_inverse(costs, reg)
    off = dist.off_diagonal
    assert np.all(pi.alpha[off] > 0.0)
    assert np.max(np.abs(pi.beta - 1.0)) <= 1e-10

    mus = inverse_multipliers(costs, reg)
    stationary = (0.5 / (costs + mus[:, None])[off]) ** (1.0 / gamma)
    assert np.allclose(pi.alpha[off], stationary, rtol=1e-12, atol=0)


def test_inverse_needs_an_iteration():
    """A bisection cap below one is rejected up front."""
    costs = costs_from_distances(_random_dist(0, n=4))
    reg = RegularizerSpec(RegularizerKind.INVERSE, tau=0.5, gamma=2.0)
    with pytest.raises(DomainError):
        alpha_inverse(costs, reg, max_iter=0)


def test_square_rows_may_have_zeros():
    """Square rows sum to one and threshold far columns to exact zeros."""
    dist = _random_dist(4, n=8, k=2)
    reg = RegularizerSpec(RegularizerKind.SQUARE, tau=0.05)
    pi = alpha_square(costs_from_distances(dist), reg)
    assert np.max(np.abs(pi.beta - 1.0)) <= 1e-10
    assert np.any(pi.alpha[dist.off_diagonal] == 0.0)


def test_project_to_simplex():
    """Projection leaves simplex points alone and lands on the simplex."""
    point = np.array([0.2, 0.3, 0.5])
    assert np.allclose(project_to_simplex(point), point)
    projected = project_to_simplex(np.array([3.0, -1.0, 0.5]))
    assert projected.sum() == pytest.approx(1.0)
    assert np.all(projected >= 0.0)


def test_non_unit_budgets_rejected():
    """Only the entropy solver takes arbitrary budgets."""
    costs = np.zeros((3, 3))
    for kind in (RegularizerKind.INVERSE, RegularizerKind.SQUARE):
        with pytest.raises(UnsupportedCaseError):
            solve_regularized(costs, RegularizerSpec(kind, row_budget=2.0))
    pi = alpha_entropy(costs, RegularizerSpec(row_budget=np.array([1.0, 2.0, 3.0])))
    assert np.allclose(pi.beta, [1.0, 2.0, 3.0])

    with pytest.raises(DomainError):
        RegularizerSpec(RegularizerKind.INVERSE, gamma=1.0)
    with pytest.raises(UnsupportedCaseError):
        RegularizedAlpha(RegularizerSpec(RegularizerKind.SQUARE), LossSpec(LossKind.INFONCE))


@pytest.mark.parametrize("seed, tau", list(product(range(4), [0.25, 1.0])))
def test_direct_p2_is_infonce_at_half_tau(seed: int, tau: float):
    """With euclidean distances, p = 2 is the entropy solution at tau / 2."""
    dist = _random_dist(seed, n=8)
    direct = alpha_direct(dist, p=2.0, tau=tau)
    entropy = alpha_entropy(costs_from_distances(dist), RegularizerSpec(tau=tau / 2.0))
    assert np.max(np.abs(direct.alpha - entropy.alpha)) <= 1e-10

    half = alpha_direct(dist, p=2.0, tau=tau, distance=DirectDistance.HALF_SQUARE_ROOT)
    entropy = alpha_entropy(costs_from_distances(dist), RegularizerSpec(tau=tau))
    assert np.max(np.abs(half.alpha - entropy.alpha)) <= 1e-10


def test_direct_alpha_cases():
    """Uniform rows on equal distances and exp(0) on coincident points."""
    pi = alpha_direct(_equal_distances(5), p=4.0, tau=0.5)
    assert np.allclose(pi.beta, 1.0)
    assert np.allclose(pi.alpha[~np.eye(5, dtype=bool)], 0.25)

    cross = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 2.0], [2.0, 2.0, 0.0]])
    pi = alpha_direct(DistanceSet(np.zeros(3), cross), p=4.0, tau=0.5, normalized=False)
    assert pi.alpha[0, 1] == 1.0
    assert pi.alpha[0, 2] < 1.0

    with pytest.raises(DomainError):
        alpha_direct(_equal_distances(3), p=1.0, tau=0.5)


def test_sources_from_flat_text():
    """Flat parameters rebuild equivalent sources."""
    dist = _random_dist(5)
    sources = [
        GradientAlpha(LossSpec(LossKind.SOFT_TRIPLET, tau=0.5, epsilon=0.1)),
        RegularizedAlpha(RegularizerSpec(RegularizerKind.INVERSE, tau=0.5, gamma=3.0)),
        RegularizedAlpha(
            RegularizerSpec(tau=0.5), LossSpec(LossKind.INFONCE, tau=0.5, epsilon=1.0)
        ),
        DirectAlpha(p=4.0, tau=0.5, normalized=False),
    ]
    for source in sources:
        text = " ".join(f"{k}={v}" for k, v in source.to_params().items())
        rebuilt = alpha_source_from_flat(text)
        assert type(rebuilt) is type(source)
        assert np.array_equal(rebuilt(dist).alpha, source(dist).alpha), f"{source!r}"

    with pytest.raises(UnsupportedCaseError):
        alpha_source_from_flat("source=fixed")


def test_fixed_alpha():
    """A fixed source ignores distances but checks the batch size."""
    pi = PairImportance.uniform(6)
    source = FixedAlpha(pi)
    assert source(_random_dist(0, n=6)) is pi
    with pytest.raises(DomainError):
        source(_random_dist(0, n=4))


def test_budget_from_loss():
    """For MINE the budget is exactly one."""
    xi = np.array([0.5, 2.0, 7.0])
    assert np.allclose(budget_from_loss(LossSpec(LossKind.MINE), xi), 1.0)
