"""Utilities used during testing: oracles that share no code with the package."""

from __future__ import annotations

from collections.abc import Callable
from itertools import product

import numpy as np

from alphacl.core import Batch


def random_outputs(
    rng: np.random.Generator, n: int = 16, k: int = 8, gap: float = 0.3
) -> tuple[np.ndarray, np.ndarray]:
    """random_outputs.

    Args:
        rng (np.random.Generator): rng
        n (int): batch size
        k (int): width
        gap (float): scale of the augmentation noise

    Returns:
        tuple[np.ndarray, np.ndarray]:

    """
    Z = rng.standard_normal((n, k))
    return Z, Z + gap * rng.standard_normal((n, k))


def random_batch(rng: np.random.Generator, n: int = 8, d: int = 5, gap: float = 0.3) -> Batch:
    """random_batch.

    Args:
        rng (np.random.Generator): rng
        n (int): batch size
        d (int): input width
        gap (float): scale of the augmentation noise

    Returns:
        Batch:

    """
    return Batch(*random_outputs(rng, n, d, gap))


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central differences with h = 1e-6 * max(1, |x|) per entry.

    Args:
        f (Callable[[np.ndarray], float]): scalar function
        x (np.ndarray): point

    Returns:
        np.ndarray: gradient shaped like x

    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        h = 1e-6 * max(1.0, abs(x[index]))
        original = x[index]
        x[index] = original + h
        upper = f(x)
        x[index] = original - h
        lower = f(x)
        x[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad


def assert_close(actual: np.ndarray, expected: np.ndarray, rel: float = 1e-5, abs_: float = 1e-7):
    """Asserts |actual - expected| <= abs_ + rel * |expected| entrywise.

    Args:
        actual (np.ndarray): actual
        expected (np.ndarray): expected
        rel (float): relative tolerance
        abs_ (float): absolute tolerance

    """
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    gap = np.abs(actual - expected)
    bound = abs_ + rel * np.abs(expected)
    worst = float(np.max(gap - bound))
    assert worst <= 0.0, f"Expected {actual=} to match {expected=}, worst excess {worst:.3g}."


def brute_distances(Z: np.ndarray, Z_aug: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Halved squared distances by double loop.

    Args:
        Z (np.ndarray): Z
        Z_aug (np.ndarray): Z_aug

    Returns:
        tuple[np.ndarray, np.ndarray]: d2_intra and d2_cross

    """
    n = Z.shape[0]
    d2_intra = np.zeros(n)
    d2_cross = np.zeros((n, n))
    for i in range(n):
        d2_intra[i] = sum((Z[i, c] - Z_aug[i, c]) ** 2 for c in range(Z.shape[1])) / 2
        for j in range(n):
            d2_cross[i, j] = sum((Z[i, c] - Z[j, c]) ** 2 for c in range(Z.shape[1])) / 2
    return d2_intra, d2_cross


def brute_contrastive_cov(
    alpha: np.ndarray, A: np.ndarray, A_aug: np.ndarray, B: np.ndarray, B_aug: np.ndarray
) -> np.ndarray:
    """C_alpha[a, b] entry by entry over (i, j, row, column).

    Args:
        alpha (np.ndarray): alpha with zero diagonal
        A (np.ndarray): A
        A_aug (np.ndarray): A_aug
        B (np.ndarray): B
        B_aug (np.ndarray): B_aug

    Returns:
        np.ndarray:

    """
    n = A.shape[0]
    cov = np.zeros((A.shape[1], B.shape[1]))
    for r, c in product(range(A.shape[1]), range(B.shape[1])):
        for i in range(n):
            beta_i = 0.0
            for j in range(n):
                if j == i:
                    continue
                beta_i += alpha[i, j]
                cov[r, c] += alpha[i, j] * (A[i, r] - A[j, r]) * (B[i, c] - B[j, c])
            cov[r, c] -= beta_i * (A[i, r] - A_aug[i, r]) * (B[i, c] - B_aug[i, c])
    return cov


def simplex_argmin(
    objective: Callable[[np.ndarray], float], n: int, ticks: int = 100
) -> np.ndarray:
    """Minimizes a convex function over the unit simplex by grid search and local refinement.

    A grid of step 1 / ticks seeds a pairwise mass-transfer search whose step shrinks to 1e-8.

    Args:
        objective (Callable[[np.ndarray], float]): returns inf outside its domain
        n (int): dimension
        ticks (int): grid subdivisions per unit

    Returns:
        np.ndarray:

    """
    best, best_value = None, np.inf
    for head in product(range(ticks + 1), repeat=n - 1):
        if sum(head) > ticks:
            continue
        point = np.array([*head, ticks - sum(head)], dtype=np.float64) / ticks
        value = objective(point)
        if value < best_value:
            best, best_value = point, value
    assert best is not None

    for step in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8):
        improved = True
        while improved:
            improved = False
            for j, k in product(range(n), range(n)):
                if j == k or best[j] < step:
                    continue
                candidate = best.copy()
                candidate[j] -= step
                candidate[k] += step
                value = objective(candidate)
                if value < best_value:
                    best, best_value = candidate, value
                    improved = True
    return best


def entropy_objective(costs: np.ndarray, tau: float) -> Callable[[np.ndarray], float]:
    """sum c a + tau sum a log a.

    Args:
        costs (np.ndarray): one row of costs
        tau (float): tau

    Returns:
        Callable[[np.ndarray], float]:

    """

    def objective(a: np.ndarray) -> float:
        positive = a > 0
        return float(costs @ a + tau * np.sum(a[positive] * np.log(a[positive])))

    return objective


def inverse_objective(costs: np.ndarray, tau: float, gamma: float) -> Callable[[np.ndarray], float]:
    """sum c a + tau / (gamma - 1) sum a^(1 - gamma), infinite on the boundary.

    Args:
        costs (np.ndarray): one row of costs
        tau (float): tau
        gamma (float): gamma

    Returns:
        Callable[[np.ndarray], float]:

    """

    def objective(a: np.ndarray) -> float:
        if np.any(a <= 0):
            return np.inf
        return float(costs @ a + tau / (gamma - 1.0) * np.sum(a ** (1.0 - gamma)))

    return objective


def square_objective(costs: np.ndarray, tau: float) -> Callable[[np.ndarray], float]:
    """sum c a + tau / 2 sum a^2.

    Args:
        costs (np.ndarray): one row of costs
        tau (float): tau

    Returns:
        Callable[[np.ndarray], float]:

    """

    def objective(a: np.ndarray) -> float:
        return float(costs @ a + 0.5 * tau * np.sum(a**2))

    return objective
