"""Tests the core batch and importance types."""

from __future__ import annotations

import numpy as np
import pytest
from utils import random_batch

from alphacl.core import Batch, DistanceSet, PairImportance
from alphacl.utils import DomainError, ShapeError, make_rng


def test_batch_invariants():
    """Batches pair rows one to one and need at least two pairs."""
    rng = make_rng(0)
    batch = random_batch(rng, n=5, d=3)
    assert len(batch) == 5
    assert not batch.has_outputs
    assert batch.inputs.dtype == np.float64

    with_outputs = batch.with_outputs(np.zeros((5, 2)), np.ones((5, 2)))
    assert with_outputs.has_outputs
    assert with_outputs.outputs is not None and with_outputs.outputs.shape == (5, 2)

    with pytest.raises(ShapeError):
        Batch(np.zeros((3, 2)), np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        Batch(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        Batch(np.zeros((3, 2)), np.zeros((3, 2)), outputs=np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        batch.with_outputs(np.zeros((4, 2)), np.zeros((4, 2)))


def test_distance_set_invariants():
    """Distances must be nonnegative and symmetric with a zero diagonal."""
    cross = np.array([[0.0, 1.0], [1.0, 0.0]])
    dist = DistanceSet(np.zeros(2), cross)
    assert len(dist) == 2
    assert np.array_equal(dist.off_diagonal, np.array([[False, True], [True, False]]))

    with pytest.raises(DomainError):
        DistanceSet(np.array([-1.0, 0.0]), cross)
    with pytest.raises(DomainError):
        DistanceSet(np.zeros(2), np.array([[1e-300, 1.0], [1.0, 0.0]]))
    with pytest.raises(DomainError):
        DistanceSet(np.zeros(2), np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ShapeError):
        DistanceSet(np.zeros(3), cross)


def test_pair_importance():
    """The diagonal is forced to zero and beta holds the row sums."""
    alpha = np.arange(9, dtype=np.float64).reshape(3, 3)
    pi = PairImportance(alpha)
    assert np.all(np.diag(pi.alpha) == 0.0)
    assert np.allclose(pi.beta, [1.0, 8.0, 13.0])
    # the input is not modified
    assert alpha[1, 1] == 4.0

    with pytest.raises(DomainError):
        PairImportance(-np.ones((3, 3)))
    with pytest.raises(DomainError):
        PairImportance(np.ones((3, 3)), beta=np.ones(3))
    PairImportance(np.ones((3, 3)), beta=2.0 * np.ones(3))


@pytest.mark.parametrize("n", [2, 3, 8])
def test_uniform_and_entropy(n: int):
    """Uniform rows sum to one and have maximal entropy."""
    pi = PairImportance.uniform(n)
    assert np.allclose(pi.beta, 1.0)
    assert np.allclose(pi.row_entropy(), np.log(n - 1))

    zero = PairImportance.uniform(n, value=0.0)
    assert np.all(zero.row_entropy() == 0.0)


def test_pair_importance_csv(tmp_path):
    """The full matrix is written row-major."""
    pi = PairImportance(make_rng(1).uniform(size=(4, 4)))
    path = tmp_path / "alpha.csv"
    pi.to_csv(path)
    assert np.array_equal(np.loadtxt(path, delimiter=","), pi.alpha)
