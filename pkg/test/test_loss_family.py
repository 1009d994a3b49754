"""Tests the loss family module."""

from __future__ import annotations

import math
from itertools import product

import numpy as np
import pytest
from utils import brute_distances, finite_difference, random_outputs

from alphacl.core import Batch, DistanceSet
from alphacl.loss_family import (
    LossKind,
    LossSpec,
    distances_from_outputs,
    eval_loss,
    eval_phi_pair,
    eval_psi_pair,
    infonce_reference_loss,
    near_kink,
    pairwise_distances,
)
from alphacl.utils import DomainError, NumericOverflowError, ShapeError, make_rng

# a point inside the domain of every phi and psi
_SPECS = [
    LossSpec(LossKind.INFONCE, tau=0.5, epsilon=0.3),
    LossSpec(LossKind.MINE),
    LossSpec(LossKind.TRIPLET, epsilon=0.1),
    LossSpec(LossKind.SOFT_TRIPLET, tau=0.7, epsilon=0.2),
    LossSpec(LossKind.N_PLUS_ONE_TUPLET),
    LossSpec(LossKind.LIFTED_STRUCTURED, epsilon=0.5),
    LossSpec(LossKind.MODIFIED_TRIPLET, c=2.0),
    LossSpec(LossKind.TRIPLET_CONTRASTIVE),
    LossSpec(LossKind.QUADRATIC),
]
_POINTS = [0.4, 1.3, 3.0]


def test_distances_by_hand():
    """Identical augmentations on the unit vectors."""
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    batch = Batch(z, z, z, z)
    dist = pairwise_distances(batch)
    assert np.array_equal(dist.d2_intra, [0.0, 0.0])
    assert dist.d2_cross[0, 1] == 1.0
    assert dist.d2_cross[1, 0] == 1.0

    with pytest.raises(ShapeError):
        pairwise_distances(Batch(z, z))


def test_distances_match_double_loop():
    """Vectorized distances against an independent double loop."""
    rng = make_rng(3)
    Z, Z_aug = random_outputs(rng, n=4, k=3)
    dist = distances_from_outputs(Z, Z_aug)
    d2_intra, d2_cross = brute_distances(Z, Z_aug)
    assert np.max(np.abs(dist.d2_intra - d2_intra)) <= 1e-12
    assert np.max(np.abs(dist.d2_cross - d2_cross)) <= 1e-12

    dist = distances_from_outputs(Z, Z)
    assert np.all(dist.d2_intra == 0.0)


def test_phi_examples():
    """Hand-evaluated phi pairs."""
    assert eval_phi_pair(LossSpec(LossKind.INFONCE, tau=1.0, epsilon=1.0), 0.0) == (0.0, 1.0)
    assert eval_phi_pair(LossSpec(LossKind.TRIPLET), 3.7) == (3.7, 1.0)

    phi, dphi = eval_phi_pair(LossSpec(LossKind.LIFTED_STRUCTURED), math.e)
    assert phi == pytest.approx(1.0, abs=1e-15)
    assert dphi == pytest.approx(2.0 / math.e, abs=1e-15)

    # zero branch of the squared hinge
    assert eval_phi_pair(LossSpec(LossKind.LIFTED_STRUCTURED), 0.5) == (0.0, 0.0)


def test_psi_examples():
    """Hand-evaluated psi pairs."""
    assert eval_psi_pair(LossSpec(LossKind.INFONCE, tau=1.0), 0.0) == (1.0, 1.0)
    assert eval_psi_pair(LossSpec(LossKind.TRIPLET, epsilon=0.1), -0.2) == (0.0, 0.0)

    psi, dpsi = eval_psi_pair(LossSpec(LossKind.MINE), 1.0)
    assert psi == pytest.approx(math.e, abs=1e-15)
    assert dpsi == pytest.approx(math.e, abs=1e-15)

    # at the kink the derivative is the zero subgradient
    assert eval_psi_pair(LossSpec(LossKind.TRIPLET, epsilon=0.5), -0.5) == (0.0, 0.0)
    assert eval_psi_pair(LossSpec(LossKind.MODIFIED_TRIPLET, c=1.0), 0.0) == (0.5, 0.25)


@pytest.mark.parametrize("spec, x", list(product(_SPECS, _POINTS)))
def test_derivatives_match_finite_differences(spec: LossSpec, x: float):
    """Hand-coded derivatives against central differences."""
    for pair in (eval_phi_pair, eval_psi_pair):
        value, derivative = pair(spec, x)
        numeric = finite_difference(lambda v: pair(spec, float(v[0]))[0], np.array([x]))[0]
        assert abs(derivative - numeric) <= 1e-7 + 1e-5 * abs(numeric), (
            f"{spec.kind} {pair.__name__} at {x=}: {derivative=}, {numeric=}."
        )
        assert np.isfinite(value)


@pytest.mark.parametrize("spec", _SPECS)
def test_functions_are_monotone(spec: LossSpec):
    """phi and psi are nondecreasing on a grid inside their domains."""
    grid = np.linspace(0.05, 4.0, 200)
    for pair in (eval_phi_pair, eval_psi_pair):
        values, derivatives = pair(spec, grid)
        assert np.all(np.diff(values) >= -1e-15), f"{spec.kind} {pair.__name__}."
        assert np.all(derivatives >= 0.0)


def test_domain_and_overflow_errors():
    """Out-of-domain points raise instead of returning NaN."""
    with pytest.raises(DomainError):
        eval_phi_pair(LossSpec(LossKind.INFONCE, epsilon=0.0), 0.0)
    with pytest.raises(DomainError):
        eval_phi_pair(LossSpec(LossKind.MINE), np.array([1.0, -1.0]))
    with pytest.raises(DomainError):
        eval_phi_pair(LossSpec(LossKind.SOFT_TRIPLET), -1.0)
    with pytest.raises(NumericOverflowError):
        eval_psi_pair(LossSpec(LossKind.INFONCE, tau=0.01), 10.0)
    with pytest.raises(DomainError):
        LossSpec(LossKind.INFONCE, tau=0.0)
    with pytest.raises(DomainError):
        LossSpec(LossKind.TRIPLET, epsilon=-1.0)


def test_loss_spec_flat_form():
    """Flat text parses into a spec and back."""
    spec = LossSpec.from_flat("kind=infonce tau=0.5 eps=0")
    assert spec == LossSpec(LossKind.INFONCE, tau=0.5, epsilon=0.0)
    assert LossSpec.from_flat(spec.to_flat()) == spec

    spec = LossSpec(LossKind.MODIFIED_TRIPLET, tau=0.1, epsilon=0.2, c=3.0)
    assert LossSpec.from_flat(spec.to_flat()) == spec

    with pytest.raises(DomainError):
        LossSpec.from_flat("kind=infonce temperature=1")
    with pytest.raises(ValueError):
        LossSpec.from_flat("kind=contrastive_divergence")


def test_eval_loss_trivial():
    """Two samples at zero distance give xi = 1 and zero InfoNCE loss."""
    dist = DistanceSet(np.zeros(2), np.zeros((2, 2)))
    loss, xi = eval_loss(LossSpec(LossKind.INFONCE, tau=1.0, epsilon=0.0), dist)
    assert loss == 0.0
    assert np.array_equal(xi, [1.0, 1.0])


@pytest.mark.parametrize("tau, epsilon", list(product([0.5, 1.0, 2.0], [0.0, 1.0])))
def test_family_infonce_matches_log_softmax(tau: float, epsilon: float):
    """The family form of InfoNCE equals the log-softmax form."""
    rng = make_rng(11, int(tau * 10), int(epsilon))
    dist = distances_from_outputs(*random_outputs(rng, n=8, k=4))
    loss, _ = eval_loss(LossSpec(LossKind.INFONCE, tau=tau, epsilon=epsilon), dist)
    reference = infonce_reference_loss(dist, tau, epsilon)
    assert loss == pytest.approx(reference, rel=1e-12, abs=1e-12)


def test_near_kink():
    """Only Triplet pairs within the zone are counted."""
    cross = np.array([[0.0, 1.0], [1.0, 0.0]])
    dist = DistanceSet(np.array([1.0 - 0.1 + 1e-6, 0.0]), cross)
    assert near_kink(LossSpec(LossKind.TRIPLET, epsilon=0.1), dist) == 1
    assert near_kink(LossSpec(LossKind.TRIPLET, epsilon=0.1), dist, zone=1e-8) == 0
    assert near_kink(LossSpec(LossKind.INFONCE), dist) == 0
