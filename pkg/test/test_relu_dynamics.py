"""Tests the two-layer ReLU dynamics on orthogonal mixtures."""

from __future__ import annotations

import io
from collections import Counter

import numpy as np
import pytest

from alphacl.core import PairImportance
from alphacl.deep_linear_flow import DeepLinState, build_x_alpha, flow_step
from alphacl.relu_dynamics import (
    CheckStatus,
    DiversityBranch,
    MixtureConfig,
    Relu2State,
    ReluTrace,
    diversity_classify,
    diversity_experiment,
    generate_mixture,
    mixture_modes,
    one_node_experiment,
    relu_energy,
    relu_forward,
    relu_gradient_step,
    run_sticky_flow,
    sticky_flow_step,
    xalpha_structure_check,
)
from alphacl.utils import DomainError, HypothesisError, make_rng


def _mixture_x_alpha(M: int = 3, N: int = 12, seed: int = 0):
    batch = generate_mixture(MixtureConfig(M=M, N=N, seed=seed))
    return batch, build_x_alpha(PairImportance.uniform(N), batch)


def test_generate_mixture():
    """Rows are one-hot, every mode appears and augmentations are positive multiples."""
    batch = generate_mixture(MixtureConfig(M=3, N=6, seed=4))
    assert np.all(batch.inputs >= 0)
    assert np.all(np.count_nonzero(batch.inputs, axis=1) == 1)
    assert sorted(set(mixture_modes(batch))) == [0, 1, 2]

    ratio = batch.inputs_aug.sum(axis=1) / batch.inputs.sum(axis=1)
    assert np.all(ratio > 0)
    assert np.allclose(batch.inputs_aug, ratio[:, None] * batch.inputs)

    again = generate_mixture(MixtureConfig(M=3, N=6, seed=4))
    assert np.array_equal(again.inputs, batch.inputs)

    same = generate_mixture(MixtureConfig(M=3, N=6, gamma_range=(1.0, 1.0), seed=4))
    assert np.array_equal(same.inputs, same.inputs_aug)


def test_mixture_config_checks():
    """Infeasible configurations are rejected."""
    with pytest.raises(DomainError):
        MixtureConfig(M=4, N=3)
    with pytest.raises(DomainError):
        MixtureConfig(M=0, N=3)
    with pytest.raises(DomainError):
        MixtureConfig(amplitude_range=(0.0, 1.0))
    with pytest.raises(DomainError):
        MixtureConfig(gamma_range=(2.0, 1.0))
    assert MixtureConfig(M=2, N=5, seed=3).to_params()["N"] == 5


def test_relu_forward():
    """Nonnegative weights on nonnegative inputs behave linearly; zero maps to zero."""
    state = Relu2State.initialize(4, 3, 2, make_rng(0))
    batch, _ = _mixture_x_alpha()
    hidden, outputs = relu_forward(state, batch.inputs)
    assert np.allclose(outputs, batch.inputs @ (state.W2 @ state.W1).T, atol=1e-15)
    assert np.all(hidden >= 0)

    _, outputs = relu_forward(state, np.zeros((2, 3)))
    assert np.array_equal(outputs, np.zeros((2, 2)))


def test_state_initialize_and_dump():
    """Initial layers are nonnegative and unit norm, and survive a dump and load."""
    state = Relu2State.initialize(4, 3, 2, make_rng(1), eta=5e-3)
    assert np.all(state.W1 >= 0)
    assert np.linalg.norm(state.W1) == pytest.approx(1.0)
    assert np.linalg.norm(state.W2) == pytest.approx(1.0)

    buffer = io.BytesIO()
    state.dump(buffer)
    loaded = Relu2State.load(buffer)
    assert np.array_equal(loaded.W1, state.W1) and np.array_equal(loaded.W2, state.W2)
    assert loaded.eta == state.eta

    with pytest.raises(DomainError):
        Relu2State(-np.ones((2, 2)), np.ones((1, 2)))


@pytest.mark.parametrize("seed", range(3))
def test_interior_sticky_step_is_linear(seed: int):
    """Away from zero the sticky step is the constrained linear step."""
    _, X_alpha = _mixture_x_alpha(seed=seed)
    state = Relu2State.initialize(4, 3, 4, make_rng(seed, 1), eta=1e-3)
    assert np.all(state.W1 > 1e-6)

    sticky = sticky_flow_step(state, X_alpha)
    linear = flow_step(DeepLinState((state.W1, state.W2), X_alpha, eta=1e-3), constrained=True)
    assert np.max(np.abs(sticky.W1 - linear.weights[0])) <= 1e-12
    assert np.max(np.abs(sticky.W2 - linear.weights[1])) <= 1e-12


def test_zero_entries_stick():
    """A first-layer entry at zero never leaves zero."""
    _, X_alpha = _mixture_x_alpha()
    W1 = np.array([[0.0, 0.6, 0.8], [0.5, 0.0, 0.5]])
    state = Relu2State(W1 / np.linalg.norm(W1), np.eye(2), eta=1e-2)
    for _ in range(50):
        state = sticky_flow_step(state, X_alpha)
        assert state.W1[0, 0] == 0.0 and state.W1[1, 1] == 0.0
        assert np.all(state.W1 >= 0)


def test_one_hot_is_a_fixed_point():
    """w1 = e_2 stays e_2."""
    _, X_alpha = _mixture_x_alpha()
    state = Relu2State(np.array([[0.0, 1.0, 0.0]]), np.array([[1.0]]))
    for _ in range(20):
        state = sticky_flow_step(state, X_alpha)
    assert state.W1[0, 0] == 0.0 and state.W1[0, 2] == 0.0
    assert state.W1[0, 1] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_relu_gradient_matches_sticky_step(seed: int):
    """The real ReLU gradient agrees with the sticky rule on mixture data."""
    batch, X_alpha = _mixture_x_alpha(seed=seed)
    pi = PairImportance.uniform(len(batch))
    state = Relu2State.initialize(4, 3, 4, make_rng(seed, 2), eta=1e-2)
    relu, sticky = state, state
    for _ in range(25):
        relu = relu_gradient_step(relu, batch, pi)
        sticky = sticky_flow_step(sticky, X_alpha)
        assert np.max(np.abs(relu.W1 - sticky.W1)) <= 1e-8
        assert np.max(np.abs(relu.W2 - sticky.W2)) <= 1e-8


@pytest.mark.parametrize("M", [2, 3, 5])
def test_one_node_converges_to_a_mode(M: int):
    """A single node ends with exactly one positive entry."""
    results = one_node_experiment(MixtureConfig(M=M, N=4 * M), seeds=range(20))
    for result in results:
        assert result.converged, f"seed {result.seed}"
        assert result.positive_entries == 1
        assert result.residual <= 1e-6
        assert result.to_dict()["mode"] == result.mode

    # the winner distribution is reported, not asserted
    assert sum(Counter(r.mode for r in results).values()) == 20


def test_one_node_needs_positive_alpha():
    """Zero off-diagonal alpha breaks the hypothesis."""
    cfg = MixtureConfig(M=3, N=6)
    with pytest.raises(HypothesisError):
        one_node_experiment(cfg, seeds=[0], pi=PairImportance.uniform(6, value=0.0))


def test_diversity_fixtures():
    """Hand-built first layers land on the expected branch."""
    X_alpha = np.eye(3)
    W2 = np.eye(3)
    v = np.array([0.2, 0.0, 0.7])

    single = diversity_classify(Relu2State(np.outer(v, [0.0, 1.0, 0.0]), W2), X_alpha)
    assert single.branch == DiversityBranch.RANK1_SINGLE_MODE
    assert single.mode == 1
    assert single.v is not None and np.allclose(single.v, v)

    spread = diversity_classify(Relu2State(np.outer(v, [0.6, 0.8, 0.0]), W2), X_alpha)
    assert spread.branch == DiversityBranch.VIOLATION

    full = diversity_classify(Relu2State(np.eye(3), W2), X_alpha)
    assert full.branch == DiversityBranch.HIGHER_RANK
    assert full.rank == 3
    assert full.to_dict()["branch"] == "higher_rank"

    with pytest.raises(HypothesisError):
        diversity_classify(Relu2State(np.eye(3), W2), -np.eye(3))


def test_diversity_sweep_finds_higher_rank():
    """Four nodes on four modes reach a higher-rank optimum for some seed, never a violation."""
    runs = diversity_experiment(MixtureConfig(M=4, N=16), seeds=range(20), hidden=4)
    branches = [run.classification.branch for run in runs]
    assert DiversityBranch.VIOLATION not in branches
    assert DiversityBranch.HIGHER_RANK in branches
    for run in runs:
        if run.classification.branch == DiversityBranch.RANK1_SINGLE_MODE:
            assert run.classification.v is not None and np.all(run.classification.v >= 0)


@pytest.mark.parametrize("seed", range(10))
def test_x_alpha_structure(seed: int):
    """Off-diagonals are negative and the top eigenvector mixes signs."""
    batch = generate_mixture(MixtureConfig(M=4, N=10, seed=seed))
    pi = PairImportance(make_rng(seed, 3).uniform(0.1, 1.0, size=(10, 10)))
    report = xalpha_structure_check(pi, batch)
    assert report.status == CheckStatus.PASS, report.reason
    assert report.max_off_diagonal is not None and report.max_off_diagonal < 0
    assert report.top_eigenvector is not None and report.top_eigenvector.min() < 0


def test_x_alpha_structure_skips():
    """Unmet hypotheses skip instead of failing."""
    one_mode = generate_mixture(MixtureConfig(M=1, N=4))
    report = xalpha_structure_check(PairImportance.uniform(4), one_mode)
    assert report.status == CheckStatus.SKIPPED

    batch = generate_mixture(MixtureConfig(M=3, N=6))
    alpha = np.ones((6, 6))
    alpha[0, 1] = 0.0
    report = xalpha_structure_check(PairImportance(alpha), batch)
    assert report.status == CheckStatus.SKIPPED
    assert report.to_dict()["status"] == "skipped"


def test_relu_trace_rows():
    """The trace starts at the initial state and lays W1 out row-major."""
    _, X_alpha = _mixture_x_alpha()
    state = Relu2State.initialize(2, 3, 2, make_rng(5))
    with pytest.warns(RuntimeWarning):
        final, trace = run_sticky_flow(state, X_alpha, max_steps=3, tol=0.0)
    assert isinstance(trace, ReluTrace)
    entries = ["w1_0_0", "w1_0_1", "w1_0_2", "w1_1_0", "w1_1_1", "w1_1_2"]
    assert trace.header(state.W1.shape) == ["step", "energy", *entries]
    rows = trace.rows()
    assert rows.shape == (4, 8)
    assert np.array_equal(rows[0, 2:], state.W1.ravel())
    assert np.array_equal(rows[-1, 2:], final.W1.ravel())
    assert rows[0, 1] == relu_energy(state, X_alpha)
