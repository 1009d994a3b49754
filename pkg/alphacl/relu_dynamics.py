"""Two-layer ReLU networks on orthogonal-mixture data.

On one-hot nonnegative inputs with nonnegative first-layer weights every ReLU gate that
matters is open, so the ReLU network follows the linear dynamics with one change: a
first-layer weight that reaches zero stays there (the sticky weight rule).
"""

from __future__ import annotations

import io
import logging
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from alphacl.core import Batch, PairImportance
from alphacl.deep_linear_flow import build_x_alpha, layer_velocities
from alphacl.grad_engine.encoder import Activation, Encoder, Head, LayerStack
from alphacl.grad_engine.steps import alpha_cl_gradient
from alphacl.importance.sources import FixedAlpha
from alphacl.linalg import jacobi_eigh
from alphacl.utils import (
    DomainError,
    HypothesisError,
    ShapeError,
    as_float_array,
    check_finite,
    dump_arrays,
    load_arrays,
    make_rng,
)

logger = logging.getLogger(__name__)

# first-layer entries at or below this are treated as exactly zero
STICKY_THRESHOLD = 1e-12


@dataclass(frozen=True)
class MixtureConfig:
    """Orthogonal mixture: x[i] = a[i] e_m[i], x[i'] = gamma[i] x[i].

    Amplitudes a and scales gamma are drawn uniformly from the given positive ranges.

    Args:
        M (int): number of modes
        N (int): number of samples
        amplitude_range (tuple[float, float]): support of a[i]
        gamma_range (tuple[float, float]): support of gamma[i]
        seed (int): seed
    """

    M: int = 3
    N: int = 12
    amplitude_range: tuple[float, float] = (0.5, 1.5)
    gamma_range: tuple[float, float] = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        """Checks feasibility."""
        if self.M < 1:
            raise DomainError(f"Need at least one mode, got M = {self.M}.")
        if self.N < self.M:
            raise DomainError(f"Covering all {self.M} modes needs N >= M, got N = {self.N}.")
        if self.N < 2:
            raise DomainError(f"A batch needs N >= 2, got N = {self.N}.")
        for name, (low, high) in (
            ("amplitude_range", self.amplitude_range),
            ("gamma_range", self.gamma_range),
        ):
            if not 0 < low <= high:
                raise DomainError(f"{name} must satisfy 0 < low <= high, got ({low}, {high}).")

    def to_params(self) -> dict[str, Any]:
        """to_params.

        Returns:
            dict[str, Any]:

        """
        return {
            "M": self.M,
            "N": self.N,
            "amplitude_low": float(self.amplitude_range[0]),
            "amplitude_high": float(self.amplitude_range[1]),
            "gamma_low": float(self.gamma_range[0]),
            "gamma_high": float(self.gamma_range[1]),
            "seed": self.seed,
        }


def generate_mixture(cfg: MixtureConfig) -> Batch:
    """Samples a batch satisfying the orthogonal mixture assumptions.

    The first M samples are a random permutation of the modes, so every mode appears.

    Args:
        cfg (MixtureConfig): cfg

    Returns:
        Batch:

    """
    rng = make_rng(cfg.seed, 0x6D6978)
    modes = np.concatenate(
        (rng.permutation(cfg.M), rng.integers(0, cfg.M, size=cfg.N - cfg.M))
    )
    amplitudes = rng.uniform(*cfg.amplitude_range, size=cfg.N)
    gammas = rng.uniform(*cfg.gamma_range, size=cfg.N)

    inputs = np.zeros((cfg.N, cfg.M))
    inputs[np.arange(cfg.N), modes] = amplitudes
    return Batch(inputs, gammas[:, None] * inputs)


def mixture_modes(batch: Batch) -> np.ndarray:
    """The mode index of every sample, -1 for all-zero rows.

    Args:
        batch (Batch): batch

    Returns:
        np.ndarray:

    """
    positive = batch.inputs > 0
    return np.where(positive.any(axis=1), positive.argmax(axis=1), -1)


@dataclass(frozen=True)
class Relu2State:
    """z = W2 relu(W1 x) with W1 nonnegative.

    Args:
        W1 (np.ndarray): K x M first layer, rows w_1k
        W2 (np.ndarray): out x K second layer
        eta (float): step size
        step (int): number of steps taken
    """

    W1: np.ndarray
    W2: np.ndarray
    eta: float = 1e-2
    step: int = 0

    def __post_init__(self):
        """Checks shapes and the orthant."""
        W1 = as_float_array(self.W1, "W1", ndim=2)
        W2 = as_float_array(self.W2, "W2", ndim=2)
        if W2.shape[1] != W1.shape[0]:
            raise ShapeError(f"W2 {W2.shape} does not chain onto W1 {W1.shape}.")
        if (W1 < 0).any():
            raise DomainError("W1 must be nonnegative.")
        if not self.eta >= 0:
            raise DomainError(f"eta must be nonnegative, got {self.eta}.")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)

    @classmethod
    def initialize(
        cls, hidden: int, modes: int, out: int, rng: np.random.Generator, eta: float = 1e-2
    ) -> Relu2State:
        """|Gaussian| first layer and Gaussian second layer, both at unit Frobenius norm.

        Args:
            hidden (int): K
            modes (int): M
            out (int): output width
            rng (np.random.Generator): generator
            eta (float): step size

        Returns:
            Relu2State:

        """
        W1 = np.abs(rng.standard_normal((hidden, modes)))
        W2 = rng.standard_normal((out, hidden))
        return cls(W1 / np.linalg.norm(W1), W2 / np.linalg.norm(W2), eta=eta)

    def dump(self, fileobj: io.BytesIO | io.BufferedRandom) -> None:
        """Dumps the state as a zip of `init_params.json`, W1 and W2.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): target

        """
        dump_arrays(fileobj, {"eta": self.eta, "step": self.step}, [self.W1, self.W2])

    @classmethod
    def load(cls, fileobj: io.BytesIO | io.BufferedRandom) -> Relu2State:
        """Loads a state written by `dump`.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): source

        Returns:
            Relu2State:

        """
        init_params, (W1, W2) = load_arrays(fileobj)
        return cls(W1, W2, eta=float(init_params["eta"]), step=int(init_params["step"]))


def relu_forward(state: Relu2State, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """f1 = max(W1 x, 0) and z = W2 f1 for every row of X.

    Args:
        state (Relu2State): state
        X (np.ndarray): rows-by-M inputs

    Returns:
        tuple[np.ndarray, np.ndarray]: hidden activations and outputs

    """
    X = as_float_array(X, "X", ndim=2)
    if X.shape[1] != state.W1.shape[1]:
        raise ShapeError(f"X has width {X.shape[1]} but W1 expects {state.W1.shape[1]}.")
    hidden = np.maximum(X @ state.W1.T, 0.0)
    return hidden, hidden @ state.W2.T


def relu_energy(state: Relu2State, X_alpha: np.ndarray) -> float:
    """E = 1/2 tr(W2 W1 X_alpha W1^T W2^T), valid through the ReLU whenever W1 >= 0.

    Args:
        state (Relu2State): state
        X_alpha (np.ndarray): input contrastive covariance

    Returns:
        float:

    """
    W = state.W2 @ state.W1
    return 0.5 * float(np.trace(W @ X_alpha @ W.T))


def _project(W1: np.ndarray, W2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamps W1 to the orthant with exact zeros, then renormalizes both layers."""
    W1 = np.where(W1 <= STICKY_THRESHOLD, 0.0, W1)
    norm1 = np.linalg.norm(W1)
    norm2 = np.linalg.norm(W2)
    if norm1 == 0.0 or norm2 == 0.0:
        raise DomainError("A layer collapsed to zero and cannot be renormalized.")
    return W1 / norm1, W2 / norm2


def sticky_flow_step(state: Relu2State, X_alpha: np.ndarray) -> Relu2State:
    """One linear-dynamics Euler step where zero entries of W1 receive no update.

    Args:
        state (Relu2State): state with W1 >= 0
        X_alpha (np.ndarray): input contrastive covariance

    Returns:
        Relu2State:

    """
    V1, V2 = layer_velocities([state.W1, state.W2], X_alpha)
    active = state.W1 > STICKY_THRESHOLD
    W1, W2 = _project(state.W1 + state.eta * V1 * active, state.W2 + state.eta * V2)
    check_finite([W1, W2], "the sticky flow", state.step + 1)
    return replace(state, W1=W1, W2=W2, step=state.step + 1)


def relu_encoder(state: Relu2State) -> Encoder:
    """The state as a relu-then-linear encoder without a head.

    Args:
        state (Relu2State): state

    Returns:
        Encoder:

    """
    layers = LayerStack((state.W1, state.W2), (Activation.RELU, Activation.LINEAR))
    return Encoder(layers, Head.NONE)


def relu_gradient_step(state: Relu2State, batch: Batch, pi: PairImportance) -> Relu2State:
    """One ascent step on E_alpha through the actual ReLU network.

    Negative first-layer entries are clamped to zero, which leaves the output unchanged on
    mixture data, and both layers are renormalized.

    Args:
        state (Relu2State): state
        batch (Batch): mixture batch
        pi (PairImportance): fixed alpha

    Returns:
        Relu2State:

    """
    G1, G2 = alpha_cl_gradient(relu_encoder(state), batch, FixedAlpha(pi)).grads
    W1, W2 = _project(state.W1 + state.eta * G1, state.W2 + state.eta * G2)
    check_finite([W1, W2], "the ReLU gradient step", state.step + 1)
    return replace(state, W1=W1, W2=W2, step=state.step + 1)


@dataclass
class ReluTrace:
    """Per-step W1 entries and energy, entry 0 being the initial state."""

    w1_entries: list[np.ndarray] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    converged: bool = False

    def record(self, state: Relu2State, X_alpha: np.ndarray) -> None:
        """record.

        Args:
            state (Relu2State): state
            X_alpha (np.ndarray): X_alpha

        """
        self.w1_entries.append(state.W1.ravel().copy())
        self.energy.append(relu_energy(state, X_alpha))

    def header(self, shape: tuple[int, int]) -> list[str]:
        """CSV columns: step, energy, then W1 entries row-major.

        Args:
            shape (tuple[int, int]): shape of W1

        Returns:
            list[str]:

        """
        entries = [f"w1_{k}_{m}" for k in range(shape[0]) for m in range(shape[1])]
        return ["step", "energy", *entries]

    def rows(self) -> np.ndarray:
        """rows.

        Returns:
            np.ndarray:

        """
        return np.asarray(
            [[step, e, *w] for step, (e, w) in enumerate(zip(self.energy, self.w1_entries))],
            dtype=np.float64,
        )


def _single_positive(W1: np.ndarray) -> bool:
    return int(np.count_nonzero(W1 > 0)) == 1


def run_sticky_flow(
    state: Relu2State,
    X_alpha: np.ndarray,
    max_steps: int = 200_000,
    tol: float = 1e-12,
    stop_on_one_hot: bool = False,
) -> tuple[Relu2State, ReluTrace]:
    """Iterates sticky steps until the energy change drops below tol or `max_steps`.

    Args:
        state (Relu2State): initial state
        X_alpha (np.ndarray): input contrastive covariance
        max_steps (int): cap on steps
        tol (float): threshold on the energy change
        stop_on_one_hot (bool): stop as soon as W1 has a single positive entry

    Returns:
        tuple[Relu2State, ReluTrace]:

    """
    trace = ReluTrace()
    trace.record(state, X_alpha)
    for _ in range(max_steps):
        if stop_on_one_hot and _single_positive(state.W1):
            trace.converged = True
            break
        state = sticky_flow_step(state, X_alpha)
        trace.record(state, X_alpha)
        if not stop_on_one_hot and abs(trace.energy[-1] - trace.energy[-2]) < tol:
            trace.converged = True
            break
    else:
        trace.converged = stop_on_one_hot and _single_positive(state.W1)

    if not trace.converged:
        warnings.warn(
            f"Sticky flow did not converge in {max_steps} steps.", category=RuntimeWarning
        )
    return state, trace


@dataclass
class OneNodeResult:
    """Outcome of a single-node run: the final w1, its winning mode and distance to e_m."""

    seed: int
    w1: np.ndarray
    mode: int
    residual: float
    positive_entries: int
    steps: int
    converged: bool

    def to_dict(self) -> dict[str, Any]:
        """to_dict.

        Returns:
            dict[str, Any]:

        """
        return {
            "seed": self.seed,
            "w1": [float(w) for w in self.w1],
            "mode": self.mode,
            "residual": self.residual,
            "positive_entries": self.positive_entries,
            "steps": self.steps,
            "converged": self.converged,
        }


def uniform_alpha(batch: Batch) -> PairImportance:
    """alpha = 1 / (N - 1) off the diagonal.

    Args:
        batch (Batch): batch

    Returns:
        PairImportance:

    """
    return PairImportance.uniform(len(batch))


def one_node_experiment(
    cfg: MixtureConfig,
    seeds: Iterable[int],
    eta: float = 1e-2,
    max_steps: int = 200_000,
    pi: PairImportance | None = None,
) -> list[OneNodeResult]:
    """Runs K = 1 sticky flows until w1 keeps a single positive entry.

    Each seed draws its own mixture batch and initial weights; alpha defaults to uniform.

    Args:
        cfg (MixtureConfig): mixture configuration, its seed is replaced per run
        seeds (Iterable[int]): seeds
        eta (float): step size
        max_steps (int): cap on steps per run
        pi (PairImportance | None): fixed alpha with positive off-diagonal entries

    Returns:
        list[OneNodeResult]:

    """
    results = []
    for seed in seeds:
        batch = generate_mixture(replace(cfg, seed=seed))
        run_pi = uniform_alpha(batch) if pi is None else pi
        if np.any(run_pi.alpha[~np.eye(len(run_pi), dtype=bool)] <= 0):
            raise HypothesisError("The one-node experiment needs alpha_ij > 0 for all i != j.")
        X_alpha = build_x_alpha(run_pi, batch)

        state = Relu2State.initialize(1, cfg.M, 1, make_rng(seed, 1), eta=eta)
        state, trace = run_sticky_flow(state, X_alpha, max_steps=max_steps, stop_on_one_hot=True)

        w1 = state.W1[0]
        mode = int(np.argmax(w1))
        target = np.zeros_like(w1)
        target[mode] = 1.0
        results.append(
            OneNodeResult(
                seed=seed,
                w1=w1.copy(),
                mode=mode,
                residual=float(np.linalg.norm(w1 - target)),
                positive_entries=int(np.count_nonzero(w1 > 0)),
                steps=state.step,
                converged=trace.converged,
            )
        )
        logger.debug("one-node seed %d: mode %d after %d steps", seed, mode, state.step)
    return results


class DiversityBranch(Enum):
    """Which side of the diversity dichotomy a converged W1 falls on."""

    RANK1_SINGLE_MODE = "rank1_single_mode"
    HIGHER_RANK = "higher_rank"
    # rank one but spread over several modes, which no local optimum should be
    VIOLATION = "violation"


@dataclass
class DiversityClass:
    """Classification of a converged first layer.

    Args:
        branch (DiversityBranch): branch
        rank (int): numerical rank
        v (np.ndarray | None): the column vector when W1 = v e_m^T
        mode (int | None): m when W1 = v e_m^T
        singular_values (np.ndarray): all singular values of W1
    """

    branch: DiversityBranch
    rank: int
    v: np.ndarray | None
    mode: int | None
    singular_values: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        """to_dict.

        Returns:
            dict[str, Any]:

        """
        return {
            "branch": self.branch.value,
            "rank": self.rank,
            "v": None if self.v is None else [float(x) for x in self.v],
            "mode": self.mode,
            "singular_values": [float(s) for s in self.singular_values],
        }


def diversity_classify(
    state: Relu2State,
    X_alpha: np.ndarray,
    rank_tol: float = 1e-6,
    mode_tol: float = 1e-6,
) -> DiversityClass:
    """Decides whether W1 = v e_m^T with v >= 0, or rank(W1) > 1.

    Args:
        state (Relu2State): a converged state
        X_alpha (np.ndarray): input contrastive covariance, used for the E > 0 gate
        rank_tol (float): sigma_r / sigma_1 above this counts toward the rank
        mode_tol (float): entries of the right singular vector below this count as zero

    Returns:
        DiversityClass:

    """
    if not relu_energy(state, X_alpha) > 0:
        raise HypothesisError("Classification needs a converged state with E > 0.")

    _, sigma, vt = np.linalg.svd(state.W1)
    rank = int(np.sum(sigma / sigma[0] > rank_tol))
    if rank > 1:
        return DiversityClass(DiversityBranch.HIGHER_RANK, rank, None, None, sigma)

    direction = np.abs(vt[0])
    mode = int(np.argmax(direction))
    others = np.delete(direction, mode)
    if others.size and others.max() > mode_tol:
        return DiversityClass(DiversityBranch.VIOLATION, rank, None, None, sigma)
    return DiversityClass(
        DiversityBranch.RANK1_SINGLE_MODE, rank, state.W1[:, mode].copy(), mode, sigma
    )


@dataclass
class DiversityRun:
    """One seed of a diversity sweep."""

    seed: int
    state: Relu2State
    converged: bool
    classification: DiversityClass


def diversity_experiment(
    cfg: MixtureConfig,
    seeds: Iterable[int],
    hidden: int = 4,
    out: int | None = None,
    eta: float = 1e-2,
    max_steps: int = 5_000,
    tol: float = 1e-12,
) -> list[DiversityRun]:
    """Multi-node sticky flows over seeds, each final W1 classified.

    Args:
        cfg (MixtureConfig): mixture configuration, its seed is replaced per run
        seeds (Iterable[int]): seeds
        hidden (int): K
        out (int | None): output width, defaults to K
        eta (float): step size
        max_steps (int): cap on steps per run
        tol (float): threshold on the energy change

    Returns:
        list[DiversityRun]:

    """
    runs = []
    for seed in seeds:
        batch = generate_mixture(replace(cfg, seed=seed))
        X_alpha = build_x_alpha(uniform_alpha(batch), batch)
        state = Relu2State.initialize(
            hidden, cfg.M, hidden if out is None else out, make_rng(seed, 2), eta=eta
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            state, trace = run_sticky_flow(state, X_alpha, max_steps=max_steps, tol=tol)
        classification = diversity_classify(state, X_alpha)
        runs.append(DiversityRun(seed, state, trace.converged, classification))
        logger.debug(
            "diversity seed %d: %s (rank %d)",
            seed,
            classification.branch.value,
            classification.rank,
        )
    return runs


class CheckStatus(Enum):
    """Outcome of a hypothesis-gated check."""

    PASS = "pass"
    FAIL = "fail"
    SKIPPED = "skipped"


@dataclass
class StructureReport:
    """Sign structure of X_alpha on mixture data.

    Args:
        status (CheckStatus): pass, fail, or skipped when a hypothesis does not hold
        reason (str): why the check was skipped or failed
        max_off_diagonal (float | None): largest off-diagonal entry, must be negative
        top_eigenvector (np.ndarray | None): unit eigenvector of lambda_max, largest entry positive
    """

    status: CheckStatus
    reason: str = ""
    max_off_diagonal: float | None = None
    top_eigenvector: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        """to_dict.

        Returns:
            dict[str, Any]:

        """
        return {
            "status": self.status.value,
            "reason": self.reason,
            "max_off_diagonal": self.max_off_diagonal,
            "top_eigenvector": None
            if self.top_eigenvector is None
            else [float(v) for v in self.top_eigenvector],
        }


def xalpha_structure_check(pi: PairImportance, batch: Batch) -> StructureReport:
    """Checks that X_alpha has negative off-diagonals and a mixed-sign top eigenvector.

    Args:
        pi (PairImportance): alpha, must be positive off the diagonal
        batch (Batch): a mixture batch

    Returns:
        StructureReport:

    """
    M = batch.inputs.shape[1]
    if M < 2:
        return StructureReport(CheckStatus.SKIPPED, "needs at least two modes")
    if np.any(pi.alpha[~np.eye(len(pi), dtype=bool)] <= 0):
        return StructureReport(CheckStatus.SKIPPED, "needs alpha_ij > 0 for all i != j")
    covered = np.unique(mixture_modes(batch))
    if not np.array_equal(covered[covered >= 0], np.arange(M)):
        return StructureReport(CheckStatus.SKIPPED, "not every mode appears in the batch")

    X_alpha = build_x_alpha(pi, batch)
    max_off = float(X_alpha[~np.eye(M, dtype=bool)].max())

    vector = jacobi_eigh(X_alpha)[1][:, 0]
    vector = vector * np.sign(vector[np.argmax(np.abs(vector))])

    reasons = []
    if not max_off < 0:
        reasons.append(f"off-diagonal entry {max_off:.3g} is not negative")
    if not vector.min() < 0:
        reasons.append("top eigenvector has no negative entry")
    status = CheckStatus.FAIL if reasons else CheckStatus.PASS
    return StructureReport(status, "; ".join(reasons), max_off, vector)
