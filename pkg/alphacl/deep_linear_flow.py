"""Gradient flow of a deep linear network on the energy, with Frobenius-sphere constraints.

For z = W_L ... W_1 x and a fixed alpha, the energy is 1/2 tr(W X_alpha W^T) with
W = W_L ... W_1, and its gradient in W_l is

    V_l = W_{>l}^T W_{>l} W_l (W_{<l} X_alpha W_{<l}^T).

Under the unit-norm constraint the flow converges, for almost every init, to an aligned
rank-1 chain whose objective 2E equals lambda_max(X_alpha).
"""

from __future__ import annotations

import io
import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from alphacl.core import Batch, PairImportance
from alphacl.energy import contrastive_cov
from alphacl.linalg import jacobi_eigh, random_orthogonal, top_singular_values
from alphacl.utils import (
    DomainError,
    HypothesisError,
    ShapeError,
    as_float_array,
    check_finite,
    dump_arrays,
    load_arrays,
)

logger = logging.getLogger(__name__)


class Normalization(Enum):
    """How weights are projected back onto the constraint set after each step."""

    # every layer to unit Frobenius norm
    FROBENIUS = "frobenius"
    # hidden-layer rows to norm 1/sqrt(n_l), last layer to unit Frobenius norm
    PER_FILTER = "per_filter"


@dataclass(frozen=True)
class DeepLinState:
    """Layer weights W_1 ... W_L, the input contrastive covariance, and the step counter.

    Args:
        weights (tuple[np.ndarray, ...]): W_l of shape n_l x n_{l-1}
        X_alpha (np.ndarray): symmetric n_0 x n_0 matrix
        step (int): number of accepted steps
        eta (float): current step size
    """

    weights: tuple[np.ndarray, ...]
    X_alpha: np.ndarray
    step: int = 0
    eta: float = 1e-2

    def __post_init__(self):
        """Checks that shapes chain and X_alpha is symmetric."""
        weights = tuple(as_float_array(W, "W", ndim=2) for W in self.weights)
        X_alpha = as_float_array(self.X_alpha, "X_alpha", ndim=2)
        if not weights:
            raise ShapeError("Need at least one layer.")
        if X_alpha.shape != (weights[0].shape[1], weights[0].shape[1]):
            raise ShapeError(
                f"X_alpha is {X_alpha.shape} but W_1 expects inputs of width {weights[0].shape[1]}."
            )
        for l in range(1, len(weights)):
            if weights[l].shape[1] != weights[l - 1].shape[0]:
                raise ShapeError(f"W_{l + 1} {weights[l].shape} does not chain onto W_{l}.")
        if np.abs(X_alpha - X_alpha.T).max() > 1e-12 * max(1.0, float(np.abs(X_alpha).max())):
            raise DomainError("X_alpha must be symmetric.")
        if not self.eta >= 0:
            raise DomainError(f"eta must be nonnegative, got {self.eta}.")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "X_alpha", X_alpha)

    @property
    def num_layers(self) -> int:
        """L."""
        return len(self.weights)

    @property
    def product(self) -> np.ndarray:
        """W = W_L ... W_1."""
        return chain_product(self.weights, self.weights[0].shape[1])

    @property
    def lambda_max(self) -> float:
        """Largest eigenvalue of X_alpha, from the Jacobi oracle."""
        return float(jacobi_eigh(self.X_alpha)[0][0])

    def two_energy(self) -> float:
        """2E = tr(W X_alpha W^T).

        Returns:
            float:

        """
        W = self.product
        return float(np.trace(W @ self.X_alpha @ W.T))

    def dump(self, fileobj: io.BytesIO | io.BufferedRandom) -> None:
        """Dumps the state as a zip of `init_params.json`, X_alpha and the weights.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): target

        """
        dump_arrays(fileobj, {"step": self.step, "eta": self.eta}, [self.X_alpha, *self.weights])

    @classmethod
    def load(cls, fileobj: io.BytesIO | io.BufferedRandom) -> DeepLinState:
        """Loads a state written by `dump`.

        Args:
            fileobj (io.BytesIO | io.BufferedRandom): source

        Returns:
            DeepLinState:

        """
        init_params, arrays = load_arrays(fileobj)
        return cls(
            weights=tuple(arrays[1:]),
            X_alpha=arrays[0],
            step=int(init_params["step"]),
            eta=float(init_params["eta"]),
        )


@dataclass
class AlignmentReport:
    """How close a state is to an aligned rank-1 chain.

    Args:
        singular_ratios (np.ndarray): sigma_2 / sigma_1 per layer
        chain (list[np.ndarray]): unit vectors v_0, ..., v_L along the top singular directions
        v0_cosine (float): |cos(v_0, reference)|
        distinct_top_eigenvalue (bool): whether W_{>1}^T W_{>1} has a simple top eigenvalue
        per_filter_deviation (float | None): max over hidden layers of ||[v_l]_k| - 1/sqrt(n_l)|
    """

    singular_ratios: np.ndarray
    chain: list[np.ndarray]
    v0_cosine: float
    distinct_top_eigenvalue: bool
    per_filter_deviation: float | None = None

    def aligned(self, ratio_tol: float = 1e-3, cosine_tol: float = 1e-4) -> bool:
        """Whether every layer is numerically rank-1 and v_0 matches the reference.

        Args:
            ratio_tol (float): bound on sigma_2 / sigma_1
            cosine_tol (float): bound on 1 - |cos|

        Returns:
            bool:

        """
        return bool(
            np.all(self.singular_ratios <= ratio_tol) and self.v0_cosine >= 1.0 - cosine_tol
        )

    def to_dict(self) -> dict:
        """to_dict.

        Returns:
            dict:

        """
        return {
            "singular_ratios": [float(r) for r in self.singular_ratios],
            "v0_cosine": float(self.v0_cosine),
            "distinct_top_eigenvalue": bool(self.distinct_top_eigenvalue),
            "per_filter_deviation": self.per_filter_deviation,
        }


@dataclass
class FlowDiagnostics:
    """Per-step traces of a flow run, append-only, one entry per accepted step.

    Args:
        energy_trace (list[float]): 2E after each step, entry 0 is the initial state
        top_two_singulars (list[np.ndarray]): L x 2 arrays of (sigma_1, sigma_2) per layer
        balancedness_drift (list[float]): max over interfaces of the drift from the initial state
        eta_trace (list[float]): step size used for each accepted step
        alignment (AlignmentReport | None): filled in once the run ends
        converged (bool): whether the energy change fell below tol
    """

    energy_trace: list[float] = field(default_factory=list)
    top_two_singulars: list[np.ndarray] = field(default_factory=list)
    balancedness_drift: list[float] = field(default_factory=list)
    eta_trace: list[float] = field(default_factory=list)
    alignment: AlignmentReport | None = None
    converged: bool = False

    def record(self, state: DeepLinState, initial: DeepLinState) -> None:
        """Appends one entry to every trace.

        Args:
            state (DeepLinState): current state
            initial (DeepLinState): the run's initial state

        """
        self.energy_trace.append(state.two_energy())
        self.top_two_singulars.append(np.stack([top_singular_values(W) for W in state.weights]))
        drift = balancedness_residual(state, initial)
        self.balancedness_drift.append(float(drift.max()) if drift.size else 0.0)
        self.eta_trace.append(state.eta)

    def header(self) -> list[str]:
        """CSV column names: step, 2E, sigma1/sigma2 per layer, drift.

        Returns:
            list[str]:

        """
        num_layers = self.top_two_singulars[0].shape[0] if self.top_two_singulars else 0
        columns = ["step", "two_energy"]
        for l in range(1, num_layers + 1):
            columns += [f"sigma1_W{l}", f"sigma2_W{l}"]
        return columns + ["balancedness_drift"]

    def rows(self) -> np.ndarray:
        """One CSV row per recorded step.

        Returns:
            np.ndarray:

        """
        rows = []
        for step, (two_energy, sigmas, drift) in enumerate(
            zip(self.energy_trace, self.top_two_singulars, self.balancedness_drift)
        ):
            rows.append([step, two_energy, *sigmas.ravel(), drift])
        return np.asarray(rows, dtype=np.float64)


def chain_product(weights: Sequence[np.ndarray], width: int) -> np.ndarray:
    """W_k ... W_1 for the given list, or the identity of `width` when it is empty.

    Args:
        weights (Sequence[np.ndarray]): weights in forward order
        width (int): identity size for the empty product

    Returns:
        np.ndarray:

    """
    product = np.eye(width)
    for W in weights:
        product = W @ product
    return product


def build_x_alpha(pi: PairImportance, batch: Batch) -> np.ndarray:
    """X_alpha = C_alpha[x, x], symmetrized to remove rounding asymmetry.

    Args:
        pi (PairImportance): pi
        batch (Batch): batch

    Returns:
        np.ndarray:

    """
    X = contrastive_cov(pi, batch.inputs, batch.inputs_aug, batch.inputs, batch.inputs_aug)
    return 0.5 * (X + X.T)


def layer_velocities(weights: Sequence[np.ndarray], X_alpha: np.ndarray) -> list[np.ndarray]:
    """V_l = W_{>l}^T W_{>l} W_l (W_{<l} X_alpha W_{<l}^T) for every layer.

    Args:
        weights (Sequence[np.ndarray]): weights
        X_alpha (np.ndarray): X_alpha

    Returns:
        list[np.ndarray]:

    """
    velocities = []
    for l, W in enumerate(weights):
        below = chain_product(weights[:l], X_alpha.shape[0])
        above = chain_product(weights[l + 1 :], W.shape[0])
        velocities.append(above.T @ above @ W @ (below @ X_alpha @ below.T))
    return velocities


def normalize_weights(
    weights: Sequence[np.ndarray], normalization: Normalization | str = Normalization.FROBENIUS
) -> list[np.ndarray]:
    """Projects weights back onto the constraint set.

    Zero rows and zero layers are left at zero.

    Args:
        weights (Sequence[np.ndarray]): weights
        normalization (Normalization | str): which constraint set

    Returns:
        list[np.ndarray]:

    """
    normalization = Normalization(normalization)
    projected = []
    for l, W in enumerate(weights):
        if normalization == Normalization.PER_FILTER and l < len(weights) - 1:
            norms = np.linalg.norm(W, axis=1, keepdims=True)
            scale = np.divide(
                1.0 / np.sqrt(W.shape[0]), norms, out=np.zeros_like(norms), where=norms > 0
            )
            projected.append(W * scale)
        else:
            norm = np.linalg.norm(W)
            projected.append(W / norm if norm > 0 else W.copy())
    return projected


def init_weights(
    dims: Sequence[int],
    rng: np.random.Generator,
    normalization: Normalization | str = Normalization.FROBENIUS,
) -> list[np.ndarray]:
    """I.i.d. Gaussian weights projected onto the constraint set.

    Args:
        dims (Sequence[int]): widths n_0, ..., n_L
        rng (np.random.Generator): generator
        normalization (Normalization | str): constraint set

    Returns:
        list[np.ndarray]:

    """
    weights = [rng.standard_normal((dims[l + 1], dims[l])) for l in range(len(dims) - 1)]
    return normalize_weights(weights, normalization)


def random_x_alpha(
    n: int, rng: np.random.Generator, eigengap: float = 0.1, top: float = 1.0
) -> np.ndarray:
    """A random symmetric matrix with top eigenvalue `top` and gap at least `eigengap`.

    The other eigenvalues are uniform on [-top / 2, top - eigengap], so the matrix is
    generally indefinite.

    Args:
        n (int): size
        rng (np.random.Generator): generator
        eigengap (float): minimum gap lambda_1 - lambda_2
        top (float): lambda_max, must be positive

    Returns:
        np.ndarray:

    """
    if not top > 0 or not 0 < eigengap < 1.5 * top:
        raise DomainError(f"Need top > 0 and 0 < eigengap < 1.5 top, got {top}, {eigengap}.")
    eigenvalues = np.concatenate(
        ([top], rng.uniform(-0.5 * top, top - eigengap, size=n - 1))
    )
    Q = random_orthogonal(n, rng)
    X = (Q * eigenvalues) @ Q.T
    return 0.5 * (X + X.T)


def flow_step(
    state: DeepLinState,
    constrained: bool = True,
    normalization: Normalization | str = Normalization.FROBENIUS,
) -> DeepLinState:
    """One explicit Euler step on every layer from the pre-step weights.

    Args:
        state (DeepLinState): state
        constrained (bool): project onto the constraint set afterwards
        normalization (Normalization | str): which constraint set

    Returns:
        DeepLinState:

    """
    velocities = layer_velocities(state.weights, state.X_alpha)
    weights = [W + state.eta * V for W, V in zip(state.weights, velocities)]
    if constrained:
        weights = normalize_weights(weights, normalization)
    check_finite(weights, "the deep linear flow", state.step + 1)
    return replace(state, weights=tuple(weights), step=state.step + 1)


def balancedness_residual(state: DeepLinState, initial_state: DeepLinState) -> np.ndarray:
    """||(W_l W_l^T - W_{l+1}^T W_{l+1}) - (same at init)||_F for each interface.

    Args:
        state (DeepLinState): state
        initial_state (DeepLinState): state the run started from

    Returns:
        np.ndarray: length L - 1

    """
    if state.num_layers != initial_state.num_layers:
        raise ShapeError(
            f"States have {state.num_layers} and {initial_state.num_layers} layers."
        )

    def conserved(weights: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [
            weights[l] @ weights[l].T - weights[l + 1].T @ weights[l + 1]
            for l in range(len(weights) - 1)
        ]

    now = conserved(state.weights)
    then = conserved(initial_state.weights)
    return np.array([np.linalg.norm(a - b) for a, b in zip(now, then)])


def balancedness_drifts(
    weights: Sequence[np.ndarray], X_alpha: np.ndarray, etas: Sequence[float], steps: int
) -> list[float]:
    """Largest balancedness residual after `steps` unconstrained steps, for every eta.

    Each Euler step changes W_l W_l^T - W_{l+1}^T W_{l+1} by eta^2 times a velocity term,
    so at a fixed step count halving eta divides the drift by about four.

    Args:
        weights (Sequence[np.ndarray]): shared initial weights
        X_alpha (np.ndarray): input contrastive covariance
        etas (Sequence[float]): step sizes
        steps (int): steps per run

    Returns:
        list[float]:

    """
    drifts = []
    for eta in etas:
        start = DeepLinState(weights=tuple(weights), X_alpha=X_alpha, eta=eta)
        state = start
        for _ in range(steps):
            state = flow_step(state, constrained=False)
        drifts.append(float(balancedness_residual(state, start).max()))
        logger.debug("eta %g: balancedness drift %.6g after %d steps", eta, drifts[-1], steps)
    return drifts


def check_alignment(
    state: DeepLinState,
    v0_reference: np.ndarray | None = None,
    per_filter: bool = False,
) -> AlignmentReport:
    """Extracts the singular chain and compares v_0 with the top eigenvector of X_alpha.

    Args:
        state (DeepLinState): a converged state
        v0_reference (np.ndarray | None): defaults to the top eigenvector of X_alpha
        per_filter (bool): also measure the per-filter entry magnitudes

    Returns:
        AlignmentReport:

    """
    sigmas = np.stack([top_singular_values(W) for W in state.weights])
    ratios = np.divide(
        sigmas[:, 1], sigmas[:, 0], out=np.ones(len(sigmas)), where=sigmas[:, 0] > 0
    )

    _, _, vt = np.linalg.svd(state.weights[0])
    chain = [vt[0]]
    for W in state.weights:
        v = W @ chain[-1]
        norm = np.linalg.norm(v)
        chain.append(v / norm if norm > 0 else v)

    if v0_reference is None:
        v0_reference = jacobi_eigh(state.X_alpha)[1][:, 0]
    v0_reference = np.asarray(v0_reference, dtype=np.float64)
    v0_cosine = abs(float(chain[0] @ v0_reference)) / float(np.linalg.norm(v0_reference))

    above = chain_product(state.weights[1:], state.weights[0].shape[0])
    top_eigenvalues = jacobi_eigh(above.T @ above)[0]
    distinct = bool(
        top_eigenvalues.shape[0] < 2
        or top_eigenvalues[0] - top_eigenvalues[1] > 1e-8 * max(1.0, abs(top_eigenvalues[0]))
    )

    deviation = None
    if per_filter and state.num_layers > 1:
        deviation = max(
            float(np.max(np.abs(np.abs(v) - 1.0 / np.sqrt(v.shape[0]))))
            for v in chain[1:-1]
        )

    return AlignmentReport(
        singular_ratios=ratios,
        chain=chain,
        v0_cosine=v0_cosine,
        distinct_top_eigenvalue=distinct,
        per_filter_deviation=deviation,
    )


def run_flow(
    weights: Sequence[np.ndarray],
    X_alpha: np.ndarray,
    eta: float = 1e-2,
    max_steps: int = 50_000,
    tol: float = 1e-10,
    normalization: Normalization | str = Normalization.FROBENIUS,
    backtracking: bool = True,
    max_halvings: int = 60,
) -> tuple[DeepLinState, FlowDiagnostics]:
    """Iterates constrained flow steps until |2E_t - 2E_{t-1}| < tol * eta_t / eta or `max_steps`.

    With `backtracking`, a step that lowers 2E is retried with half the step size, and the
    smaller step size is kept for the rest of the run.

    Args:
        weights (Sequence[np.ndarray]): initial weights, projected onto the constraint set first
        X_alpha (np.ndarray): symmetric input contrastive covariance
        eta (float): initial step size
        max_steps (int): cap on accepted steps
        tol (float): convergence threshold on the change of 2E at the initial step size
        normalization (Normalization | str): constraint set
        backtracking (bool): halve eta on energy decrease
        max_halvings (int): cap on halvings within one step

    Returns:
        tuple[DeepLinState, FlowDiagnostics]:

    """
    normalization = Normalization(normalization)
    state = DeepLinState(
        weights=tuple(normalize_weights(weights, normalization)), X_alpha=X_alpha, eta=eta
    )
    if not state.lambda_max > 0:
        raise HypothesisError(
            f"The flow needs lambda_max(X_alpha) > 0, got {state.lambda_max}."
        )

    initial = state
    diagnostics = FlowDiagnostics()
    diagnostics.record(state, initial)

    for _ in range(max_steps):
        previous = diagnostics.energy_trace[-1]
        candidate = flow_step(state, True, normalization)
        halvings = 0
        while backtracking and candidate.two_energy() < previous and halvings < max_halvings:
            state = replace(state, eta=0.5 * state.eta)
            candidate = flow_step(state, True, normalization)
            halvings += 1
        if halvings:
            logger.debug("step %d: eta halved %d times to %g", state.step, halvings, state.eta)

        state = candidate
        diagnostics.record(state, initial)
        # threshold scales with the current step size
        scaled_tol = tol * state.eta / eta if eta > 0 else tol
        if abs(diagnostics.energy_trace[-1] - previous) < scaled_tol:
            diagnostics.converged = True
            break

    diagnostics.alignment = check_alignment(
        state, per_filter=normalization == Normalization.PER_FILTER
    )
    if diagnostics.converged:
        logger.info(
            "flow converged after %d steps, 2E = %.12g, lambda_max = %.12g",
            state.step,
            diagnostics.energy_trace[-1],
            state.lambda_max,
        )
    else:
        trace = diagnostics.energy_trace
        last_change = abs(trace[-1] - trace[-2]) if len(trace) > 1 else float("nan")
        warnings.warn(
            f"Deep linear flow did not converge in {max_steps} steps "
            f"(last change {last_change:.3g}).",
            category=RuntimeWarning,
        )
    return state, diagnostics
