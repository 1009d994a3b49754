"""The `alphacl` command line: experiments and verification suites with reproducible outputs."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import tempfile
import warnings
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

import alphacl
from alphacl.config import ConfigError, load_flat_file, resolve
from alphacl.core import Batch, DistanceSet, PairImportance
from alphacl.deep_linear_flow import (
    Normalization,
    balancedness_drifts,
    build_x_alpha,
    init_weights,
    random_x_alpha,
    run_flow,
)
from alphacl.energy import export_x_alpha
from alphacl.grad_engine.gradients import verify_gradient_identity
from alphacl.grad_engine.encoder import Encoder
from alphacl.grad_engine.steps import alpha_cl_gradient
from alphacl.importance.direct import alpha_direct
from alphacl.importance.regularized import (
    RegularizerKind,
    RegularizerSpec,
    alpha_entropy,
    alpha_inverse,
    alpha_square,
    costs_from_distances,
)
from alphacl.importance.sources import GradientAlpha
from alphacl.loss_family import LossKind, LossSpec, distances_from_outputs
from alphacl.relu_dynamics import (
    CheckStatus,
    DiversityBranch,
    DiversityRun,
    MixtureConfig,
    Relu2State,
    diversity_experiment,
    generate_mixture,
    one_node_experiment,
    relu_gradient_step,
    run_sticky_flow,
    sticky_flow_step,
    uniform_alpha,
    xalpha_structure_check,
)
from alphacl.toy_trainer import (
    LossVariant,
    OptimizerConfig,
    SyntheticTask,
    TrainConfig,
    VariantKind,
    compare_variants,
    linear_probe,
    ordinal_configs,
    ordinal_task,
    train,
)
from alphacl.utils import AlphaCLException, cstr, make_rng, write_csv

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "ALPHACL_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "alphacl_out"

_ANSI = re.compile(r"\x1b\[[0-9;]*m")


@dataclass
class Check:
    """One pass/fail line of a suite."""

    name: str
    status: CheckStatus
    value: float | None = None
    threshold: float | None = None
    detail: str = ""

    @classmethod
    def bound(cls, name: str, value: float, threshold: float, detail: str = "") -> Check:
        """Passes when value <= threshold.

        Args:
            name (str): name
            value (float): measured value
            threshold (float): upper bound
            detail (str): detail

        Returns:
            Check:

        """
        status = CheckStatus.PASS if value <= threshold else CheckStatus.FAIL
        return cls(name, status, float(value), float(threshold), detail)

    @classmethod
    def flag(cls, name: str, passed: bool, detail: str = "") -> Check:
        """flag.

        Args:
            name (str): name
            passed (bool): passed
            detail (str): detail

        Returns:
            Check:

        """
        return cls(name, CheckStatus.PASS if passed else CheckStatus.FAIL, detail=detail)

    @property
    def failed(self) -> bool:
        """failed."""
        return self.status == CheckStatus.FAIL

    def to_dict(self) -> dict[str, Any]:
        """to_dict.

        Returns:
            dict[str, Any]:

        """
        return {
            "name": self.name,
            "status": self.status.value,
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }

    def __str__(self) -> str:
        """A coloured status line."""
        colour = {
            CheckStatus.PASS: "OKGREEN",
            CheckStatus.FAIL: "FAIL",
            CheckStatus.SKIPPED: "WARNING",
        }[self.status]
        line = f"[{cstr(self.status.value.upper(), colour)}] {self.name}"
        if self.value is not None:
            line += f": {self.value:.3g} (bound {self.threshold:.3g})"
        return f"{line} {self.detail}".rstrip()


@dataclass
class RunManifest:
    """Everything needed to rerun a subcommand, written atomically on exit."""

    subcommand: str
    config: dict[str, Any]
    seed: int
    version: str = alphacl.__version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    exit_code: int = 0

    def write(self, out_dir: Path) -> Path:
        """Writes `manifest.json` through a temporary file and a rename.

        Args:
            out_dir (Path): output directory

        Returns:
            Path:

        """
        self.finished = datetime.now(timezone.utc).isoformat()
        path = out_dir / "manifest.json"
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(self.__dict__, f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path


class Outputs:
    """Writes result files into one directory and remembers their names."""

    def __init__(self, out_dir: Path):
        """__init__.

        Args:
            out_dir (Path): output directory, created if missing

        """
        out_dir.mkdir(parents=True, exist_ok=True)
        self.out_dir = out_dir
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        """Registers and returns the path of an output file.

        Args:
            name (str): file name

        Returns:
            Path:

        """
        if name not in self.files:
            self.files.append(name)
        return self.out_dir / name

    def json(self, name: str, obj: Any) -> None:
        """json.

        Args:
            name (str): file name
            obj (Any): json-serializable object

        """
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")

    def csv(self, name: str, header: Sequence[str], rows: np.ndarray) -> None:
        """csv.

        Args:
            name (str): file name
            header (Sequence[str]): column names
            rows (np.ndarray): rows

        """
        write_csv(self.path(name), header, rows)

    def text(self, name: str, content: str) -> None:
        """text.

        Args:
            name (str): file name
            content (str): content

        """
        with open(self.path(name), "w", encoding="utf-8") as f:
            f.write(content)


def sub_seed(seed: int, key: int) -> int:
    """A child seed derived from the run seed and a stream key.

    Args:
        seed (int): run seed
        key (int): stream key

    Returns:
        int:

    """
    return int(make_rng(seed, 0x5EED, key).integers(0, 2**63 - 1))


def _floats(value: Any) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _widths(value: Any) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in str(value).replace(",", "x").split("x") if v.strip())


def _random_outputs(rng: np.random.Generator, n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    Z = rng.standard_normal((n, dim))
    return Z, Z + 0.3 * rng.standard_normal((n, dim))


def _random_distances(rng: np.random.Generator, n: int, dim: int) -> DistanceSet:
    return distances_from_outputs(*_random_outputs(rng, n, dim))


#######################################################################################
# suites
#######################################################################################


def grad_check_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Loss gradient plus frozen-alpha energy gradient must cancel on every batch.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write `grad_check.json`

    Returns:
        list[Check]:

    """
    kinds = list(LossKind) if cfg["loss"] == "all" else [LossKind(cfg["loss"])]
    checks, records = [], []
    for index, kind in enumerate(kinds):
        spec = LossSpec(kind, tau=cfg["tau"], epsilon=cfg["eps"], c=cfg["c"])
        rng = make_rng(cfg["seed"], 1, index)
        worst, excluded = 0.0, 0
        for _ in range(cfg["batches"]):
            report = verify_gradient_identity(spec, *_random_outputs(rng, cfg["n"], cfg["dim"]))
            records.append(report.to_dict())
            if report.excluded:
                excluded += 1
                continue
            worst = max(worst, report.max_identity_residual)
        checks.append(
            Check.bound(
                f"gradient identity {kind.value}",
                worst,
                cfg["tol"],
                f"({excluded} kink batches excluded)" if excluded else "",
            )
        )
    if outputs is not None:
        outputs.json("grad_check.json", {"reports": records, "checks": _dicts(checks)})
    return checks


def alpha_solve_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Solver agreement on random distance sets and the direct-alpha exponent ablation.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write `alpha_solve.json` and `alpha_entropy.csv`

    Returns:
        list[Check]:

    """
    tau = cfg["tau"]
    entropy_reg = RegularizerSpec(RegularizerKind.ENTROPY, tau=tau)
    inverse_reg = RegularizerSpec(RegularizerKind.INVERSE, tau=tau, gamma=cfg["gamma"])
    square_reg = RegularizerSpec(RegularizerKind.SQUARE, tau=cfg["square_tau"])
    infonce = GradientAlpha(LossSpec(LossKind.INFONCE, tau=tau))
    exponents = _floats(cfg["p"])

    rng = make_rng(cfg["seed"], 2)
    entropy_gap, simplex_gap, p2_gap = 0.0, 0.0, 0.0
    row_entropy = {p: [] for p in exponents}
    first: PairImportance | None = None
    for _ in range(cfg["sets"]):
        dist = _random_distances(rng, cfg["n"], cfg["dim"])
        costs = costs_from_distances(dist)
        pi = alpha_entropy(costs, entropy_reg)
        first = pi if first is None else first
        entropy_gap = max(entropy_gap, float(np.abs(pi.alpha - infonce(dist).alpha).max()))

        for solved in (alpha_inverse(costs, inverse_reg), alpha_square(costs, square_reg)):
            simplex_gap = max(simplex_gap, float(np.abs(solved.beta - 1.0).max()))

        for p in exponents:
            direct = alpha_direct(dist, p, tau, normalized=cfg["normalized"])
            row_entropy[p].append(float(np.mean(direct.row_entropy())))
            if p == 2.0 and cfg["normalized"]:
                half = alpha_entropy(costs, RegularizerSpec(tau=0.5 * tau))
                p2_gap = max(p2_gap, float(np.abs(direct.alpha - half.alpha).max()))

    checks = [
        Check.bound("entropy solver vs InfoNCE alpha", entropy_gap, 1e-10),
        Check.bound("inverse and square rows on the simplex", simplex_gap, 1e-9),
    ]
    if 2.0 in exponents and cfg["normalized"]:
        checks.append(Check.bound("direct p=2 vs entropy at tau/2", p2_gap, 1e-10))

    if outputs is not None:
        assert first is not None
        first.to_csv(outputs.path("alpha_entropy.csv"))
        outputs.json(
            "alpha_solve.json",
            {
                "direct_mean_row_entropy": {
                    f"{p:g}": float(np.mean(v)) for p, v in row_entropy.items()
                },
                "checks": _dicts(checks),
            },
        )
    return checks


def flow_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Constrained deep linear flows against the top eigenpair of X_alpha.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write the trace of the first run

    Returns:
        list[Check]:

    """
    normalization = Normalization(cfg["normalization"])
    dims = [cfg["dim"]] * (cfg["layers"] + 1)
    energy_gap, worst_ratio, worst_cosine = 0.0, 0.0, 0.0
    summaries = []
    for run in range(cfg["runs"]):
        seed = cfg["seed"] if run == 0 else sub_seed(cfg["seed"], run)
        X_alpha = random_x_alpha(cfg["dim"], make_rng(seed, 1), eigengap=cfg["eigengap"])
        weights = init_weights(dims, make_rng(seed, 2), normalization)
        state, diagnostics = run_flow(
            weights,
            X_alpha,
            eta=cfg["eta"],
            max_steps=cfg["max_steps"],
            tol=cfg["tol"],
            normalization=normalization,
        )
        assert diagnostics.alignment is not None
        gap = abs(diagnostics.energy_trace[-1] - state.lambda_max)
        energy_gap = max(energy_gap, gap)
        worst_ratio = max(worst_ratio, float(diagnostics.alignment.singular_ratios.max()))
        worst_cosine = max(worst_cosine, 1.0 - diagnostics.alignment.v0_cosine)
        summaries.append(
            {
                "seed": seed,
                "steps": state.step,
                "converged": diagnostics.converged,
                "two_energy": diagnostics.energy_trace[-1],
                "lambda_max": state.lambda_max,
                "final_eta": state.eta,
                "alignment": diagnostics.alignment.to_dict(),
            }
        )

        if outputs is not None and run == 0:
            outputs.csv("flow.csv", diagnostics.header(), diagnostics.rows())
            export_x_alpha(outputs.path("x_alpha.csv"), X_alpha)
            outputs.path("x_alpha.csv.eig.csv")
            if cfg.get("gnuplot"):
                outputs.text("flow.gp", _flow_gnuplot(cfg["layers"]))

    checks = [
        Check.bound("|2E - lambda_max|", energy_gap, 1e-4),
        Check.bound("sigma_2 / sigma_1 per layer", worst_ratio, 1e-3),
        Check.bound("1 - |cos(v_0, u_max)|", worst_cosine, 1e-4),
    ]
    if outputs is not None:
        outputs.json("flow.json", {"runs": summaries, "checks": _dicts(checks)})
    return checks


def _flow_gnuplot(layers: int) -> str:
    return (
        'set datafile separator ","\n'
        "set key autotitle columnhead\n"
        'set xlabel "step"\n'
        'set ylabel "singular value"\n'
        f'plot for [l=1:{layers}] "flow.csv" using 1:(column(2*l+1)) with lines, \\\n'
        f'     for [l=1:{layers}] "flow.csv" using 1:(column(2*l+2)) with lines dashtype 2\n'
    )


def _relu_gnuplot(columns: int) -> str:
    return (
        'set datafile separator ","\n'
        "set key autotitle columnhead\n"
        'set xlabel "step"\n'
        'set ylabel "W1 entry"\n'
        f'plot for [c=3:{columns}] "relu_trace.csv" using 1:c with lines\n'
    )


def diversity_checks(runs: Sequence[DiversityRun]) -> list[Check]:
    """Some converged seed reaches rank >= 2 and no seed ends in a spread rank-1 state.

    Args:
        runs (Sequence[DiversityRun]): runs

    Returns:
        list[Check]:

    """
    higher = [
        r.seed
        for r in runs
        if r.converged and r.classification.branch == DiversityBranch.HIGHER_RANK
    ]
    unconverged = sum(not r.converged for r in runs)
    return [
        Check.flag(
            "some converged seed reaches rank >= 2",
            bool(higher),
            f"seeds {higher}, {unconverged} of {len(runs)} did not converge",
        ),
        Check.flag(
            "no rank-1 state spread over several modes",
            all(r.classification.branch != DiversityBranch.VIOLATION for r in runs),
        ),
    ]


def relu_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """One-node collapse, diversity, X_alpha structure or sticky-rule equivalence.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write `relu.json` and the first trace

    Returns:
        list[Check]:

    """
    experiment = cfg["experiment"]
    mixture = MixtureConfig(M=cfg["modes"], N=cfg["samples"], seed=cfg["seed"])
    seeds = [cfg["seed"]] + [sub_seed(cfg["seed"], k) for k in range(1, cfg["seeds"])]
    results: list[dict[str, Any]]

    if experiment == "one_node":
        runs = one_node_experiment(mixture, seeds, eta=cfg["eta"], max_steps=cfg["max_steps"])
        results = [r.to_dict() for r in runs]
        checks = [
            Check.bound("distance of w1 to the nearest e_m", max(r.residual for r in runs), 1e-6),
            Check.flag(
                "every terminal w1 is one-hot",
                all(r.positive_entries == 1 and r.converged for r in runs),
            ),
        ]
        hidden, out = 1, 1
    elif experiment == "diversity":
        runs = diversity_experiment(
            mixture, seeds, hidden=cfg["hidden"], eta=cfg["eta"], max_steps=cfg["max_steps"]
        )
        results = [
            {"seed": r.seed, "converged": r.converged, **r.classification.to_dict()} for r in runs
        ]
        checks = diversity_checks(runs)
        hidden, out = cfg["hidden"], cfg["hidden"]
    elif experiment == "structure":
        reports = []
        for seed in seeds:
            batch = generate_mixture(replace(mixture, seed=seed))
            alpha = make_rng(seed, 3).uniform(0.1, 1.0, size=(len(batch), len(batch)))
            reports.append(xalpha_structure_check(PairImportance(alpha), batch))
        results = [r.to_dict() for r in reports]
        checks = [
            Check(f"X_alpha structure seed {seed}", report.status, detail=report.reason)
            for seed, report in zip(seeds, reports)
        ]
        hidden = out = 0
    elif experiment == "sticky":
        results, checks = [], []
        worst = 0.0
        for seed in seeds:
            batch = generate_mixture(replace(mixture, seed=seed))
            pi = uniform_alpha(batch)
            X_alpha = build_x_alpha(pi, batch)
            state = Relu2State.initialize(
                cfg["hidden"], cfg["modes"], cfg["hidden"], make_rng(seed, 2), eta=cfg["eta"]
            )
            seed_worst = 0.0
            for _ in range(cfg["max_steps"]):
                sticky = sticky_flow_step(state, X_alpha)
                relu = relu_gradient_step(state, batch, pi)
                seed_worst = max(
                    seed_worst,
                    float(np.abs(sticky.W1 - relu.W1).max()),
                    float(np.abs(sticky.W2 - relu.W2).max()),
                )
                state = sticky
            worst = max(worst, seed_worst)
            results.append({"seed": seed, "max_step_difference": seed_worst})
        checks.append(Check.bound("ReLU step vs sticky step", worst, 1e-8))
        hidden, out = cfg["hidden"], cfg["hidden"]
    else:
        raise ConfigError(
            f"Unknown relu experiment `{experiment}`, expected one_node, diversity, "
            "structure or sticky."
        )

    if outputs is not None:
        outputs.json(
            "relu.json",
            {"experiment": experiment, "results": results, "checks": _dicts(checks)},
        )
        if hidden:
            batch = generate_mixture(mixture)
            X_alpha = build_x_alpha(uniform_alpha(batch), batch)
            # same streams as the experiments use for their first seed
            rng = make_rng(cfg["seed"], 1 if hidden == 1 else 2)
            state = Relu2State.initialize(hidden, cfg["modes"], out, rng, eta=cfg["eta"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                state, trace = run_sticky_flow(
                    state, X_alpha, max_steps=cfg["max_steps"], stop_on_one_hot=hidden == 1
                )
            outputs.csv("relu_trace.csv", trace.header(state.W1.shape), trace.rows())
            outputs.csv("relu_w1.csv", [f"mode_{m}" for m in range(state.W1.shape[1])], state.W1)
            if cfg.get("gnuplot"):
                outputs.text("relu.gp", _relu_gnuplot(2 + state.W1.size))
    return checks


def _train_setup(cfg: Mapping[str, Any]) -> tuple[SyntheticTask, TrainConfig]:
    task = SyntheticTask(
        class_count=cfg["classes"],
        samples_per_class=cfg["samples_per_class"],
        input_dim=cfg["input_dim"],
        noise_scale=cfg["noise_scale"],
        nuisance_dims=cfg["nuisance_dims"],
        seed=cfg["seed"],
    )
    regularizer = None
    if cfg["regularizer"] != "entropy":
        regularizer = RegularizerSpec(RegularizerKind(cfg["regularizer"]), tau=cfg["tau"])
    variant = LossVariant(
        kind=VariantKind(cfg["variant"]),
        tau=cfg["tau"],
        epsilon=cfg["eps"],
        regularizer=regularizer,
        p=cfg["p"],
        normalized=cfg["normalized"],
    )
    config = TrainConfig(
        variant=variant,
        optimizer=OptimizerConfig(kind=cfg["optimizer"], lr=cfg["lr"]),
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        hidden=_widths(cfg["hidden"]),
        output_dim=cfg["output_dim"],
        activation=cfg["activation"],
        head=cfg["head"],
        seed=cfg["seed"],
    )
    return task, config


def train_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Trains one variant on the synthetic task and scores the frozen encoder with a linear readout.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write the log, summary and encoder

    Returns:
        list[Check]:

    """
    task, config = _train_setup(cfg)
    enc, log = train(task, config)
    accuracy = linear_probe(enc, task)
    rows = log.rows()
    chance = 1.0 / task.class_count
    checks = [
        Check.flag("final weights are finite", all(np.isfinite(W).all() for W in enc.weights)),
        Check.flag("every logged epoch is finite", bool(rows.size and np.isfinite(rows).all())),
        Check.flag(
            "held-out accuracy at least chance",
            accuracy >= chance,
            f"held-out accuracy {accuracy:.4f}, chance {chance:.4f}",
        ),
    ]
    if outputs is not None:
        outputs.csv("train_log.csv", log.header, rows)
        outputs.json(
            "train.json",
            {
                "variant": config.variant.kind.value,
                "seed": config.seed,
                "probe_accuracy": accuracy,
                "steps": log.steps,
                "task": task.to_params(),
                "config": config.to_params(),
            },
        )
        with open(outputs.path("encoder.zip"), "w+b") as f:
            enc.dump(f)
    return checks


def trajectory_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """InfoNCE descent and entropy alpha-CL ascent must produce the same weights.

    Args:
        cfg (Mapping[str, Any]): resolved config, the train keys are used
        outputs (Outputs | None): unused

    Returns:
        list[Check]:

    """
    task, base = _train_setup({**cfg, "variant": "infonce"})
    snapshots = []
    for kind in (VariantKind.INFONCE, VariantKind.ALPHA_CL):
        variant = LossVariant(kind=kind, tau=base.variant.tau, epsilon=base.variant.epsilon)
        config = TrainConfig(
            variant=variant,
            optimizer=OptimizerConfig(kind="sgd", lr=cfg["lr"]),
            batch_size=cfg["batch_size"],
            epochs=cfg["epochs"],
            hidden=base.hidden,
            output_dim=base.output_dim,
            activation=base.activation,
            head=base.head,
            record_weights=True,
            seed=base.seed,
        )
        snapshots.append(train(task, config)[1].snapshots)
    gap = max(
        float(np.abs(a - b).max())
        for step_a, step_b in zip(*snapshots)
        for a, b in zip(step_a, step_b)
    )
    return [Check.bound("InfoNCE vs entropy alpha-CL trajectories", gap, 1e-10)]


def norm_conservation_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """With a normalization head, every weight gradient is orthogonal to its weight.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): unused

    Returns:
        list[Check]:

    """
    checks = []
    source = GradientAlpha(LossSpec(LossKind.INFONCE, tau=0.5))
    for index, head in enumerate(("l2_normalize", "layer_norm")):
        rng = make_rng(cfg["seed"], 4, index)
        worst = 0.0
        for _ in range(cfg["draws"]):
            enc = Encoder.initialize([cfg["dim"], 16, 8], ["relu", "linear"], head, rng)
            X = rng.standard_normal((cfg["n"], cfg["dim"]))
            batch = Batch(X, X + 0.3 * rng.standard_normal(X.shape))
            grads = alpha_cl_gradient(enc, batch, source).grads
            for W, g in zip(enc.weights, grads):
                scale = float(np.linalg.norm(W) * np.linalg.norm(g))
                if scale > 0:
                    worst = max(worst, abs(float(np.sum(W * g))) / scale)
        checks.append(Check.bound(f"<W, grad W> / (|W| |grad W|) with {head}", worst, 1e-8))
    return checks


def balancedness_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Unconstrained drift of the balancedness quantities shrinks like eta^2 per step.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): unused

    Returns:
        list[Check]:

    """
    etas = _floats(cfg["etas"])
    dims = [cfg["dim"]] * (cfg["layers"] + 1)
    ratios = []
    for run in range(cfg["runs"]):
        seed = sub_seed(cfg["seed"], run)
        X_alpha = random_x_alpha(cfg["dim"], make_rng(seed, 1))
        weights = init_weights(dims, make_rng(seed, 2))
        drifts = balancedness_drifts(weights, X_alpha, etas, cfg["steps"])
        ratios.extend(a / b for a, b in zip(drifts, drifts[1:]))
    low, high = min(ratios), max(ratios)
    return [
        Check.flag(
            "drift ratio per halving of eta within [3, 5]",
            3.0 <= low and high <= 5.0,
            f"ratios between {low:.4f} and {high:.4f}",
        )
    ]


def ordinal_suite(cfg: Mapping[str, Any], outputs: Outputs | None) -> list[Check]:
    """Median held-out accuracies over seeds: quadratic below InfoNCE, direct alpha close to it.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs | None): where to write `ordinal.json`

    Returns:
        list[Check]:

    """
    seeds = [sub_seed(cfg["seed"], k) for k in range(cfg["seeds"])]
    comparison = compare_variants(
        ordinal_task(cfg["classes"]), ordinal_configs(cfg["epochs"]), seeds
    )
    infonce = comparison.median("infonce")
    quadratic = comparison.median("quadratic")
    direct = comparison.median("alpha_cl_direct")
    checks = [
        Check.flag(
            "median quadratic below median infonce",
            quadratic < infonce,
            f"quadratic {quadratic:.4f}, infonce {infonce:.4f}",
        ),
        Check.bound("infonce - alpha_cl_direct median", infonce - direct, 0.02),
    ]
    if outputs is not None:
        outputs.json("ordinal.json", {**comparison.to_dict(), "checks": _dicts(checks)})
    return checks


def _dicts(checks: Sequence[Check]) -> list[dict[str, Any]]:
    return [c.to_dict() for c in checks]


#######################################################################################
# subcommands
#######################################################################################

COMMON_DEFAULTS: dict[str, Any] = {"seed": 0, "gnuplot": False}

DEFAULTS: dict[str, dict[str, Any]] = {
    "grad-check": {
        "loss": "infonce",
        "n": 16,
        "dim": 8,
        "batches": 100,
        "tau": 1.0,
        "eps": 0.0,
        "c": 1.0,
        "tol": 1e-8,
    },
    "alpha-solve": {
        "sets": 100,
        "n": 16,
        "dim": 8,
        "tau": 0.5,
        "gamma": 2.0,
        "square_tau": 5.0,
        "p": "2,4",
        "normalized": True,
    },
    "flow": {
        "layers": 5,
        "dim": 8,
        "eta": 0.1,
        "max_steps": 50_000,
        "tol": 1e-10,
        "eigengap": 0.1,
        "normalization": "frobenius",
        "runs": 1,
    },
    "relu": {
        "experiment": "one_node",
        "modes": 3,
        "samples": 12,
        "seeds": 10,
        "hidden": 4,
        "eta": 1e-2,
        "max_steps": 200_000,
    },
    "train": {
        "variant": "infonce",
        "tau": 0.5,
        "eps": 0.0,
        "p": 4.0,
        "normalized": True,
        "regularizer": "entropy",
        "optimizer": "adam",
        "lr": 1e-3,
        "batch_size": 64,
        "epochs": 10,
        "classes": 4,
        "samples_per_class": 200,
        "input_dim": 16,
        "noise_scale": 0.1,
        "nuisance_dims": 0,
        "hidden": "32",
        "output_dim": 8,
        "activation": "relu",
        "head": "l2_normalize",
    },
}
DEFAULTS["verify-all"] = {"workers": 4, "quick": False}

CHOICES: dict[str, dict[str, list[str]]] = {
    "grad-check": {"loss": [k.value for k in LossKind] + ["all"]},
    "alpha-solve": {},
    "flow": {"normalization": [n.value for n in Normalization]},
    "relu": {"experiment": ["one_node", "diversity", "structure", "sticky"]},
    "train": {
        "variant": [v.value for v in VariantKind],
        "regularizer": [k.value for k in RegularizerKind],
        "optimizer": ["sgd", "adam"],
        "activation": ["linear", "relu"],
        "head": ["none", "l2_normalize", "layer_norm"],
    },
    "verify-all": {},
}

SUITE_RUNNERS: dict[str, Callable[[Mapping[str, Any], Outputs | None], list[Check]]] = {
    "grad-check": grad_check_suite,
    "alpha-solve": alpha_solve_suite,
    "flow": flow_suite,
    "relu": relu_suite,
    "train": train_suite,
}


def verify_all_suites(quick: bool) -> list[tuple[str, Callable, dict[str, Any]]]:
    """The property suites run by `verify-all`, each with its config overrides.

    Args:
        quick (bool): shrink every suite for smoke runs

    Returns:
        list[tuple[str, Callable, dict[str, Any]]]:

    """
    scale = 10 if quick else 1
    relu = DEFAULTS["relu"]
    return [
        (
            "gradient_identity",
            grad_check_suite,
            {**DEFAULTS["grad-check"], "loss": "all", "batches": 100 // scale},
        ),
        ("solver_agreement", alpha_solve_suite, {**DEFAULTS["alpha-solve"], "sets": 100 // scale}),
        ("pca_equivalence", flow_suite, {**DEFAULTS["flow"], "runs": 20 // scale}),
        ("norm_conservation", norm_conservation_suite, {"draws": 100 // scale, "dim": 6, "n": 8}),
        (
            "sticky_equivalence",
            relu_suite,
            {**relu, "experiment": "sticky", "seeds": 10 // scale, "max_steps": 1000 // scale},
        ),
        ("one_node_m2", relu_suite, {**relu, "modes": 2, "seeds": 100 // scale}),
        ("one_node_m3", relu_suite, {**relu, "modes": 3, "seeds": 100 // scale}),
        ("one_node_m5", relu_suite, {**relu, "modes": 5, "seeds": 100 // scale}),
        ("xalpha_structure", relu_suite, {**relu, "experiment": "structure", "seeds": 50 // scale}),
        (
            "diversity",
            relu_suite,
            {
                **relu,
                "experiment": "diversity",
                "modes": 4,
                "seeds": 20,
                "max_steps": 50_000 // scale,
            },
        ),
        (
            "trajectory_identity",
            trajectory_suite,
            # 800 samples in batches of 8 is 100 steps
            {**DEFAULTS["train"], "optimizer": "sgd", "lr": 0.05, "epochs": 1, "batch_size": 8},
        ),
        (
            "balancedness",
            balancedness_suite,
            {"layers": 3, "dim": 4, "etas": "1e-3,5e-4,2.5e-4", "steps": 50, "runs": 10 // scale},
        ),
        (
            "ordinal_comparison",
            ordinal_suite,
            {"classes": 4, "epochs": 15, "seeds": 10 // scale},
        ),
    ]


def run_verify_all(cfg: Mapping[str, Any], outputs: Outputs) -> list[Check]:
    """Runs every property suite on a thread pool, each with a derived seed.

    Args:
        cfg (Mapping[str, Any]): resolved config
        outputs (Outputs): where to write `verify_all.json`

    Returns:
        list[Check]:

    """
    suites = verify_all_suites(cfg["quick"])
    seeds = [sub_seed(cfg["seed"], index) for index in range(len(suites))]

    def run_one(index: int) -> list[Check]:
        name, runner, suite_cfg = suites[index]
        logger.info("running suite %s", name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                return runner({**COMMON_DEFAULTS, **suite_cfg, "seed": seeds[index]}, None)
            except AlphaCLException as e:
                return [Check.flag(name, False, f"{type(e).__name__}: {_plain(str(e))}")]
            except Exception as e:
                logger.exception("suite %s crashed", name)
                return [Check.flag(name, False, f"unexpected {type(e).__name__}: {e}")]

    with ThreadPoolExecutor(max_workers=cfg["workers"]) as executor:
        per_suite = list(executor.map(run_one, range(len(suites))))

    outputs.json(
        "verify_all.json",
        {
            name: {"seed": seed, "checks": _dicts(checks)}
            for (name, _, _), seed, checks in zip(suites, seeds, per_suite)
        },
    )
    return [check for checks in per_suite for check in checks]


def _plain(message: str) -> str:
    return _ANSI.sub("", message)


def build_parser() -> argparse.ArgumentParser:
    """The argument parser; every option defaults to None so that config files can fill in.

    Returns:
        argparse.ArgumentParser:

    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument(
        "--out", help=f"output directory, else ${OUTPUT_DIR_ENV} or ./{DEFAULT_OUTPUT_DIR}"
    )
    common.add_argument("--seed", type=int, help="64-bit run seed")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level")

    parser = argparse.ArgumentParser(prog="alphacl", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    grad = sub.add_parser("grad-check", parents=[common], help="gradient identity suite")
    grad.add_argument("--loss", choices=CHOICES["grad-check"]["loss"])
    grad.add_argument("--n", type=int)
    grad.add_argument("--dim", type=int)
    grad.add_argument("--batches", type=int)
    grad.add_argument("--tau", type=float)
    grad.add_argument("--eps", type=float)
    grad.add_argument("--c", type=float)
    grad.add_argument("--tol", type=float)

    solve = sub.add_parser("alpha-solve", parents=[common], help="alpha solver comparisons")
    solve.add_argument("--sets", type=int)
    solve.add_argument("--n", type=int)
    solve.add_argument("--dim", type=int)
    solve.add_argument("--tau", type=float)
    solve.add_argument("--gamma", type=float)
    solve.add_argument("--square-tau", dest="square_tau", type=float)
    solve.add_argument("--p", help="comma separated direct-alpha exponents")
    solve.add_argument("--normalized", action=argparse.BooleanOptionalAction, default=None)

    flow = sub.add_parser("flow", parents=[common], help="deep linear flow")
    flow.add_argument("--layers", type=int)
    flow.add_argument("--dim", type=int)
    flow.add_argument("--eta", type=float)
    flow.add_argument("--max-steps", dest="max_steps", type=int)
    flow.add_argument("--tol", type=float)
    flow.add_argument("--eigengap", type=float)
    flow.add_argument("--normalization", choices=CHOICES["flow"]["normalization"])
    flow.add_argument("--runs", type=int)
    flow.add_argument("--gnuplot", action="store_true", default=None)

    relu = sub.add_parser("relu", parents=[common], help="two-layer ReLU experiments")
    relu.add_argument("--experiment", choices=CHOICES["relu"]["experiment"])
    relu.add_argument("--modes", type=int)
    relu.add_argument("--samples", type=int)
    relu.add_argument("--seeds", type=int)
    relu.add_argument("--hidden", type=int)
    relu.add_argument("--eta", type=float)
    relu.add_argument("--max-steps", dest="max_steps", type=int)
    relu.add_argument("--gnuplot", action="store_true", default=None)

    tr = sub.add_parser("train", parents=[common], help="toy training and linear readout")
    tr.add_argument("--variant", choices=CHOICES["train"]["variant"])
    tr.add_argument("--tau", type=float)
    tr.add_argument("--eps", type=float)
    tr.add_argument("--p", type=float)
    tr.add_argument("--normalized", action=argparse.BooleanOptionalAction, default=None)
    tr.add_argument("--regularizer", choices=CHOICES["train"]["regularizer"])
    tr.add_argument("--optimizer", choices=CHOICES["train"]["optimizer"])
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--classes", type=int)
    tr.add_argument("--samples-per-class", dest="samples_per_class", type=int)
    tr.add_argument("--input-dim", dest="input_dim", type=int)
    tr.add_argument("--noise-scale", dest="noise_scale", type=float)
    tr.add_argument("--nuisance-dims", dest="nuisance_dims", type=int)
    tr.add_argument("--hidden", help="hidden widths, e.g. 32x16")
    tr.add_argument("--output-dim", dest="output_dim", type=int)
    tr.add_argument("--activation", choices=CHOICES["train"]["activation"])
    tr.add_argument("--head", choices=CHOICES["train"]["head"])

    verify = sub.add_parser("verify-all", parents=[common], help="full property suite")
    verify.add_argument("--workers", type=int)
    verify.add_argument("--quick", action="store_true", default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point.

    Args:
        argv (Sequence[str] | None): arguments, defaults to sys.argv[1:]

    Returns:
        int: 0 when every executed check passed, 1 on failure, 2 on usage errors

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )

    defaults = {**COMMON_DEFAULTS, **DEFAULTS[args.subcommand]}
    flags = {
        k: v
        for k, v in vars(args).items()
        if k not in ("subcommand", "config", "out", "verbose")
    }
    try:
        file_params = load_flat_file(args.config) if args.config else None
        cfg = resolve(defaults, file_params, flags, CHOICES[args.subcommand])
    except (ConfigError, OSError) as e:
        print(_plain(str(e)), file=sys.stderr)
        return 2

    out_dir = Path(args.out or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)
    outputs = Outputs(out_dir)
    manifest = RunManifest(subcommand=args.subcommand, config=dict(cfg), seed=cfg["seed"])

    try:
        if args.subcommand == "verify-all":
            checks = run_verify_all(cfg, outputs)
        else:
            checks = SUITE_RUNNERS[args.subcommand](cfg, outputs)
    except AlphaCLException as e:
        checks = [Check.flag(args.subcommand, False, f"{type(e).__name__}: {_plain(str(e))}")]
    except Exception as e:
        logger.exception("%s crashed", args.subcommand)
        checks = [Check.flag(args.subcommand, False, f"unexpected {type(e).__name__}: {e}")]

    for check in checks:
        print(check)

    failures = [c for c in checks if c.failed]
    if failures:
        outputs.json("failures.json", _dicts(failures))
    manifest.exit_code = 1 if failures else 0
    manifest.outputs = list(outputs.files)
    manifest.write(out_dir)
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
