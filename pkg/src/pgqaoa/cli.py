"""Command-line experiment runner.

Subcommands::

    pgqaoa run <config.json> [--out DIR] [--seeds a,b,c]
    pgqaoa replay <summary.json> [--out DIR] [--seed K]
    pgqaoa compare <config.json> [--out DIR] [--seeds a,b,c]
    pgqaoa robust-eval <checkpoint.json> <config.json> [--out FILE]

Every run writes one ``seed_<k>`` directory per seed. Floats are printed
with 12 significant digits and wall-clock timings go to a separate
``timing.csv``, so all other CSVs are byte-reproducible from the summary.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .baselines import ALGORITHMS, DEFAULT_BOX, compare_suite
from .models import THREADS_ENV, ControlModel, build_model, evolve_protocol
from .noise import DEFAULT_GRID_POINTS, DEFAULT_NUM_DRAWS, RewardChannel, grid_fidelities
from .pgtrain import DivergenceError, TrainConfig, TrainRecord, pretrain_then_correlate, train
from .policy import (SIGMA_FLOOR, TRUNCATION, CorrelatedGaussianPolicy, initial_diagonal_policy,
                     policy_from_dict)
from .qsim import bloch_coordinates

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
TRAINING_COLUMNS = ("iteration", "phase", "mean_reward", "mean_unclipped", "exact_mean_fidelity",
                    "greedy_fidelity", "lr", "neg_duration_count", "policy_hash")
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


# ---------------------------------------------------------------------------
# configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: Literal["single_qubit", "multi_qubit_I", "multi_qubit_II"]
    N: int = Field(ge=1, le=10)
    p: int = Field(ge=1)
    noise_support: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.name == "single_qubit" and self.N != 1:
            raise ValueError("single_qubit needs N = 1")
        if self.name != "single_qubit" and self.N < 2:
            raise ValueError(f"{self.name} needs N >= 2")
        if self.noise_support is not None and self.noise_support[0] > self.noise_support[1]:
            raise ValueError("noise_support must be [low, high] with low <= high")
        return self


class PolicySpec(_Strict):
    kind: Literal["diagonal", "full", "lower"] = "diagonal"
    mean_loc: float | None = None
    mean_scale: float = 0.1
    std_init: Literal["lognormal", "constant"] = "lognormal"
    std_value: float = Field(0.0024, gt=0)
    std_loc: float = -3.0
    std_scale: float = Field(0.1, ge=0)
    truncation: float = Field(TRUNCATION, gt=0)
    sigma_floor: float = Field(SIGMA_FLOOR, gt=0)
    std_param: Literal["log", "direct"] = "log"


class ChannelSpec(_Strict):
    kind: Literal["exact", "gaussian", "quantum", "robust"] = "exact"
    sigma: float = Field(0.0, ge=0)
    num_draws: int = Field(DEFAULT_NUM_DRAWS, ge=1)
    draw_sharing: Literal["batch", "protocol"] = "batch"


class TrainSpec(_Strict):
    batch_size: int = Field(128, ge=1)
    iterations: int = Field(10_000, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    lr: float = Field(1e-2, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.96
    decay_every: int = Field(50, ge=1)
    eval_grid: int = Field(DEFAULT_GRID_POINTS, ge=2)
    robust_eval_every: int = Field(100, ge=1)
    mask_offdiagonal: bool = False
    pretrain_iterations: int = Field(0, ge=0)
    pretrain_batch_size: int | None = Field(None, ge=1)
    pretrain_optimizer: Literal["adam", "sgd"] = "adam"
    pretrain_lr: float = Field(1e-2, gt=0)


class BaselineSpec(_Strict):
    algorithms: list[Literal["pg_qaoa", "nelder_mead", "powell", "cma_es", "pso"]] = list(ALGORITHMS)
    budget: int = Field(10_000, ge=1)
    box: tuple[float, float] = DEFAULT_BOX


class BlochSpec(_Strict):
    num_protocols: int = Field(5, ge=0)
    substeps: int = Field(10, ge=1)


class ExperimentConfig(_Strict):
    model: ModelSpec
    policy: PolicySpec = PolicySpec()
    channel: ChannelSpec = ChannelSpec()
    train: TrainSpec = TrainSpec()
    baselines: BaselineSpec = BaselineSpec()
    bloch: BlochSpec = BlochSpec()
    seeds: list[int] = Field(default_factory=lambda: [0])
    master_seed: int = 0
    output_dir: str = "runs"
    snapshot_iterations: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.channel.kind == "robust" and self.model.noise_support is None:
            raise ValueError("a robust channel needs model.noise_support")
        if self.channel.kind == "robust" and self.model.name == "single_qubit":
            raise ValueError("the single-qubit model has no Hamiltonian noise")
        return self


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.model_validate(json.load(fh))


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(part) for part in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# construction helpers


def default_mean_loc(model_name: str, n: int) -> float:
    """Initial mean duration; multi_qubit_II starts longer for larger chains."""
    if model_name != "multi_qubit_II":
        return 0.5
    return 1.0 if n <= 3 else 1.5 if n == 4 else 3.0


def build_from_config(cfg: ExperimentConfig) -> ControlModel:
    return build_model(cfg.model.name, cfg.model.N, cfg.model.noise_support)


def make_channel(cfg: ExperimentConfig) -> RewardChannel:
    ch = cfg.channel
    support = tuple(cfg.model.noise_support) if ch.kind == "robust" else None
    return RewardChannel(ch.kind, sigma=ch.sigma, num_draws=ch.num_draws, support=support,
                         draw_sharing=ch.draw_sharing)


def make_initial_policy(cfg: ExperimentConfig, rng: np.random.Generator):
    ps = cfg.policy
    mean_loc = ps.mean_loc if ps.mean_loc is not None else default_mean_loc(cfg.model.name, cfg.model.N)
    return initial_diagonal_policy(
        cfg.model.p, rng, mean_loc=mean_loc, mean_scale=ps.mean_scale, std_init=ps.std_init,
        std_value=ps.std_value, std_loc=ps.std_loc, std_scale=ps.std_scale,
        truncation=ps.truncation, sigma_floor=ps.sigma_floor, std_param=ps.std_param,
    )


def train_config(cfg: ExperimentConfig, channel: RewardChannel, *, phase: int = 2) -> TrainConfig:
    t = cfg.train
    snapshots = tuple(cfg.snapshot_iterations)
    if phase == 1:
        return TrainConfig(
            batch_size=t.pretrain_batch_size or t.batch_size, iterations=t.pretrain_iterations,
            optimizer=t.pretrain_optimizer, lr=t.pretrain_lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            lr_decay=t.lr_decay, decay_every=t.decay_every, channel=channel, eval_grid=t.eval_grid,
            robust_eval_every=t.robust_eval_every, snapshot_iterations=snapshots,
        )
    return TrainConfig(
        batch_size=t.batch_size, iterations=t.iterations, optimizer=t.optimizer, lr=t.lr,
        beta1=t.beta1, beta2=t.beta2, eps=t.eps, lr_decay=t.lr_decay, decay_every=t.decay_every,
        channel=channel, eval_grid=t.eval_grid, robust_eval_every=t.robust_eval_every,
        mask_offdiagonal=t.mask_offdiagonal, snapshot_iterations=snapshots,
    )


def seed_streams(master_seed: int, seed: int, count: int = 2) -> list[np.random.Generator]:
    """Independent generators for ``(master_seed, seed)``: initialization first, then training."""
    children = np.random.SeedSequence([master_seed, seed]).spawn(count)
    return [np.random.default_rng(s) for s in children]


def stream_for(master_seed: int, seed: int, label: str) -> np.random.Generator:
    tag = int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence([master_seed, seed, tag]))


def decided_defaults() -> dict:
    """Numeric defaults fixed by this implementation, echoed into each summary."""
    return {
        "robust_num_draws": DEFAULT_NUM_DRAWS,
        "robust_draw_sharing": "batch",
        "eval_grid_points": DEFAULT_GRID_POINTS,
        "truncation_bound_in_std": TRUNCATION,
        "sigma_floor": SIGMA_FLOOR,
        "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "lr_schedule": {"lr": 1e-2, "decay": 0.96, "every": 50},
        "nelder_mead": {"reflection": 1.0, "expansion": 2.0, "contraction": 0.5, "shrink": 0.5,
                        "initial_step": 0.05, "ftol": 1e-8},
        "powell": {"initial_step": 0.1, "line_tol": 1e-6, "ftol": 1e-8, "reset_every_sweeps": "2p"},
        "cma_es": {"popsize": "4 + floor(3 ln 2p)", "sigma0": 0.1},
        "pso": {"swarm": 40, "inertia": 0.729, "cognitive": 1.49445, "social": 1.49445,
                "vmax": "half box width"},
        "search_box": list(DEFAULT_BOX),
        "max_condition": 1e12,
    }


def environment_fingerprint() -> dict:
    import scipy

    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "threads": os.environ.get(THREADS_ENV, "1"),
    }


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT % v
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_floats(obj):
    if isinstance(obj, dict):
        return {k: _json_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_floats(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(FLOAT_FORMAT % obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, data, exact_keys=()) -> None:
    """Write ``data`` with 12-digit floats, except top-level ``exact_keys`` kept round-trip exact."""
    out = _json_floats(data)
    for key in exact_keys:
        out[key] = data[key]
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_training(seed_dir: Path, record: TrainRecord) -> None:
    write_csv(seed_dir / "training.csv", TRAINING_COLUMNS,
              ([getattr(r, c) for c in TRAINING_COLUMNS] for r in record.rows))
    write_csv(seed_dir / "timing.csv", ("iteration", "wall_ms"), ((r.iteration, r.wall_ms) for r in record.rows))
    if record.snapshots:
        rows = []
        for it in sorted(record.snapshots):
            snap = record.snapshots[it]
            for j, (d, r, f) in enumerate(zip(snap["total_duration"], snap["reward"], snap["exact_fidelity"])):
                rows.append((it, j, d, r, f))
        write_csv(seed_dir / "snapshots.csv", ("iteration", "member", "total_duration", "reward", "exact_fidelity"), rows)
    if record.robust_log:
        write_csv(seed_dir / "robust_log.csv", ("iteration", "average_fidelity", "worst_fidelity"), record.robust_log)


def robust_grid_rows(model: ControlModel, protocol, support, grid_points: int):
    nodes, weights, fids = grid_fidelities(model, protocol, support, grid_points)
    return [(*node, w, f) for node, w, f in zip(nodes, weights, fids)]


def write_robust_grid(path: Path, model: ControlModel, protocol, support, grid_points: int) -> dict:
    rows = robust_grid_rows(model, protocol, support, grid_points)
    header = [f"delta_{i + 1}" for i in range(model.noise_dim)] + ["weight", "fidelity"]
    write_csv(path, header, rows)
    fids = np.array([r[-1] for r in rows])
    weights = np.array([r[-2] for r in rows])
    return {"average_fidelity": float(weights @ fids), "worst_fidelity": float(fids.min())}


def write_bloch(path: Path, model: ControlModel, policy, num_protocols: int, substeps: int,
                rng: np.random.Generator) -> None:
    x, _ = policy.sample(num_protocols, rng) if num_protocols else (np.empty((0, policy.dim)), None)
    rows = []
    for k, protocol in enumerate(x):
        for step, state in enumerate(evolve_protocol(model, protocol, substeps=substeps)):
            rows.append((k, step, *bloch_coordinates(state)))
    write_csv(path, ("protocol", "step", "x", "y", "z"), rows)


# ---------------------------------------------------------------------------
# jobs


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    """Train one seed and write its artifacts; returns the summary dict."""
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    model = build_from_config(cfg)
    channel = make_channel(cfg)
    init_rng, train_rng = seed_streams(cfg.master_seed, seed)
    policy = make_initial_policy(cfg, init_rng)
    t0 = time.perf_counter()
    if cfg.policy.kind == "diagonal":
        record = train(model, policy, train_config(cfg, channel), train_rng)
    elif cfg.train.pretrain_iterations > 0:
        record = pretrain_then_correlate(model, policy, train_config(cfg, channel, phase=1),
                                         train_config(cfg, channel), train_rng,
                                         lower=cfg.policy.kind == "lower")
    else:
        corr = CorrelatedGaussianPolicy.from_diagonal(policy, lower=cfg.policy.kind == "lower")
        record = train(model, corr, train_config(cfg, channel), train_rng)
    elapsed = time.perf_counter() - t0
    final = record.final_policy

    write_training(seed_dir, record)
    checkpoint = final.to_dict()
    with open(seed_dir / "policy.json", "w") as fh:
        json.dump(checkpoint, fh, indent=2, sort_keys=True)
        fh.write("\n")
    robust = None
    if cfg.model.noise_support is not None and model.noise_dim:
        robust = write_robust_grid(seed_dir / "robust_grid.csv", model, final.mean,
                                   cfg.model.noise_support, cfg.train.eval_grid)
    if model.num_qubits == 1:
        write_bloch(seed_dir / "bloch.csv", model, final, cfg.bloch.num_protocols, cfg.bloch.substeps,
                    stream_for(cfg.master_seed, seed, "bloch"))

    summary = {
        "command": "run",
        "seed": seed,
        "config": cfg.model_dump(mode="json"),
        "decided_defaults": decided_defaults(),
        "environment": environment_fingerprint(),
        "policy": checkpoint,
        "results": {
            "final_exact_mean_fidelity": record.final_exact_fidelity,
            "final_greedy_fidelity": record.rows[-1].greedy_fidelity,
            "final_mean_reward": record.rows[-1].mean_reward,
            "negative_durations": record.negative_durations,
            "floor_projections": record.floor_projections,
            "singular_events": record.singular_events,
            "robust": robust,
        },
        "metadata": {k: v for k, v in record.metadata.items() if k != "phases"},
        "phases": [{"phase": ph["phase"], "policy": ph["policy"], "start": ph["start"]}
                   for ph in record.metadata.get("phases", [])],
        "robust_draws": "per protocol" if channel.kind == "robust" else None,
        "wall_seconds": elapsed,
    }
    write_json(seed_dir / "summary.json", summary, exact_keys=("policy",))
    return summary


def run_experiment(cfg: ExperimentConfig, out: Path, seeds=None) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in seeds if seeds is not None else cfg.seeds:
        log.info("seed %d -> %s", seed, out / f"seed_{seed}")
        results.append(run_seed(cfg, seed, out))
    return results


def run_compare(cfg: ExperimentConfig, out: Path, seeds=None) -> list:
    out.mkdir(parents=True, exist_ok=True)
    model = build_from_config(cfg)
    channel = make_channel(cfg)
    if channel.kind == "robust":
        raise ValueError("the comparison suite supports exact, gaussian and quantum channels")
    seeds = seeds if seeds is not None else cfg.seeds
    rows = compare_suite(
        model, channel, cfg.baselines.algorithms, cfg.baselines.budget, seeds, cfg.train.batch_size,
        make_policy=lambda rng: make_initial_policy(cfg, rng),
        train_config=train_config(cfg, channel),
        rng_for_seed=lambda seed, name: (seed_streams(cfg.master_seed, seed)[0] if name == "init"
                                         else stream_for(cfg.master_seed, seed, name)),
        box=tuple(cfg.baselines.box),
    )
    write_csv(out / "comparison.csv",
              ("algorithm", "seed", "noise_level", "exact_fidelity", "log10_infidelity", "best_reward", "evaluations"),
              ((r.algorithm, r.seed, r.noise_level, r.exact_fidelity, r.log_infidelity, r.best_reward, r.evaluations)
               for r in rows))
    write_csv(out / "comparison_timing.csv", ("algorithm", "seed", "wall_ms"),
              ((r.algorithm, r.seed, r.wall_ms) for r in rows))
    write_json(out / "summary.json", {
        "command": "compare", "seeds": list(seeds), "config": cfg.model_dump(mode="json"),
        "decided_defaults": decided_defaults(), "environment": environment_fingerprint(),
    })
    return rows


def robust_eval(checkpoint: Path, cfg: ExperimentConfig, out: Path) -> dict:
    model = build_from_config(cfg)
    if cfg.model.noise_support is None or not model.noise_dim:
        raise ValueError("robust evaluation needs a noisy model and model.noise_support")
    with open(checkpoint) as fh:
        policy = policy_from_dict(json.load(fh))
    if policy.dim != 2 * cfg.model.p:
        raise ValueError(f"checkpoint has dimension {policy.dim}, config expects {2 * cfg.model.p}")
    return write_robust_grid(out, model, policy.mean, cfg.model.noise_support, cfg.train.eval_grid)


def replay(summary_path: Path, out: Path | None = None, seed: int | None = None) -> dict:
    with open(summary_path) as fh:
        summary = json.load(fh)
    if "config" not in summary or "seed" not in summary:
        raise ValueError("summary lacks the config echo or seed")
    recorded = summary.get("environment", {}).get("package_version")
    if recorded != __version__:
        log.warning("summary was written by version %s, replaying with %s", recorded, __version__)
    cfg = ExperimentConfig.model_validate(summary["config"])
    out = out if out is not None else Path(summary_path).resolve().parent.parent
    return run_seed(cfg, summary["seed"] if seed is None else seed, out)


# ---------------------------------------------------------------------------
# entry point


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgqaoa", description="Policy-gradient QAOA experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train policies for each seed")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seeds", type=_seed_list)

    p = sub.add_parser("replay", help="re-execute a run from its summary JSON")
    p.add_argument("summary", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("compare", help="equal-budget comparison against derivative-free baselines")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seeds", type=_seed_list)

    p = sub.add_parser("robust-eval", help="average and worst-case fidelity table for a saved policy")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=Path("robust_grid.csv"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            replay(args.summary, args.out, args.seed)
            return 0
        cfg = load_config(args.config)
        if args.command == "run":
            run_experiment(cfg, args.out or Path(cfg.output_dir), args.seeds)
        elif args.command == "compare":
            run_compare(cfg, args.out or Path(cfg.output_dir), args.seeds)
        else:
            res = robust_eval(args.checkpoint, cfg, args.out)
            print(f"average {FLOAT_FORMAT % res['average_fidelity']} worst {FLOAT_FORMAT % res['worst_fidelity']}")
    except ValidationError as err:
        print(f"invalid config:\n{format_validation_error(err)}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
