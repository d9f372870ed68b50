"""REINFORCE training of Gaussian protocol policies.

Each iteration samples a batch of protocols, scores them through a reward
channel, forms the batch-mean-baseline policy gradient and takes an ascent
step with Adam (or plain SGD) under a staircase learning-rate decay.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .models import ControlModel, batch_fidelity, protocol_fidelity
from .noise import DEFAULT_GRID_POINTS, RewardChannel, robust_summary
from .policy import CorrelatedGaussianPolicy, DiagonalGaussianPolicy

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, message: str = "mean reward is NaN"):
        super().__init__(f"training diverged at iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    batch_size: int = 128
    iterations: int = 10_000
    optimizer: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.96
    decay_every: int = 50
    channel: RewardChannel = field(default_factory=RewardChannel)
    eval_grid: int = DEFAULT_GRID_POINTS
    robust_eval_every: int = 100
    mask_offdiagonal: bool = False
    snapshot_iterations: tuple[int, ...] = ()

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1")

    def learning_rate(self, step: int) -> float:
        return self.lr * self.lr_decay ** (step // self.decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshot_iterations"] = list(self.snapshot_iterations)
        if d["channel"]["support"] is not None:
            d["channel"]["support"] = list(d["channel"]["support"])
        return d


class Adam:
    """Adam ascent: ``theta += lr * m_hat / (sqrt(v_hat) + eps)``."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads, lr: float) -> list[np.ndarray]:
        if self.m is None:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        out = []
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            out.append(p + lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


class SGD:
    def step(self, params, grads, lr: float) -> list[np.ndarray]:
        return [p + lr * g for p, g in zip(params, grads)]


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.beta1, config.beta2, config.eps)
    return SGD()


def reinforce_gradient(policy, x, rewards) -> list[np.ndarray]:
    """Batch estimate ``(1/M) sum_j grad log pi(x_j) (F_j - mean F)``."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("empty batch")
    # a rounded mean would leave O(eps) advantages when all rewards tie
    w = np.zeros_like(r) if np.all(r == r[0]) else r - r.mean()
    return policy.weighted_score(x, w)


@dataclass
class IterationLog:
    iteration: int
    phase: int
    mean_reward: float
    mean_unclipped: float
    exact_mean_fidelity: float
    greedy_fidelity: float
    lr: float
    neg_duration_count: int
    policy_hash: str
    wall_ms: float


@dataclass
class TrainRecord:
    rows: list[IterationLog] = field(default_factory=list)
    robust_log: list[tuple[int, float, float]] = field(default_factory=list)
    snapshots: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    final_policy: object = None
    negative_durations: int = 0
    floor_projections: int = 0
    singular_events: int = 0
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def final_exact_fidelity(self) -> float:
        return self.rows[-1].exact_mean_fidelity

    def tail_mean(self, name: str, n: int = 100) -> float:
        return float(np.mean(self.column(name)[-n:]))


def _check_compatible(model: ControlModel, policy, config: TrainConfig) -> None:
    if config.channel.kind == "robust" and model.noise_dim == 0:
        raise ValueError(f"robust training needs Hamiltonian noise; {model.name} has none")
    if config.mask_offdiagonal and not isinstance(policy, CorrelatedGaussianPolicy):
        raise ValueError("mask_offdiagonal applies to correlated policies only")


def train(model: ControlModel, policy, config: TrainConfig, rng: np.random.Generator,
          record: TrainRecord | None = None, phase: int = 1, start: int = 0) -> TrainRecord:
    """Run the policy-gradient loop; ``policy`` is updated in place.

    Per-iteration logs include the noise-free mean fidelity of the sampled
    batch and the noise-free fidelity of the policy mean ("greedy"), neither
    of which feeds the gradient. For the robust channel the grid average and
    worst-case fidelity of the policy mean are logged every
    ``config.robust_eval_every`` iterations.
    """
    _check_compatible(model, policy, config)
    record = record if record is not None else TrainRecord()
    record.metadata.setdefault("phases", []).append(
        {"phase": phase, "policy": policy.kind, "start": start, "config": config.to_dict()}
    )
    channel = config.channel
    opt = make_optimizer(config)
    snapshots = set(config.snapshot_iterations)
    robust = channel.kind == "robust"

    for step in range(config.iterations):
        it = start + step
        t0 = time.perf_counter()
        lr = config.learning_rate(step)
        greedy = protocol_fidelity(model, policy.mean)
        if robust and step % config.robust_eval_every == 0:
            record.robust_log.append((it, *robust_summary(model, policy.mean, channel.support, config.eval_grid)))
        phash = policy.fingerprint()

        x, _ = policy.sample(config.batch_size, rng)
        exact = batch_fidelity(model, x)
        rewards, raw = channel.rewards(model, x, exact, rng)
        mean_reward = float(np.mean(rewards))
        if np.isnan(mean_reward):
            raise DivergenceError(it)
        neg = int(np.count_nonzero(x < 0))
        record.negative_durations += neg
        if it in snapshots:
            record.snapshots[it] = {"total_duration": x.sum(axis=1), "reward": rewards.copy(), "exact_fidelity": exact}

        grads = reinforce_gradient(policy, x, rewards)
        if config.mask_offdiagonal:
            grads[1] = np.diag(np.diag(grads[1]))
        new = opt.step(policy.parameters(), grads, lr)
        if any(not np.all(np.isfinite(p)) for p in new):
            raise DivergenceError(it, "non-finite policy parameters")
        policy.set_parameters(new)
        clamped = policy.project()
        if clamped:
            record.floor_projections += clamped
            log.debug("iteration %d: %d stds clamped to the floor", it, clamped)
        if isinstance(policy, CorrelatedGaussianPolicy) and policy.is_singular():
            record.singular_events += 1
            log.warning("iteration %d: policy transform is numerically singular", it)

        record.rows.append(IterationLog(
            iteration=it, phase=phase, mean_reward=mean_reward,
            mean_unclipped=float(np.mean(raw)), exact_mean_fidelity=float(np.mean(exact)),
            greedy_fidelity=greedy, lr=lr, neg_duration_count=neg, policy_hash=phash,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    if robust:
        end = start + config.iterations
        record.robust_log.append((end, *robust_summary(model, policy.mean, channel.support, config.eval_grid)))
    record.final_policy = policy
    return record


def train_robust(model: ControlModel, policy, config: TrainConfig, rng: np.random.Generator) -> TrainRecord:
    """Max-min training: each protocol is rewarded with its minimum over sampled noise tuples."""
    if model.noise_dim == 0:
        raise ValueError(f"robust training needs Hamiltonian noise; {model.name} has none")
    if config.channel.kind != "robust":
        raise ValueError("train_robust needs a robust reward channel")
    return train(model, policy, config, rng)


def pretrain_then_correlate(
    model: ControlModel,
    policy: DiagonalGaussianPolicy,
    pretrain: TrainConfig,
    finetune: TrainConfig,
    rng: np.random.Generator,
    lower: bool = True,
) -> TrainRecord:
    """Train the diagonal policy, then continue with a correlated one started at ``diag(std)``."""
    if not isinstance(policy, DiagonalGaussianPolicy):
        raise TypeError("pretraining starts from a diagonal policy")
    record = train(model, policy, pretrain, rng, phase=1)
    handoff = CorrelatedGaussianPolicy.from_diagonal(policy, lower=lower)
    record.metadata["handoff"] = {
        "iteration": pretrain.iterations,
        "greedy_fidelity": protocol_fidelity(model, handoff.mean),
        "mean_reward": record.rows[-1].mean_reward,
        "pretrained_policy": policy.to_dict(),
    }
    return train(model, handoff, finetune, rng, record=record, phase=2, start=pretrain.iterations)
