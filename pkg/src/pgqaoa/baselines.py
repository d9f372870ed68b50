"""Derivative-free baselines on the batch-mean reward.

Each optimizer maximizes a :class:`ScalarObjective` and stops when the
objective's evaluation budget runs out. Optimizers that converge before
that (simplex collapse, no Powell progress, CMA degeneracy) restart from
their best point, so every run spends exactly its budget.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .models import ControlModel, protocol_fidelity
from .noise import RewardChannel

log = logging.getLogger(__name__)

ALGORITHMS = ("pg_qaoa", "nelder_mead", "powell", "cma_es", "pso")
DEFAULT_BOX = (0.0, 4.0)


class BudgetExhausted(Exception):
    pass


class ScalarObjective:
    """Counted, budgeted wrapper around a reward function ``x -> float``."""

    def __init__(self, func: Callable[[np.ndarray], float], budget: int | None = None):
        if budget is not None and budget < 1:
            raise ValueError("budget must be positive")
        self.func = func
        self.budget = budget
        self.evaluations = 0
        self.trace: list[tuple[int, float]] = []
        self.best_x: np.ndarray | None = None
        self.best_value = -math.inf

    @classmethod
    def batch_mean(cls, model: ControlModel, channel: RewardChannel, batch_size: int,
                   rng: np.random.Generator, budget: int | None = None) -> "ScalarObjective":
        """Mean of ``batch_size`` channel rewards of one protocol, as in the PG batch."""
        def reward(x):
            return channel.batch_mean(protocol_fidelity(model, x), batch_size, rng)
        return cls(reward, budget)

    @property
    def remaining(self) -> float:
        return math.inf if self.budget is None else self.budget - self.evaluations

    def __call__(self, x) -> float:
        if self.budget is not None and self.evaluations >= self.budget:
            raise BudgetExhausted
        x = np.array(x, dtype=float)
        value = float(self.func(x))
        self.evaluations += 1
        self.trace.append((self.evaluations, value))
        if value > self.best_value:
            self.best_value = value
            self.best_x = x
        return value


@dataclass
class BaselineResult:
    algorithm: str
    best_protocol: np.ndarray
    best_reward: float
    exact_fidelity: float
    evaluations: int
    trace: np.ndarray
    restarts: int = 0
    settings: dict = field(default_factory=dict)

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(self.trace[:, 1])


def _finish(name, objective: ScalarObjective, restarts: int, settings: dict,
            model: ControlModel | None = None) -> BaselineResult:
    best = objective.best_x
    exact = protocol_fidelity(model, best) if model is not None else float("nan")
    return BaselineResult(
        algorithm=name, best_protocol=best, best_reward=objective.best_value,
        exact_fidelity=exact, evaluations=objective.evaluations,
        trace=np.array(objective.trace, dtype=float).reshape(-1, 2),
        restarts=restarts, settings=settings,
    )


# ---------------------------------------------------------------------------
# Nelder-Mead


def nelder_mead(objective: ScalarObjective, x0, step: float = 0.05, ftol: float = 1e-8,
                restart: bool = True, model: ControlModel | None = None) -> BaselineResult:
    """Simplex search with reflection 1, expansion 2, contraction 0.5, shrink 0.5."""
    settings = {"reflection": 1.0, "expansion": 2.0, "contraction": 0.5, "shrink": 0.5,
                "initial_step": step, "ftol": ftol}
    f = lambda v: -objective(v)  # noqa: E731  minimise the negated reward
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    restarts = 0
    try:
        start = x0
        while True:
            simplex = [start] + [start + step * np.eye(n)[i] for i in range(n)]
            values = [f(v) for v in simplex]
            while True:
                order = np.argsort(values, kind="stable")
                simplex = [simplex[i] for i in order]
                values = [values[i] for i in order]
                if values[-1] - values[0] < ftol:
                    break
                centroid = np.mean(simplex[:-1], axis=0)
                worst = simplex[-1]
                xr = centroid + (centroid - worst)
                fr = f(xr)
                if fr < values[0]:
                    xe = centroid + 2.0 * (xr - centroid)
                    fe = f(xe)
                    simplex[-1], values[-1] = (xe, fe) if fe < fr else (xr, fr)
                    continue
                if fr < values[-2]:
                    simplex[-1], values[-1] = xr, fr
                    continue
                if fr < values[-1]:
                    xc = centroid + 0.5 * (xr - centroid)
                    fc = f(xc)
                    accept = fc <= fr
                else:
                    xc = centroid + 0.5 * (worst - centroid)
                    fc = f(xc)
                    accept = fc < values[-1]
                if accept:
                    simplex[-1], values[-1] = xc, fc
                    continue
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])
            if not restart or objective.budget is None:
                break
            restarts += 1
            start = simplex[0]
    except BudgetExhausted:
        pass
    return _finish("nelder_mead", objective, restarts, settings, model)


# ---------------------------------------------------------------------------
# Powell


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _line_search(f, x, fx, d, step: float, tol: float, max_expand: int = 60):
    """Golden-section minimisation of ``f(x + s d)``; returns ``(s, f(x + s d))``."""
    phi = lambda s: f(x + s * d)  # noqa: E731
    a, fa = 0.0, fx
    b, fb = step, phi(step)
    if fb > fa:
        b, fb = -step, phi(-step)
        if fb > fa:
            # minimum inside (-step, step)
            lo, hi = -step, step
            return _golden(phi, lo, hi, 0.0, fx, tol)
    # expand downhill until the function rises again
    c = b + (b - a) / GOLDEN
    fc = phi(c)
    for _ in range(max_expand):
        if fc > fb:
            break
        a, fa, b, fb = b, fb, c, fc
        c = b + (b - a) / GOLDEN
        fc = phi(c)
    lo, hi = (a, c) if a < c else (c, a)
    return _golden(phi, lo, hi, b, fb, tol)


def _golden(phi, lo, hi, best_s, best_f, tol):
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = phi(x1), phi(x2)
    while hi - lo > tol:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = phi(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = phi(x2)
    for s, v in ((x1, f1), (x2, f2)):
        if v < best_f:
            best_s, best_f = s, v
    return best_s, best_f


def powell(objective: ScalarObjective, x0, step: float = 0.1, line_tol: float = 1e-6,
           ftol: float = 1e-8, restart: bool = True, model: ControlModel | None = None) -> BaselineResult:
    """Direction-set search with golden-section line searches.

    The direction set is reset to the coordinate basis every ``n`` sweeps.
    """
    settings = {"initial_step": step, "line_tol": line_tol, "ftol": ftol}
    f = lambda v: -objective(v)  # noqa: E731
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    restarts = 0
    try:
        fx = f(x)
        dirs = list(np.eye(n))
        sweep = 0
        while True:
            if sweep and sweep % n == 0:
                dirs = list(np.eye(n))
            sweep += 1
            x_start, f_start = x.copy(), fx
            biggest, drop = 0, 0.0
            for i, d in enumerate(dirs):
                s, fnew = _line_search(f, x, fx, d, step, line_tol)
                if fx - fnew > drop:
                    biggest, drop = i, fx - fnew
                x, fx = x + s * d, fnew
            if f_start - fx < ftol:
                if not restart or objective.budget is None:
                    break
                restarts += 1
                dirs = list(np.eye(n))
                sweep = 0
                continue
            d_new = x - x_start
            fe = f(x + d_new)
            if fe < f_start:
                t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - drop) ** 2 - drop * (f_start - fe) ** 2
                if t < 0:
                    s, fnew = _line_search(f, x, fx, d_new, step, line_tol)
                    x, fx = x + s * d_new, fnew
                    dirs.pop(biggest)
                    dirs.append(d_new / np.linalg.norm(d_new))
    except BudgetExhausted:
        pass
    return _finish("powell", objective, restarts, settings, model)


# ---------------------------------------------------------------------------
# CMA-ES


def cma_population_size(n: int) -> int:
    return 4 + int(math.floor(3.0 * math.log(n)))


def cma_es(objective: ScalarObjective, x0, rng: np.random.Generator, sigma0: float = 0.1,
           popsize: int | None = None, box: tuple[float, float] | None = DEFAULT_BOX,
           model: ControlModel | None = None) -> BaselineResult:
    """(mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation.

    Candidates outside ``box`` are clipped onto it before evaluation and the
    clipped points enter the update.
    """
    mean = np.asarray(x0, dtype=float).copy()
    n = mean.size
    lam = popsize or cma_population_size(n)
    mu = lam // 2
    weights = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights**2)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    settings = {"popsize": lam, "mu": mu, "sigma0": sigma0, "cc": cc, "cs": cs, "c1": c1,
                "cmu": cmu, "damps": damps, "box": list(box) if box else None}

    def reset():
        return np.zeros(n), np.zeros(n), np.eye(n), sigma0

    pc, ps, cov, sigma = reset()
    restarts = 0
    generation = 0
    if box is not None:
        mean = np.clip(mean, *box)
    try:
        while True:
            generation += 1
            evals, evecs = np.linalg.eigh(cov)
            if evals.min() <= 0 or evals.max() / evals.min() > 1e14 or sigma * math.sqrt(evals.max()) < 1e-12:
                log.info("CMA-ES restart at generation %d (degenerate covariance)", generation)
                restarts += 1
                pc, ps, cov, sigma = reset()
                evals, evecs = np.ones(n), np.eye(n)
            sqrt_c = evecs * np.sqrt(evals)
            inv_sqrt_c = (evecs / np.sqrt(evals)) @ evecs.T
            z = rng.standard_normal((lam, n))
            xs = mean + sigma * z @ sqrt_c.T
            if box is not None:
                xs = np.clip(xs, *box)
            values = np.array([objective(x) for x in xs])
            order = np.argsort(-values, kind="stable")[:mu]
            old = mean
            ys = (xs[order] - old) / sigma
            mean = old + sigma * (weights @ ys)
            y_w = weights @ ys
            ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_c @ y_w)
            hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * generation)) < (1.4 + 2 / (n + 1)) * chi_n
            pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
            rank_mu = (ys.T * weights) @ ys
            cov = ((1 - c1 - cmu) * cov + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * cov)
                   + cmu * rank_mu)
            cov = (cov + cov.T) / 2
            sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
            if objective.budget is None and sigma < 1e-14:
                break
    except BudgetExhausted:
        pass
    return _finish("cma_es", objective, restarts, settings, model)


# ---------------------------------------------------------------------------
# particle swarm


def pso(objective: ScalarObjective, x0, rng: np.random.Generator, swarm: int = 40,
        inertia: float = 0.729, cognitive: float = 1.49445, social: float = 1.49445,
        box: tuple[float, float] = DEFAULT_BOX, max_iterations: int | None = None,
        model: ControlModel | None = None) -> BaselineResult:
    """Global-best inertia-weight PSO, reflecting particles at the box walls.

    Particle 0 starts at ``x0`` (clipped to the box), the others uniformly.
    """
    lo, hi = box
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n = x0.size
    vmax = 0.5 * (hi - lo)
    settings = {"swarm": swarm, "inertia": inertia, "cognitive": cognitive, "social": social,
                "vmax": vmax, "box": [lo, hi]}
    pos = rng.uniform(lo, hi, size=(swarm, n))
    pos[0] = x0
    vel = rng.uniform(-vmax, vmax, size=(swarm, n))
    best_pos = pos.copy()
    best_val = np.full(swarm, -np.inf)
    g_pos, g_val = x0.copy(), -np.inf
    iteration = 0
    try:
        for i in range(swarm):
            best_val[i] = objective(pos[i])
            if best_val[i] > g_val:
                g_pos, g_val = pos[i].copy(), best_val[i]
        while max_iterations is None or iteration < max_iterations:
            iteration += 1
            r1 = rng.random((swarm, n))
            r2 = rng.random((swarm, n))
            vel = inertia * vel + cognitive * r1 * (best_pos - pos) + social * r2 * (g_pos - pos)
            vel = np.clip(vel, -vmax, vmax)
            pos = pos + vel
            over, under = pos > hi, pos < lo
            pos = np.where(over, 2 * hi - pos, pos)
            pos = np.where(under, 2 * lo - pos, pos)
            vel = np.where(over | under, -vel, vel)
            pos = np.clip(pos, lo, hi)
            for i in range(swarm):
                v = objective(pos[i])
                if v > best_val[i]:
                    best_pos[i], best_val[i] = pos[i].copy(), v
                    if v > g_val:
                        g_pos, g_val = pos[i].copy(), v
    except BudgetExhausted:
        pass
    return _finish("pso", objective, 0, settings, model)


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonRow:
    algorithm: str
    seed: int
    noise_level: str
    exact_fidelity: float
    best_reward: float
    evaluations: int
    wall_ms: float

    @property
    def log_infidelity(self) -> float:
        return math.log10(max(1.0 - self.exact_fidelity, 1e-16))


def run_baseline(name: str, model: ControlModel, channel: RewardChannel, x0, budget: int,
                 batch_size: int, rng: np.random.Generator, box=DEFAULT_BOX) -> BaselineResult:
    objective = ScalarObjective.batch_mean(model, channel, batch_size, rng, budget)
    if name == "nelder_mead":
        return nelder_mead(objective, x0, model=model)
    if name == "powell":
        return powell(objective, x0, model=model)
    if name == "cma_es":
        return cma_es(objective, x0, rng, box=box, model=model)
    if name == "pso":
        return pso(objective, x0, rng, box=box, model=model)
    raise ValueError(f"unknown baseline {name!r}")


def compare_suite(model: ControlModel, channel: RewardChannel, algorithms, budget: int, seeds,
                  batch_size: int, make_policy, train_config, rng_for_seed, box=DEFAULT_BOX) -> list[ComparisonRow]:
    """Equal-budget comparison of PG-QAOA against the baselines.

    Every method consumes ``budget * batch_size`` channel rewards: PG-QAOA as
    ``budget`` iterations of ``batch_size`` samples, a baseline as ``budget``
    objective calls each averaging ``batch_size`` rewards. Baselines start from
    the PG-QAOA initial mean of the same seed. ``make_policy(rng)`` builds the
    initial policy, ``rng_for_seed(seed, algorithm)`` the random stream.
    """
    from dataclasses import replace

    from .pgtrain import train

    rows = []
    for seed in seeds:
        for name in algorithms:
            rng = rng_for_seed(seed, name)
            policy = make_policy(rng_for_seed(seed, "init"))
            t0 = time.perf_counter()
            if name == "pg_qaoa":
                cfg = replace(train_config, iterations=budget, batch_size=batch_size, channel=channel)
                rec = train(model, policy, cfg, rng)
                exact = protocol_fidelity(model, policy.mean)
                reward, evaluations = rec.rows[-1].mean_reward, budget
            else:
                res = run_baseline(name, model, channel, policy.mean, budget, batch_size, rng, box)
                exact, reward, evaluations = res.exact_fidelity, res.best_reward, res.evaluations
            rows.append(ComparisonRow(name, seed, channel.label, exact, reward, evaluations,
                                      (time.perf_counter() - t0) * 1e3))
    return rows
