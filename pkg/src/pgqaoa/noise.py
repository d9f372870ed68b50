"""Reward channels and robust fidelity functionals.

Channels turn exact fidelities into the scalar reward used for training:

* ``exact``    the fidelity itself,
* ``gaussian`` ``clip(F + eps, 0, 1)`` with ``eps ~ N(0, sigma^2)``,
* ``quantum``  one projective measurement, ``Bernoulli(F)``,
* ``robust``   ``min_j F(x, delta_j)`` over ``K`` uniform draws of the noise tuple,
  shared by the whole batch by default.

All random numbers for a batch are drawn up front from the caller's generator,
so results never depend on how fidelity evaluation is parallelised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ControlModel, _durations, batch_fidelity, fidelity_over_deltas

CHANNEL_KINDS = ("exact", "gaussian", "quantum", "robust")
DEFAULT_NUM_DRAWS = 10
DEFAULT_GRID_POINTS = 11
DRAW_SHARING = ("batch", "protocol")


def gaussian_reward_unclipped(fid, sigma: float, rng: np.random.Generator):
    fid = np.asarray(fid, dtype=float)
    if sigma == 0:
        return fid.copy()
    return fid + rng.normal(0.0, sigma, size=fid.shape)


def gaussian_reward(fid, sigma: float, rng: np.random.Generator):
    """Additive Gaussian readout noise, clipped back into ``[0, 1]``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    out = np.clip(gaussian_reward_unclipped(fid, sigma, rng), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def quantum_measurement_reward(fid, rng: np.random.Generator):
    """Single-shot measurement outcome: 1 with probability ``fid``, else 0."""
    fid = np.asarray(fid, dtype=float)
    out = (rng.random(fid.shape) < fid).astype(float)
    return float(out) if out.ndim == 0 else out


def uniform_deltas(model: ControlModel, support, size, rng: np.random.Generator) -> np.ndarray:
    """Noise tuples drawn uniformly from ``support`` in every noise dimension."""
    if model.noise_dim == 0:
        raise ValueError(f"model {model.name} has no Hamiltonian noise")
    lo, hi = support
    shape = (size, model.noise_dim) if np.isscalar(size) else tuple(size) + (model.noise_dim,)
    if lo == hi:
        # still consume the stream so degenerate supports stay in lockstep
        rng.random(shape)
        return np.full(shape, float(lo))
    return rng.uniform(lo, hi, size=shape)


def robust_min_rewards(model: ControlModel, x, num_draws: int, support, rng,
                       sharing: str = "protocol") -> np.ndarray:
    """``min_j F(x_m, delta_mj)`` for each protocol ``x_m``.

    With ``sharing="protocol"`` every protocol gets fresh draws. With
    ``sharing="batch"`` one set of ``num_draws`` tuples is used for all rows, so
    reward differences within the batch come from the protocols alone.
    """
    if num_draws < 1:
        raise ValueError("num_draws must be at least 1")
    if sharing not in DRAW_SHARING:
        raise ValueError(f"unknown draw sharing {sharing!r}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = x.shape[0]
    if sharing == "batch":
        deltas = np.broadcast_to(uniform_deltas(model, support, num_draws, rng), (m, num_draws, model.noise_dim))
    else:
        deltas = uniform_deltas(model, support, (m, num_draws), rng)
    rows = np.repeat(x, num_draws, axis=0)
    fid = batch_fidelity(model, rows, deltas.reshape(m * num_draws, -1))
    return fid.reshape(m, num_draws).min(axis=1)


def robust_min_reward(model: ControlModel, protocol, num_draws: int, support, rng) -> float:
    return float(robust_min_rewards(model, _durations(protocol)[None], num_draws, support, rng)[0])


def min_fidelity_over(model: ControlModel, protocol, deltas) -> float:
    return float(np.min(fidelity_over_deltas(model, protocol, deltas)))


def noise_grid(model: ControlModel, support, grid_points: int = DEFAULT_GRID_POINTS):
    """Midpoint-rule tensor grid over the support, with equal weights summing to 1.

    A degenerate support ``[a, a]`` collapses to ``grid_points`` copies of ``a``.
    """
    if model.noise_dim == 0:
        raise ValueError(f"model {model.name} has no Hamiltonian noise")
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    lo, hi = support
    nodes = lo + (np.arange(grid_points) + 0.5) * (hi - lo) / grid_points
    axes = np.meshgrid(*([nodes] * model.noise_dim), indexing="ij")
    deltas = np.stack([a.reshape(-1) for a in axes], axis=1)
    weights = np.full(deltas.shape[0], 1.0 / deltas.shape[0])
    return deltas, weights


def grid_fidelities(model: ControlModel, protocol, support, grid_points: int = DEFAULT_GRID_POINTS):
    deltas, weights = noise_grid(model, support, grid_points)
    return deltas, weights, fidelity_over_deltas(model, protocol, deltas)


def average_fidelity(model: ControlModel, protocol, support, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    _, weights, fid = grid_fidelities(model, protocol, support, grid_points)
    return float(weights @ fid)


def worst_case_fidelity(model: ControlModel, protocol, support, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    _, _, fid = grid_fidelities(model, protocol, support, grid_points)
    return float(fid.min())


def robust_summary(model: ControlModel, protocol, support, grid_points: int = DEFAULT_GRID_POINTS):
    _, weights, fid = grid_fidelities(model, protocol, support, grid_points)
    return float(weights @ fid), float(fid.min())


@dataclass(frozen=True)
class RewardChannel:
    kind: str = "exact"
    sigma: float = 0.0
    num_draws: int = DEFAULT_NUM_DRAWS
    support: tuple[float, float] | None = None
    draw_sharing: str = "batch"

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.num_draws < 1:
            raise ValueError("num_draws must be at least 1")
        if self.draw_sharing not in DRAW_SHARING:
            raise ValueError(f"unknown draw sharing {self.draw_sharing!r}")
        if self.kind == "robust":
            if self.support is None:
                raise ValueError("the robust channel needs a noise support")
            lo, hi = self.support
            if not lo <= hi:
                raise ValueError("empty noise support")

    @property
    def label(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian({self.sigma:g})"
        return self.kind

    def rewards(self, model: ControlModel, x, exact, rng):
        """Training rewards for protocols ``x`` whose noise-free fidelities are ``exact``.

        Returns ``(rewards, unclipped)``; ``unclipped`` differs from ``rewards``
        only for the Gaussian channel.
        """
        exact = np.asarray(exact, dtype=float)
        if self.kind == "exact":
            return exact.copy(), exact.copy()
        if self.kind == "gaussian":
            raw = gaussian_reward_unclipped(exact, self.sigma, rng)
            return np.clip(raw, 0.0, 1.0), raw
        if self.kind == "quantum":
            r = quantum_measurement_reward(exact, rng)
            return r, r
        r = robust_min_rewards(model, x, self.num_draws, self.support, rng, self.draw_sharing)
        return r, r

    def batch_mean(self, fid: float, size: int, rng) -> float:
        """Mean of ``size`` independent channel rewards for one protocol of fidelity ``fid``."""
        if self.kind == "exact":
            return float(fid)
        if self.kind == "gaussian":
            return float(np.mean(gaussian_reward(np.full(size, fid), self.sigma, rng)))
        if self.kind == "quantum":
            return float(rng.binomial(size, min(max(fid, 0.0), 1.0)) / size)
        raise ValueError("batch_mean is defined for exact, gaussian and quantum channels")
