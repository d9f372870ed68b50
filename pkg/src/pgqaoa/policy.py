"""Gaussian policies over bang-bang protocols.

Two families share one interface:

``DiagonalGaussianPolicy``
    independent ``N(mu_i, std_i^2)`` per duration.
``CorrelatedGaussianPolicy``
    ``x = A z + mu`` with ``z ~ N(0, I)``, covariance ``A A^T``; ``A`` is either
    a full matrix or lower triangular (``lower=True``).

Both expose ``sample``, ``log_prob``, per-sample ``score`` gradients and the
reward-weighted batch gradient used by REINFORCE.
"""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.linalg import solve_triangular

SIGMA_FLOOR = 1e-6
TRUNCATION = 2.0
MAX_CONDITION = 1e12
LOG_2PI = float(np.log(2 * np.pi))


def truncated_normal(rng: np.random.Generator, mean, std, size, bound: float = TRUNCATION) -> np.ndarray:
    """Normal draws restricted to ``mean +/- bound * std`` by rejection."""
    out = rng.normal(mean, std, size=size)
    mean = np.broadcast_to(mean, out.shape)
    std = np.broadcast_to(std, out.shape)
    bad = np.abs(out - mean) > bound * std
    while bad.any():
        out[bad] = rng.normal(mean[bad], std[bad])
        bad = np.abs(out - mean) > bound * std
    return out


def truncated_lognormal(rng: np.random.Generator, mu, sigma, size, bound: float = TRUNCATION) -> np.ndarray:
    """``exp`` of a truncated normal with location ``mu`` and scale ``sigma``."""
    return np.exp(truncated_normal(rng, mu, sigma, size, bound))


def _params_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


class DiagonalGaussianPolicy:
    """Independent Gaussians per duration.

    ``std_param`` selects the trainable coordinates for the stds: ``"log"``
    (default) trains ``log std``, ``"direct"`` trains ``std`` itself. Either
    way stds are clamped to ``sigma_floor`` after every update.
    """

    kind = "diagonal"

    def __init__(self, mean, std, sigma_floor: float = SIGMA_FLOOR, std_param: str = "log"):
        self.mean = np.array(mean, dtype=float).reshape(-1)
        self.std = np.array(std, dtype=float).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if self.mean.size % 2:
            raise ValueError("policy dimension must be even (alpha/beta pairs)")
        self.sigma_floor = sigma_floor
        if std_param not in ("log", "direct"):
            raise ValueError(f"unknown std parameterisation {std_param!r}")
        self.std_param = std_param
        if np.any(self.std <= 0):
            raise ValueError("standard deviations must be positive")
        self.project()

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def depth(self) -> int:
        return self.dim // 2

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.std**2)

    def copy(self) -> "DiagonalGaussianPolicy":
        return DiagonalGaussianPolicy(self.mean.copy(), self.std.copy(), self.sigma_floor, self.std_param)

    def sample(self, size: int, rng: np.random.Generator):
        """Draw ``size`` protocols; returns ``(x, z)`` with ``x = mean + std * z``."""
        if size < 1:
            raise ValueError("batch size must be at least 1")
        z = rng.standard_normal((size, self.dim))
        return self.mean + self.std * z, z

    def log_prob(self, x, z=None) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        u = (x - self.mean) / self.std
        out = -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(self.std)) - 0.5 * self.dim * LOG_2PI
        return float(out) if out.ndim == 0 else out

    def score(self, x):
        """Per-sample ``(dlogpi/dmean, dlogpi/dstd)``."""
        d = np.asarray(x, dtype=float) - self.mean
        var = self.std**2
        return d / var, (d * d - var) / (var * self.std)

    def weighted_score(self, x, weights):
        """``(1/M) sum_j w_j * score(x_j)`` in the trainable coordinates of ``parameters()``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.asarray(weights, dtype=float)
        g_mean, g_std = self.score(x)
        m = x.shape[0]
        g_std = w @ g_std / m
        if self.std_param == "log":
            g_std = g_std * self.std
        return [w @ g_mean / m, g_std]

    def parameters(self) -> list[np.ndarray]:
        if self.std_param == "log":
            return [self.mean, np.log(self.std)]
        return [self.mean, self.std]

    def set_parameters(self, params) -> None:
        self.mean = np.array(params[0], dtype=float)
        std = np.array(params[1], dtype=float)
        self.std = np.exp(std) if self.std_param == "log" else std
        self.project()

    def project(self) -> int:
        """Clamp stds to the floor; returns how many entries were clamped."""
        low = self.std < self.sigma_floor
        self.std = np.where(low, self.sigma_floor, self.std)
        return int(np.count_nonzero(low))

    def fingerprint(self) -> str:
        return _params_hash(self.mean, self.std)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.tolist(), "std": self.std.tolist(),
                "sigma_floor": self.sigma_floor, "std_param": self.std_param}


class CorrelatedGaussianPolicy:
    """``N(mean, A A^T)`` sampled through ``x = A z + mean``."""

    def __init__(self, mean, transform, lower: bool = False):
        self.mean = np.array(mean, dtype=float).reshape(-1)
        a = np.array(transform, dtype=float)
        if a.shape != (self.mean.size, self.mean.size):
            raise ValueError("transform must be a square matrix matching the mean")
        self.lower = bool(lower)
        self.transform = np.tril(a) if self.lower else a
        if self.mean.size % 2:
            raise ValueError("policy dimension must be even (alpha/beta pairs)")

    kind = property(lambda self: "lower" if self.lower else "full")

    @classmethod
    def from_diagonal(cls, policy: DiagonalGaussianPolicy, lower: bool = True) -> "CorrelatedGaussianPolicy":
        return cls(policy.mean.copy(), np.diag(policy.std), lower=lower)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def depth(self) -> int:
        return self.dim // 2

    @property
    def covariance(self) -> np.ndarray:
        return self.transform @ self.transform.T

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def copy(self) -> "CorrelatedGaussianPolicy":
        return CorrelatedGaussianPolicy(self.mean.copy(), self.transform.copy(), self.lower)

    def log_abs_det(self) -> float:
        if self.lower:
            return float(np.sum(np.log(np.abs(np.diag(self.transform)))))
        return float(np.linalg.slogdet(self.transform)[1])

    def condition(self) -> float:
        return float(np.linalg.cond(self.transform))

    def is_singular(self) -> bool:
        # det(A) shrinks like std**dim, so invertibility is judged by conditioning
        return not self.condition() <= MAX_CONDITION

    def _check(self):
        if self.is_singular():
            raise np.linalg.LinAlgError("policy transform is singular")

    def sample(self, size: int, rng: np.random.Generator):
        if size < 1:
            raise ValueError("batch size must be at least 1")
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.transform.T, z

    def latent(self, x) -> np.ndarray:
        """``z = A^{-1} (x - mean)`` for each row of ``x``."""
        self._check()
        d = np.atleast_2d(np.asarray(x, dtype=float)) - self.mean
        if self.lower:
            return solve_triangular(self.transform, d.T, lower=True).T
        return np.linalg.solve(self.transform, d.T).T

    def log_prob(self, x, z=None) -> np.ndarray | float:
        """Covariance-form log density ``-log|Sigma|/2 - d^T Sigma^{-1} d / 2 - p log 2pi``."""
        self._check()
        x = np.asarray(x, dtype=float)
        d = np.atleast_2d(x) - self.mean
        sigma = self.covariance
        _, logdet = np.linalg.slogdet(sigma)
        quad = np.einsum("bi,bi->b", d, np.linalg.solve(sigma, d.T).T)
        out = -0.5 * logdet - 0.5 * quad - 0.5 * self.dim * LOG_2PI
        return float(out[0]) if x.ndim == 1 else out

    def log_prob_latent(self, z) -> np.ndarray | float:
        """Change-of-variable form ``log N(z; 0, I) - log|det A|``."""
        z = np.asarray(z, dtype=float)
        out = -0.5 * np.sum(z * z, axis=-1) - 0.5 * self.dim * LOG_2PI - self.log_abs_det()
        return float(out) if np.ndim(out) == 0 else out

    def _inv_t(self) -> np.ndarray:
        eye = np.eye(self.dim)
        if self.lower:
            return solve_triangular(self.transform, eye, lower=True).T
        return np.linalg.inv(self.transform).T

    def score(self, x):
        """Per-sample ``(dlogpi/dmean, dlogpi/dA)``; the latter has shape ``(M, 2p, 2p)``.

        With ``z = A^{-1}(x - mean)``: ``dmean = A^{-T} z`` and
        ``dA = A^{-T} (z z^T - I)``, lower-triangular part only when ``lower``.
        """
        z = self.latent(x)
        inv_t = self._inv_t()
        g_mean = z @ inv_t.T
        outer = np.einsum("bi,bj->bij", z, z) - np.eye(self.dim)
        g_a = np.matmul(inv_t, outer)
        if self.lower:
            g_a = np.tril(g_a)
        return g_mean, g_a

    def weighted_score(self, x, weights):
        z = self.latent(x)
        w = np.asarray(weights, dtype=float)
        m = z.shape[0]
        inv_t = self._inv_t()
        g_mean = inv_t @ (w @ z) / m
        s = (z.T * w) @ z / m - (w.sum() / m) * np.eye(self.dim)
        g_a = inv_t @ s
        if self.lower:
            g_a = np.tril(g_a)
        return [g_mean, g_a]

    def parameters(self) -> list[np.ndarray]:
        return [self.mean, self.transform]

    def set_parameters(self, params) -> None:
        self.mean = np.array(params[0], dtype=float)
        a = np.array(params[1], dtype=float)
        self.transform = np.tril(a) if self.lower else a

    def project(self) -> int:
        return 0

    def fingerprint(self) -> str:
        return _params_hash(self.mean, self.transform)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean.tolist(),
                "transform": self.transform.reshape(-1).tolist(), "dim": self.dim}


def score_gradient_diagonal(policy: DiagonalGaussianPolicy, x):
    return policy.score(x)


def score_gradient_correlated(policy: CorrelatedGaussianPolicy, x):
    return policy.score(x)


def policy_from_dict(data: dict):
    kind = data["kind"]
    if kind == "diagonal":
        return DiagonalGaussianPolicy(data["mean"], data["std"], data.get("sigma_floor", SIGMA_FLOOR),
                                      data.get("std_param", "log"))
    if kind in ("full", "lower"):
        n = len(data["mean"])
        a = np.asarray(data["transform"], dtype=float).reshape(n, n)
        return CorrelatedGaussianPolicy(data["mean"], a, lower=kind == "lower")
    raise ValueError(f"unknown policy kind {kind!r}")


def initial_diagonal_policy(
    depth: int,
    rng: np.random.Generator,
    mean_loc: float = 0.5,
    mean_scale: float = 0.1,
    std_init: str = "lognormal",
    std_value: float = 0.0024,
    std_loc: float = -3.0,
    std_scale: float = 0.1,
    truncation: float = TRUNCATION,
    sigma_floor: float = SIGMA_FLOOR,
    std_param: str = "log",
) -> DiagonalGaussianPolicy:
    """Random start: truncated-normal means, constant or truncated-lognormal stds."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    mean = truncated_normal(rng, mean_loc, mean_scale, 2 * depth, truncation)
    if std_init == "constant":
        std = np.full(2 * depth, float(std_value))
    elif std_init == "lognormal":
        std = truncated_lognormal(rng, std_loc, std_scale, 2 * depth, truncation)
    else:
        raise ValueError(f"unknown std initialisation {std_init!r}")
    return DiagonalGaussianPolicy(mean, std, sigma_floor, std_param)
