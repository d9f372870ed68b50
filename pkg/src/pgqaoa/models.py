"""Bang-bang state-transfer problems and their fidelity evaluation.

A protocol is the flat duration vector ``(alpha_1, beta_1, ..., alpha_p, beta_p)``;
within every layer ``H0`` acts for ``alpha_i`` first, then ``H1`` for ``beta_i``.

Hamiltonian noise is affine in the noise tuple ``delta``:
``H0(delta) = H0 + sum_k delta_k * D0_k`` and likewise for ``H1``.
"""
from __future__ import annotations

import math
import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qsim import HermitianOperator, QuantumState, ground_state, pauli_operator

T_QSL = 2.41
"""Quantum speed limit of the single-qubit problem (reporting annotation only)."""

THREADS_ENV = "PGQAOA_NUM_THREADS"
CHUNK_ROWS = 256
SPECTRAL_CACHE_SIZE = 4096

MODEL_NAMES = ("single_qubit", "multi_qubit_I", "multi_qubit_II")


@dataclass(frozen=True)
class Protocol:
    """Flat duration vector of one bang-bang schedule."""

    durations: np.ndarray

    def __post_init__(self):
        d = np.array(self.durations, dtype=float).reshape(-1)
        if d.size % 2:
            raise ValueError("a protocol needs an even number of durations")
        d.setflags(write=False)
        object.__setattr__(self, "durations", d)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "Protocol":
        return cls(np.asarray(pairs, dtype=float).reshape(-1))

    @property
    def depth(self) -> int:
        return self.durations.size // 2

    @property
    def alphas(self) -> np.ndarray:
        return self.durations[0::2]

    @property
    def betas(self) -> np.ndarray:
        return self.durations[1::2]

    def num_negative(self) -> int:
        return int(np.count_nonzero(self.durations < 0))


def _durations(protocol) -> np.ndarray:
    if isinstance(protocol, Protocol):
        return protocol.durations
    d = np.asarray(protocol, dtype=float).reshape(-1)
    if d.size % 2:
        raise ValueError("a protocol needs an even number of durations")
    return d


def total_duration(protocol) -> float:
    return float(np.sum(_durations(protocol)))


def _num_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class ControlModel:
    name: str
    num_qubits: int
    psi_initial: QuantumState
    psi_target: QuantumState
    h0: HermitianOperator
    h1: HermitianOperator
    h0_noise: np.ndarray  # (noise_dim, D, D)
    h1_noise: np.ndarray
    noise_support: tuple[float, float] | None = None
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _cache_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.psi_initial.dim != self.psi_target.dim or self.psi_initial.dim != self.h0.dim:
            raise ValueError("states and generators must share one Hilbert space")
        if self.h0_noise.shape != self.h1_noise.shape:
            raise ValueError("noise terms of H0 and H1 must match in shape")

    @property
    def dim(self) -> int:
        return self.h0.dim

    @property
    def noise_dim(self) -> int:
        return self.h0_noise.shape[0]

    def _check_delta(self, delta) -> np.ndarray:
        if delta is None:
            return np.zeros(self.noise_dim)
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        if d.shape != (self.noise_dim,):
            raise ValueError(f"noise tuple has shape {d.shape}, model expects ({self.noise_dim},)")
        return d

    def hamiltonians(self, delta=None) -> tuple[HermitianOperator, HermitianOperator]:
        """Generators ``(H0(delta), H1(delta))``; the noise-free pair when ``delta`` is zero."""
        d = self._check_delta(delta)
        if not np.any(d):
            return self.h0, self.h1
        key = tuple(np.round(d, 12))
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        pair = (
            HermitianOperator(self.h0.matrix + np.tensordot(d, self.h0_noise, 1), check=False),
            HermitianOperator(self.h1.matrix + np.tensordot(d, self.h1_noise, 1), check=False),
        )
        with self._cache_lock:
            pair = self._cache.setdefault(key, pair)
            while len(self._cache) > SPECTRAL_CACHE_SIZE:
                self._cache.popitem(last=False)
        return pair

    hamiltonian_factory = hamiltonians

    def initial_overlap(self) -> float:
        return float(abs(np.vdot(self.psi_target.amplitudes, self.psi_initial.amplitudes)) ** 2)


# ---------------------------------------------------------------------------
# model builders


def _chain_terms(n: int, axis: str, coefficient: float = 1.0) -> np.ndarray:
    return sum(pauli_operator([(j, axis)], coefficient, n).matrix for j in range(1, n + 1))


def _bond(n: int, j: int, axes=("z", "z"), coefficient: float = 1.0) -> np.ndarray:
    return pauli_operator([(j, axes[0]), (j + 1, axes[1])], coefficient, n).matrix


def ising_hamiltonian(n: int, h: float, omega: tuple[float, float] = (0.0, 0.0)) -> HermitianOperator:
    """Open transverse-field Ising chain ``-sum (1+w_j) z_j z_{j+1} - sum (z_j + h x_j)``.

    ``omega`` rescales the first two bonds and needs ``n >= 3`` when nonzero.
    """
    if n < 2:
        raise ValueError("the Ising chain needs at least two qubits")
    if any(omega) and n < 3:
        raise ValueError("bond noise needs at least three qubits")
    m = -_chain_terms(n, "z") - h * _chain_terms(n, "x")
    for j in range(1, n):
        scale = 1.0 + (omega[j - 1] if j <= 2 else 0.0)
        m = m - scale * _bond(n, j)
    return HermitianOperator(m, check=False)


def build_single_qubit() -> ControlModel:
    z = pauli_operator([(1, "z")], 1.0, 1)
    x = pauli_operator([(1, "x")], 1.0, 1)
    empty = np.zeros((0, 2, 2), dtype=complex)
    return ControlModel(
        name="single_qubit",
        num_qubits=1,
        psi_initial=ground_state(-0.5 * z + x),
        psi_target=ground_state(-0.5 * z - 1.0 * x),
        h0=-0.5 * z + 2.0 * x,
        h1=-0.5 * z - 2.0 * x,
        h0_noise=empty,
        h1_noise=empty.copy(),
    )


def build_multi_qubit_I(n: int, noise_support: tuple[float, float] | None = None) -> ControlModel:
    """Ising chain with ``H0 = H[-4]``, ``H1 = H[+4]``, ground states of ``H[-2] -> H[+2]``.

    For ``n >= 3`` the first two bonds carry the noise tuple ``(w1, w2)``.
    """
    if n < 2:
        raise ValueError("multi_qubit_I needs N >= 2")
    if noise_support is not None and n < 3:
        raise ValueError("the noisy multi_qubit_I model needs N >= 3")
    dim = 2**n
    if n >= 3:
        noise = np.stack([-_bond(n, 1), -_bond(n, 2)])
    else:
        noise = np.zeros((0, dim, dim), dtype=complex)
    return ControlModel(
        name="multi_qubit_I",
        num_qubits=n,
        psi_initial=ground_state(ising_hamiltonian(n, -2.0)),
        psi_target=ground_state(ising_hamiltonian(n, 2.0)),
        h0=ising_hamiltonian(n, -4.0),
        h1=ising_hamiltonian(n, 4.0),
        h0_noise=noise,
        h1_noise=noise.copy(),
        noise_support=_support(noise_support),
    )


def xy_noise_sites(n: int) -> tuple[int, int, int]:
    """1-based sites of the three-body noise term, centred on ``ceil(n/2)``."""
    c = math.ceil(n / 2)
    return (c - 1, c, c + 1)


def build_multi_qubit_II(n: int, noise_support: tuple[float, float] | None = None) -> ControlModel:
    """XY-chain excitation transfer ``|10...0> -> |0...01>``.

    ``H0 = (z_N + 1)/2``, ``H1 = sum (x x + y y)``; for ``n >= 3`` the noise
    term ``delta * z_{c-1} x_c z_{c+1}`` (``c = ceil(n/2)``) is added to ``H1``.
    """
    if n < 2:
        raise ValueError("multi_qubit_II needs N >= 2")
    if noise_support is not None and n < 3:
        raise ValueError("the noisy multi_qubit_II model needs N >= 3")
    dim = 2**n
    h0 = 0.5 * (pauli_operator([(n, "z")], 1.0, n).matrix + np.eye(dim))
    h1 = sum(_bond(n, j, ("x", "x")) + _bond(n, j, ("y", "y")) for j in range(1, n))
    if n >= 3:
        a, b, c = xy_noise_sites(n)
        term = pauli_operator([(a, "z"), (b, "x"), (c, "z")], 1.0, n).matrix
        h1_noise = term[None]
        h0_noise = np.zeros_like(h1_noise)
    else:
        h0_noise = h1_noise = np.zeros((0, dim, dim), dtype=complex)
    return ControlModel(
        name="multi_qubit_II",
        num_qubits=n,
        psi_initial=QuantumState.basis([1] + [0] * (n - 1)),
        psi_target=QuantumState.basis([0] * (n - 1) + [1]),
        h0=HermitianOperator(h0, check=False),
        h1=HermitianOperator(h1, check=False),
        h0_noise=h0_noise,
        h1_noise=h1_noise,
        noise_support=_support(noise_support),
    )


def _support(noise_support) -> tuple[float, float] | None:
    if noise_support is None:
        return None
    lo, hi = (float(v) for v in noise_support)
    if not lo <= hi:
        raise ValueError(f"empty noise support [{lo}, {hi}]")
    return (lo, hi)


def build_model(name: str, n: int = 1, noise_support=None) -> ControlModel:
    if name == "single_qubit":
        if n != 1:
            raise ValueError("single_qubit has N = 1")
        if noise_support is not None:
            raise ValueError("single_qubit has no Hamiltonian noise")
        return build_single_qubit()
    if name == "multi_qubit_I":
        return build_multi_qubit_I(n, noise_support)
    if name == "multi_qubit_II":
        return build_multi_qubit_II(n, noise_support)
    raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


# ---------------------------------------------------------------------------
# propagation


def _apply(w: np.ndarray, c: np.ndarray) -> np.ndarray:
    # w is either a shared (D, D) matrix stored transposed, or a (B, D, D) stack
    if w.ndim == 2:
        return c @ w
    return np.matmul(w, c[..., None])[..., 0]


def _phase(t: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return np.exp(-1j * (t[:, None] * lam))


def _propagate(x, c0, lam0, lam1, w01, w10, target):
    """Fidelities for a batch of protocols ``x`` of shape ``(B, 2p)``.

    Amplitudes live in the eigenbasis of whichever generator acts next; ``w01``
    and ``w10`` change basis between them. Shared spectra come as 1-D/2-D
    arrays (matrices pre-transposed), per-row spectra as stacks with a leading
    batch axis.
    """
    p = x.shape[1] // 2
    c = np.broadcast_to(c0, (x.shape[0], c0.shape[-1])) * _phase(x[:, 0], lam0)
    for i in range(p):
        if i:
            c = _apply(w10, c) * _phase(x[:, 2 * i], lam0)
        c = _apply(w01, c) * _phase(x[:, 2 * i + 1], lam1)
    amp = np.einsum("...d,...d->...", np.conj(target), c)
    return np.clip(amp.real**2 + amp.imag**2, 0.0, 1.0)


def _shared_kernel(model: ControlModel, h0: HermitianOperator, h1: HermitianOperator):
    lam0, v0 = h0.eigh()
    lam1, v1 = h1.eigh()
    c0 = v0.conj().T @ model.psi_initial.amplitudes
    target = v1.conj().T @ model.psi_target.amplitudes
    w01 = np.ascontiguousarray((v1.conj().T @ v0).T)
    w10 = np.ascontiguousarray((v0.conj().T @ v1).T)
    return c0, lam0, lam1, w01, w10, target


def _batched_eigh(base: HermitianOperator, noise: np.ndarray, deltas: np.ndarray):
    if noise.shape[0] == 0 or not np.any(noise):
        lam, v = base.eigh()
        return lam, v, False
    mats = base.matrix + np.einsum("bk,kij->bij", deltas, noise)
    lam, v = np.linalg.eigh(mats)
    return lam, v, True


def _noisy_kernel(model: ControlModel, deltas: np.ndarray):
    lam0, v0, b0 = _batched_eigh(model.h0, model.h0_noise, deltas)
    lam1, v1, b1 = _batched_eigh(model.h1, model.h1_noise, deltas)
    dag = lambda v: np.conj(np.swapaxes(v, -1, -2))  # noqa: E731
    c0 = dag(v0) @ model.psi_initial.amplitudes
    target = dag(v1) @ model.psi_target.amplitudes
    w01 = dag(v1) @ v0
    w10 = dag(v0) @ v1
    if not (b0 or b1):
        w01, w10 = w01.T.copy(), w10.T.copy()
    else:
        b = deltas.shape[0]
        w01 = np.broadcast_to(w01, (b,) + w01.shape[-2:])
        w10 = np.broadcast_to(w10, (b,) + w10.shape[-2:])
    return c0, lam0, lam1, w01, w10, target


def batch_fidelity(model: ControlModel, x, deltas=None) -> np.ndarray:
    """Exact fidelities of a protocol batch ``x`` (shape ``(B, 2p)``).

    ``deltas`` is ``None`` (noise-free), a single noise tuple shared by all
    rows, or an array ``(B, noise_dim)`` giving one tuple per row. Rows are
    evaluated in fixed-size chunks, spread over ``PGQAOA_NUM_THREADS`` threads;
    results do not depend on the thread count.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] % 2:
        raise ValueError("protocols need an even number of durations")
    b = x.shape[0]
    if x.shape[1] == 0:
        return np.full(b, model.initial_overlap())
    per_row = deltas is not None and np.ndim(deltas) == 2
    if per_row:
        deltas = np.asarray(deltas, dtype=float)
        if deltas.shape != (b, model.noise_dim):
            raise ValueError(f"deltas must have shape ({b}, {model.noise_dim})")
        shared = None
    else:
        shared = _shared_kernel(model, *model.hamiltonians(deltas))

    def run(lo: int) -> np.ndarray:
        hi = min(lo + CHUNK_ROWS, b)
        kernel = shared if shared is not None else _noisy_kernel(model, deltas[lo:hi])
        return _propagate(x[lo:hi], *kernel)

    starts = range(0, b, CHUNK_ROWS)
    threads = _num_threads()
    if threads > 1 and b > CHUNK_ROWS:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    out = np.concatenate(parts)
    if per_row:
        # rows with delta exactly zero reuse the noise-free generators bit for bit
        zero = ~deltas.any(axis=1)
        if zero.any():
            out[zero] = batch_fidelity(model, x[zero])
    return out


def protocol_fidelity(model: ControlModel, protocol, delta=None) -> float:
    """Fidelity of one protocol with the target state under noise tuple ``delta``."""
    d = _durations(protocol)
    if delta is not None:
        model._check_delta(delta)
    return float(batch_fidelity(model, d[None, :], delta)[0])


def fidelity_over_deltas(model: ControlModel, protocol, deltas) -> np.ndarray:
    """Fidelity of one protocol for each noise tuple in ``deltas`` (memoized spectra)."""
    d = _durations(protocol)
    deltas = np.asarray(deltas, dtype=float).reshape(-1, model.noise_dim)
    return np.array([protocol_fidelity(model, d, delta) for delta in deltas])


def evolve_protocol(model: ControlModel, protocol, delta=None, substeps: int = 1) -> list[QuantumState]:
    """States along the protocol: the initial state, then ``substeps`` points per pulse."""
    from .qsim import evolve

    h0, h1 = model.hamiltonians(delta)
    d = _durations(protocol)
    states = [model.psi_initial]
    psi = model.psi_initial
    for k, t in enumerate(d):
        h = h0 if k % 2 == 0 else h1
        for _ in range(substeps):
            psi = evolve(psi, h, t / substeps)
            states.append(psi)
    return states
