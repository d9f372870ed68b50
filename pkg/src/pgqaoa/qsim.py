"""Dense statevector kernel.

Pauli operators are assembled with Kronecker products, site 1 being the
leftmost (most significant) tensor factor. The sign convention is
``sigma_z |0> = +|0>``.

Time evolution goes through a cached eigendecomposition of each Hermitian
operator, ``exp(-iHt) psi = V exp(-i Lambda t) V^dagger psi``.
"""
from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-12
DEGENERACY_TOL = 1e-9


class DegenerateGroundStateError(ValueError):
    """The lowest eigenvalue is (numerically) degenerate."""


def _num_qubits_for(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim < 2 or 1 << n != dim:
        raise ValueError(f"dimension {dim} is not a power of two >= 2")
    return n


class QuantumState:
    """Normalized amplitude vector of an ``N``-qubit register."""

    __slots__ = ("_amplitudes", "num_qubits")

    def __init__(self, amplitudes, num_qubits: int | None = None, *, normalize: bool = False):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        n = _num_qubits_for(amps.size)
        if num_qubits is not None and num_qubits != n:
            raise ValueError(f"{amps.size} amplitudes do not describe {num_qubits} qubits")
        norm = np.linalg.norm(amps)
        if normalize:
            if norm == 0:
                raise ValueError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm!r} deviates from 1")
        amps.setflags(write=False)
        self._amplitudes = amps
        self.num_qubits = n

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amplitudes

    @property
    def dim(self) -> int:
        return self._amplitudes.size

    @classmethod
    def basis(cls, bits: str | Sequence[int]) -> "QuantumState":
        """Computational basis state, e.g. ``basis("100")`` for |1>|0>|0>."""
        bits = [int(b) for b in bits]
        if any(b not in (0, 1) for b in bits):
            raise ValueError("bits must be 0 or 1")
        index = int("".join(map(str, bits)), 2)
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self._amplitudes))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._amplitudes, dtype=dtype)

    def __repr__(self) -> str:
        return f"QuantumState(num_qubits={self.num_qubits})"


class HermitianOperator:
    """Dense Hermitian matrix with a lazily computed, cached spectrum."""

    def __init__(self, matrix, *, check: bool = True):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator must be a square matrix")
        self.num_qubits = _num_qubits_for(m.shape[0])
        if check and not np.allclose(m, m.conj().T, rtol=0.0, atol=HERMITIAN_TOL):
            raise ValueError("matrix is not Hermitian")
        m.setflags(write=False)
        self._matrix = m
        self._spectrum: tuple[np.ndarray, np.ndarray] | None = None
        self._lock = threading.Lock()

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(eigenvalues, eigenvectors)``, computed once."""
        if self._spectrum is None:
            with self._lock:
                if self._spectrum is None:
                    w, v = np.linalg.eigh(self._matrix)
                    w.setflags(write=False)
                    v.setflags(write=False)
                    self._spectrum = (w, v)
        return self._spectrum

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigh()[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.eigh()[1]

    def propagator(self, t: float) -> np.ndarray:
        w, v = self.eigh()
        return (v * np.exp(-1j * w * t)) @ v.conj().T

    def __add__(self, other):
        if isinstance(other, HermitianOperator):
            return HermitianOperator(self._matrix + other._matrix, check=False)
        if np.isscalar(other) and np.isreal(other):
            return HermitianOperator(self._matrix + float(other) * np.eye(self.dim), check=False)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        if np.isscalar(c) and np.isreal(c):
            return HermitianOperator(float(c) * self._matrix, check=False)
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"HermitianOperator(num_qubits={self.num_qubits})"


def pauli_operator(
    factors: Iterable[tuple[int, str]], coefficient: float = 1.0, num_qubits: int = 1
) -> HermitianOperator:
    """``coefficient`` times a Pauli string acting on 1-based ``sites``.

    >>> pauli_operator([(1, "z"), (2, "z")], -1.0, 2).matrix.diagonal().real
    array([-1.,  1.,  1., -1.])
    """
    if num_qubits < 1:
        raise ValueError("num_qubits must be positive")
    ops = ["i"] * num_qubits
    seen = set()
    for site, axis in factors:
        axis = axis.lower()
        if axis not in ("x", "y", "z"):
            raise ValueError(f"unknown Pauli axis {axis!r}")
        if not 1 <= site <= num_qubits:
            raise ValueError(f"site {site} outside 1..{num_qubits}")
        if site in seen:
            raise ValueError(f"site {site} repeated in Pauli string")
        seen.add(site)
        ops[site - 1] = axis
    out = np.array([[1.0 + 0j]])
    for axis in ops:
        out = np.kron(out, PAULI[axis])
    return HermitianOperator(float(coefficient) * out, check=False)


def evolve(state: QuantumState, H: HermitianOperator, t: float) -> QuantumState:
    """Apply ``exp(-i H t)`` to ``state``. Negative ``t`` evolves backwards."""
    if state.dim != H.dim:
        raise ValueError(f"state dimension {state.dim} does not match operator {H.dim}")
    w, v = H.eigh()
    out = v @ (np.exp(-1j * w * t) * (v.conj().T @ state.amplitudes))
    return QuantumState(out)


def fidelity(a: QuantumState, b: QuantumState) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(max(f, 0.0), 1.0))


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the first largest-magnitude entry is real positive."""
    mag = np.abs(v)
    k = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
    out = v * (abs(v[k]) / v[k])
    out[k] = abs(v[k])
    return out


def ground_state(H: HermitianOperator, degeneracy_tol: float = DEGENERACY_TOL) -> QuantumState:
    w, v = H.eigh()
    if w.size > 1 and w[1] - w[0] <= degeneracy_tol:
        raise DegenerateGroundStateError(
            f"ground energy {w[0]:.12g} is degenerate (gap {w[1] - w[0]:.3g})"
        )
    return QuantumState(fix_phase(v[:, 0]), normalize=True)


def expectation(state: QuantumState, H: HermitianOperator) -> float:
    return float(np.vdot(state.amplitudes, H.matrix @ state.amplitudes).real)


def bloch_coordinates(state: QuantumState) -> tuple[float, float, float]:
    """Bloch vector ``(<sx>, <sy>, <sz>)`` of a single-qubit pure state."""
    if state.num_qubits != 1:
        raise ValueError("Bloch coordinates are defined for one qubit only")
    a, b = state.amplitudes
    cross = np.conj(a) * b
    return (float(2 * cross.real), float(2 * cross.imag), float(abs(a) ** 2 - abs(b) ** 2))
