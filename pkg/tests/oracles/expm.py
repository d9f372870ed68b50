"""Matrix exponential by Taylor series with scaling and squaring.

Independent of any eigendecomposition, so it checks the spectral propagator.
A degree-18 series on a matrix scaled below norm 1/2 is accurate to roughly
machine precision before squaring.
"""
import numpy as np


def expm_taylor(a, degree: int = 18):
    a = np.asarray(a, dtype=complex)
    norm = np.linalg.norm(a, 1)
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0 else 0
    b = a / 2**s
    term = np.eye(a.shape[0], dtype=complex)
    out = term.copy()
    for k in range(1, degree + 1):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def random_hermitian(dim, rng, scale: float = 1.0):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (m + m.conj().T) / 2
