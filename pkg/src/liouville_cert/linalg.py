"""Dense complex linear-algebra primitives.

Conventions used everywhere in the package:

* operators on the joint space are laid out as ``H = H_E (x) H_S`` with the
  environment as the *left* Kronecker factor;
* vectorization stacks columns, so ``vec(A X B) = (B^T (x) A) vec(X)``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "as_matrix",
    "kron",
    "expm",
    "trace_norm",
    "op_norm",
    "partial_trace_env",
    "vec",
    "unvec",
    "is_hermitian",
    "validate_density",
    "DimensionError",
]


class DimensionError(ValueError):
    """Raised when matrix shapes do not fit together."""


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D complex array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def kron(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return np.kron(as_matrix(a), as_matrix(b))


def expm(a) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Padé approximants up to degree 13)."""
    m = as_matrix(a, square=True, name="expm argument")
    return scipy.linalg.expm(m)


def trace_norm(a) -> float:
    """Sum of singular values."""
    m = as_matrix(a, square=True)
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def op_norm(a) -> float:
    """Largest singular value (matrix 2-norm)."""
    m = as_matrix(a)
    if m.size == 0:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[0])


def partial_trace_env(x, dim_env: int, dim_sys: int) -> np.ndarray:
    """Trace out the environment (left) factor of an operator on ``H_E (x) H_S``."""
    m = as_matrix(x, square=True)
    if m.shape[0] != dim_env * dim_sys:
        raise DimensionError(
            f"operator of size {m.shape[0]} does not split as {dim_env} x {dim_sys}"
        )
    return np.einsum("eiej->ij", m.reshape(dim_env, dim_sys, dim_env, dim_sys))


def vec(x) -> np.ndarray:
    """Column-stacking vectorization."""
    m = as_matrix(x)
    return m.reshape(-1, order="F")


def unvec(v, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for a square operator."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise DimensionError(f"vector of length {v.size} is not a vectorized {dim}x{dim} matrix")
    return v.reshape(dim, dim, order="F")


def is_hermitian(a, tol: float = 1e-10) -> bool:
    m = as_matrix(a, square=True)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


def validate_density(rho, *, herm_tol: float = 1e-12, trace_tol: float = 1e-12,
                     psd_tol: float = 1e-10, name: str = "density matrix") -> np.ndarray:
    """Check the density-matrix invariants and return the matrix as an array."""
    m = as_matrix(rho, square=True, name=name)
    if not is_hermitian(m, herm_tol):
        raise ValueError(f"{name} is not Hermitian")
    tr = np.trace(m)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"{name} has trace {tr.real:.3g}, expected 1")
    evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if evals.min() < -psd_tol:
        raise ValueError(f"{name} has negative eigenvalue {evals.min():.3g}")
    return m
