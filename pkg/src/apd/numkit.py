"""Dense numeric kernel shared by the learning and spectral modules.

Thin, contract-checked wrappers around numpy: seeded Gaussian streams,
cosine similarity, symmetric eigendecomposition with a residual guarantee,
and a central-difference gradient checker used to validate every analytic
gradient in the package.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class EigenError(RuntimeError):
    """Eigendecomposition failed or violated its accuracy contract."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; identical seed gives identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises ValueError for mismatched dimensions or a zero-norm input.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def sym_eigen(a: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns.  Each column has its first
    component of magnitude > 1e-12 made positive so downstream partitions
    are deterministic.  The residual ``max |A v - lambda v|`` is verified
    against ``tol * max(1, ||A||_inf)``; a violation raises EigenError.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within 1e-10 relative")
    try:
        evals, evecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigendecomposition did not converge: {exc}") from exc

    # Sign convention: first component with |v_i| > 1e-12 made positive.
    for j in range(evecs.shape[1]):
        col = evecs[:, j]
        nonzero = np.nonzero(np.abs(col) > 1e-12)[0]
        if nonzero.size and col[nonzero[0]] < 0:
            evecs[:, j] = -col

    norm_inf = max(1.0, float(np.abs(a).sum(axis=1).max(initial=0.0)))
    residual = np.abs(a @ evecs - evecs * evals).max(initial=0.0)
    if residual > tol * norm_inf:
        raise EigenError(
            f"residual {residual:.3e} exceeds {tol:.1e} * {norm_inf:.3e}"
        )
    return evals, evecs


def grad_check(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f`` maps a parameter vector to a scalar; ``grad`` returns its analytic
    gradient at the same point.  Per coordinate the numeric derivative is
    ``(f(p + eps e) - f(p - eps e)) / (2 eps)`` and the relative error is
    ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(grad(params), dtype=np.float64)
    if analytic.shape != params.shape:
        raise ValueError("analytic gradient shape does not match params")
    base = f(params)
    if not np.isfinite(base):
        raise ValueError("objective is not finite at params")
    worst = 0.0
    for i in range(params.size):
        shift = np.zeros_like(params)
        shift.flat[i] = eps
        hi = f(params + shift)
        lo = f(params - shift)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"objective not finite at eps-perturbed coordinate {i}")
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic.flat[i]
        rel = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
        worst = max(worst, rel)
    return worst
