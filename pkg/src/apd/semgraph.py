"""Semantic token graph and its Laplacian spectrum.

Tokens are vertices; edges carry cosine similarity between token
embeddings, clipped to nonnegative weights and sparsified by a threshold.
The unnormalized Laplacian's spectrum yields the algebraic connectivity,
the Fiedler bipartition used for token attribution, and a fixed 16-value
feature vector consumed by the intent classifier.  A subset-enumeration
oracle for the exact conductance constant backs the spectral-bound tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .embed import EmbeddingMatrix
from .numkit import sym_eigen

SPECTRAL_EIGS_DEFAULT = 8


@dataclass
class SemanticGraph:
    """Symmetric weighted adjacency over prompt tokens; zero diagonal."""

    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class SpectralFeatures:
    eigenvalues: np.ndarray  # first K ascending, zero-padded if n < K
    fiedler: np.ndarray
    lambda2: float
    cheeger_lower: float
    cheeger_upper: float
    partition: np.ndarray  # True = nonnegative Fiedler side
    stats: dict[str, float]

    def to_vector(self) -> np.ndarray:
        """Fixed-layout feature vector: K eigenvalues then 8 summary stats."""
        return np.concatenate(
            [
                self.eigenvalues,
                [
                    self.cheeger_lower,
                    self.cheeger_upper,
                    self.stats["fiedler_mean"],
                    self.stats["fiedler_std"],
                    self.stats["positive_fraction"],
                    self.stats["edge_density"],
                    self.stats["mean_degree"],
                    self.stats["n"] / 64.0,
                ],
            ]
        )


def build_graph(embeddings: EmbeddingMatrix, tau: float = 0.3) -> SemanticGraph:
    """Cosine-similarity graph with negative weights clipped to zero.

    Entries below ``tau`` are dropped; the diagonal is zero.  Requires
    every embedding row to have nonzero norm.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    rows = np.asarray(embeddings.rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding row; graph weights undefined")
    unit = rows / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    weights = np.maximum(sim, 0.0)
    weights[weights < tau] = 0.0
    np.fill_diagonal(weights, 0.0)
    # Exact symmetry regardless of BLAS rounding asymmetries.
    weights = (weights + weights.T) / 2.0
    return SemanticGraph(adjacency=weights)


def laplacian(graph: SemanticGraph) -> np.ndarray:
    """Unnormalized Laplacian D - A; rows sum to zero."""
    a = graph.adjacency
    return np.diag(a.sum(axis=1)) - a


def cheeger_bounds(lambda2: float) -> tuple[float, float]:
    """Connectivity bounds (lambda2 / 2, sqrt(2 lambda2)).

    Tiny negative eigenvalues from round-off are clamped to zero.
    """
    if lambda2 < -1e-10:
        raise ValueError(f"lambda2 must be nonnegative, got {lambda2}")
    lambda2 = max(0.0, lambda2)
    return lambda2 / 2.0, float(np.sqrt(2.0 * lambda2))


def spectral_features(graph: SemanticGraph, k_eigs: int = SPECTRAL_EIGS_DEFAULT) -> SpectralFeatures:
    """Eigen-decompose the Laplacian and summarize the spectrum.

    The single-vertex graph degenerates cleanly: all-zero eigenvalues, a
    zero Fiedler vector, and the lone vertex on the nonnegative side.
    """
    n = graph.n
    if n < 1:
        raise ValueError("graph must have at least one vertex")
    if n == 1:
        fiedler = np.zeros(1)
        partition = np.array([True])
        return SpectralFeatures(
            eigenvalues=np.zeros(k_eigs),
            fiedler=fiedler,
            lambda2=0.0,
            cheeger_lower=0.0,
            cheeger_upper=0.0,
            partition=partition,
            stats=_stats(graph, fiedler, partition),
        )
    evals, evecs = sym_eigen(laplacian(graph))
    lambda2 = float(max(0.0, evals[1]))
    padded = np.zeros(k_eigs)
    take = min(k_eigs, n)
    padded[:take] = evals[:take]
    fiedler = evecs[:, 1].copy()
    lower, upper = cheeger_bounds(lambda2)
    # Entries within rounding of zero count as zero and join the
    # nonnegative side, keeping the tie-break deterministic.
    partition = (fiedler > 0.0) | (np.abs(fiedler) <= 1e-12)
    return SpectralFeatures(
        eigenvalues=padded,
        fiedler=fiedler,
        lambda2=lambda2,
        cheeger_lower=lower,
        cheeger_upper=upper,
        partition=partition,
        stats=_stats(graph, fiedler, partition),
    )


def _stats(graph: SemanticGraph, fiedler: np.ndarray, partition: np.ndarray) -> dict[str, float]:
    a = graph.adjacency
    n = graph.n
    possible = n * (n - 1) / 2.0
    n_edges = np.count_nonzero(np.triu(a, k=1))
    return {
        "fiedler_mean": float(fiedler.mean()),
        "fiedler_std": float(fiedler.std()),
        "positive_fraction": float(np.mean(partition)),
        "edge_density": float(n_edges / possible) if possible else 0.0,
        "mean_degree": float(a.sum(axis=1).mean()),
        "n": float(n),
    }


def cheeger_bruteforce(graph: SemanticGraph) -> float:
    """Exact conductance constant by enumerating vertex subsets.

    Minimizes crossing weight over subset size over all nonempty subsets
    of at most half the vertices.  Guarded to n in [2, 20]; returns 0 for
    disconnected graphs.
    """
    n = graph.n
    if not 2 <= n <= 20:
        raise ValueError(f"brute-force enumeration supports 2 <= n <= 20, got {n}")
    a = graph.adjacency
    vertices = range(n)
    best = np.inf
    for size in range(1, n // 2 + 1):
        for subset in combinations(vertices, size):
            rest = [v for v in vertices if v not in subset]
            cut = a[np.ix_(subset, rest)].sum()
            best = min(best, cut / size)
    return float(best)
