"""Token embedding providers and pooling.

Two providers feed the rest of the pipeline: a deterministic character
trigram feature hasher usable offline, and a client for a remote embedding
service speaking a small JSON protocol.  Both yield one row per token.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmbeddingServiceError(RuntimeError):
    """Remote embedding request failed; ``reason`` distinguishes the cause."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass
class EmbeddingMatrix:
    """n x d matrix of per-token embeddings."""

    rows: np.ndarray
    provider_id: str

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass
class EmbedderConfig:
    kind: str = "hash"  # "hash" or "remote"
    dim: int = 64
    seed: int = 0
    endpoint: str | None = None
    timeout_ms: int = 5000

    def __post_init__(self) -> None:
        if self.kind not in ("hash", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 8:
            raise ValueError("embedding dim must be >= 8")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote embedder requires an endpoint")


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def embed_hash(tokens: list[str], dim: int = 64, seed: int = 0) -> EmbeddingMatrix:
    """Character-trigram feature hashing, one unit-norm row per token.

    Each token is padded to ``^token$`` and its trigrams are hashed with
    64-bit FNV-1a XORed with the seed; the hash picks a bucket (mod dim)
    and a sign (bit 63).  Near-identical tokens therefore land near each
    other, which is what lets obfuscated variants stay detectable.
    """
    if not tokens:
        raise ValueError("cannot embed an empty token list")
    seed64 = seed & _MASK64
    rows = np.zeros((len(tokens), dim), dtype=np.float64)
    cache: dict[str, np.ndarray] = {}
    for i, token in enumerate(tokens):
        cached = cache.get(token)
        if cached is not None:
            rows[i] = cached
            continue
        padded = f"^{token}$"
        row = np.zeros(dim, dtype=np.float64)
        for j in range(len(padded) - 2):
            h = _fnv1a64(padded[j : j + 3].encode("utf-8")) ^ seed64
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            row[h % dim] += sign
        norm = np.linalg.norm(row)
        if norm == 0.0:
            # All trigrams cancelled (vanishingly rare); fall back to a
            # whole-token bucket so the row still has unit norm.
            row[(_fnv1a64(padded.encode("utf-8")) ^ seed64) % dim] = 1.0
            norm = 1.0
        row /= norm
        cache[token] = row
        rows[i] = row
    return EmbeddingMatrix(rows=rows, provider_id=f"hash:d{dim}:s{seed}")


def embed_remote(tokens: list[str], config: EmbedderConfig) -> EmbeddingMatrix:
    """POST tokens to the embedding service and validate the response.

    Protocol: request ``{"tokens": [...]}``, response
    ``{"dim": D, "vectors": [[...], ...]}`` with one vector per token.
    Rows are taken as served, without re-normalization.
    """
    if not tokens:
        raise ValueError("cannot embed an empty token list")
    body = json.dumps({"tokens": tokens}).encode("utf-8")
    request = urllib.request.Request(
        config.endpoint,
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=config.timeout_ms / 1000.0) as resp:
            payload = resp.read()
            status = resp.status
    except urllib.error.HTTPError as exc:
        raise EmbeddingServiceError(
            "status", f"embedding service returned status {exc.code}"
        ) from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError):
            raise EmbeddingServiceError("timeout", "embedding service timed out") from exc
        raise EmbeddingServiceError(
            "unreachable", f"embedding service unreachable: {exc.reason}"
        ) from exc
    except TimeoutError as exc:
        raise EmbeddingServiceError("timeout", "embedding service timed out") from exc

    if status != 200:
        raise EmbeddingServiceError("status", f"embedding service returned status {status}")
    try:
        data = json.loads(payload)
        dim = int(data["dim"])
        vectors = data["vectors"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise EmbeddingServiceError("protocol", f"malformed service response: {exc}") from exc
    if len(vectors) != len(tokens):
        raise EmbeddingServiceError(
            "count_mismatch",
            f"vector count mismatch: {len(vectors)} vectors for {len(tokens)} tokens",
        )
    rows = np.zeros((len(tokens), dim), dtype=np.float64)
    for i, vec in enumerate(vectors):
        if len(vec) != dim:
            raise EmbeddingServiceError(
                "dim_mismatch", f"vector {i} has dim {len(vec)}, expected {dim}"
            )
        rows[i] = vec
    return EmbeddingMatrix(rows=rows, provider_id=f"remote:{config.endpoint}")


def embed_tokens(tokens: list[str], config: EmbedderConfig) -> EmbeddingMatrix:
    """Dispatch to the provider selected by the config."""
    if config.kind == "hash":
        return embed_hash(tokens, dim=config.dim, seed=config.seed)
    return embed_remote(tokens, config)


def pool(matrix: EmbeddingMatrix) -> np.ndarray:
    """Arithmetic mean over token rows; permutation-invariant."""
    if matrix.n == 0:
        raise ValueError("cannot pool an empty embedding matrix")
    return matrix.rows.mean(axis=0)
