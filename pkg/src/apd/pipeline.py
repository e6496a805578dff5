"""End-to-end screening workflow and the evaluation harness.

``screen`` runs embed -> pool -> posterior mean -> semantic graph ->
intent classifier.  When the verdict is adversarial the Fiedler partition
splits the tokens into two sides, each side is re-scored in isolation,
and the side that looks worse is removed or masked; the sanitized text is
then re-screened up to the policy's round budget.  ``evaluate`` reports
detection recall, false-positive rate, a trigger-elimination rate, and
latency percentiles over a labeled test set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aid import AidConfig, AidParams, aid_forward, featurize
from .core import Prompt, LabeledExample, tokenize
from .embed import EmbedderConfig, embed_tokens, pool
from .semgraph import build_graph, spectral_features, SpectralFeatures
from .vae import VaeConfig, VaeParams, encode


@dataclass
class SanitizePolicy:
    mode: str = "remove"  # "remove" or "mask"
    mask_token: str = "[FILTERED]"
    max_rounds: int = 2

    def __post_init__(self) -> None:
        if self.mode not in ("remove", "mask"):
            raise ValueError(f"unknown sanitize mode {self.mode!r}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class ModelBundle:
    """Immutable set of trained models plus the knobs they were built with."""

    embedder: EmbedderConfig
    vae_params: VaeParams
    vae_config: VaeConfig
    aid_params: AidParams
    aid_config: AidConfig
    tau: float = 0.3
    k_eigs: int = 8
    policy: SanitizePolicy = field(default_factory=SanitizePolicy)

    def __post_init__(self) -> None:
        if self.embedder.kind == "hash" and self.embedder.dim != self.vae_config.d_in:
            raise ValueError(
                f"embedder dim {self.embedder.dim} != vae input dim {self.vae_config.d_in}"
            )
        if self.aid_config.latent_dim != self.vae_config.k:
            raise ValueError(
                f"classifier latent dim {self.aid_config.latent_dim} != vae k {self.vae_config.k}"
            )
        if self.aid_config.spectral_dim != self.k_eigs + 8:
            raise ValueError(
                f"classifier spectral dim {self.aid_config.spectral_dim} != {self.k_eigs} + 8"
            )


@dataclass
class ScreenResult:
    adversarial: bool
    score: float
    flagged_tokens: set[int]
    sanitized_text: str | None
    rounds: int
    latency_ms: float
    fully_filtered: bool = False

    def to_json_dict(self, prompt_tokens: list[str]) -> dict:
        """Wire representation; flagged positions become token strings."""
        return {
            "adversarial": self.adversarial,
            "score": self.score,
            "flagged_tokens": [prompt_tokens[i] for i in sorted(self.flagged_tokens)],
            "sanitized_text": self.sanitized_text,
            "latency_ms": self.latency_ms,
        }


@dataclass
class MetricsReport:
    ada: float
    fpr: float
    hor: float | None
    latency_median_ms: float
    latency_p95_ms: float
    n_benign: int
    n_adversarial: int

    def to_json_dict(self) -> dict:
        return {
            "ada": self.ada,
            "fpr": self.fpr,
            "hor": self.hor,
            "latency_ms": {"median": self.latency_median_ms, "p95": self.latency_p95_ms},
            "counts": {"benign": self.n_benign, "adversarial": self.n_adversarial},
        }


class StageError(RuntimeError):
    """Failure inside one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def extract_features(
    tokens: list[str],
    embedder: EmbedderConfig,
    vae_params: VaeParams,
    vae_config: VaeConfig,
    tau: float,
    k_eigs: int,
) -> tuple[np.ndarray, SpectralFeatures]:
    """Steps 1-3 for one token list: posterior mean plus spectral features.

    Inference uses the posterior mean, never a noise sample, so repeated
    calls are identical.
    """
    try:
        emb = embed_tokens(tokens, embedder)
    except Exception as exc:
        raise StageError("embed", exc) from exc
    try:
        latent = encode(pool(emb), vae_params, vae_config)
    except Exception as exc:
        raise StageError("encode", exc) from exc
    try:
        graph = build_graph(emb, tau=tau)
        spectral = spectral_features(graph, k_eigs=k_eigs)
    except Exception as exc:
        raise StageError("graph", exc) from exc
    return latent.mu, spectral


def _score_tokens(tokens: list[str], bundle: ModelBundle) -> tuple[float, SpectralFeatures]:
    """Steps 1-4 for one token list: embeddings to adversarial probability."""
    mu, spectral = extract_features(
        tokens, bundle.embedder, bundle.vae_params, bundle.vae_config,
        bundle.tau, bundle.k_eigs,
    )
    try:
        features = featurize(mu, spectral.to_vector(), bundle.aid_config)
        score = aid_forward(features, bundle.aid_params, bundle.aid_config)
    except Exception as exc:
        raise StageError("classify", exc) from exc
    return score, spectral


def attribute(tokens: list[str], spectral: SpectralFeatures, bundle: ModelBundle) -> set[int]:
    """Token positions on the worse-scoring side of the Fiedler bipartition.

    Each side is re-scored in isolation; ties go to the smaller side, then
    to the side holding the lexicographically smallest token.  A single
    token flags itself.  When the spectral partition is one-sided (a
    disconnected or edgeless graph gives a degenerate second eigenvector),
    tokens are split by alternating position instead, so the re-scoring
    rounds can still home in on the offending tokens.
    """
    n = len(tokens)
    if n == 1:
        return {0}
    side_a = [i for i in range(n) if spectral.partition[i]]
    side_b = [i for i in range(n) if not spectral.partition[i]]
    if not side_a or not side_b:
        side_a = list(range(0, n, 2))
        side_b = list(range(1, n, 2))
    score_a, _ = _score_tokens([tokens[i] for i in side_a], bundle)
    score_b, _ = _score_tokens([tokens[i] for i in side_b], bundle)
    if abs(score_a - score_b) > 1e-9:
        return set(side_a) if score_a > score_b else set(side_b)
    if len(side_a) != len(side_b):
        return set(side_a) if len(side_a) < len(side_b) else set(side_b)
    min_a = min(tokens[i] for i in side_a)
    min_b = min(tokens[i] for i in side_b)
    return set(side_a) if min_a <= min_b else set(side_b)


def sanitize(tokens: list[str], flagged: set[int], policy: SanitizePolicy) -> str:
    """Drop or mask the flagged tokens and rejoin with single spaces."""
    if not flagged.issubset(range(len(tokens))):
        raise ValueError("flagged positions outside the prompt")
    if policy.mode == "remove":
        kept = [t for i, t in enumerate(tokens) if i not in flagged]
        return " ".join(kept)
    masked = [policy.mask_token if i in flagged else t for i, t in enumerate(tokens)]
    return " ".join(masked)


def screen(prompt: Prompt, bundle: ModelBundle) -> ScreenResult:
    """Run the five-step workflow on one prompt.

    The verdict and score describe the incoming prompt (first round);
    sanitized_text, the cumulative flagged set, and the round count
    describe the end state after up to ``max_rounds`` screen passes.
    Every adversarial pass triggers a sanitization.
    """
    if not prompt.tokens:
        raise ValueError("empty prompt")
    start = time.perf_counter()
    policy = bundle.policy
    tokens = list(prompt.tokens)
    origin = list(range(len(tokens)))  # current position -> original position
    flagged_all: set[int] = set()
    first_score: float | None = None
    sanitized: str | None = None
    fully_filtered = False
    rounds = 0

    while True:
        rounds += 1
        score, spectral = _score_tokens(tokens, bundle)
        if first_score is None:
            first_score = score
        if score < bundle.aid_config.threshold:
            break
        flagged_local = attribute(tokens, spectral, bundle)
        flagged_all.update(origin[i] for i in flagged_local)
        sanitized = sanitize(tokens, flagged_local, policy)
        if policy.mode == "remove":
            kept = [i for i in range(len(tokens)) if i not in flagged_local]
            tokens = [tokens[i] for i in kept]
            origin = [origin[i] for i in kept]
        else:
            tokens = [
                policy.mask_token if i in flagged_local else t
                for i, t in enumerate(tokens)
            ]
        if not tokens:
            fully_filtered = True
            break
        if rounds >= policy.max_rounds:
            break

    latency_ms = (time.perf_counter() - start) * 1000.0
    adversarial = first_score >= bundle.aid_config.threshold
    return ScreenResult(
        adversarial=adversarial,
        score=float(first_score),
        flagged_tokens=flagged_all,
        sanitized_text=sanitized,
        rounds=rounds,
        latency_ms=latency_ms,
        fully_filtered=fully_filtered,
    )


def evaluate(
    test: list[LabeledExample],
    bundle: ModelBundle,
    trigger_vocab: list[str] | None = None,
) -> MetricsReport:
    """Detection metrics over a labeled test set.

    ADA is recall on the adversarial class and FPR the flag rate on the
    benign class; both require their class to be present.  When a trigger
    vocabulary is supplied, HOR is the fraction of adversarial examples
    whose final text contains no trigger-vocabulary token.
    """
    n_benign = sum(1 for ex in test if ex.label == 0)
    n_adv = sum(1 for ex in test if ex.label == 1)
    if n_adv == 0:
        raise ValueError("no adversarial examples: detection recall undefined")
    if n_benign == 0:
        raise ValueError("no benign examples: false-positive rate undefined")

    triggers = set(trigger_vocab) if trigger_vocab is not None else None
    flagged_adv = 0
    flagged_benign = 0
    detriggered = 0
    latencies: list[float] = []
    for ex in test:
        result = screen(ex.prompt, bundle)
        latencies.append(result.latency_ms)
        if ex.label == 1:
            flagged_adv += result.adversarial
            if triggers is not None:
                final_text = (
                    result.sanitized_text
                    if result.sanitized_text is not None
                    else ex.prompt.text
                )
                if not triggers.intersection(tokenize(final_text)):
                    detriggered += 1
        else:
            flagged_benign += result.adversarial

    return MetricsReport(
        ada=flagged_adv / n_adv,
        fpr=flagged_benign / n_benign,
        hor=(detriggered / n_adv) if triggers is not None else None,
        latency_median_ms=float(np.median(latencies)),
        latency_p95_ms=float(np.percentile(latencies, 95)),
        n_benign=n_benign,
        n_adversarial=n_adv,
    )
