"""Fit the full model stack from a labeled corpus.

Pools every prompt through the configured embedder, trains the
autoencoder on the pooled vectors, extracts (posterior mean, spectral)
features with the frozen autoencoder, then trains the intent classifier
— optionally distilling it from a larger teacher.  All seeds derive from
the config seed, so a rerun reproduces the same bundle bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .aid import AidParams, distill_aid, train_aid
from .archive import component_configs, make_bundle
from .config import AppConfig
from .core import LabeledExample
from .embed import EmbedderConfig, embed_tokens, pool
from .pipeline import ModelBundle, extract_features
from .vae import TrainHyper, VaeConfig, VaeParams, train_vae

logger = logging.getLogger("apd.train")


@dataclass
class TrainReport:
    bundle: ModelBundle
    vae_params: VaeParams
    aid_params: AidParams
    vae_epoch_loss: list[float]
    aid_epoch_loss: list[float]
    teacher_epoch_loss: list[float] | None


def pooled_vectors(examples: list[LabeledExample], embedder: EmbedderConfig) -> np.ndarray:
    return np.stack([pool(embed_tokens(ex.prompt.tokens, embedder)) for ex in examples])


def feature_matrices(
    examples: list[LabeledExample],
    embedder: EmbedderConfig,
    vae_params: VaeParams,
    vae_config: VaeConfig,
    tau: float,
    k_eigs: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(latent, spectral, labels) matrices for classifier training."""
    latents = []
    spectrals = []
    labels = []
    for ex in examples:
        mu, spectral = extract_features(
            ex.prompt.tokens, embedder, vae_params, vae_config, tau, k_eigs
        )
        latents.append(mu)
        spectrals.append(spectral.to_vector())
        labels.append(ex.label)
    return np.stack(latents), np.stack(spectrals), np.asarray(labels, dtype=np.float64)


def train_bundle(examples: list[LabeledExample], cfg: AppConfig) -> TrainReport:
    """Train autoencoder and classifier per the config; return the bundle."""
    if not examples:
        raise ValueError("training corpus is empty")
    embedder, vae_config, aid_config, teacher_config, _ = component_configs(cfg)

    logger.info("pooling %d prompts through %s embedder", len(examples), embedder.kind)
    pooled = pooled_vectors(examples, embedder)

    vae_hyper = TrainHyper(
        lr=cfg.vae.lr, epochs=cfg.vae.epochs, batch=cfg.vae.batch, seed=cfg.seed
    )
    logger.info("training autoencoder: %d epochs on %d vectors", vae_hyper.epochs, len(pooled))
    vae_params, vae_hist = train_vae(pooled, vae_config, vae_hyper)

    latent, spectral, labels = feature_matrices(
        examples, embedder, vae_params, vae_config, cfg.graph.tau, cfg.graph.k_eigs
    )

    # Momentum smooths the class-composition noise in the small-batch BCE
    # gradient; without it the verdict bias oscillates for hundreds of
    # epochs before the feature pathways catch up.
    aid_hyper = TrainHyper(
        lr=cfg.aid.lr, epochs=cfg.aid.epochs, batch=cfg.aid.batch,
        seed=cfg.seed + 1, momentum=0.9,
    )
    teacher_hist = None
    if cfg.distill.enabled:
        teacher_hyper = TrainHyper(
            lr=cfg.aid.lr, epochs=cfg.aid.epochs, batch=cfg.aid.batch,
            seed=cfg.seed + 2, momentum=0.9,
        )
        logger.info("training distillation teacher (%d layers, %d hidden)",
                    teacher_config.layers, teacher_config.hidden)
        teacher, teacher_hist = train_aid(latent, spectral, labels, teacher_config, teacher_hyper)
        logger.info("distilling student (T=%.2f, alpha=%.2f)",
                    cfg.distill.temperature, cfg.distill.alpha)
        aid_params, aid_hist = distill_aid(
            teacher, teacher_config, aid_config, latent, spectral, labels,
            aid_hyper, temperature=cfg.distill.temperature, alpha=cfg.distill.alpha,
        )
    else:
        logger.info("training classifier: %d epochs on %d examples",
                    aid_hyper.epochs, len(labels))
        aid_params, aid_hist = train_aid(latent, spectral, labels, aid_config, aid_hyper)

    bundle = make_bundle(cfg, vae_params, aid_params)
    return TrainReport(
        bundle=bundle,
        vae_params=vae_params,
        aid_params=aid_params,
        vae_epoch_loss=vae_hist,
        aid_epoch_loss=aid_hist,
        teacher_epoch_loss=teacher_hist,
    )
