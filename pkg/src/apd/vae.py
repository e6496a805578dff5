"""Variational autoencoder over pooled prompt embeddings.

A single-hidden-layer tanh encoder produces a diagonal-Gaussian posterior
whose latent is split into two halves; the loss is mean-squared
reconstruction plus a beta-weighted closed-form KL against a standard
normal prior.  Gradients are hand-derived and validated against central
differences, and training is plain seeded mini-batch SGD so repeated runs
are bit-identical.  A Gaussian plug-in estimator of the mutual
information between the two latent halves serves as the disentanglement
diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import make_rng

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class VaeConfig:
    d_in: int
    hidden: int = 128
    k: int = 128
    split: int | None = None  # default k // 2
    beta: float = 0.5

    def __post_init__(self) -> None:
        if self.split is None:
            self.split = self.k // 2
        if not 0 < self.split < self.k:
            raise ValueError(f"split must be in (0, k), got {self.split}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


VAE_TENSOR_NAMES = [
    "enc_w", "enc_b", "mu_w", "mu_b", "lv_w", "lv_b",
    "dec_w1", "dec_b1", "dec_w2", "dec_b2",
]


@dataclass
class VaeParams:
    """Weights for the encoder, the two posterior heads, and the decoder."""

    enc_w: np.ndarray
    enc_b: np.ndarray
    mu_w: np.ndarray
    mu_b: np.ndarray
    lv_w: np.ndarray
    lv_b: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray

    def names(self) -> list[str]:
        return list(VAE_TENSOR_NAMES)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def copy(self) -> "VaeParams":
        return VaeParams(**{k: v.copy() for k, v in self.as_dict().items()})


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    split: int

    @property
    def z_a(self) -> np.ndarray:
        return self.z[..., : self.split]

    @property
    def z_b(self) -> np.ndarray:
        return self.z[..., self.split :]


def tensor_shapes(config: VaeConfig) -> dict[str, tuple[int, ...]]:
    d, h, k = config.d_in, config.hidden, config.k
    return {
        "enc_w": (d, h), "enc_b": (h,),
        "mu_w": (h, k), "mu_b": (k,),
        "lv_w": (h, k), "lv_b": (k,),
        "dec_w1": (k, h), "dec_b1": (h,),
        "dec_w2": (h, d), "dec_b2": (d,),
    }


def init_params(config: VaeConfig, seed: int) -> VaeParams:
    rng = make_rng(seed)

    def dense(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    return VaeParams(
        enc_w=dense(config.d_in, config.hidden),
        enc_b=np.zeros(config.hidden),
        mu_w=dense(config.hidden, config.k),
        mu_b=np.zeros(config.k),
        lv_w=dense(config.hidden, config.k),
        lv_b=np.zeros(config.k),
        dec_w1=dense(config.k, config.hidden),
        dec_b1=np.zeros(config.hidden),
        dec_w2=dense(config.hidden, config.d_in),
        dec_b2=np.zeros(config.d_in),
    )


def kl_diag_gauss(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Closed-form KL(N(mu, diag e^logvar) || N(0, I)), summed over dims."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.clip(np.asarray(logvar, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
    return float(0.5 * np.sum(mu**2 + np.exp(logvar) - logvar - 1.0))


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps, elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.clip(np.asarray(logvar, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ValueError("mu, logvar, eps must share a shape")
    return mu + np.exp(logvar / 2.0) * eps


def encode(x: np.ndarray, params: VaeParams, config: VaeConfig,
           eps: np.ndarray | None = None) -> LatentCode:
    """Posterior for a single pooled vector; eps=None keeps z at the mean."""
    x = np.asarray(x, dtype=np.float64)
    h = np.tanh(x @ params.enc_w + params.enc_b)
    mu = h @ params.mu_w + params.mu_b
    logvar = np.clip(h @ params.lv_w + params.lv_b, LOGVAR_MIN, LOGVAR_MAX)
    if eps is None:
        eps = np.zeros_like(mu)
    z = reparameterize(mu, logvar, eps)
    return LatentCode(mu=mu, logvar=logvar, z=z, split=int(config.split))


def _forward(x: np.ndarray, params: VaeParams, config: VaeConfig, eps: np.ndarray):
    """Batched forward pass; returns losses plus the cache for backprop."""
    h = np.tanh(x @ params.enc_w + params.enc_b)
    mu = h @ params.mu_w + params.mu_b
    lv_raw = h @ params.lv_w + params.lv_b
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    z = mu + np.exp(lv / 2.0) * eps
    hd = np.tanh(z @ params.dec_w1 + params.dec_b1)
    xhat = hd @ params.dec_w2 + params.dec_b2
    d_in = x.shape[1]
    recon = float(np.mean(np.sum((x - xhat) ** 2, axis=1) / d_in))
    kl = float(np.mean(0.5 * np.sum(mu**2 + np.exp(lv) - lv - 1.0, axis=1)))
    loss = recon + config.beta * kl
    cache = (x, h, mu, lv_raw, lv, z, hd, xhat)
    return loss, recon, kl, cache


def vae_loss(
    x: np.ndarray, params: VaeParams, config: VaeConfig, eps: np.ndarray
) -> tuple[float, float, float]:
    """(loss, recon, kl) for one pooled vector or a batch of them.

    recon is mean squared error per input dimension (unit-variance
    Gaussian decoder); loss = recon + beta * kl.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    loss, recon, kl, _ = _forward(x, params, config, eps)
    if not np.isfinite(loss):
        raise DivergenceError("vae loss is not finite")
    return loss, recon, kl


def vae_grad(
    x: np.ndarray, params: VaeParams, config: VaeConfig, eps: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic parameter gradients for a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    loss, _, _, cache = _forward(x, params, config, eps)
    xb, h, mu, lv_raw, lv, z, hd, xhat = cache
    b, d_in = xb.shape
    beta = config.beta

    dxhat = 2.0 * (xhat - xb) / (d_in * b)
    g_dec_w2 = hd.T @ dxhat
    g_dec_b2 = dxhat.sum(axis=0)
    dhd = dxhat @ params.dec_w2.T
    da_d = dhd * (1.0 - hd**2)
    g_dec_w1 = z.T @ da_d
    g_dec_b1 = da_d.sum(axis=0)
    dz = da_d @ params.dec_w1.T

    sigma = np.exp(lv / 2.0)
    dmu = dz + beta * mu / b
    dlv = dz * eps * 0.5 * sigma + beta * 0.5 * (np.exp(lv) - 1.0) / b
    # Clamp is flat outside its range: no gradient flows there.
    dlv_raw = dlv * ((lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX))

    g_mu_w = h.T @ dmu
    g_mu_b = dmu.sum(axis=0)
    g_lv_w = h.T @ dlv_raw
    g_lv_b = dlv_raw.sum(axis=0)
    dh = dmu @ params.mu_w.T + dlv_raw @ params.lv_w.T
    da_e = dh * (1.0 - h**2)
    g_enc_w = xb.T @ da_e
    g_enc_b = da_e.sum(axis=0)

    grads = {
        "enc_w": g_enc_w, "enc_b": g_enc_b,
        "mu_w": g_mu_w, "mu_b": g_mu_b,
        "lv_w": g_lv_w, "lv_b": g_lv_b,
        "dec_w1": g_dec_w1, "dec_b1": g_dec_b1,
        "dec_w2": g_dec_w2, "dec_b2": g_dec_b2,
    }
    return loss, grads


@dataclass
class TrainHyper:
    lr: float = 0.05
    epochs: int = 50
    batch: int = 32
    seed: int = 0
    momentum: float = 0.0  # autoencoder training stays plain SGD


def train_vae(
    x: np.ndarray, config: VaeConfig, hyper: TrainHyper
) -> tuple[VaeParams, list[float]]:
    """Seeded mini-batch SGD on the mean loss; returns params and epoch losses.

    One fresh noise draw per example per step.  Deterministic for a given
    seed; a non-finite loss aborts with the offending epoch.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    params = init_params(config, hyper.seed)
    rng = make_rng(hyper.seed + 1)
    n = x.shape[0]
    history: list[float] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            batch = x[idx]
            eps = rng.standard_normal((len(idx), config.k))
            loss, grads = vae_grad(batch, params, config, eps)
            if not np.isfinite(loss):
                raise DivergenceError(f"vae training diverged at epoch {epoch + 1}")
            for name, g in grads.items():
                getattr(params, name)[...] -= hyper.lr * g
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
    return params, history


def estimate_mi(za: np.ndarray, zb: np.ndarray) -> float:
    """Gaussian plug-in mutual information between two sample blocks, in nats.

    I = (ln det Cov_a + ln det Cov_b - ln det Cov_joint) / 2 with each
    covariance regularized by 1e-6 I; clamped at zero.  Requires at least
    10 * (total dims + 1) samples.
    """
    za = np.atleast_2d(np.asarray(za, dtype=np.float64))
    zb = np.atleast_2d(np.asarray(zb, dtype=np.float64))
    if za.ndim != 2 or zb.ndim != 2 or za.shape[0] != zb.shape[0]:
        raise ValueError("sample blocks must be 2-D with matching row counts")
    m = za.shape[0]
    total = za.shape[1] + zb.shape[1]
    if m < 10 * (total + 1):
        raise ValueError(f"need at least {10 * (total + 1)} samples, got {m}")

    def logdet_cov(block: np.ndarray) -> float:
        cov = np.atleast_2d(np.cov(block, rowvar=False))
        cov = cov + 1e-6 * np.eye(cov.shape[0])
        sign, value = np.linalg.slogdet(cov)
        if sign <= 0:
            raise ValueError("regularized covariance is not positive definite")
        return float(value)

    joint = np.concatenate([za, zb], axis=1)
    mi = 0.5 * (logdet_cov(za) + logdet_cov(zb) - logdet_cov(joint))
    return max(0.0, mi)
