"""Adversarial intent detector.

A two-token transformer encoder: the projected latent vector and the
projected spectral feature vector form the sequence, each offset by a
learned segment embedding.  Pre-norm blocks (multi-head self-attention
plus a tanh feed-forward) feed a mean-pool and a logistic output head.
Forward and backward passes are written out by hand in float64 and are
validated against central differences; training is seeded mini-batch SGD
so runs are reproducible bit for bit.  Distillation trains a student
against a blend of hard labels and a temperature-softened teacher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .numkit import make_rng
from .vae import DivergenceError, TrainHyper

LN_EPS = 1e-5
PROB_CLAMP = 1e-7


@dataclass
class AidConfig:
    latent_dim: int
    spectral_dim: int = 16
    layers: int = 4
    heads: int = 8
    hidden: int = 256
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("need at least one transformer layer")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


@dataclass
class FeatureVector:
    latent: np.ndarray
    spectral: np.ndarray


def featurize(latent: np.ndarray, spectral: np.ndarray, config: AidConfig) -> FeatureVector:
    """Validate dimensions and package the classifier input."""
    latent = np.asarray(latent, dtype=np.float64)
    spectral = np.asarray(spectral, dtype=np.float64)
    if latent.shape != (config.latent_dim,):
        raise ValueError(f"latent dim {latent.shape} != ({config.latent_dim},)")
    if spectral.shape != (config.spectral_dim,):
        raise ValueError(f"spectral dim {spectral.shape} != ({config.spectral_dim},)")
    if not (np.all(np.isfinite(latent)) and np.all(np.isfinite(spectral))):
        raise ValueError("features must be finite")
    return FeatureVector(latent=latent, spectral=spectral)


@dataclass
class AidParams:
    """Named tensors in a fixed order shared with the persistence layer."""

    tensors: dict[str, np.ndarray]

    def copy(self) -> "AidParams":
        return AidParams(tensors={k: v.copy() for k, v in self.tensors.items()})


def _tensor_shapes(config: AidConfig) -> list[tuple[str, tuple[int, ...]]]:
    h, inner = config.hidden, 4 * config.hidden
    # Each projected input is layer-normalized before the segment offset;
    # this keeps the effective scale of both tokens at 1 no matter how
    # small the upstream features are, which plain SGD needs to train the
    # input projections.
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("in_latent_w", (config.latent_dim, h)),
        ("in_latent_b", (h,)),
        ("in_latent_ln_g", (h,)),
        ("in_latent_ln_b", (h,)),
        ("in_spectral_w", (config.spectral_dim, h)),
        ("in_spectral_b", (h,)),
        ("in_spectral_ln_g", (h,)),
        ("in_spectral_ln_b", (h,)),
        ("seg", (2, h)),
    ]
    for i in range(config.layers):
        # No key bias: softmax is invariant to it, so it would be a
        # structurally zero-gradient parameter.
        shapes += [
            (f"l{i}_ln1_g", (h,)), (f"l{i}_ln1_b", (h,)),
            (f"l{i}_wq", (h, h)), (f"l{i}_bq", (h,)),
            (f"l{i}_wk", (h, h)),
            (f"l{i}_wv", (h, h)), (f"l{i}_bv", (h,)),
            (f"l{i}_wo", (h, h)), (f"l{i}_bo", (h,)),
            (f"l{i}_ln2_g", (h,)), (f"l{i}_ln2_b", (h,)),
            (f"l{i}_ffn_w1", (h, inner)), (f"l{i}_ffn_b1", (inner,)),
            (f"l{i}_ffn_w2", (inner, h)), (f"l{i}_ffn_b2", (h,)),
        ]
    shapes += [("ln_f_g", (h,)), ("ln_f_b", (h,)), ("out_w", (h,)), ("out_b", ())]
    return shapes


def init_params(config: AidConfig, seed: int) -> AidParams:
    rng = make_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _tensor_shapes(config):
        if name.endswith(("_g",)):
            tensors[name] = np.ones(shape)
        elif name.endswith("_b") or name == "out_b":
            tensors[name] = np.zeros(shape)
        elif name == "seg":
            tensors[name] = 0.1 * rng.standard_normal(shape)
        else:
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            tensors[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    return AidParams(tensors=tensors)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    std = np.sqrt(var + LN_EPS)
    xhat = (x - mean) / std
    return g * xhat + b, (xhat, std)


def _layernorm_back(dy: np.ndarray, g: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, std = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) / std
    return dx, dg, db


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, h = x.shape
    return x.reshape(b, t, heads, h // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, nh * dh)


def _forward(
    latent: np.ndarray, spectral: np.ndarray, params: AidParams, config: AidConfig
):
    """Batched forward pass; returns probabilities and the backprop cache."""
    p = params.tensors
    t0_norm, in0_cache = _layernorm(
        latent @ p["in_latent_w"] + p["in_latent_b"],
        p["in_latent_ln_g"], p["in_latent_ln_b"],
    )
    t1_norm, in1_cache = _layernorm(
        spectral @ p["in_spectral_w"] + p["in_spectral_b"],
        p["in_spectral_ln_g"], p["in_spectral_ln_b"],
    )
    tok0 = t0_norm + p["seg"][0]
    tok1 = t1_norm + p["seg"][1]
    x = np.stack([tok0, tok1], axis=1)  # (B, 2, H)
    scale = 1.0 / math.sqrt(config.hidden // config.heads)

    layer_caches = []
    for i in range(config.layers):
        a_in, ln1_cache = _layernorm(x, p[f"l{i}_ln1_g"], p[f"l{i}_ln1_b"])
        q = _split_heads(a_in @ p[f"l{i}_wq"] + p[f"l{i}_bq"], config.heads)
        k = _split_heads(a_in @ p[f"l{i}_wk"], config.heads)
        v = _split_heads(a_in @ p[f"l{i}_wv"] + p[f"l{i}_bv"], config.heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores)
        attn = expd / expd.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(attn @ v)
        attn_out = ctx @ p[f"l{i}_wo"] + p[f"l{i}_bo"]
        x_mid = x + attn_out

        f_in, ln2_cache = _layernorm(x_mid, p[f"l{i}_ln2_g"], p[f"l{i}_ln2_b"])
        t_act = np.tanh(f_in @ p[f"l{i}_ffn_w1"] + p[f"l{i}_ffn_b1"])
        ffn_out = t_act @ p[f"l{i}_ffn_w2"] + p[f"l{i}_ffn_b2"]
        x_out = x_mid + ffn_out

        layer_caches.append((a_in, ln1_cache, q, k, v, attn, ctx, ln2_cache, f_in, t_act))
        x = x_out

    pooled_raw = x.mean(axis=1)
    pooled, ln_f_cache = _layernorm(pooled_raw, p["ln_f_g"], p["ln_f_b"])
    logit = pooled @ p["out_w"] + p["out_b"]
    prob = 1.0 / (1.0 + np.exp(-np.clip(logit, -60.0, 60.0)))
    cache = (latent, spectral, in0_cache, in1_cache, layer_caches, ln_f_cache, pooled, logit)
    return prob, cache


def _backward(
    dlogit: np.ndarray,
    cache,
    params: AidParams,
    config: AidConfig,
) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradient at the output logit."""
    p = params.tensors
    latent, spectral, in0_cache, in1_cache, layer_caches, ln_f_cache, pooled, _ = cache
    b = latent.shape[0]
    heads = config.heads
    scale = 1.0 / math.sqrt(config.hidden // config.heads)
    grads: dict[str, np.ndarray] = {}

    grads["out_w"] = pooled.T @ dlogit
    grads["out_b"] = np.asarray(dlogit.sum())
    dpooled = dlogit[:, None] * p["out_w"][None, :]
    dpooled_raw, dg_f, db_f = _layernorm_back(dpooled, p["ln_f_g"], ln_f_cache)
    grads["ln_f_g"] = dg_f
    grads["ln_f_b"] = db_f
    dx = np.repeat(dpooled_raw[:, None, :] / 2.0, 2, axis=1)

    for i in reversed(range(config.layers)):
        a_in, ln1_cache, q, k, v, attn, ctx, ln2_cache, f_in, t_act = layer_caches[i]

        # Feed-forward sublayer.
        dffn_out = dx
        flat = dffn_out.reshape(-1, dffn_out.shape[-1])
        grads[f"l{i}_ffn_w2"] = t_act.reshape(-1, t_act.shape[-1]).T @ flat
        grads[f"l{i}_ffn_b2"] = flat.sum(axis=0)
        dt = dffn_out @ p[f"l{i}_ffn_w2"].T
        dpre = dt * (1.0 - t_act**2)
        flat_pre = dpre.reshape(-1, dpre.shape[-1])
        grads[f"l{i}_ffn_w1"] = f_in.reshape(-1, f_in.shape[-1]).T @ flat_pre
        grads[f"l{i}_ffn_b1"] = flat_pre.sum(axis=0)
        df_in = dpre @ p[f"l{i}_ffn_w1"].T
        dx_mid_ln, dg2, db2 = _layernorm_back(df_in, p[f"l{i}_ln2_g"], ln2_cache)
        grads[f"l{i}_ln2_g"] = dg2
        grads[f"l{i}_ln2_b"] = db2
        dx_mid = dx + dx_mid_ln

        # Attention sublayer.
        dattn_out = dx_mid
        flat_ao = dattn_out.reshape(-1, dattn_out.shape[-1])
        grads[f"l{i}_wo"] = ctx.reshape(-1, ctx.shape[-1]).T @ flat_ao
        grads[f"l{i}_bo"] = flat_ao.sum(axis=0)
        dctx = _split_heads(dattn_out @ p[f"l{i}_wo"].T, heads)
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
        da_in = np.zeros_like(a_in)
        for name, grad_heads in (("wq", dq), ("wk", dk), ("wv", dv)):
            merged = _merge_heads(grad_heads)
            flat_m = merged.reshape(-1, merged.shape[-1])
            grads[f"l{i}_{name}"] = a_in.reshape(-1, a_in.shape[-1]).T @ flat_m
            if name != "wk":
                grads[f"l{i}_b{name[1]}"] = flat_m.sum(axis=0)
            da_in += merged @ p[f"l{i}_{name}"].T
        dx_ln, dg1, db1 = _layernorm_back(da_in, p[f"l{i}_ln1_g"], ln1_cache)
        grads[f"l{i}_ln1_g"] = dg1
        grads[f"l{i}_ln1_b"] = db1
        dx = dx_mid + dx_ln

    dtok0, dtok1 = dx[:, 0, :], dx[:, 1, :]
    grads["seg"] = np.stack([dtok0.sum(axis=0), dtok1.sum(axis=0)])
    dt0_pre, dg0, db0 = _layernorm_back(dtok0, p["in_latent_ln_g"], in0_cache)
    grads["in_latent_ln_g"] = dg0
    grads["in_latent_ln_b"] = db0
    grads["in_latent_w"] = latent.T @ dt0_pre
    grads["in_latent_b"] = dt0_pre.sum(axis=0)
    dt1_pre, dg1, db1 = _layernorm_back(dtok1, p["in_spectral_ln_g"], in1_cache)
    grads["in_spectral_ln_g"] = dg1
    grads["in_spectral_ln_b"] = db1
    grads["in_spectral_w"] = spectral.T @ dt1_pre
    grads["in_spectral_b"] = dt1_pre.sum(axis=0)
    return grads


def aid_forward(x: FeatureVector, params: AidParams, config: AidConfig) -> float:
    """Adversarial probability in (0, 1) for a single feature vector."""
    prob, _ = _forward(x.latent[None, :], x.spectral[None, :], params, config)
    if not np.isfinite(prob[0]):
        raise ValueError("non-finite activation in forward pass")
    return float(prob[0])


def aid_forward_batch(
    latent: np.ndarray, spectral: np.ndarray, params: AidParams, config: AidConfig
) -> np.ndarray:
    prob, _ = _forward(latent, spectral, params, config)
    return prob


def bce_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy; predictions clamped away from {0, 1}."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.size == 0 or yhat.shape != y.shape:
        raise ValueError("prediction and label batches must be nonempty and equal-length")
    yc = np.clip(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)))


def _bce_dlogit(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d(mean BCE)/d(logit), the exact sigmoid cross-entropy gradient.

    Computed without the probability clamp so saturated predictions keep a
    restoring gradient; the clamp in bce_loss only guards the log.
    """
    return (prob - y) / prob.shape[0]


class PacBound(NamedTuple):
    hoeffding: float
    linear: float


def pac_bound(m: int, ln_h: float, delta: float, emp_err: float) -> PacBound:
    """Generalization bounds from sample count and hypothesis-space size.

    ``hoeffding`` is emp_err + sqrt((ln_h + ln(1/delta)) / (2m)); ``linear``
    is the coarser (ln_h + ln(1/delta)) / m gap without the empirical term.
    """
    if m < 1:
        raise ValueError("sample count must be >= 1")
    if ln_h < 0:
        raise ValueError("ln_h must be nonnegative")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not 0.0 <= emp_err <= 1.0:
        raise ValueError("empirical error must be in [0, 1]")
    gap = ln_h + math.log(1.0 / delta)
    return PacBound(
        hoeffding=emp_err + math.sqrt(gap / (2.0 * m)),
        linear=gap / m,
    )


def _train(
    latent: np.ndarray,
    spectral: np.ndarray,
    labels: np.ndarray,
    config: AidConfig,
    hyper: TrainHyper,
    dlogit_fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
) -> tuple[AidParams, list[float]]:
    latent = np.asarray(latent, dtype=np.float64)
    spectral = np.asarray(spectral, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = latent.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if len(np.unique(labels)) < 2:
        raise ValueError("training set must contain both classes")
    params = init_params(config, hyper.seed)
    rng = make_rng(hyper.seed + 1)
    velocity = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    history: list[float] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            prob, cache = _forward(latent[idx], spectral[idx], params, config)
            loss = bce_loss(prob, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"training diverged at epoch {epoch + 1}")
            grads = _backward(dlogit_fn(prob, labels[idx], idx), cache, params, config)
            for name, g in grads.items():
                velocity[name] = hyper.momentum * velocity[name] + g
                params.tensors[name] -= hyper.lr * velocity[name]
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
    return params, history


def train_aid(
    latent: np.ndarray,
    spectral: np.ndarray,
    labels: np.ndarray,
    config: AidConfig,
    hyper: TrainHyper,
) -> tuple[AidParams, list[float]]:
    """Mini-batch SGD on binary cross-entropy; deterministic given the seed."""
    return _train(latent, spectral, labels, config, hyper,
                  lambda prob, y, idx: _bce_dlogit(prob, y))


def soften(prob: np.ndarray, temperature: float) -> np.ndarray:
    """Reapply a sigmoid to the logit divided by the temperature."""
    prob = np.clip(np.asarray(prob, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    logit = np.log(prob) - np.log1p(-prob)
    return 1.0 / (1.0 + np.exp(-logit / temperature))


def kl_bernoulli(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(Bern(p) || Bern(q)) elementwise, with probabilities clamped."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = np.clip(np.asarray(q, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return p * (np.log(p) - np.log(q)) + (1.0 - p) * (np.log1p(-p) - np.log1p(-q))


def distill_aid(
    teacher: AidParams,
    teacher_config: AidConfig,
    student_config: AidConfig,
    latent: np.ndarray,
    spectral: np.ndarray,
    labels: np.ndarray,
    hyper: TrainHyper,
    temperature: float = 2.0,
    alpha: float = 0.5,
) -> tuple[AidParams, list[float]]:
    """Train a student on hard labels blended with softened teacher scores.

    The objective is alpha * BCE(student, labels) plus
    (1 - alpha) * T^2 * KL(soften(teacher) || soften(student)).  With
    alpha = 1 the teacher is never consulted and the run matches
    :func:`train_aid` bit for bit under the same seed.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    latent = np.asarray(latent, dtype=np.float64)
    spectral = np.asarray(spectral, dtype=np.float64)

    def dlogit(prob: np.ndarray, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
        d_bce = _bce_dlogit(prob, y)
        if alpha == 1.0:
            # Teacher weight is zero: skip it entirely, matching train_aid.
            return d_bce
        t_prob = aid_forward_batch(latent[idx], spectral[idx], teacher, teacher_config)
        p_soft = soften(t_prob, temperature)
        q_soft = soften(prob, temperature)
        d_kd = temperature * (q_soft - p_soft) / prob.shape[0]
        return alpha * d_bce + (1.0 - alpha) * d_kd

    return _train(latent, spectral, labels, student_config, hyper, dlogit)
