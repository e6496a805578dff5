"""Portable model persistence.

An archive is a directory holding ``manifest.json`` (format version, the
full configuration snapshot, and a tensor index of name/shape/offset
entries) plus ``weights.bin`` (the tensors as little-endian float32,
row-major, concatenated in index order).  Saving a freshly loaded archive
reproduces both files byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .aid import AidConfig, AidParams, _tensor_shapes
from .config import AppConfig, config_from_dict
from .embed import EmbedderConfig
from .pipeline import ModelBundle, SanitizePolicy
from .vae import VAE_TENSOR_NAMES, VaeConfig, VaeParams
from .vae import tensor_shapes as vae_tensor_shapes

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


class ArchiveError(ValueError):
    """Archive contents are inconsistent with the manifest."""


def component_configs(
    cfg: AppConfig,
) -> tuple[EmbedderConfig, VaeConfig, AidConfig, AidConfig, SanitizePolicy]:
    """Instantiate the per-module configs an AppConfig describes.

    Returns (embedder, vae, classifier, distillation teacher, sanitize
    policy); the teacher config is used only when distillation is enabled.
    """
    embedder = EmbedderConfig(
        kind=cfg.embedder.kind,
        dim=cfg.embedder.dim,
        seed=cfg.embedder.seed,
        endpoint=cfg.embedder.endpoint,
        timeout_ms=cfg.embedder.timeout_ms,
    )
    vae_config = VaeConfig(
        d_in=cfg.vae.d_in if cfg.vae.d_in is not None else cfg.embedder.dim,
        hidden=cfg.vae.hidden,
        k=cfg.vae.k,
        split=cfg.vae.split,
        beta=cfg.vae.beta,
    )
    aid_config = AidConfig(
        latent_dim=vae_config.k,
        spectral_dim=cfg.graph.k_eigs + 8,
        layers=cfg.aid.layers,
        heads=cfg.aid.heads,
        hidden=cfg.aid.hidden,
        threshold=cfg.aid.threshold,
    )
    teacher_config = AidConfig(
        latent_dim=vae_config.k,
        spectral_dim=cfg.graph.k_eigs + 8,
        layers=cfg.distill.teacher_layers,
        heads=cfg.aid.heads,
        hidden=cfg.distill.teacher_hidden,
        threshold=cfg.aid.threshold,
    )
    policy = SanitizePolicy(
        mode=cfg.sanitize.mode,
        mask_token=cfg.sanitize.mask_token,
        max_rounds=cfg.sanitize.max_rounds,
    )
    return embedder, vae_config, aid_config, teacher_config, policy


def _ordered_tensors(vae_params: VaeParams, aid_params: AidParams) -> list[tuple[str, np.ndarray]]:
    pairs = [(f"vae/{name}", getattr(vae_params, name)) for name in vae_params.names()]
    pairs += [(f"aid/{name}", tensor) for name, tensor in aid_params.tensors.items()]
    return pairs


def save_archive(
    directory: str,
    cfg: AppConfig,
    vae_params: VaeParams,
    aid_params: AidParams,
) -> None:
    os.makedirs(directory, exist_ok=True)
    index = []
    blobs = []
    offset = 0
    for name, tensor in _ordered_tensors(vae_params, aid_params):
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        index.append(
            {
                "name": name,
                "shape": list(np.shape(tensor)),
                "dtype": "f32",
                "byte_offset": offset,
                "byte_len": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "tensors": index,
    }
    with open(os.path.join(directory, WEIGHTS_NAME), "wb") as fh:
        fh.write(b"".join(blobs))
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_archive(directory: str) -> tuple[AppConfig, VaeParams, AidParams]:
    try:
        with open(os.path.join(directory, MANIFEST_NAME), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ArchiveError(f"no manifest in {directory}") from exc
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"manifest is not valid JSON: {exc.msg}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"unsupported format version {manifest.get('format_version')!r}")
    cfg = config_from_dict(manifest["config"])

    with open(os.path.join(directory, WEIGHTS_NAME), "rb") as fh:
        blob = fh.read()

    expected_offset = 0
    for entry in manifest["tensors"]:
        if entry["dtype"] != "f32":
            raise ArchiveError(f"tensor {entry['name']}: unsupported dtype {entry['dtype']!r}")
        if entry["byte_offset"] != expected_offset:
            raise ArchiveError(f"tensor {entry['name']}: offsets are not contiguous")
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if entry["byte_len"] != 4 * size:
            raise ArchiveError(f"tensor {entry['name']}: byte length does not match shape")
        expected_offset += entry["byte_len"]
    if expected_offset != len(blob):
        raise ArchiveError(
            f"weights file has {len(blob)} bytes, manifest accounts for {expected_offset}"
        )

    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["byte_offset"] : entry["byte_offset"] + entry["byte_len"]]
        array = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(entry["shape"])
        tensors[entry["name"]] = array

    _, vae_config, aid_config, _, _ = component_configs(cfg)
    vae_shapes = vae_tensor_shapes(vae_config)
    vae_kwargs = {}
    for name in VAE_TENSOR_NAMES:
        key = f"vae/{name}"
        if key not in tensors:
            raise ArchiveError(f"missing tensor {key}")
        if tuple(tensors[key].shape) != vae_shapes[name]:
            raise ArchiveError(
                f"tensor {key}: shape {tensors[key].shape} does not match config {vae_shapes[name]}"
            )
        vae_kwargs[name] = tensors[key]
    vae_params = VaeParams(**vae_kwargs)

    aid_tensors: dict[str, np.ndarray] = {}
    for name, shape in _tensor_shapes(aid_config):
        key = f"aid/{name}"
        if key not in tensors:
            raise ArchiveError(f"missing tensor {key}")
        if tuple(tensors[key].shape) != shape:
            raise ArchiveError(
                f"tensor {key}: shape {tensors[key].shape} does not match config {shape}"
            )
        aid_tensors[name] = tensors[key]
    aid_params = AidParams(tensors=aid_tensors)
    return cfg, vae_params, aid_params


def make_bundle(
    cfg: AppConfig, vae_params: VaeParams, aid_params: AidParams
) -> ModelBundle:
    embedder, vae_config, aid_config, _, policy = component_configs(cfg)
    return ModelBundle(
        embedder=embedder,
        vae_params=vae_params,
        vae_config=vae_config,
        aid_params=aid_params,
        aid_config=aid_config,
        tau=cfg.graph.tau,
        k_eigs=cfg.graph.k_eigs,
        policy=policy,
    )


def load_bundle(directory: str) -> ModelBundle:
    cfg, vae_params, aid_params = load_archive(directory)
    return make_bundle(cfg, vae_params, aid_params)
