"""Application configuration: one JSON file, exhaustively validated.

Every known key has a default; unknown keys anywhere in the tree are
rejected with their full path.  Omitted sections fall back to defaults,
which are logged at startup so silent drift is visible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

logger = logging.getLogger("apd.config")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


@dataclass
class EmbedderSection:
    kind: str = "hash"
    dim: int = 64
    seed: int = 0
    endpoint: str | None = None
    timeout_ms: int = 5000


@dataclass
class VaeSection:
    d_in: int | None = None  # defaults to embedder dim
    hidden: int = 128
    k: int = 128
    split: int | None = None  # defaults to k // 2
    beta: float = 0.5
    lr: float = 0.05
    epochs: int = 50
    batch: int = 32


@dataclass
class GraphSection:
    tau: float = 0.3
    k_eigs: int = 8


@dataclass
class AidSection:
    layers: int = 4
    heads: int = 8
    hidden: int = 256
    threshold: float = 0.5
    lr: float = 0.1
    epochs: int = 50
    batch: int = 32


@dataclass
class DistillSection:
    enabled: bool = False
    teacher_layers: int = 6
    teacher_hidden: int = 512
    temperature: float = 2.0
    alpha: float = 0.5


@dataclass
class SanitizeSection:
    mode: str = "remove"
    mask_token: str = "[FILTERED]"
    max_rounds: int = 2


@dataclass
class AppConfig:
    seed: int = 0
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    vae: VaeSection = field(default_factory=VaeSection)
    graph: GraphSection = field(default_factory=GraphSection)
    aid: AidSection = field(default_factory=AidSection)
    distill: DistillSection = field(default_factory=DistillSection)
    sanitize: SanitizeSection = field(default_factory=SanitizeSection)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "embedder": {
                "kind": self.embedder.kind,
                "dim": self.embedder.dim,
                "seed": self.embedder.seed,
                "endpoint": self.embedder.endpoint,
                "timeout_ms": self.embedder.timeout_ms,
            },
            "vae": {
                "d_in": self.vae.d_in,
                "hidden": self.vae.hidden,
                "k": self.vae.k,
                "split": self.vae.split,
                "beta": self.vae.beta,
                "lr": self.vae.lr,
                "epochs": self.vae.epochs,
                "batch": self.vae.batch,
            },
            "graph": {"tau": self.graph.tau, "k_eigs": self.graph.k_eigs},
            "aid": {
                "layers": self.aid.layers,
                "heads": self.aid.heads,
                "hidden": self.aid.hidden,
                "threshold": self.aid.threshold,
                "lr": self.aid.lr,
                "epochs": self.aid.epochs,
                "batch": self.aid.batch,
            },
            "distill": {
                "enabled": self.distill.enabled,
                "teacher_layers": self.distill.teacher_layers,
                "teacher_hidden": self.distill.teacher_hidden,
                "temperature": self.distill.temperature,
                "alpha": self.distill.alpha,
            },
            "sanitize": {
                "mode": self.sanitize.mode,
                "mask_token": self.sanitize.mask_token,
                "max_rounds": self.sanitize.max_rounds,
            },
        }


_INT = "int"
_NUM = "num"
_STR = "str"
_BOOL = "bool"
_OPT_STR = "opt_str"
_OPT_INT = "opt_int"

_SCHEMA: dict[str, Any] = {
    "seed": _INT,
    "embedder": {"kind": _STR, "dim": _INT, "seed": _INT, "endpoint": _OPT_STR, "timeout_ms": _INT},
    "vae": {
        "d_in": _OPT_INT, "hidden": _INT, "k": _INT, "split": _OPT_INT,
        "beta": _NUM, "lr": _NUM, "epochs": _INT, "batch": _INT,
    },
    "graph": {"tau": _NUM, "k_eigs": _INT},
    "aid": {
        "layers": _INT, "heads": _INT, "hidden": _INT, "threshold": _NUM,
        "lr": _NUM, "epochs": _INT, "batch": _INT,
    },
    "distill": {
        "enabled": _BOOL, "teacher_layers": _INT, "teacher_hidden": _INT,
        "temperature": _NUM, "alpha": _NUM,
    },
    "sanitize": {"mode": _STR, "mask_token": _STR, "max_rounds": _INT},
}


def _check_type(value: Any, expected: str, path: str) -> Any:
    if expected == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
    elif expected == _NUM:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        value = float(value)
    elif expected == _STR:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
    elif expected == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
    elif expected == _OPT_STR:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{path}: expected string or null, got {value!r}")
    elif expected == _OPT_INT:
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{path}: expected integer or null, got {value!r}")
    return value


def config_from_dict(data: dict) -> AppConfig:
    """Validate a raw mapping against the schema and build an AppConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    config = AppConfig()
    for key, value in data.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key: {key}")
        expected = _SCHEMA[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected object")
            section = getattr(config, key)
            for sub_key, sub_value in value.items():
                if sub_key not in expected:
                    raise ConfigError(f"unknown key: {key}.{sub_key}")
                checked = _check_type(sub_value, expected[sub_key], f"{key}.{sub_key}")
                setattr(section, sub_key, checked)
        else:
            setattr(config, key, _check_type(value, expected, key))

    for key in _SCHEMA:
        if key not in data:
            logger.info("config section %r omitted; using defaults", key)

    _validate(config)
    return config


def _validate(config: AppConfig) -> None:
    if config.embedder.kind not in ("hash", "remote"):
        raise ConfigError(f"embedder.kind: expected 'hash' or 'remote', got {config.embedder.kind!r}")
    if config.embedder.dim < 8:
        raise ConfigError("embedder.dim: must be >= 8")
    if config.embedder.kind == "remote" and not config.embedder.endpoint:
        raise ConfigError("embedder.endpoint: required for the remote embedder")
    if config.vae.d_in is None:
        config.vae.d_in = config.embedder.dim
    elif config.embedder.kind == "hash" and config.vae.d_in != config.embedder.dim:
        raise ConfigError(
            f"vae.d_in: {config.vae.d_in} does not match embedder.dim {config.embedder.dim}"
        )
    if config.vae.split is None:
        config.vae.split = config.vae.k // 2
    if not 0 < config.vae.split < config.vae.k:
        raise ConfigError(f"vae.split: must be in (0, {config.vae.k})")
    if config.vae.beta < 0:
        raise ConfigError("vae.beta: must be nonnegative")
    if not 0.0 <= config.graph.tau < 1.0:
        raise ConfigError(f"graph.tau: must be in [0, 1), got {config.graph.tau}")
    if config.graph.k_eigs < 1:
        raise ConfigError("graph.k_eigs: must be >= 1")
    if config.aid.layers < 1:
        raise ConfigError("aid.layers: must be >= 1")
    if config.aid.hidden % config.aid.heads != 0:
        raise ConfigError(
            f"aid.hidden: {config.aid.hidden} not divisible by aid.heads {config.aid.heads}"
        )
    if not 0.0 < config.aid.threshold < 1.0:
        raise ConfigError("aid.threshold: must be in (0, 1)")
    if config.distill.temperature <= 0:
        raise ConfigError("distill.temperature: must be positive")
    if not 0.0 <= config.distill.alpha <= 1.0:
        raise ConfigError("distill.alpha: must be in [0, 1]")
    if config.distill.teacher_hidden % config.aid.heads != 0:
        raise ConfigError("distill.teacher_hidden: not divisible by aid.heads")
    if config.sanitize.mode not in ("remove", "mask"):
        raise ConfigError(f"sanitize.mode: expected 'remove' or 'mask', got {config.sanitize.mode!r}")
    if config.sanitize.max_rounds < 1:
        raise ConfigError("sanitize.max_rounds: must be >= 1")


def load_config(path: str) -> AppConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg}") from exc
    return config_from_dict(data)
