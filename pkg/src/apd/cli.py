"""Command-line interface.

Subcommands: synth, train, screen, eval, serve, pac-bound.  Exit code 0
on success, 1 for usage errors, 2 for runtime failures.  The APD_LOG
environment variable (error, info, debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading

from . import archive
from .aid import pac_bound
from .config import ConfigError, load_config
from .core import (
    LabeledExample,
    Prompt,
    SynthConfig,
    load_dataset,
    save_dataset,
    synth_corpus,
    synth_vocabularies,
)
from .pipeline import evaluate, screen
from .service import make_server
from .train import train_bundle

logger = logging.getLogger("apd.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message, self)


def _setup_logging() -> None:
    level_name = os.environ.get("APD_LOG", "error").lower()
    level = _LOG_LEVELS.get(level_name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_synth_config(path: str) -> SynthConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("synth config must be a JSON object")
    known = {
        "benign_vocab_size", "trigger_vocab_size", "prompt_len_range",
        "triggers_per_adv", "obfuscation_rate", "n_benign", "n_adversarial", "seed",
    }
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key: {key}")
    for key in ("prompt_len_range", "triggers_per_adv"):
        if key in data:
            data[key] = tuple(data[key])
    return SynthConfig(**data)


def _cmd_synth(args) -> int:
    cfg = _load_synth_config(args.config)
    examples = synth_corpus(cfg)
    save_dataset(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    if args.triggers_out:
        _, triggers = synth_vocabularies(cfg)
        with open(args.triggers_out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(triggers) + "\n")
        print(f"wrote {len(triggers)} trigger tokens to {args.triggers_out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    examples = load_dataset(args.data)
    report = train_bundle(examples, cfg)
    archive.save_archive(args.out, cfg, report.vae_params, report.aid_params)
    print(
        json.dumps(
            {
                "examples": len(examples),
                "vae_final_loss": report.vae_epoch_loss[-1],
                "aid_final_loss": report.aid_epoch_loss[-1],
                "archive": args.out,
            }
        )
    )
    return 0


def _apply_policy_override(bundle, config_path: str | None):
    """A --config on screen/eval can override the runtime sanitize policy."""
    if config_path is None:
        return bundle
    from .pipeline import SanitizePolicy

    override = load_config(config_path)
    bundle.policy = SanitizePolicy(
        mode=override.sanitize.mode,
        mask_token=override.sanitize.mask_token,
        max_rounds=override.sanitize.max_rounds,
    )
    return bundle


def _cmd_screen(args) -> int:
    bundle = _apply_policy_override(archive.load_bundle(args.models), args.config)
    if args.text is not None:
        prompt = Prompt.from_text(args.text)
        if not prompt.tokens:
            raise ValueError("empty prompt")
        result = screen(prompt, bundle)
        print(json.dumps(result.to_json_dict(prompt.tokens)))
        return 0
    examples = load_dataset(args.input)
    for ex in examples:
        result = screen(ex.prompt, bundle)
        print(json.dumps(result.to_json_dict(ex.prompt.tokens)))
    return 0


def _cmd_eval(args) -> int:
    bundle = _apply_policy_override(archive.load_bundle(args.models), args.config)
    examples = load_dataset(args.data)
    triggers = None
    if args.trigger_vocab:
        with open(args.trigger_vocab, encoding="utf-8") as fh:
            triggers = [line.strip() for line in fh if line.strip()]
    report = evaluate(examples, bundle, trigger_vocab=triggers)
    print(json.dumps(report.to_json_dict()))
    return 0


def _cmd_serve(args) -> int:
    bundle = archive.load_bundle(args.models)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {args.bind!r}")
    server = make_server(bundle, host, int(port))

    def _request_shutdown(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _request_shutdown)
    signal.signal(signal.SIGTERM, _request_shutdown)
    print(f"listening on {host}:{port}", file=sys.stderr)
    server.serve_forever()
    server.server_close()
    return 0


def _cmd_pac_bound(args) -> int:
    bound = pac_bound(args.m, args.ln_h, args.delta, args.emp)
    print(json.dumps({"hoeffding": bound.hoeffding, "linear": bound.linear}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="apd", description="Adversarial prompt screening")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p_synth.add_argument("--config", required=True, help="synth config JSON")
    p_synth.add_argument("--out", required=True, help="output JSONL path")
    p_synth.add_argument("--triggers-out", help="also write the trigger vocabulary")
    p_synth.set_defaults(func=_cmd_synth)

    p_train = sub.add_parser("train", help="train models and write an archive")
    p_train.add_argument("--config", required=True, help="app config JSON")
    p_train.add_argument("--data", required=True, help="training JSONL")
    p_train.add_argument("--out", required=True, help="archive directory")
    p_train.set_defaults(func=_cmd_train)

    p_screen = sub.add_parser("screen", help="screen one prompt or a JSONL file")
    p_screen.add_argument("--models", required=True, help="archive directory")
    p_screen.add_argument("--config", help="optional config overriding the sanitize policy")
    group = p_screen.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="a single prompt")
    group.add_argument("--input", help="JSONL file of prompts")
    p_screen.set_defaults(func=_cmd_screen)

    p_eval = sub.add_parser("eval", help="evaluate detection metrics on a test set")
    p_eval.add_argument("--models", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--config", help="optional config overriding the sanitize policy")
    p_eval.add_argument("--trigger-vocab", help="trigger token file for the elimination rate")
    p_eval.set_defaults(func=_cmd_eval)

    p_serve = sub.add_parser("serve", help="run the HTTP screening service")
    p_serve.add_argument("--models", required=True)
    p_serve.add_argument("--bind", default="127.0.0.1:8080")
    p_serve.set_defaults(func=_cmd_serve)

    p_pac = sub.add_parser("pac-bound", help="print both generalization-bound variants")
    p_pac.add_argument("--m", type=int, required=True, help="training sample count")
    p_pac.add_argument("--ln-h", type=float, required=True, dest="ln_h")
    p_pac.add_argument("--delta", type=float, required=True)
    p_pac.add_argument("--emp", type=float, required=True, help="empirical error")
    p_pac.set_defaults(func=_cmd_pac_bound)

    return parser


def cli_run(argv: list[str]) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_run(sys.argv[1:]))
