"""Domain types, tokenization, dataset ingestion, and the synthetic corpus.

The synthetic generator produces a desk-scale labeled corpus: benign
prompts are drawn from a benign vocabulary, adversarial prompts are benign
prompts with a few trigger tokens spliced in, optionally obfuscated by a
single character substitution so held-out variants stay near their
originals in embedding space.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field

from .numkit import make_rng

_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


class DatasetError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip edge punctuation.

    Empty fragments are dropped; whitespace-only text yields an empty list.
    Interior punctuation (e.g. apostrophes) is preserved.
    """
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


@dataclass
class Prompt:
    """A raw prompt plus its token sequence (always ``tokenize(text)``)."""

    text: str
    tokens: list[str]
    id: str | None = None

    @classmethod
    def from_text(cls, text: str, id: str | None = None) -> "Prompt":
        return cls(text=text, tokens=tokenize(text), id=id)


@dataclass
class LabeledExample:
    prompt: Prompt
    label: int  # 0 benign, 1 adversarial

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class DatasetSplit:
    train: list[LabeledExample]
    val: list[LabeledExample]
    test: list[LabeledExample]
    seed: int


@dataclass
class SynthConfig:
    """Knobs for the synthetic labeled-prompt generator."""

    benign_vocab_size: int = 200
    trigger_vocab_size: int = 20
    prompt_len_range: tuple[int, int] = (8, 20)
    triggers_per_adv: tuple[int, int] = (1, 3)
    obfuscation_rate: float = 0.0
    n_benign: int = 0
    n_adversarial: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.benign_vocab_size < 1 or self.trigger_vocab_size < 1:
            raise ValueError("vocabulary sizes must be positive")
        for lo, hi in (self.prompt_len_range, self.triggers_per_adv):
            if lo > hi or lo < 1:
                raise ValueError(f"invalid range [{lo}, {hi}]")
        if not 0.0 <= self.obfuscation_rate <= 1.0:
            raise ValueError("obfuscation_rate must be in [0, 1]")
        if self.n_benign < 0 or self.n_adversarial < 0:
            raise ValueError("example counts must be nonnegative")


def load_dataset(path: str) -> list[LabeledExample]:
    """Read a UTF-8 JSONL file of {"text", "label", optional "id"} records."""
    examples: list[LabeledExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON at line {lineno}: {exc.msg}") from exc
            if not isinstance(record, dict) or "text" not in record or "label" not in record:
                raise DatasetError(f"missing 'text' or 'label' at line {lineno}")
            text, label = record["text"], record["label"]
            if not isinstance(text, str):
                raise DatasetError(f"'text' must be a string at line {lineno}")
            if label not in (0, 1) or isinstance(label, bool):
                raise DatasetError(f"invalid label at line {lineno}")
            prompt = Prompt.from_text(text, id=record.get("id"))
            examples.append(LabeledExample(prompt=prompt, label=label))
    return examples


def save_dataset(examples: list[LabeledExample], path: str) -> None:
    """Write examples as JSONL, inverse of :func:`load_dataset`."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record: dict = {}
            if ex.prompt.id is not None:
                record["id"] = ex.prompt.id
            record["text"] = ex.prompt.text
            record["label"] = ex.label
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def split_dataset(
    examples: list[LabeledExample],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Shuffle with the given seed and partition by the requested ratios."""
    r_train, r_val, r_test = ratios
    if min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    order = make_rng(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    n = len(examples)
    n_train = round(r_train * n)
    n_val = round(r_val * n)
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def _make_word(rng, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    return "".join(_ALPHABET[i] for i in rng.integers(0, 26, size=length))


def _make_vocab(rng, size: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    vocab: list[str] = []
    while len(vocab) < size:
        word = _make_word(rng, lo, hi)
        if word not in taken:
            taken.add(word)
            vocab.append(word)
    return vocab


def _obfuscate(word: str, rng) -> str:
    # One character substituted; the replacement always differs.
    pos = int(rng.integers(0, len(word)))
    old = word[pos]
    choices = _ALPHABET.replace(old, "")
    return word[:pos] + choices[int(rng.integers(0, len(choices)))] + word[pos + 1 :]


def _build_vocabularies(rng, config: SynthConfig) -> tuple[list[str], list[str]]:
    taken: set[str] = set()
    benign = _make_vocab(rng, config.benign_vocab_size, 3, 8, taken)
    triggers = _make_vocab(rng, config.trigger_vocab_size, 8, 12, taken)
    return benign, triggers


def synth_vocabularies(config: SynthConfig) -> tuple[list[str], list[str]]:
    """The (benign, trigger) vocabularies the generator draws from.

    Deterministic for a given config; disjoint by construction.  Trigger
    words are longer than benign words so obfuscated variants keep most of
    their character trigrams.
    """
    return _build_vocabularies(make_rng(config.seed), config)


def synth_corpus(config: SynthConfig) -> list[LabeledExample]:
    """Generate a labeled corpus of benign and trigger-bearing prompts."""
    body_rng = make_rng(config.seed)
    benign_vocab, trigger_vocab = _build_vocabularies(body_rng, config)

    lo, hi = config.prompt_len_range
    t_lo, t_hi = config.triggers_per_adv
    examples: list[LabeledExample] = []

    for i in range(config.n_benign):
        length = int(body_rng.integers(lo, hi + 1))
        words = [benign_vocab[j] for j in body_rng.integers(0, len(benign_vocab), size=length)]
        prompt = Prompt.from_text(" ".join(words), id=f"b{i:05d}")
        examples.append(LabeledExample(prompt=prompt, label=0))

    for i in range(config.n_adversarial):
        length = int(body_rng.integers(lo, hi + 1))
        words = [benign_vocab[j] for j in body_rng.integers(0, len(benign_vocab), size=length)]
        n_triggers = int(body_rng.integers(t_lo, t_hi + 1))
        for _ in range(n_triggers):
            trig = trigger_vocab[int(body_rng.integers(0, len(trigger_vocab)))]
            if config.obfuscation_rate > 0 and body_rng.random() < config.obfuscation_rate:
                trig = _obfuscate(trig, body_rng)
            pos = int(body_rng.integers(0, len(words) + 1))
            words.insert(pos, trig)
        prompt = Prompt.from_text(" ".join(words), id=f"a{i:05d}")
        examples.append(LabeledExample(prompt=prompt, label=1))

    return examples
