import pytest

from apd.config import config_from_dict
from apd.core import SynthConfig, split_dataset, synth_corpus
from apd.train import train_bundle


TINY_CONFIG = {
    "seed": 3,
    "embedder": {"kind": "hash", "dim": 32, "seed": 3},
    "vae": {"hidden": 16, "k": 8, "split": 4, "beta": 0.01,
            "lr": 0.05, "epochs": 8, "batch": 16},
    "graph": {"tau": 0.3, "k_eigs": 8},
    "aid": {"layers": 1, "heads": 2, "hidden": 16, "threshold": 0.5,
            "lr": 0.01, "epochs": 10, "batch": 16},
}


def tiny_config_dict():
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_CONFIG.items()}


@pytest.fixture(scope="session")
def tiny_corpus():
    return synth_corpus(SynthConfig(n_benign=40, n_adversarial=40, seed=11))


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return split_dataset(tiny_corpus, (0.7, 0.15, 0.15), seed=5)


@pytest.fixture(scope="session")
def tiny_report(tiny_split):
    """A small trained model stack; fast, not accurate."""
    return train_bundle(tiny_split.train, config_from_dict(tiny_config_dict()))


@pytest.fixture(scope="session")
def tiny_bundle(tiny_report):
    return tiny_report.bundle
