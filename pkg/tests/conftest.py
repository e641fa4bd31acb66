from dataclasses import replace

import numpy as np
import pytest

from shego.config import config_from_dict
from shego.numerics import precision
from shego.pipeline import build_model, build_vocabulary, load_corpus, pretrain_backbone


def tiny_config_dict(dialogues=10, **overrides):
    raw = {
        "seed": 0,
        "data": {"synthetic": {"dialogues": dialogues}, "num_sentinels": 4},
        "backbone": {"d_model": 16, "num_heads": 2, "encoder_layers": 1, "decoder_layers": 1, "d_ff": 32,
                     "max_positions": 128},
        "pretrain": {"mode": "random-frozen"},
        "encoder": {"hidden_dim": 8},
        "model": {"num_prompts": 4, "max_decode": 20},
        "train": {"batch_size": 8, "max_epochs": 3, "patience": 5},
    }
    for section, values in overrides.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    return raw


class Tiny:
    """A corpus, vocabulary and frozen backbone small enough for unit tests."""

    def __init__(self, dtype=None, **overrides):
        self.cfg = config_from_dict(tiny_config_dict(**overrides))
        self.dtype = dtype
        with precision(dtype or np.float32):
            self.data = load_corpus(self.cfg)
            self.vocab = build_vocabulary(self.data, self.cfg.data.num_sentinels)
            self.backbone, _ = pretrain_backbone(self.cfg, self.data, self.vocab)

    @property
    def train(self):
        return self.data.splits["train"]

    @property
    def dev(self):
        return self.data.splits["dev"]

    def model(self, ablation=None, seed=0, **model_overrides):
        cfg = self.cfg
        if model_overrides:
            cfg = replace(cfg, model=replace(cfg.model, **model_overrides))
        with precision(self.dtype or np.float32):
            return build_model(cfg, self.data.schema, self.vocab, self.backbone, ablation=ablation, seed=seed)


@pytest.fixture(scope="session")
def tiny():
    return Tiny()


@pytest.fixture(scope="session")
def tiny64():
    return Tiny(dtype=np.float64)


# -- acceptance reporting: one PASS/FAIL line per criterion ---------------------------------

_VERDICTS = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    line = f"[{status}] criterion {number:>2}: {title}" + (f" -- {detail}" if detail else "")
    item.config.stash.setdefault(_VERDICTS, {})[number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for number in sorted(verdicts):
            terminalreporter.write_line(verdicts[number])
