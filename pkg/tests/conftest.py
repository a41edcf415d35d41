"""Shared fixtures: a tiny assembled model over a synthetic micro-corpus."""

import numpy as np
import pytest

from speechslu.config import (AlignerConfig, DecoderConfig, EncoderConfig,
                              LoraConfig, RunConfig, TrainConfig)
from speechslu.datasets import MicroCorpusSpec, generate_micro_corpus
from speechslu.experiments import training_texts as corpus_texts
from speechslu.model import SluModel
from speechslu.prompts import PromptBank
from speechslu.tokenizer import build_vocabulary, default_specials


def tiny_run_config(seed=0, **train_kw) -> RunConfig:
    return RunConfig(
        seed=seed,
        encoder=EncoderConfig(d_enc=16, n_layers=1, n_heads=2, d_ff=32),
        aligner=AlignerConfig(d_enc=16, d_dec=24, bottleneck_dim=8),
        decoder=DecoderConfig(d_model=24, n_layers=2, n_heads=2, d_ff=48),
        lora=LoraConfig(rank=4, alpha=8.0),
        train=TrainConfig(**train_kw) if train_kw else TrainConfig(),
    )


def build_tiny_model(records, seed=0, **train_kw) -> SluModel:
    cfg = tiny_run_config(seed=seed, **train_kw)
    bank = PromptBank.load()
    vocab = build_vocabulary(corpus_texts(records, bank), default_specials(cfg.prompts))
    return SluModel(cfg, vocab)


@pytest.fixture(scope="session")
def micro_corpus():
    spec = MicroCorpusSpec(counts={"ASR": 4, "IC": 6, "SF": 6, "SQA": 3,
                                   "SIT": 3, "SQIT": 3, "SA": 3, "SER": 2, "STER": 2})
    return generate_micro_corpus(spec, np.random.default_rng(123))


@pytest.fixture(scope="session")
def flat_records(micro_corpus):
    return [r for records in micro_corpus.values() for r in records]


@pytest.fixture(scope="session")
def tiny_model(flat_records):
    return build_tiny_model(flat_records, seed=1)
