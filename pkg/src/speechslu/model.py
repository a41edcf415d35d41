"""Model assembly: frozen encoder + trainable aligner + LoRA decoder,
with checkpoint save/load and the audio -> embedding path used everywhere."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autograd as ag
from .aligner import ModalityAligner
from .audio import MelSpectrogram, resolve_audio
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .decoder import InstructionDecoder, MultimodalSequence
from .encoder import SpeechEncoder
from .errors import ShapeMismatch
from .prompts import DialogueTurn, PromptBank, render_chat
from .tokenizer import Vocabulary


class SluModel:
    def __init__(self, cfg: RunConfig, vocab: Vocabulary):
        self.cfg = cfg
        self.vocab = vocab
        self.prompt_cfg = cfg.prompts
        self.infer_cfg = cfg.infer
        self.bank = PromptBank.load(cfg.prompts.bank_dir)
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.encoder = SpeechEncoder(cfg.encoder, np.random.default_rng(seeds[0]))
        self.aligner = ModalityAligner(cfg.aligner, np.random.default_rng(seeds[1]))
        dec_rng = np.random.default_rng(seeds[2])
        self.decoder = InstructionDecoder(cfg.decoder, vocab, dec_rng)
        self.decoder.inject_lora(cfg.lora, dec_rng)
        self.config_hash = config_hash(cfg)
        self._enc_cache: dict[str, np.ndarray] = {}

    # -- parameters -----------------------------------------------------------

    def named_parameters(self) -> dict[str, ag.Tensor]:
        out = {}
        out.update(self.encoder.named_parameters())
        out.update(self.aligner.named_parameters())
        out.update(self.decoder.named_parameters())
        return out

    def trainable_parameters(self) -> dict[str, ag.Tensor]:
        return {name: p for name, p in self.named_parameters().items() if p.trainable}

    # -- audio path -----------------------------------------------------------

    def encode_mel(self, mel: MelSpectrogram, cache_key: str | None = None) -> np.ndarray:
        """Frozen encoder output as a plain array (cacheable across passes)."""
        if cache_key is not None and cache_key in self._enc_cache:
            return self._enc_cache[cache_key]
        enc = self.encoder.encode(mel).data
        if cache_key is not None:
            self._enc_cache[cache_key] = enc
        return enc

    def embed_audio(self, mel: MelSpectrogram, cache_key: str | None = None) -> ag.Tensor:
        """Aligned speech embeddings (graph output; gradients reach the aligner)."""
        enc = self.encode_mel(mel, cache_key)
        return self.aligner.align(ag.Tensor(enc))

    def embed_audio_ref(self, audio_ref: str, base_dir=None) -> np.ndarray:
        mel = resolve_audio(audio_ref, base_dir=base_dir,
                            n_mels=self.cfg.encoder.n_mels,
                            clip_seconds=self.cfg.encoder.clip_seconds)
        return self.embed_audio(mel, cache_key=audio_ref).data

    def speech_len(self, mel: MelSpectrogram) -> int:
        t_enc = -(-mel.frames.shape[1] // 2)
        return self.aligner.out_len(t_enc)

    # -- generation -----------------------------------------------------------

    def generate(self, turns: list[DialogueTurn], speech: np.ndarray | None,
                 max_new: int) -> tuple[str, bool, str]:
        """Greedy response to a dialogue; returns (text, truncated, rendered prompt)."""
        rendered = render_chat(turns, self.vocab, self.prompt_cfg,
                               add_generation_prompt=True)
        if rendered.splice_index is not None:
            if speech is None:
                raise ShapeMismatch("generate", "dialogue has a splice but no speech given")
            seq = _expand(rendered, speech.shape[0], self.vocab)
        else:
            seq = MultimodalSequence(np.asarray(rendered.ids, dtype=np.int64))
            speech = None
        out = self.decoder.generate_greedy(seq, speech, max_new)
        return out.text, out.truncated, rendered.text(self.vocab)

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        params = {name: p.data for name, p in self.named_parameters().items()}
        save_checkpoint(out / "checkpoint.sslc", params, self.config_hash)
        self.vocab.save(out / "vocab.json")

    def load_weights(self, checkpoint_path, strict: bool = True) -> None:
        params, ck_hash = load_checkpoint(checkpoint_path)
        own = self.named_parameters()
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        if strict and (missing or extra):
            raise ValueError(f"checkpoint mismatch: missing={missing}, extra={extra}")
        for name, tensor in own.items():
            if name in params:
                if params[name].shape != tensor.data.shape:
                    raise ShapeMismatch(
                        "load_weights", f"{name}: {params[name].shape} vs {tensor.data.shape}")
                tensor.data = params[name].astype(np.float32).copy()
        self._enc_cache.clear()


def _expand(rendered, speech_len: int, vocab: Vocabulary) -> MultimodalSequence:
    from .decoder import expand_splice

    return expand_splice(rendered.ids, rendered.splice_index, speech_len,
                         vocab.special_id("speech_placeholder"))


def build_model(cfg: RunConfig, vocab: Vocabulary) -> SluModel:
    return SluModel(cfg, vocab)


def load_model(run_dir, cfg: RunConfig | None = None) -> SluModel:
    """Rebuild a model from a run directory (config.json, vocab.json, checkpoint)."""
    from .config import load_config

    run_dir = Path(run_dir)
    if cfg is None:
        cfg = load_config(run_dir / "config.json")
    vocab = Vocabulary.load(run_dir / "vocab.json")
    model = SluModel(cfg, vocab)
    model.load_weights(run_dir / "checkpoint.sslc")
    return model
