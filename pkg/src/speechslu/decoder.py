"""Toy autoregressive instruction decoder.

Causal transformer over a token sequence whose speech-placeholder span
is replaced by aligned speech embeddings. Base weights are frozen;
LoRA adapters on the attention projections are the only trainable
decoder state. Generation is greedy with a per-call KV cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .config import DecoderConfig, LoraConfig
from .errors import ShapeMismatch
from .initutil import normal_param, ones_param, sinusoid_table, zeros_param
from .tokenizer import Vocabulary


@dataclass
class MultimodalSequence:
    """Token ids with one contiguous placeholder span for speech embeddings."""

    ids: np.ndarray                      # int64 [T]
    splice_start: int | None = None
    splice_len: int = 0
    loss_mask: np.ndarray | None = None  # bool [T]; True on supervised tokens

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.loss_mask is not None:
            self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
            if self.loss_mask.shape != self.ids.shape:
                raise ShapeMismatch("sequence", "loss mask length != token length")
        if self.splice_start is not None:
            if not (0 <= self.splice_start and
                    self.splice_start + self.splice_len <= len(self.ids)):
                raise ShapeMismatch("sequence", "splice span outside sequence")


def expand_splice(ids: list[int], splice_index: int | None, speech_len: int,
                  placeholder_id: int) -> MultimodalSequence:
    """Expand the single placeholder token into `speech_len` positions."""
    if splice_index is None:
        return MultimodalSequence(np.asarray(ids, dtype=np.int64))
    if ids[splice_index] != placeholder_id:
        raise ShapeMismatch("sequence", f"no placeholder at index {splice_index}")
    expanded = ids[:splice_index] + [placeholder_id] * speech_len + ids[splice_index + 1:]
    return MultimodalSequence(np.asarray(expanded, dtype=np.int64),
                              splice_start=splice_index, splice_len=speech_len)


class LoraLinear:
    """Frozen base projection plus trainable low-rank update (alpha/r * B A)."""

    def __init__(self, base: ag.Tensor, rank: int, alpha: float,
                 rng: np.random.Generator, name: str):
        d_in, d_out = base.data.shape
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        self.A = normal_param(rng, (rank, d_in), 0.02, True, f"{name}.A")
        self.B = zeros_param((d_out, rank), True, f"{name}.B")

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        y = ag.matmul(x, self.base)
        lo = ag.matmul(ag.matmul(x, ag.transpose(self.A, (1, 0))),
                       ag.transpose(self.B, (1, 0)))
        return ag.add(y, ag.mul(lo, np.asarray(self.scale, dtype=x.data.dtype)))

    def effective_weight(self) -> np.ndarray:
        return self.base.data + self.scale * (self.B.data @ self.A.data).T

    def parameters(self):
        return [self.A, self.B]


class _DecoderLayer:
    def __init__(self, rng, d: int, n_heads: int, d_ff: int, prefix: str):
        self.n_heads = n_heads
        self.ln1_g = ones_param((d,), False, f"{prefix}.ln1.g")
        self.ln1_b = zeros_param((d,), False, f"{prefix}.ln1.b")
        self.proj = {
            name: normal_param(rng, (d, d), 0.02, False, f"{prefix}.w{name}")
            for name in ("q", "k", "v", "o")
        }
        self.lora: dict[str, LoraLinear] = {}
        self.ln2_g = ones_param((d,), False, f"{prefix}.ln2.g")
        self.ln2_b = zeros_param((d,), False, f"{prefix}.ln2.b")
        self.w1 = normal_param(rng, (d, d_ff), 0.02, False, f"{prefix}.ffn.w1")
        self.b1 = zeros_param((d_ff,), False, f"{prefix}.ffn.b1")
        self.w2 = normal_param(rng, (d_ff, d), 0.02, False, f"{prefix}.ffn.w2")
        self.b2 = zeros_param((d,), False, f"{prefix}.ffn.b2")

    def project(self, name: str, x: ag.Tensor) -> ag.Tensor:
        if name in self.lora:
            return self.lora[name](x)
        return ag.matmul(x, self.proj[name])

    def __call__(self, x: ag.Tensor) -> ag.Tensor:
        h = ag.layer_norm(x, self.ln1_g, self.ln1_b)
        q = self.project("q", h)
        k = self.project("k", h)
        v = self.project("v", h)
        a = ag.multihead_attention(q, k, v, self.n_heads, causal=True)
        x = ag.add(x, self.project("o", a))
        h = ag.layer_norm(x, self.ln2_g, self.ln2_b)
        f = ag.linear(ag.gelu(ag.linear(h, self.w1, self.b1)), self.w2, self.b2)
        return ag.add(x, f)

    def base_parameters(self):
        return [self.ln1_g, self.ln1_b, *self.proj.values(), self.ln2_g, self.ln2_b,
                self.w1, self.b1, self.w2, self.b2]


@dataclass
class GenerationResult:
    ids: list[int]
    text: str
    truncated: bool


class InstructionDecoder:
    def __init__(self, cfg: DecoderConfig, vocab: Vocabulary, rng: np.random.Generator):
        self.cfg = cfg
        self.vocab = vocab
        d = cfg.d_model
        self.tok_emb = normal_param(rng, (vocab.size, d), 0.02, False, "decoder.tok_emb")
        self.layers = [
            _DecoderLayer(rng, d, cfg.n_heads, cfg.d_ff, f"decoder.layers.{i}")
            for i in range(cfg.n_layers)
        ]
        self.ln_f_g = ones_param((d,), False, "decoder.ln_f.g")
        self.ln_f_b = zeros_param((d,), False, "decoder.ln_f.b")
        self.w_out = normal_param(rng, (d, vocab.size), cfg.head_std, False,
                                  "decoder.w_out")
        self.pe = sinusoid_table(cfg.max_positions, d) * np.float32(cfg.pe_scale)
        self.lora_cfg: LoraConfig | None = None

    # -- LoRA ---------------------------------------------------------------

    def inject_lora(self, cfg: LoraConfig, rng: np.random.Generator) -> None:
        """Wrap the configured attention projections in every layer."""
        if self.lora_cfg is not None:
            raise ValueError("LoRA adapters already injected")
        for i, layer in enumerate(self.layers):
            for name in cfg.targets:
                layer.lora[name] = LoraLinear(
                    layer.proj[name], cfg.rank, cfg.alpha, rng, f"lora.layers.{i}.{name}")
        self.lora_cfg = cfg

    def lora_parameters(self) -> dict[str, ag.Tensor]:
        out: dict[str, ag.Tensor] = {}
        for layer in self.layers:
            for wrapper in layer.lora.values():
                for p in wrapper.parameters():
                    out[p.name] = p
        return out

    def base_parameters(self) -> dict[str, ag.Tensor]:
        out = {self.tok_emb.name: self.tok_emb}
        for layer in self.layers:
            out.update({p.name: p for p in layer.base_parameters()})
        for p in (self.ln_f_g, self.ln_f_b, self.w_out):
            out[p.name] = p
        return out

    def named_parameters(self) -> dict[str, ag.Tensor]:
        out = self.base_parameters()
        out.update(self.lora_parameters())
        return out

    # -- training-path forward ----------------------------------------------

    def forward(self, seq: MultimodalSequence, speech: ag.Tensor | None = None) -> ag.Tensor:
        """Logits [T, vocab]; speech embeddings replace the placeholder span."""
        t = len(seq.ids)
        if t == 0:
            raise ShapeMismatch("decoder.forward", "empty sequence")
        if t > self.cfg.max_positions:
            raise ShapeMismatch("decoder.forward",
                                f"sequence length {t} > max {self.cfg.max_positions}")
        emb = ag.embedding_lookup(self.tok_emb, seq.ids)
        if seq.splice_start is not None:
            if speech is None or speech.data.shape[0] != seq.splice_len:
                got = None if speech is None else speech.data.shape[0]
                raise ShapeMismatch(
                    "decoder.forward",
                    f"splice length {seq.splice_len} != speech embeddings {got}")
            s0, s1 = seq.splice_start, seq.splice_start + seq.splice_len
            emb = ag.concat([ag.slice_rows(emb, 0, s0), speech,
                             ag.slice_rows(emb, s1, t)], axis=0)
        elif speech is not None:
            raise ShapeMismatch("decoder.forward", "speech given but sequence has no splice")
        x = ag.add(emb, self.pe[:t])
        for layer in self.layers:
            x = layer(x)
        x = ag.layer_norm(x, self.ln_f_g, self.ln_f_b)
        return ag.matmul(x, self.w_out)

    # -- inference path (numpy, KV cache local to the call) ------------------

    def _inference_weights(self):
        layers = []
        for layer in self.layers:
            eff = {}
            for name in ("q", "k", "v", "o"):
                if name in layer.lora:
                    eff[name] = layer.lora[name].effective_weight()
                else:
                    eff[name] = layer.proj[name].data
            layers.append({
                "ln1": (layer.ln1_g.data, layer.ln1_b.data),
                "ln2": (layer.ln2_g.data, layer.ln2_b.data),
                "proj": eff,
                "ffn": (layer.w1.data, layer.b1.data, layer.w2.data, layer.b2.data),
                "n_heads": layer.n_heads,
            })
        return layers

    def _embed_ids(self, ids: np.ndarray, speech: np.ndarray | None,
                   splice_start: int | None, splice_len: int) -> np.ndarray:
        emb = self.tok_emb.data[ids]
        if splice_start is not None:
            if speech is None or speech.shape[0] != splice_len:
                got = None if speech is None else speech.shape[0]
                raise ShapeMismatch(
                    "decoder.generate", f"splice length {splice_len} != speech {got}")
            emb = np.concatenate(
                [emb[:splice_start], speech.astype(np.float32),
                 emb[splice_start + splice_len:]], axis=0)
        return emb + self.pe[:emb.shape[0]]

    def generate_greedy(self, seq: MultimodalSequence, speech: np.ndarray | None,
                        max_new: int, stop_id: int | None = None) -> GenerationResult:
        """Greedy decoding from a rendered prompt; ties break to the lowest id.

        Stops at the end-of-turn token (excluded from the result) or after
        `max_new` tokens, in which case the result is flagged truncated.
        """
        if max_new < 1:
            raise ValueError("max_new must be >= 1")
        if stop_id is None:
            stop_id = self.vocab.special_id("end_turn")
        weights = self._inference_weights()
        x = self._embed_ids(seq.ids, speech, seq.splice_start, seq.splice_len)
        caches: list[dict] = [{} for _ in weights]
        h = self._prefill(x, weights, caches)
        logits = self._head(h[-1:])
        out_ids: list[int] = []
        truncated = False
        pos = x.shape[0]
        for _ in range(max_new):
            nxt = int(np.argmax(logits[-1]))
            if nxt == stop_id:
                break
            out_ids.append(nxt)
            if len(out_ids) == max_new or pos >= self.cfg.max_positions:
                truncated = True
                break
            step = self.tok_emb.data[nxt] + self.pe[pos]
            logits = self._head(self._step(step[None, :], weights, caches))
            pos += 1
        return GenerationResult(ids=out_ids, text=self.vocab.detokenize(out_ids),
                                truncated=truncated)

    def _prefill(self, x: np.ndarray, weights, caches) -> np.ndarray:
        t = x.shape[0]
        mask = np.triu(np.full((t, t), -np.inf, dtype=np.float32), k=1)
        for lw, cache in zip(weights, caches):
            h = _ln_np(x, *lw["ln1"])
            q, k, v = h @ lw["proj"]["q"], h @ lw["proj"]["k"], h @ lw["proj"]["v"]
            cache["k"], cache["v"] = k, v
            a = _attend(q, k, v, lw["n_heads"], mask)
            x = x + a @ lw["proj"]["o"]
            x = x + _ffn_np(_ln_np(x, *lw["ln2"]), lw["ffn"])
        return x

    def _step(self, x: np.ndarray, weights, caches) -> np.ndarray:
        for lw, cache in zip(weights, caches):
            h = _ln_np(x, *lw["ln1"])
            q, k, v = h @ lw["proj"]["q"], h @ lw["proj"]["k"], h @ lw["proj"]["v"]
            cache["k"] = np.concatenate([cache["k"], k], axis=0)
            cache["v"] = np.concatenate([cache["v"], v], axis=0)
            a = _attend(q, cache["k"], cache["v"], lw["n_heads"], mask=None)
            x = x + a @ lw["proj"]["o"]
            x = x + _ffn_np(_ln_np(x, *lw["ln2"]), lw["ffn"])
        return x

    def _head(self, x: np.ndarray) -> np.ndarray:
        return _ln_np(x, self.ln_f_g.data, self.ln_f_b.data) @ self.w_out.data


def lora_parameter_count(n_layers: int, d_in: int, d_out: int, rank: int,
                         n_targets: int = 4) -> int:
    return n_layers * n_targets * rank * (d_in + d_out)


def _ln_np(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + np.float32(eps)) * g + b


def _gelu_np(x: np.ndarray) -> np.ndarray:
    c = np.float32(math.sqrt(2.0 / math.pi))
    k = np.float32(0.044715)
    return 0.5 * x * (1.0 + np.tanh(c * (x + k * x**3)))


def _ffn_np(h: np.ndarray, ffn) -> np.ndarray:
    w1, b1, w2, b2 = ffn
    return _gelu_np(h @ w1 + b1) @ w2 + b2


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int,
            mask: np.ndarray | None) -> np.ndarray:
    tq, d = q.shape
    tk = k.shape[0]
    dh = d // n_heads
    qh = q.reshape(tq, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(tk, n_heads, dh).transpose(1, 2, 0)
    vh = v.reshape(tk, n_heads, dh).transpose(1, 0, 2)
    scores = (qh @ kh) * np.float32(1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    attn = e / e.sum(axis=-1, keepdims=True)
    ctx = attn @ vh
    return ctx.transpose(1, 0, 2).reshape(tq, d)
