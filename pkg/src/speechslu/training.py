"""Multi-task training: strategy-config assignment, supervised-sequence
construction with loss masking, and the AdamW loop that updates only the
aligner and LoRA parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .audio import resolve_audio
from .datasets import ManifestRecord
from .decoder import MultimodalSequence, expand_splice
from .errors import MissingAnnotation, NonFiniteInput, TrainingDiverged
from .model import SluModel
from .optim import AdamWState, adamw_step, clip_global_norm
from .orchestrator import collect_inventories
from .prompts import (DialogueTurn, build_mr_history, build_scot,
                      build_task_prompt, render_chat, sample_candidate_labels,
                      scot_target)

PLAIN = "plain"
STRATEGY_CONFIGS = ("alone", "scot", "mr")


def assign_config(record: ManifestRecord, rng: np.random.Generator,
                  probs=(1 / 3, 1 / 3, 1 / 3)) -> str:
    """SLU tasks draw one of the three strategy configs; ASR and spoken-query
    instruction examples always train in plain single-task form."""
    if record.task in ("ASR", "SQIT"):
        return PLAIN
    idx = int(rng.choice(3, p=np.asarray(probs) / np.sum(probs)))
    return STRATEGY_CONFIGS[idx]


def gold_answer(record: ManifestRecord) -> str:
    """The supervised answer string for a record's task."""
    ann = record.annotation
    if record.task == "ASR":
        return record.transcript
    if record.task == "IC":
        return ann["intent"]
    if record.task == "SF":
        obj: dict[str, object] = {}
        for t, v in ann["entities"]:
            if t in obj:
                prev = obj[t]
                obj[t] = prev + [v] if isinstance(prev, list) else [prev, v]
            else:
                obj[t] = v
        return json.dumps(obj, ensure_ascii=False)
    if record.task == "SQA":
        return ann["answer"]
    if record.task in ("SQIT", "SIT"):
        return ann["output"]
    if record.task in ("SA", "SER", "STER"):
        return ann["label"]
    raise MissingAnnotation(f"no supervised target for task {record.task}")


def _slu_prompt_for_training(record: ManifestRecord, model: SluModel,
                             inventories: dict, rng) -> str:
    ann = record.annotation
    if record.task == "IC":
        labels = sample_candidate_labels(
            inventories.get("IC") or ann.get("labels") or [ann["intent"]],
            ann["intent"], model.prompt_cfg.k_min, rng)
        return build_task_prompt("IC", labels, model.bank, rng)
    if record.task == "SF":
        gold_types = sorted({t for t, _ in ann["entities"]})
        inventory = inventories.get("SF") or ann.get("labels") or gold_types
        labels = sample_candidate_labels(inventory, gold_types or inventory[:1],
                                         model.prompt_cfg.k_min, rng)
        return build_task_prompt("SF", labels, model.bank, rng)
    if record.task == "SQA":
        return ann["question"]
    if record.task == "SIT":
        return ann["instruction"]
    if record.task in ("SA", "SER", "STER"):
        return ann["instruction"]
    return build_task_prompt("ASR", [], model.bank, rng)


@dataclass
class TrainingExample:
    record_id: str
    task: str
    config: str
    sequence: MultimodalSequence
    n_supervised: int


def build_training_sequence(record: ManifestRecord, config: str, model: SluModel,
                            inventories: dict, rng: np.random.Generator,
                            speech_len: int) -> TrainingExample:
    """Render the dialogue for a record under a strategy config and mask the
    supervised response span(s)."""
    vocab, pcfg = model.vocab, model.prompt_cfg
    answer = gold_answer(record)
    asr_prompt = build_task_prompt("ASR", [], model.bank, rng)

    if config == PLAIN or config == "alone":
        if record.task == "SQIT":
            turns = [DialogueTurn("user", "", speech=True)]
        else:
            prompt = _slu_prompt_for_training(record, model, inventories, rng)
            turns = [DialogueTurn("user", prompt, speech=True)]
        turns.append(DialogueTurn("assistant", answer))
    elif config == "scot":
        slu_prompt = _slu_prompt_for_training(record, model, inventories, rng)
        user = build_scot(asr_prompt, slu_prompt, pcfg.scot_delimiter)
        target = scot_target(record.transcript, answer, pcfg.scot_delimiter)
        turns = [DialogueTurn("user", user, speech=True),
                 DialogueTurn("assistant", target)]
    elif config == "mr":
        slu_prompt = _slu_prompt_for_training(record, model, inventories, rng)
        turns = build_mr_history(record.transcript, slu_prompt, asr_prompt)
        turns.append(DialogueTurn("assistant", answer))
    else:
        raise ValueError(f"unknown training config {config!r}")

    rendered = render_chat(turns, vocab, pcfg)
    seq = expand_splice(rendered.ids, rendered.splice_index, speech_len,
                        vocab.special_id("speech_placeholder"))
    offset = speech_len - 1 if rendered.splice_index is not None else 0
    mask = np.zeros(len(seq.ids), dtype=bool)
    for role, start, end in rendered.spans:
        if role != "assistant":
            continue
        lo = start + offset if rendered.splice_index is not None and start > rendered.splice_index else start
        hi = end + offset if rendered.splice_index is not None and end > rendered.splice_index else end
        mask[lo:hi] = True
    seq.loss_mask = mask
    return TrainingExample(record_id=record.id, task=record.task, config=config,
                           sequence=seq, n_supervised=int(mask.sum()))


@dataclass
class TraceRow:
    step: int
    task: str
    config: str
    loss: float          # per supervised token, this sequence
    tokens: int = 0      # supervised tokens in this sequence

    def csv(self) -> str:
        return f"{self.step},{self.task},{self.config},{self.loss:.6f}"


@dataclass
class TrainResult:
    trace: list[TraceRow] = field(default_factory=list)
    steps: int = 0
    final_loss: float = float("nan")

    def mean_recent_loss(self, n: int = 50) -> float:
        """Token-weighted per-token loss over the last n trace rows."""
        rows = self.trace[-n:]
        tokens = sum(r.tokens for r in rows)
        if tokens == 0:
            return sum(r.loss for r in rows) / max(1, len(rows))
        return sum(r.loss * r.tokens for r in rows) / tokens


def _epoch_stream(records: list[ManifestRecord], weights: dict[str, float],
                  rng: np.random.Generator) -> list[ManifestRecord]:
    """Shuffled stream with each record appearing exactly once (times any
    whole-number task repetition weight)."""
    stream: list[ManifestRecord] = []
    for r in records:
        reps = int(round(weights.get(r.task, 1.0)))
        stream.extend([r] * max(1, reps))
    order = rng.permutation(len(stream))
    return [stream[i] for i in order]


def train(records: list[ManifestRecord], model: SluModel, epochs: int | None = None,
          base_dir=None, log_every: int = 0) -> TrainResult:
    """One pass (or `epochs` passes) of masked-CE training over the mixed
    task stream. Only aligner + LoRA parameters receive updates."""
    tcfg = model.cfg.train
    epochs = tcfg.epochs if epochs is None else epochs
    inventories = collect_inventories(records)
    trainable = list(model.trainable_parameters().values())
    state = AdamWState(lr=tcfg.lr, betas=tcfg.betas, eps=tcfg.eps,
                       weight_decay=tcfg.weight_decay)
    seeds = np.random.SeedSequence(model.cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    build_rng = np.random.default_rng(seeds[1])

    result = TrainResult()
    step = 0
    steps_per_epoch = -(-sum(max(1, int(round(tcfg.task_weights.get(r.task, 1.0))))
                             for r in records) // tcfg.batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    for _ in range(epochs):
        stream = _epoch_stream(records, tcfg.task_weights, shuffle_rng)
        for batch_start in range(0, len(stream), tcfg.batch_size):
            batch = stream[batch_start:batch_start + tcfg.batch_size]
            step += 1
            if tcfg.lr_schedule == "linear":
                state.lr = tcfg.lr * max(0.1, 1.0 - step / total_steps)
            total_nll = 0.0
            total_tokens = 0
            rows = []
            for record in batch:
                config = assign_config(record, build_rng, tcfg.strategy_probs)
                mel = resolve_audio(record.audio, base_dir=base_dir,
                                    n_mels=model.cfg.encoder.n_mels,
                                    clip_seconds=model.cfg.encoder.clip_seconds)
                speech_len = model.speech_len(mel)
                example = build_training_sequence(record, config, model,
                                                  inventories, build_rng, speech_len)
                try:
                    speech = model.embed_audio(mel, cache_key=record.audio)
                    seq = example.sequence
                    logits = model.decoder.forward(seq, speech)
                    t = len(seq.ids)
                    loss = ag.cross_entropy(
                        ag.slice_rows(logits, 0, t - 1), seq.ids[1:],
                        ignore_mask=seq.loss_mask[1:], reduction="sum")
                except NonFiniteInput as exc:
                    raise TrainingDiverged(step, record.id) from exc
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(step, record.id)
                n_tok = int(seq.loss_mask[1:].sum())
                total_nll += float(loss.data)
                total_tokens += n_tok
                ag.backward(loss)
                rows.append((record, example, float(loss.data) / max(1, n_tok), n_tok))
            scale = 1.0 / max(1, total_tokens)
            for p in trainable:
                if p.grad is not None:
                    p.grad *= scale
            clip_global_norm(trainable, tcfg.clip_norm)
            missing = [p for p in trainable if p.grad is None]
            for p in missing:
                p.grad = np.zeros_like(p.data)
            adamw_step(trainable, state)
            for record, example, per_tok, n_tok in rows:
                result.trace.append(
                    TraceRow(step, record.task, example.config, per_tok, n_tok))
            if log_every and step % log_every == 0:
                batch_loss = total_nll / max(1, total_tokens)
                print(f"step {step}: loss/token {batch_loss:.4f}")
    result.steps = step
    result.final_loss = result.trace[-1].loss if result.trace else float("nan")
    return result


def write_trace_csv(path, result: TrainResult, config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", "step,task,config,loss"]
    lines.extend(row.csv() for row in result.trace)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
