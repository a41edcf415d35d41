"""Command-line entry point: prepare-data / train / infer / evaluate / selftest."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .errors import ConfigError
from .datasets import (MicroCorpusSpec, build_slurp_zeroshot, generate_micro_corpus,
                       read_manifest, write_manifest)
from .metrics import (binary_accuracy, corpus_wer, intent_accuracy,
                      perfect_parsing, slu_f1)
from .model import SluModel, load_model
from .orchestrator import (infer_manifest, predictions_to_jsonl, read_predictions)
from .tokenizer import build_vocabulary, default_specials
from .training import train, write_trace_csv


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# prepare-data
# ---------------------------------------------------------------------------

def cmd_prepare_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "micro":
        spec = MicroCorpusSpec()
        if args.counts:
            spec.counts = {k: int(v) for k, v in
                           (pair.split("=") for pair in args.counts.split(","))}
        rng = np.random.default_rng(args.seed or 0)
        corpus = generate_micro_corpus(spec, rng, out_dir=out_dir)
        _log(f"micro corpus: " + ", ".join(f"{t}={len(v)}" for t, v in corpus.items()))
        return 0
    if args.kind == "slurp-zeroshot":
        records, meta = read_manifest(args.manifest)
        heldout = args.heldout.split(",") if args.heldout else None
        train_recs, test_recs = (build_slurp_zeroshot(records, heldout)
                                 if heldout else build_slurp_zeroshot(records))
        write_manifest(out_dir / "train.jsonl", train_recs, meta)
        write_manifest(out_dir / "test.jsonl", test_recs, meta)
        _log(f"zero-shot split: {len(train_recs)} train / {len(test_recs)} test "
             f"(guideline test size is ~18k on the full source corpus)")
        return 0
    raise ConfigError(f"unknown prepare-data kind {args.kind!r}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = args.manifest or cfg.manifests
    if not manifests:
        raise ConfigError("train: no manifests given (flag --manifest or config.manifests)")
    records = []
    base_dirs = {}
    for path in manifests:
        recs, _ = read_manifest(path)
        for r in recs:
            base_dirs[r.id] = Path(path).parent
        records.extend(recs)
    if not records:
        raise ConfigError("train: manifests contain no records")

    from .experiments import training_texts
    from .prompts import PromptBank

    bank = PromptBank.load(cfg.prompts.bank_dir)
    vocab = build_vocabulary(training_texts(records, bank),
                             default_specials(cfg.prompts))
    model = SluModel(cfg, vocab)
    base_dir = Path(manifests[0]).parent
    _log(f"training on {len(records)} records "
         f"({len(model.trainable_parameters())} trainable tensors)")
    result = train(records, model, epochs=args.epochs, base_dir=base_dir)
    model.save(out_dir)
    save_config(cfg, out_dir / "config.json")
    write_trace_csv(out_dir / "loss_trace.csv", result, model.config_hash)
    _log(f"done: {result.steps} steps, last loss/token {result.final_loss:.4f}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def cmd_infer(args) -> int:
    run_dir = Path(args.run)
    model = load_model(run_dir)
    records, _ = read_manifest(args.manifest)
    pairs = infer_manifest(records, model, args.strategy, seed=model.cfg.seed,
                           base_dir=Path(args.manifest).parent)
    payload = predictions_to_jsonl(pairs, model.config_hash, args.strategy)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(payload, encoding="utf-8")
    _log(f"wrote {len(pairs)} predictions to {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _join(preds: list[dict], records) -> list[tuple[dict, object]]:
    by_id = {r.id: r for r in records}
    missing = [p["id"] for p in preds if p["id"] not in by_id]
    if missing:
        raise ConfigError(f"evaluate: prediction ids missing from gold manifest: {missing[:5]}")
    return [(p, by_id[p["id"]]) for p in preds]


def cmd_evaluate(args) -> int:
    preds, meta = read_predictions(args.pred)
    records, _ = read_manifest(args.gold)
    joined = _join(preds, records)
    report: dict[str, object] = {"task": args.task, "n_examples": len(joined)}
    if meta:
        report["config_hash"] = meta.get("config_hash")
        report["strategy"] = meta.get("strategy")

    if args.task == "asr":
        refs = [r.transcript for _, r in joined]
        hyps = [(p.get("transcript") or "") for p, _ in joined]
        report["wer"] = corpus_wer(refs, hyps)
    elif args.task == "ic":
        golds = [r.annotation["intent"] for _, r in joined]
        guesses = [p.get("intent") for p, _ in joined]
        report["intent_accuracy"] = intent_accuracy(guesses, golds)
    elif args.task == "sf":
        golds = [[tuple(e) for e in r.annotation["entities"]] for _, r in joined]
        guesses = [p.get("entities") for p, _ in joined]
        guesses = [[tuple(e) for e in g] if g else None for g in guesses]
        report.update(slu_f1(guesses, golds))
    elif args.task == "pp":
        intent_golds = [r.annotation["intent"] for _, r in joined]
        entity_golds = [[tuple(e) for e in r.annotation.get("entities", [])]
                        for _, r in joined]
        intents = [p.get("intent") for p, _ in joined]
        entities = [[tuple(e) for e in (p.get("entities") or [])] for p, _ in joined]
        report["perfect_parsing"] = perfect_parsing(
            intents, entities, intent_golds, entity_golds)
    elif args.task == "binary":
        golds = [r.annotation["label"] for _, r in joined]
        labels = tuple(joined[0][1].annotation["binary_labels"]) if joined else ("yes", "no")
        guesses = [p.get("binary") for p, _ in joined]
        report["binary_accuracy"] = binary_accuracy(guesses, golds, labels)
    else:
        raise ConfigError(f"unknown evaluate task {args.task!r}")

    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------

def cmd_selftest(args) -> int:
    import time

    from . import autograd as ag
    from .aligner import ModalityAligner
    from .config import AlignerConfig, DecoderConfig, EncoderConfig, LoraConfig
    from .decoder import InstructionDecoder, MultimodalSequence
    from .encoder import SpeechEncoder
    from .audio import MelSpectrogram
    from .tokenizer import Vocabulary, default_specials

    failures = []

    def check(name: str, fn) -> None:
        t0 = time.time()
        try:
            fn()
            print(f"PASS {name} ({time.time() - t0:.2f}s)")
        except Exception as exc:  # noqa: BLE001 - selftest reports, never raises
            failures.append(name)
            print(f"FAIL {name}: {exc}")

    def gradient_check():
        rng = np.random.default_rng(0)
        x = ag.Tensor(rng.normal(size=(12, 6)), trainable=True)
        cfg = AlignerConfig(d_enc=6, d_dec=5, bottleneck_dim=3)
        aligner = ModalityAligner(cfg, rng)
        for p in aligner.named_parameters().values():
            p.data = rng.normal(size=p.data.shape, scale=0.25)
        loss = ag.tsum(ag.mul(aligner.align(x), aligner.align(x)))
        ag.backward(loss)
        eps = 1e-3
        for p in list(aligner.named_parameters().values())[:4]:
            flat = p.data.reshape(-1)
            idx = 0
            old = flat[idx]
            flat[idx] = old + eps
            up = float(ag.tsum(ag.mul(aligner.align(x), aligner.align(x))).data)
            flat[idx] = old - eps
            dn = float(ag.tsum(ag.mul(aligner.align(x), aligner.align(x))).data)
            flat[idx] = old
            num = (up - dn) / (2 * eps)
            ana = p.grad.reshape(-1)[idx]
            rel = abs(num - ana) / max(1e-8, abs(num), abs(ana))
            if rel > 1e-4 and abs(num - ana) > 5e-6:
                raise AssertionError(f"{p.name}: rel err {rel:.2e}")

    def lora_identity():
        rng = np.random.default_rng(1)
        vocab = Vocabulary(default_specials(), ["hello", " hello"])
        dec = InstructionDecoder(DecoderConfig(d_model=16, n_layers=1, n_heads=2,
                                               d_ff=32), vocab, rng)
        ids = np.array([0, 262, 263], dtype=np.int64)
        base = dec.forward(MultimodalSequence(ids)).data.copy()
        dec.inject_lora(LoraConfig(rank=2, alpha=4.0), rng)
        after = dec.forward(MultimodalSequence(ids)).data
        if base.tobytes() != after.tobytes():
            raise AssertionError("logits changed at zero-init LoRA injection")

    def shape_law():
        rng = np.random.default_rng(2)
        enc = SpeechEncoder(EncoderConfig(), rng)
        ali = ModalityAligner(AlignerConfig(), rng)
        mel = MelSpectrogram(frames=np.zeros((80, 3000), dtype=np.float32))
        out = ali.align(enc.encode(mel))
        if out.data.shape[0] != 375:
            raise AssertionError(f"got {out.data.shape[0]} embeddings, want 375")

    check("gradient-check", gradient_check)
    check("lora-identity", lora_identity)
    check("shape-law-3000-1500-375", shape_law)
    if failures:
        print(f"selftest: {len(failures)} failure(s)")
        return 1
    print("selftest: all checks passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechslu",
        description="Desk-scale speech-LLM for spoken language understanding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build dataset manifests")
    p.add_argument("--kind", required=True, choices=["micro", "slurp-zeroshot"])
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="source manifest (slurp-zeroshot)")
    p.add_argument("--heldout", help="comma-separated held-out slot types")
    p.add_argument("--counts", help="micro corpus sizes, e.g. IC=10,SF=10")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train aligner + LoRA on manifests")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", action="append", help="training manifest (repeatable)")
    p.add_argument("--out", help="output run directory")
    p.add_argument("--epochs", type=int, default=None, help="override config epochs")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="batch inference over a manifest")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", required=True, choices=["alone", "scot", "mr"])
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predictions against gold manifests")
    p.add_argument("--task", required=True, choices=["asr", "ic", "sf", "pp", "binary"])
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selftest", help="gradient, LoRA-identity and shape-law checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
