"""Manifest records and dataset builders.

Manifests are JSON Lines, one record per line, written canonically so a
read/write round-trip is byte-identical. Builders cover the zero-shot
slot split, the FSC intent/slot relabeling, the task-agnostic binary
benchmark assembly, spoken instruction-tuning construction, and a
deterministic synthetic micro-corpus for end-to-end tests.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .audio import FRAMES_PER_WORD, save_mel, synthesize_mel
from .errors import MissingAnnotation

TASKS = ("ASR", "IC", "SF", "SQA", "SQIT", "SIT", "SA", "SER", "STER")

# annotation keys each task must carry
_REQUIRED = {
    "ASR": (),
    "IC": ("intent",),
    "SF": ("entities",),
    "SQA": ("question", "answer"),
    "SQIT": ("output",),
    "SIT": ("instruction", "output"),
    "SA": ("label", "binary_labels"),
    "SER": ("label", "binary_labels", "paired_text"),
    "STER": ("label", "binary_labels", "paired_text"),
}

DEFAULT_HELDOUT_SLOTS = ("podcast_name", "artist_name", "audiobook_name",
                         "business_name", "radio_name")

SLU_GLUE_SUBTASKS = {
    "SST-2": ("SA", "Classify the sentiment of [SPEECH] into positive or negative.",
              ("positive", "negative"), False),
    "QQP": ("SER", "Identify if the question in [SPEECH] is a paraphrase of the "
            "question in [TEXT].", ("yes", "no"), True),
    "QNLI": ("SER", "Identify if the context in [SPEECH] contains the answer to the "
             "question in [TEXT].", ("yes", "no"), True),
    "RTE": ("STER", "Identify if the sentence in [SPEECH] entails the sentence in "
            "[TEXT].", ("yes", "no"), True),
    "SciTail": ("STER", "Identify if the premise in [SPEECH] supports the hypothesis "
                "in [TEXT].", ("yes", "no"), True),
}

EXPECTED_SLU_GLUE_COUNTS = {"SST-2": 2790, "QQP": 3996, "QNLI": 2718,
                            "RTE": 2088, "SciTail": 2736}


@dataclass
class ManifestRecord:
    id: str
    audio: str
    transcript: str
    task: str
    annotation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task tag {self.task!r}")
        missing = [k for k in _REQUIRED[self.task] if self.annotation.get(k) is None]
        if missing:
            raise MissingAnnotation(
                f"record {self.id}: task {self.task} requires annotation {missing}")

    def slot_types(self) -> set[str]:
        return {t for t, _ in self.annotation.get("entities", [])}

    def to_dict(self) -> dict:
        return {"id": self.id, "audio": self.audio, "transcript": self.transcript,
                "task": self.task, "annotation": self.annotation}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        return cls(id=d["id"], audio=d["audio"], transcript=d["transcript"],
                   task=d["task"], annotation=d.get("annotation", {}))


def _canon(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def write_manifest(path, records: list[ManifestRecord], meta: dict | None = None) -> None:
    lines = []
    if meta is not None:
        lines.append(_canon({"_meta": meta}))
    lines.extend(_canon(r.to_dict()) for r in records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[list[ManifestRecord], dict | None]:
    records, meta = [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if "_meta" in d:
            meta = d["_meta"]
            continue
        records.append(ManifestRecord.from_dict(d))
    ids = [r.id for r in records]
    if len(ids) != len(set(ids)):
        raise ValueError(f"{path}: duplicate record ids")
    return records, meta


# ---------------------------------------------------------------------------
# zero-shot slot split
# ---------------------------------------------------------------------------

def build_slurp_zeroshot(records: list[ManifestRecord],
                         heldout_slots=DEFAULT_HELDOUT_SLOTS
                         ) -> tuple[list[ManifestRecord], list[ManifestRecord]]:
    """Hold out every record mentioning a held-out slot type as the test set."""
    observed = set()
    for r in records:
        observed |= r.slot_types()
    unknown = [s for s in heldout_slots if s not in observed]
    if unknown:
        raise ValueError(f"held-out slot types never observed in the corpus: {unknown}")
    held = set(heldout_slots)
    train = [r for r in records if not (r.slot_types() & held)]
    test = [r for r in records if r.slot_types() & held]
    return train, test


# ---------------------------------------------------------------------------
# FSC relabeling
# ---------------------------------------------------------------------------

def _load_fsc_map() -> dict:
    text = (resources.files("speechslu.data") / "fsc_intent_map.json").read_text("utf-8")
    return json.loads(text)


_FSC_MAP = None


def remap_fsc(record: dict) -> tuple[str, list[tuple[str, str]]]:
    """(action, object, location) -> (intent, entities) under the 15x2 scheme."""
    global _FSC_MAP
    if _FSC_MAP is None:
        _FSC_MAP = _load_fsc_map()
    try:
        action, obj, location = record["action"], record["object"], record["location"]
    except KeyError as exc:
        raise MissingAnnotation(f"FSC record missing field {exc}") from exc
    key = f"{action}|{obj}"
    intent = _FSC_MAP["intents"].get(key)
    if intent is None:
        raise ValueError(f"unmapped FSC combination ({action}, {obj}, {location})")
    entities: list[tuple[str, str]] = []
    if obj in _FSC_MAP["language_objects"]:
        entities.append(("language", obj))
    if location and location != "none":
        entities.append(("location", location))
    return intent, entities


def build_fsc(records: list[dict], audio_key: str = "audio",
              transcript_key: str = "transcription") -> list[ManifestRecord]:
    """FSC rows -> IC manifest records carrying the remapped intent + slots."""
    out = []
    for i, row in enumerate(records):
        intent, entities = remap_fsc(row)
        out.append(ManifestRecord(
            id=row.get("id", f"fsc-{i:06d}"),
            audio=row.get(audio_key) or f"synthetic:{row[transcript_key]}",
            transcript=row[transcript_key],
            task="IC",
            annotation={"intent": intent, "entities": entities}))
    return out


def fsc_inventory() -> tuple[list[str], list[str]]:
    global _FSC_MAP
    if _FSC_MAP is None:
        _FSC_MAP = _load_fsc_map()
    intents = sorted(set(_FSC_MAP["intents"].values()))
    return intents, list(_FSC_MAP["slot_types"])


# ---------------------------------------------------------------------------
# task-agnostic binary benchmark
# ---------------------------------------------------------------------------

def build_slu_glue(records: list[dict]) -> list[ManifestRecord]:
    """Source rows {subtask, text, paired_text?, label, audio?} -> manifest.

    The per-subtask instruction keeps its [SPEECH] hole (bound to the
    splice at render time); [TEXT] is bound here to the paired sentence.
    """
    out = []
    for i, row in enumerate(records):
        sub = row.get("subtask")
        if sub == "STS-B":
            raise ValueError("STS-B is excluded: not suitable for zero-shot evaluation")
        if sub not in SLU_GLUE_SUBTASKS:
            raise ValueError(f"unknown sub-task {sub!r}")
        task, instruction, labels, needs_text = SLU_GLUE_SUBTASKS[sub]
        label = str(row["label"]).lower()
        if label not in labels:
            raise ValueError(f"{sub} label {row['label']!r} not in {labels}")
        annotation = {"label": label, "binary_labels": list(labels), "subtask": sub}
        if needs_text:
            paired = row.get("paired_text")
            if paired is None:
                raise MissingAnnotation(f"{sub} record {i} needs paired_text")
            annotation["paired_text"] = paired
            annotation["instruction"] = instruction.replace("[TEXT]", paired)
        else:
            annotation["instruction"] = instruction
        out.append(ManifestRecord(
            id=row.get("id", f"{sub.lower()}-{i:06d}"),
            audio=row.get("audio") or f"synthetic:{row['text']}",
            transcript=row["text"],
            task=task,
            annotation=annotation))
    return out


def slu_glue_count_report(records: list[ManifestRecord]) -> dict[str, dict]:
    """Observed vs expected per-subtask sizes (full-source sanity check)."""
    got: dict[str, int] = {}
    for r in records:
        sub = r.annotation.get("subtask", "?")
        got[sub] = got.get(sub, 0) + 1
    return {sub: {"observed": got.get(sub, 0), "expected": exp,
                  "match": got.get(sub, 0) == exp}
            for sub, exp in EXPECTED_SLU_GLUE_COUNTS.items()}


# ---------------------------------------------------------------------------
# spoken instruction tuning
# ---------------------------------------------------------------------------

_EQUATION_RE = re.compile(
    r"(\$[^$]+\$|\\\(|\\\[|\\frac|\\sum|\\int|\\sqrt|[=^_]\s*\d|\d\s*[+*/^=]\s*\d)")
_TABLE_RE = re.compile(r"^\s*\S+(\s*\|\s*\S+){2,}", re.MULTILINE)


@dataclass
class AlpacaFilters:
    max_words: int = 60


def _filter_reason(instruction: str, text_input: str, filters: AlpacaFilters) -> str | None:
    for fld in (instruction, text_input):
        if len(fld.split()) > filters.max_words:
            return "length"
        if _EQUATION_RE.search(fld):
            return "equation"
        if fld.count("|") >= 4 and _TABLE_RE.search(fld):
            return "table"
        if fld.count("\t") >= 2:
            return "table"
    return None


def build_spoken_alpaca(records: list[dict], filters: AlpacaFilters | None = None
                        ) -> tuple[list[ManifestRecord], list[ManifestRecord], list[dict]]:
    """Instruction-tuning rows -> (SIT manifest, SQIT manifest, drop log).

    Rows with a context `input` field become SIT examples: the input is
    spoken, the instruction stays as the text prompt. Rows without one
    become SQIT examples: the instruction itself is spoken and no text
    prompt is given.
    """
    filters = filters or AlpacaFilters()
    sit, sqit, dropped = [], [], []
    for i, row in enumerate(records):
        instruction = row.get("instruction", "").strip()
        output = row.get("output", "").strip()
        text_input = (row.get("input") or "").strip()
        if not instruction or not output:
            dropped.append({"index": i, "reason": "missing-field"})
            continue
        reason = _filter_reason(instruction, text_input, filters)
        if reason:
            dropped.append({"index": i, "reason": reason})
            continue
        if text_input:
            sit.append(ManifestRecord(
                id=f"sit-{i:06d}", audio=f"synthetic:{text_input}",
                transcript=text_input, task="SIT",
                annotation={"instruction": instruction, "output": output}))
        else:
            sqit.append(ManifestRecord(
                id=f"sqit-{i:06d}", audio=f"synthetic:{instruction}",
                transcript=instruction, task="SQIT",
                annotation={"output": output}))
    return sit, sqit, dropped


# ---------------------------------------------------------------------------
# close-field smart-home subset passthrough
# ---------------------------------------------------------------------------

def build_smartlight(records: list[ManifestRecord], n_intents: int = 6,
                     n_slot_types: int = 3) -> list[ManifestRecord]:
    """Validate inventory sizes of an already-annotated close-field test set."""
    intents = {r.annotation.get("intent") for r in records if r.annotation.get("intent")}
    slots = set()
    for r in records:
        slots |= r.slot_types()
    if len(intents) > n_intents:
        raise ValueError(f"expected at most {n_intents} intents, found {len(intents)}")
    if len(slots) > n_slot_types:
        raise ValueError(f"expected at most {n_slot_types} slot types, found {len(slots)}")
    return list(records)


# ---------------------------------------------------------------------------
# synthetic micro-corpus
# ---------------------------------------------------------------------------

@dataclass
class MicroCorpusSpec:
    counts: dict[str, int] = field(default_factory=lambda: {"ASR": 10, "IC": 10, "SF": 10})
    intents: tuple[str, ...] = ("lights_on", "lights_off", "play_music")
    sf_slots: tuple[str, ...] = ("color", "room", "time")
    max_slots_per_utterance: int = 2


_VALUE_POOL = ("alpha", "bravo", "charlie", "delta", "echo")
_SLOT_VALUES = {
    "color": ("red", "blue", "green", "amber"),
    "room": ("kitchen", "bedroom", "office"),
    "time": ("noon", "dawn", "dusk"),
}

_IC_TEMPLATES = {
    "lights_on": ("turn on the light", "switch on the lamp", "lights on please"),
    "lights_off": ("turn off the light", "switch off the lamp", "lights out please"),
    "play_music": ("play some music", "start a song now", "put on a tune"),
}

_ASR_WORDS = ("the", "a", "cat", "dog", "bird", "runs", "sleeps", "sings",
              "today", "slowly", "happily", "outside")

_SQA_COLORS = ("red", "blue", "green", "white")

_SQIT_PAIRS = (("name a primary colour", "red"),
               ("say the opposite of hot", "cold"),
               ("count from one to three", "one two three"),
               ("name a farm animal", "cow"))

_SA_POS = ("this film was wonderful and bright", "what a lovely charming story",
           "an excellent and joyful show")
_SA_NEG = ("this film was dull and tiresome", "what a bleak boring story",
           "an awful and painful show")

_SER_PAIRS = ((("is the light on", "is the lamp switched on"), "yes"),
              (("is the light on", "where is the nearest shop"), "no"),
              (("can dogs swim", "are dogs able to swim"), "yes"),
              (("can dogs swim", "do cats like milk"), "no"))

_STER_PAIRS = ((("the cat sleeps on the mat", "the cat is sleeping"), "yes"),
               (("the cat sleeps on the mat", "the dog is barking"), "no"),
               (("rain fell all morning", "it rained in the morning"), "yes"),
               (("rain fell all morning", "the sun shone brightly"), "no"))


def _ic_record(i: int, spec: MicroCorpusSpec, rng) -> ManifestRecord:
    intent = spec.intents[int(rng.integers(0, len(spec.intents)))]
    templates = _IC_TEMPLATES.get(intent)
    if templates is None:  # fall back for caller-supplied inventories
        templates = (f"{intent.replace('_', ' ')} please",
                     f"please do {intent.replace('_', ' ')} now")
    transcript = templates[int(rng.integers(0, len(templates)))]
    return ManifestRecord(
        id=f"ic-{i:04d}", audio=f"synthetic:{transcript}", transcript=transcript,
        task="IC", annotation={"intent": intent, "labels": list(spec.intents)})


def _sf_record(i: int, spec: MicroCorpusSpec, rng) -> ManifestRecord:
    # bias toward single-slot utterances; keeps spoken forms short
    n = 1 if rng.random() < 0.7 else int(rng.integers(2, spec.max_slots_per_utterance + 1))
    n = min(n, len(spec.sf_slots))
    picks = rng.choice(len(spec.sf_slots), size=n, replace=False)
    entities = []
    parts = []
    for p in sorted(picks):
        slot = spec.sf_slots[int(p)]
        pool = _SLOT_VALUES.get(slot, _VALUE_POOL)
        value = pool[int(rng.integers(0, len(pool)))]
        entities.append((slot, value))
        parts.append(f"the {slot.replace('_', ' ')} is {value}")
    transcript = " and ".join(parts)
    return ManifestRecord(
        id=f"sf-{i:04d}", audio=f"synthetic:{transcript}", transcript=transcript,
        task="SF", annotation={"entities": entities, "labels": list(spec.sf_slots)})


def _asr_record(i: int, rng) -> ManifestRecord:
    n = int(rng.integers(3, 5))
    words = [_ASR_WORDS[int(rng.integers(0, len(_ASR_WORDS)))] for _ in range(n)]
    transcript = " ".join(words)
    return ManifestRecord(id=f"asr-{i:04d}", audio=f"synthetic:{transcript}",
                          transcript=transcript, task="ASR", annotation={})


def _sqa_record(i: int, rng) -> ManifestRecord:
    color = _SQA_COLORS[int(rng.integers(0, len(_SQA_COLORS)))]
    transcript = f"the box on the table is {color}"
    return ManifestRecord(
        id=f"sqa-{i:04d}", audio=f"synthetic:{transcript}", transcript=transcript,
        task="SQA", annotation={"question": "what colour is the box",
                                "answer": color})


def _sit_record(i: int, rng) -> ManifestRecord:
    n = int(rng.integers(2, 5))
    phrase = " ".join(_ASR_WORDS[int(rng.integers(0, len(_ASR_WORDS)))] for _ in range(n))
    return ManifestRecord(
        id=f"sit-{i:04d}", audio=f"synthetic:{phrase}", transcript=phrase,
        task="SIT", annotation={"instruction": "Repeat the spoken words exactly.",
                                "output": phrase})


def _sqit_record(i: int, rng) -> ManifestRecord:
    q, a = _SQIT_PAIRS[int(rng.integers(0, len(_SQIT_PAIRS)))]
    return ManifestRecord(id=f"sqit-{i:04d}", audio=f"synthetic:{q}", transcript=q,
                          task="SQIT", annotation={"output": a})


def _sa_record(i: int, rng) -> ManifestRecord:
    positive = bool(rng.integers(0, 2))
    pool = _SA_POS if positive else _SA_NEG
    transcript = pool[int(rng.integers(0, len(pool)))]
    return ManifestRecord(
        id=f"sa-{i:04d}", audio=f"synthetic:{transcript}", transcript=transcript,
        task="SA", annotation={
            "label": "positive" if positive else "negative",
            "binary_labels": ["positive", "negative"],
            "instruction": "Classify the sentiment of [SPEECH] into positive or negative."})


def _pair_record(i: int, rng, task: str, pairs, instruction: str) -> ManifestRecord:
    (speech, paired), label = pairs[int(rng.integers(0, len(pairs)))]
    return ManifestRecord(
        id=f"{task.lower()}-{i:04d}", audio=f"synthetic:{speech}", transcript=speech,
        task=task, annotation={
            "label": label, "binary_labels": ["yes", "no"], "paired_text": paired,
            "instruction": instruction.replace("[TEXT]", paired)})


def generate_micro_corpus(spec: MicroCorpusSpec, rng: np.random.Generator,
                          out_dir=None) -> dict[str, list[ManifestRecord]]:
    """Deterministic synthetic corpus; optionally writes manifests + mel files."""
    makers = {
        "ASR": lambda i: _asr_record(i, rng),
        "IC": lambda i: _ic_record(i, spec, rng),
        "SF": lambda i: _sf_record(i, spec, rng),
        "SQA": lambda i: _sqa_record(i, rng),
        "SIT": lambda i: _sit_record(i, rng),
        "SQIT": lambda i: _sqit_record(i, rng),
        "SA": lambda i: _sa_record(i, rng),
        "SER": lambda i: _pair_record(
            i, rng, "SER", _SER_PAIRS,
            "Identify if the question in [SPEECH] is a paraphrase of the question in [TEXT]."),
        "STER": lambda i: _pair_record(
            i, rng, "STER", _STER_PAIRS,
            "Identify if the sentence in [SPEECH] entails the sentence in [TEXT]."),
    }
    corpus: dict[str, list[ManifestRecord]] = {}
    for task in TASKS:  # fixed iteration order keeps generation deterministic
        count = spec.counts.get(task, 0)
        if count:
            corpus[task] = [makers[task](i) for i in range(count)]
    if out_dir is not None:
        out = Path(out_dir)
        (out / "mels").mkdir(parents=True, exist_ok=True)
        for task, records in corpus.items():
            for r in records:
                mel = synthesize_mel(r.transcript, frames_per_word=FRAMES_PER_WORD)
                mel_path = out / "mels" / f"{r.id}.mel"
                save_mel(mel_path, mel)
                r.audio = f"mels/{r.id}.mel"
            write_manifest(out / f"{task.lower()}.jsonl", records)
    return corpus
