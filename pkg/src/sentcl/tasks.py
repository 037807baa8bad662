"""GLUE-style task descriptions, labeled examples, TSV ingestion, and
fixed-length sequence encoding.

TSV contract: UTF-8, tab-separated, first row is a header with columns
text_a [text_b] [label]. Labels arrive as strings and are mapped through
the task's label set, so task files need no per-task parsers.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError
from .text import CLS_ID, PAD_ID, SEP_ID, tokenize


@dataclass(frozen=True)
class TaskSpec:
    name: str
    input_arity: str  # "single" | "pair"
    label_kind: str  # "classification" | "regression"
    labels: Optional[tuple] = None  # classification label strings, index = class id
    bounds: Optional[tuple] = None  # regression (lo, hi)
    metrics: tuple = ("accuracy",)
    default_lr: Optional[float] = None
    default_epochs: Optional[int] = None

    def __post_init__(self):
        if self.input_arity not in ("single", "pair"):
            raise ValueError(f"bad input_arity {self.input_arity!r}")
        if self.label_kind == "classification":
            if not self.labels or len(self.labels) < 2:
                raise ValueError("classification tasks need >= 2 label values")
        elif self.label_kind == "regression":
            if not self.bounds or len(self.bounds) != 2:
                raise ValueError("regression tasks need (lo, hi) bounds")
        else:
            raise ValueError(f"bad label_kind {self.label_kind!r}")
        if not self.metrics:
            raise ValueError("metric set must be nonempty")

    @property
    def num_outputs(self):
        return 1 if self.label_kind == "regression" else len(self.labels)

    @property
    def primary_metric(self):
        return self.metrics[0]


# Per-task finetuning defaults follow the published recipe this build
# mirrors (lr / epochs per task); all of them are overridable from config.
GLUE_TASKS = {
    "cola": TaskSpec("cola", "single", "classification", labels=("0", "1"),
                     metrics=("matthews",), default_lr=3e-5, default_epochs=20),
    "sst2": TaskSpec("sst2", "single", "classification", labels=("0", "1"),
                     metrics=("accuracy",), default_lr=2e-5, default_epochs=4),
    "mrpc": TaskSpec("mrpc", "pair", "classification", labels=("0", "1"),
                     metrics=("f1", "accuracy"), default_lr=2e-5, default_epochs=15),
    "qqp": TaskSpec("qqp", "pair", "classification", labels=("0", "1"),
                    metrics=("accuracy", "f1"), default_lr=1e-5, default_epochs=5),
    "stsb": TaskSpec("stsb", "pair", "regression", bounds=(1.0, 5.0),
                     metrics=("pearson", "spearman"), default_lr=3e-5, default_epochs=10),
    "mnli": TaskSpec("mnli", "pair", "classification",
                     labels=("entailment", "neutral", "contradiction"),
                     metrics=("accuracy",), default_lr=3e-5, default_epochs=3),
    "qnli": TaskSpec("qnli", "pair", "classification",
                     labels=("entailment", "not_entailment"),
                     metrics=("accuracy",), default_lr=2e-5, default_epochs=3),
    "rte": TaskSpec("rte", "pair", "classification",
                    labels=("entailment", "not_entailment"),
                    metrics=("accuracy",), default_lr=2e-5, default_epochs=5),
    "wnli": TaskSpec("wnli", "pair", "classification", labels=("0", "1"),
                     metrics=("accuracy",), default_lr=2e-5, default_epochs=5),
}


def task_from_dict(d):
    """Build a TaskSpec from config; {"name": "cola"} pulls the registry entry."""
    if set(d) == {"name"} and d["name"] in GLUE_TASKS:
        return GLUE_TASKS[d["name"]]
    kwargs = dict(d)
    for key in ("labels", "bounds", "metrics"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    return TaskSpec(**kwargs)


@dataclass
class Example:
    guid: str
    text_a: str
    text_b: Optional[str] = None
    label: Optional[object] = None  # class id (int) or real (float); None on test splits


def load_tsv(path, spec, split="train"):
    """Read one Example per data row; labels required unless split == 'test'.

    Errors carry line numbers (header is line 1). Unknown classification
    label values and out-of-range regression labels are rejected.
    """
    examples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row")
        cols = {name: i for i, name in enumerate(header)}
        if "text_a" not in cols:
            raise DataError(f"{path}: header must contain a text_a column")
        if spec.input_arity == "pair" and "text_b" not in cols:
            raise DataError(f"{path}: task {spec.name} is pair-input but text_b is missing")
        has_label = "label" in cols
        if not has_label and split != "test":
            raise DataError(f"{path}: split {split!r} requires a label column")

        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            raw_label = row[cols["label"]].strip() if has_label else ""
            if raw_label == "":
                if split != "test":
                    raise DataError(f"{path}:{lineno}: missing label on a {split} row")
                label = None
            else:
                label = _parse_label(raw_label, spec, path, lineno)
            examples.append(
                Example(
                    guid=f"{split}-{lineno - 2}",
                    text_a=row[cols["text_a"]],
                    text_b=row[cols["text_b"]] if spec.input_arity == "pair" else None,
                    label=label,
                )
            )
    return examples


def _parse_label(raw, spec, path, lineno):
    if spec.label_kind == "classification":
        if raw not in spec.labels:
            raise DataError(
                f"{path}:{lineno}: label {raw!r} not in task {spec.name} "
                f"label set {list(spec.labels)}"
            )
        return spec.labels.index(raw)
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"{path}:{lineno}: label {raw!r} is not a real number")
    lo, hi = spec.bounds
    if not lo <= value <= hi:
        raise DataError(
            f"{path}:{lineno}: label {value} outside regression range [{lo}, {hi}]"
        )
    return value


def load_corpus_texts(path):
    """Sentences only, labels never touched: the ingestion path for the
    contrastive stage and vocab building.

    TSV files (header containing text_a) contribute text_a and, when
    present, text_b per row; any other file is read as one sentence per line.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if "text_a" in first.rstrip("\n").split("\t"):
            fh.seek(0)
            reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            header = next(reader)
            cols = {name: i for i, name in enumerate(header)}
            text_cols = [cols["text_a"]] + ([cols["text_b"]] if "text_b" in cols else [])
            sentences = []
            for row in reader:
                for c in text_cols:
                    if c < len(row) and row[c].strip():
                        sentences.append(row[c])
            return sentences
        fh.seek(0)
        return [line.rstrip("\n") for line in fh if line.strip()]


def encode_example(example, vocab, max_len):
    """[CLS] a [SEP] (b [SEP]) padded to max_len; mask marks real tokens.

    Pairs are truncated longest-first, one token at a time, so the shorter
    side survives whole whenever possible. Always returns exactly max_len ids.
    """
    if max_len < 3:
        raise ValueError("max_len must be >= 3 ([CLS] token [SEP])")
    a = vocab.encode(tokenize(example.text_a))
    b = vocab.encode(tokenize(example.text_b)) if example.text_b is not None else None

    if b is None:
        budget = max_len - 2
        a = a[:budget]
    else:
        budget = max_len - 3
        while len(a) + len(b) > budget:
            if len(a) >= len(b):
                a = a[:-1]
            else:
                b = b[:-1]

    ids = [CLS_ID] + a + [SEP_ID]
    if b is not None:
        ids += b + [SEP_ID]
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    ids += [PAD_ID] * (max_len - len(ids))
    return np.array(ids, dtype=np.int64), np.array(mask, dtype=np.int64)


def encode_batch(examples, vocab, max_len):
    """Stack encode_example over a list: ids [B, L], mask [B, L]."""
    ids = np.empty((len(examples), max_len), dtype=np.int64)
    mask = np.empty((len(examples), max_len), dtype=np.int64)
    for i, ex in enumerate(examples):
        ids[i], mask[i] = encode_example(ex, vocab, max_len)
    return ids, mask


def encode_sentences(sentences, vocab, max_len):
    """encode_batch over bare sentences (single-input, no labels)."""
    return encode_batch(
        [Example(guid=str(i), text_a=s) for i, s in enumerate(sentences)],
        vocab,
        max_len,
    )
