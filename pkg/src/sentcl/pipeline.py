"""The three-stage workflow: masked-token pretraining on a source corpus,
contrastive pretraining on unlabeled target-task text, and supervised
finetuning with restarts, plus evaluation and prediction export.

Stage isolation is structural: the contrastive stage accepts only plain
strings, so label columns cannot reach it. Every reported number is a
function of (config, seed, data): shuffling, masking, dropout, and restarts
all draw from generators seeded by (seed, epoch, purpose) tuples.
"""

import json
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import AugmentConfig, make_pairs
from .checkpoint import save_checkpoint
from .encoder import (
    EncoderConfig,
    EncoderParams,
    ProjectionHead,
    TaskHead,
    encode,
    mlm_logits,
    task_logits,
)
from .errors import ConfigError, DataError
from .metrics import compute_metrics
from .moco import MoCoState, cssl_step, warmup
from .optim import ScheduleConfig, SGDMomentum, lr_at
from .tasks import encode_batch, encode_sentences
from .text import MASK_ID, NUM_SPECIALS

logger = logging.getLogger(__name__)

TRAIN_STAGES = ("mlm", "cssl", "finetune")

# purpose tags separating the per-epoch rng streams
_SHUFFLE, _DROPOUT, _MASKING, _PROJ_INIT = 0, 1, 2, 3


@dataclass
class TrainConfig:
    stage: str
    epochs: int
    base_lr: float = None
    batch_size: int = 16
    weight_decay: float = None
    max_seq_len: int = 128
    seed: int = 0
    restart_count: int = 5

    def __post_init__(self):
        if self.stage not in TRAIN_STAGES:
            raise ConfigError(f"stage must be one of {TRAIN_STAGES}, got {self.stage!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_seq_len < 3:
            raise ConfigError(f"max_seq_len must be at least 3, got {self.max_seq_len}")
        if self.restart_count < 1:
            raise ConfigError(f"restart_count must be positive, got {self.restart_count}")
        if self.base_lr is not None and self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.weight_decay is not None and self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")

    def resolved_weight_decay(self):
        if self.weight_decay is not None:
            return self.weight_decay
        return 1e-5 if self.stage == "cssl" else 0.0

    def resolved_lr(self, task=None):
        """Explicit base_lr wins; else the stage default. The cssl default is
        the published 4e-5; these are reference-scale values, and tiny
        randomly initialized encoders usually want far larger ones."""
        if self.base_lr is not None:
            return self.base_lr
        if self.stage == "cssl":
            return 4e-5
        if self.stage == "finetune":
            if task is None:
                raise ConfigError("finetune needs a task to resolve its default lr")
            return task.default_lr
        return 1e-4

    def to_dict(self):
        return {
            "stage": self.stage,
            "epochs": self.epochs,
            "base_lr": self.base_lr,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "max_seq_len": self.max_seq_len,
            "seed": self.seed,
            "restart_count": self.restart_count,
        }


@dataclass
class RunRecord:
    stage: str
    config: dict
    epoch_losses: list
    metrics: dict
    wall_clock: float
    checkpoint_path: str = None

    def __post_init__(self):
        for loss in self.epoch_losses:
            if not math.isfinite(loss):
                raise ValueError(f"non-finite epoch loss {loss}")
        expected = self.config.get("epochs")
        if expected is not None and len(self.epoch_losses) != expected:
            raise ValueError(
                f"{len(self.epoch_losses)} epoch losses recorded for {expected} epochs"
            )

    def to_dict(self):
        return {
            "stage": self.stage,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "metrics": self.metrics,
            "wall_clock": self.wall_clock,
            "checkpoint_path": self.checkpoint_path,
        }


class RunLogger:
    """Line-delimited JSON event log; a None path disables it."""

    def __init__(self, path=None):
        self.path = path

    def log(self, event, **fields):
        if self.path is None:
            return
        record = {"event": event, **fields}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def _epoch_rng(seed, epoch, purpose):
    return np.random.default_rng((int(seed) % 2**32, epoch, purpose))


def _check_plain_text(corpus, what):
    for item in corpus:
        if not isinstance(item, str):
            raise TypeError(
                f"{what} must contain plain strings, got {type(item).__name__}; "
                "labeled examples are not accepted here"
            )


def mask_tokens(ids, mask, vocab_size, rng, mask_prob=0.15):
    """BERT-style corruption: each non-special position is selected with
    probability mask_prob; of the selected, 80% become [MASK], 10% a random
    regular token, 10% stay put.

    Rows with no maskable position at all (degenerate inputs) are skipped
    with a warning; rows where the coin simply came up empty carry zero loss
    weight for this pass. Returns (corrupted ids, targets, weights).
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    maskable = (mask == 1) & (ids >= NUM_SPECIALS)
    selected = maskable & (rng.random(ids.shape) < mask_prob)

    skipped = np.flatnonzero(~maskable.any(axis=1))
    if skipped.size:
        logger.warning(
            "skipping %d sequence(s) with no maskable tokens", skipped.size
        )

    out = ids.copy()
    u = rng.random(ids.shape)
    to_mask = selected & (u < 0.8)
    to_random = selected & (u >= 0.8) & (u < 0.9)
    out[to_mask] = MASK_ID
    n_random = int(to_random.sum())
    if n_random and vocab_size > NUM_SPECIALS:
        out[to_random] = rng.integers(NUM_SPECIALS, vocab_size, size=n_random)
    return out, ids, selected.astype(np.float64)


def _mlm_corpus_loss(params, mids, targets, weights, mask, vocab_size, batch_size):
    """Eval-mode weighted cross-entropy over one fixed masked corpus."""
    loss_sum, weight_sum = 0.0, 0.0
    for start in range(0, mids.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        w = weights[sl]
        if w.sum() == 0:
            continue
        hidden, _ = encode(params, mids[sl], mask[sl], train=False)
        logits = mlm_logits(params, hidden)
        b, ln = mids[sl].shape
        loss = T.cross_entropy(
            T.reshape(logits, (b * ln, vocab_size)),
            targets[sl].reshape(-1),
            weights=w.reshape(-1),
        )
        loss_sum += loss.item() * w.sum()
        weight_sum += w.sum()
    return loss_sum / weight_sum


def pretrain_mlm(corpus, vocab, config, encoder_config=None, run_dir=None):
    """Masked-token pretraining from random init. Returns (params, record).

    Masking is drawn once per run, so every epoch optimizes one fixed
    corruption of the corpus; the recorded per-epoch losses are end-of-epoch
    evaluation passes over that fixed objective, not running batch means.
    """
    if config.stage != "mlm":
        raise ConfigError(f"pretrain_mlm needs stage 'mlm', got {config.stage!r}")
    if not corpus:
        raise DataError("pretraining corpus is empty")
    _check_plain_text(corpus, "pretraining corpus")

    ec = encoder_config or EncoderConfig(
        vocab_size=len(vocab), max_seq_len=config.max_seq_len
    )
    if ec.vocab_size != len(vocab):
        raise ConfigError(
            f"encoder vocab_size {ec.vocab_size} != vocabulary size {len(vocab)}"
        )
    if ec.max_seq_len != config.max_seq_len:
        raise ConfigError(
            f"encoder max_seq_len {ec.max_seq_len} != configured {config.max_seq_len}"
        )

    started = time.perf_counter()
    run_log = RunLogger(f"{run_dir}/log.jsonl" if run_dir else None)
    params = EncoderParams.init(ec, np.random.default_rng(config.seed))
    opt = SGDMomentum(
        dict(params.tensors),
        momentum=0.9,
        weight_decay=config.resolved_weight_decay(),
    )
    lr = config.resolved_lr()

    ids_all, mask_all = encode_sentences(corpus, vocab, config.max_seq_len)
    n = len(corpus)
    steps_per_epoch = math.ceil(n / config.batch_size)
    schedule = ScheduleConfig(lr, total_steps=config.epochs * steps_per_epoch)

    # static corruption, drawn once per run: every epoch trains on the same
    # masked corpus, so the per-epoch losses track one fixed objective
    mids_all, targets_all, weights_all = mask_tokens(
        ids_all, mask_all, len(vocab), _epoch_rng(config.seed, 0, _MASKING)
    )
    if weights_all.sum() == 0:
        raise DataError("every sequence in the corpus lacks maskable tokens")

    initial_loss = _mlm_corpus_loss(
        params, mids_all, targets_all, weights_all, mask_all,
        ec.vocab_size, config.batch_size,
    )
    run_log.log("init", stage="mlm", loss=initial_loss)

    step = 0
    epoch_losses = []
    for epoch in range(config.epochs):
        order = _epoch_rng(config.seed, epoch, _SHUFFLE).permutation(n)
        drop_rng = _epoch_rng(config.seed, epoch, _DROPOUT)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            mids, targets, weights = mids_all[idx], targets_all[idx], weights_all[idx]
            if weights.sum() == 0:
                logger.warning("batch with no masked positions; skipping")
                continue
            hidden, _ = encode(params, mids, mask_all[idx], train=True, rng=drop_rng)
            logits = mlm_logits(params, hidden)
            b, ln = mids.shape
            loss = T.cross_entropy(
                T.reshape(logits, (b * ln, ec.vocab_size)),
                targets.reshape(-1),
                weights=weights.reshape(-1),
            )
            opt.zero_grad()
            loss.backward()
            opt.step(lr_at(step, schedule))
            step += 1
            batch_losses.append(loss.item())
        epoch_losses.append(_mlm_corpus_loss(
            params, mids_all, targets_all, weights_all, mask_all,
            ec.vocab_size, config.batch_size,
        ))
        run_log.log("epoch", stage="mlm", epoch=epoch, loss=epoch_losses[-1],
                    train_mean=float(np.mean(batch_losses)))

    checkpoint_path = None
    if run_dir:
        checkpoint_path = f"{run_dir}/checkpoint.npz"
        save_checkpoint(
            checkpoint_path, params,
            vocab_sha256=vocab.sha256, stage="mlm", seed=config.seed,
        )
    record = RunRecord(
        stage="mlm",
        config=config.to_dict(),
        epoch_losses=epoch_losses,
        metrics={"initial_loss": initial_loss, "final_loss": epoch_losses[-1]},
        wall_clock=time.perf_counter() - started,
        checkpoint_path=checkpoint_path,
    )
    if run_dir:
        with open(f"{run_dir}/summary.json", "w", encoding="utf-8") as fh:
            json.dump(record.to_dict(), fh, indent=2)
    return params, record


def pretrain_cssl(
    encoder_params,
    corpus,
    moco_config,
    config,
    vocab,
    aug_config=None,
    translator=None,
    lexicon=None,
    d_proj=32,
    source_stage="mlm",
    allow_random_init=False,
    bt_fallback="raise",
    pairs=None,
    run_dir=None,
):
    """Contrastive pretraining on unlabeled task text.

    The encoder must come from a pretraining stage; anything else needs
    allow_random_init. The key tower starts as an exact copy of the query
    tower, and the queue is warmed with real keys before the first step.
    Precomputed `pairs` (e.g. materialized back-translations) bypass the
    internal augmentation. Returns (params, proj_head, record).
    """
    if config.stage != "cssl":
        raise ConfigError(f"pretrain_cssl needs stage 'cssl', got {config.stage!r}")
    if source_stage not in ("mlm", "cssl") and not allow_random_init:
        raise ConfigError(
            f"refusing to run contrastive pretraining on a {source_stage!r} encoder; "
            "pass allow_random_init to override"
        )
    if pairs is None and not corpus:
        raise DataError("target corpus is empty")
    if corpus:
        _check_plain_text(corpus, "target corpus")
    if encoder_params.config.max_seq_len != config.max_seq_len:
        raise ConfigError(
            f"encoder max_seq_len {encoder_params.config.max_seq_len} != "
            f"configured {config.max_seq_len}"
        )
    moco_config.validate_batch(config.batch_size)

    started = time.perf_counter()
    run_log = RunLogger(f"{run_dir}/log.jsonl" if run_dir else None)
    if pairs is None:
        aug_config = aug_config or AugmentConfig()
        pairs = make_pairs(
            corpus, aug_config, translator=translator, lexicon=lexicon,
            seed=config.seed, bt_fallback=bt_fallback,
        )
    if len(pairs) < config.batch_size:
        raise ConfigError(
            f"corpus of {len(pairs)} sentences is smaller than one batch "
            f"({config.batch_size})"
        )

    proj_head = ProjectionHead.init(
        encoder_params.config.d_model, d_proj, _epoch_rng(config.seed, 0, _PROJ_INIT)
    )
    state = MoCoState.init(encoder_params, proj_head, moco_config)

    def key_batches():
        i, n = 0, len(pairs)
        while True:
            chunk = [pairs[(i + j) % n] for j in range(config.batch_size)]
            ids, msk = encode_sentences(
                [p.x_double_prime for p in chunk], vocab, config.max_seq_len
            )
            yield ids, msk, np.array([p.origin_id for p in chunk])
            i = (i + config.batch_size) % n

    warmed = warmup(state, key_batches())
    run_log.log("warmup", stage="cssl", keys=warmed)

    opt = SGDMomentum(
        state.query_params(),
        momentum=0.9,
        weight_decay=config.resolved_weight_decay(),
    )
    lr = config.resolved_lr()
    steps_per_epoch = len(pairs) // config.batch_size
    schedule = ScheduleConfig(lr, total_steps=config.epochs * steps_per_epoch)

    step = 0
    epoch_losses = []
    for epoch in range(config.epochs):
        order = _epoch_rng(config.seed, epoch, _SHUFFLE).permutation(len(pairs))
        drop_rng = _epoch_rng(config.seed, epoch, _DROPOUT)
        batch_losses = []
        for start in range(0, steps_per_epoch * config.batch_size, config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            loss = cssl_step(state, batch, vocab, opt, lr_at(step, schedule), drop_rng)
            step += 1
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))
        run_log.log("epoch", stage="cssl", epoch=epoch, loss=epoch_losses[-1])

    checkpoint_path = None
    if run_dir:
        checkpoint_path = f"{run_dir}/checkpoint.npz"
        save_checkpoint(
            checkpoint_path, encoder_params,
            vocab_sha256=vocab.sha256, stage="cssl", seed=config.seed,
            proj_head=proj_head,
        )
    record = RunRecord(
        stage="cssl",
        config=config.to_dict(),
        epoch_losses=epoch_losses,
        metrics={"final_loss": epoch_losses[-1]},
        wall_clock=time.perf_counter() - started,
        checkpoint_path=checkpoint_path,
    )
    if run_dir:
        with open(f"{run_dir}/summary.json", "w", encoding="utf-8") as fh:
            json.dump(record.to_dict(), fh, indent=2)
    return encoder_params, proj_head, record


def _require_labels(examples, what):
    for ex in examples:
        if ex.label is None:
            raise DataError(f"{what} example {ex.guid} has no label")


def _labels_array(examples, task):
    if task.label_kind == "regression":
        return np.array([ex.label for ex in examples], dtype=np.float64)
    return np.array([ex.label for ex in examples], dtype=np.int64)


def _predict_scores(params, head, task, ids, mask, batch_size):
    """Eval-mode forward over batches; argmax indices or raw scores."""
    outputs = []
    for start in range(0, ids.shape[0], batch_size):
        _, pooled = encode(params, ids[start:start + batch_size],
                           mask[start:start + batch_size], train=False)
        out = task_logits(head, pooled, task)
        outputs.append(out.data)
    scores = np.concatenate(outputs, axis=0)
    if task.label_kind == "classification":
        return scores.argmax(axis=1)
    return scores


def finetune(encoder_params, task, train_examples, dev_examples, config, vocab,
             run_dir=None):
    """Supervised training with restarts.

    Each restart reinitializes the task head and optimizer from the same
    encoder snapshot under seed base+r, picks its best epoch by the dev
    primary metric, and the summary reports the per-metric median
    (lower-middle for even counts) and best across restarts. Returns
    (records, summary, best params, best head).
    """
    if config.stage != "finetune":
        raise ConfigError(f"finetune needs stage 'finetune', got {config.stage!r}")
    if not train_examples or not dev_examples:
        raise DataError("finetune needs nonempty train and dev splits")
    _require_labels(train_examples, "train")
    _require_labels(dev_examples, "dev")
    if encoder_params.config.max_seq_len != config.max_seq_len:
        raise ConfigError(
            f"encoder max_seq_len {encoder_params.config.max_seq_len} != "
            f"configured {config.max_seq_len}"
        )

    started = time.perf_counter()
    run_log = RunLogger(f"{run_dir}/log.jsonl" if run_dir else None)
    d_model = encoder_params.config.d_model
    lr = config.resolved_lr(task)

    train_ids, train_mask = encode_batch(train_examples, vocab, config.max_seq_len)
    dev_ids, dev_mask = encode_batch(dev_examples, vocab, config.max_seq_len)
    train_labels = _labels_array(train_examples, task)
    dev_labels = _labels_array(dev_examples, task)
    n = len(train_examples)
    steps_per_epoch = math.ceil(n / config.batch_size)

    records = []
    best_by_restart = []
    for restart in range(config.restart_count):
        seed_r = config.seed + restart
        restart_started = time.perf_counter()
        params = encoder_params.copy()
        head = TaskHead.init(d_model, task.num_outputs, np.random.default_rng(seed_r))
        opt = SGDMomentum(
            {**params.named("enc"), **head.named("task")},
            momentum=0.9,
            weight_decay=config.resolved_weight_decay(),
        )
        schedule = ScheduleConfig(lr, total_steps=config.epochs * steps_per_epoch)

        step = 0
        epoch_losses = []
        best = None  # (primary value, metrics, params copy, head copy, epoch)
        for epoch in range(config.epochs):
            order = _epoch_rng(seed_r, epoch, _SHUFFLE).permutation(n)
            drop_rng = _epoch_rng(seed_r, epoch, _DROPOUT)
            batch_losses = []
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                _, pooled = encode(params, train_ids[idx], train_mask[idx],
                                   train=True, rng=drop_rng)
                out = task_logits(head, pooled, task)
                if task.label_kind == "regression":
                    diff = T.add(out, -train_labels[idx])
                    loss = T.tmean(T.mul(diff, diff))
                else:
                    loss = T.cross_entropy(out, train_labels[idx])
                opt.zero_grad()
                loss.backward()
                opt.step(lr_at(step, schedule))
                step += 1
                batch_losses.append(loss.item())
            epoch_losses.append(float(np.mean(batch_losses)))

            preds = _predict_scores(params, head, task, dev_ids, dev_mask,
                                    config.batch_size)
            report = compute_metrics(task.metrics, preds, dev_labels)
            primary = report.values[task.primary_metric]
            run_log.log("epoch", stage="finetune", restart=restart, epoch=epoch,
                        loss=epoch_losses[-1], dev=report.values)
            if best is None or primary > best[0]:
                best = (primary, dict(report.values), params.copy(),
                        head.copy(), epoch)

        cfg_snapshot = config.to_dict()
        cfg_snapshot["restart_seed"] = seed_r
        records.append(RunRecord(
            stage="finetune",
            config=cfg_snapshot,
            epoch_losses=epoch_losses,
            metrics={**best[1], "best_epoch": best[4]},
            wall_clock=time.perf_counter() - restart_started,
        ))
        best_by_restart.append(best)

    summary = {"task": task.name, "restarts": config.restart_count, "metrics": {}}
    for name in task.metrics:
        values = [b[1][name] for b in best_by_restart]
        ordered = sorted(values)
        summary["metrics"][name] = {
            "median": ordered[(len(ordered) - 1) // 2],
            "best": max(values),
            "restarts": values,
        }
    best_idx = int(np.argmax([b[0] for b in best_by_restart]))
    _, _, best_params, best_head, _ = best_by_restart[best_idx]
    summary["best_restart"] = best_idx
    summary["wall_clock"] = time.perf_counter() - started

    if run_dir:
        checkpoint_path = f"{run_dir}/checkpoint.npz"
        save_checkpoint(
            checkpoint_path, best_params,
            vocab_sha256=vocab.sha256, stage="finetune", seed=config.seed,
            task_head=best_head, task_name=task.name,
        )
        summary["checkpoint_path"] = checkpoint_path
        for i, rec in enumerate(records):
            rec.checkpoint_path = checkpoint_path if i == best_idx else None
        with open(f"{run_dir}/summary.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"summary": summary, "restarts": [r.to_dict() for r in records]},
                fh, indent=2,
            )
    return records, summary, best_params, best_head


def evaluate(encoder_params, task_head, task, examples, vocab, max_seq_len,
             batch_size=16):
    """Metrics over a labeled split."""
    if not examples:
        raise DataError("evaluation split is empty")
    _require_labels(examples, "evaluation")
    ids, mask = encode_batch(examples, vocab, max_seq_len)
    labels = _labels_array(examples, task)
    preds = _predict_scores(encoder_params, task_head, task, ids, mask, batch_size)
    return compute_metrics(task.metrics, preds, labels)


def write_predictions(path, task, scores):
    """GLUE-submission-style TSV: header index/prediction, one row per input.

    Classification rows carry label strings; regression scores are clipped
    to the task bounds here (and only here)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("index\tprediction\n")
        for i, s in enumerate(scores):
            if task.label_kind == "classification":
                fh.write(f"{i}\t{task.labels[int(s)]}\n")
            else:
                lo, hi = task.bounds
                fh.write(f"{i}\t{min(max(float(s), lo), hi):.6f}\n")


def predict(encoder_params, task_head, task, examples, vocab, max_seq_len,
            out_path, batch_size=16):
    """Unlabeled-mode inference; writes the predictions TSV, returns scores."""
    if not examples:
        raise DataError("prediction split is empty")
    ids, mask = encode_batch(examples, vocab, max_seq_len)
    scores = _predict_scores(encoder_params, task_head, task, ids, mask, batch_size)
    write_predictions(out_path, task, scores)
    return scores
