"""Batch command-line front end.

One JSON config file plus key=value overrides drives every subcommand; each
run gets its own output directory (stage-timestamp-seed) holding the
resolved config, the seed, and every artifact the run produced. Exit codes:
0 success, 2 configuration problem, 3 data problem, 4 numeric failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .augment import (
    AugmentConfig,
    HttpTranslator,
    IdentityTranslator,
    Lexicon,
    TableTranslator,
    load_pairs,
    save_pairs,
)
from .checkpoint import load_checkpoint
from .encoder import EncoderConfig, EncoderParams
from .errors import ConfigError, DataError, NumericError
from .moco import MoCoConfig
from .pipeline import (
    TrainConfig,
    evaluate,
    finetune,
    predict,
    pretrain_cssl,
    pretrain_mlm,
)
from .tasks import GLUE_TASKS, load_corpus_texts, load_tsv, task_from_dict
from .text import Vocabulary, build_vocab

DEFAULT_CONFIG = {
    "seed": 0,
    "task": None,
    "output": {"root": "runs"},
    "data": {
        "corpus": None,
        "train": None,
        "dev": None,
        "test": None,
        "vocab": None,
        "lexicon": None,
        "checkpoint": None,
        "pairs": None,
    },
    "vocab": {"min_count": 1},
    "encoder": {
        "d_model": 64,
        "n_heads": 4,
        "n_layers": 2,
        "d_ff": 256,
        "dropout_rate": 0.1,
    },
    "train": {
        "epochs": None,
        "batch_size": 16,
        "base_lr": None,
        "weight_decay": None,
        "max_seq_len": 128,
        "restart_count": 5,
    },
    "moco": {
        "queue_capacity": 4096,
        "momentum": 0.999,
        "temperature": 0.07,
        "d_proj": 32,
    },
    "augment": {
        "method": "eda",
        "eda_alpha": 0.1,
        "stream": "augment",
        "bt_fallback": "raise",
    },
    "translator": {
        "kind": "identity",
        "tables": None,
        "strict": False,
        "endpoint": None,
        "auth_token": None,
        "timeout": 10.0,
        "retries": 0,
    },
}

# stage defaults used when train.epochs is left null; finetune falls back to
# the per-task recipe instead
_STAGE_EPOCHS = {"mlm": 10, "cssl": 100}


def _deep_copy(tree):
    return json.loads(json.dumps(tree))


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], value, where)
        else:
            base[key] = value
    return base


def load_config(path):
    cfg = _deep_copy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return _merge(cfg, user)


def apply_overrides(cfg, pairs):
    """key.path=value overrides; values parse as JSON, falling back to text."""
    for item in pairs:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(node[parts[-1]], dict):
            raise ConfigError(f"config key {key!r} is an object; override its fields")
        node[parts[-1]] = value
    return cfg


def _run_dir(args, cfg, stage):
    """Create the per-run output directory and drop the resolved config."""
    if args.run_dir:
        path = args.run_dir
        if os.path.isdir(path) and os.listdir(path) and not args.force:
            raise ConfigError(
                f"run directory {path} already has contents; pass --force to overwrite"
            )
        os.makedirs(path, exist_ok=True)
    else:
        root = cfg["output"]["root"]
        os.makedirs(root, exist_ok=True)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        base = os.path.join(root, f"{stage}-{stamp}-{cfg['seed']}")
        path = base
        bump = 1
        while os.path.exists(path):
            bump += 1
            path = f"{base}-{bump}"
        os.makedirs(path)
    with open(os.path.join(path, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"stage": stage, "seed": cfg["seed"], "config": cfg}, fh, indent=2)
    return path


def _need(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    if node is None:
        raise ConfigError(f"config key {dotted!r} is required for this command")
    return node


def _read_corpus(path):
    try:
        corpus = load_corpus_texts(path)
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    if not corpus:
        raise DataError(f"corpus {path} holds no sentences")
    return corpus


def _load_vocab(path):
    try:
        return Vocabulary.load(path)
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {path}: {exc}") from exc


def _load_task(cfg):
    spec = _need(cfg, "task")
    if isinstance(spec, str):
        if spec not in GLUE_TASKS:
            raise ConfigError(
                f"unknown task {spec!r}; known: {sorted(GLUE_TASKS)} "
                "(or pass a full task object)"
            )
        return GLUE_TASKS[spec]
    if isinstance(spec, dict):
        try:
            return task_from_dict(spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad task definition: {exc}") from exc
    raise ConfigError("config key 'task' must be a task name or object")


def _train_config(cfg, stage, task=None):
    t = cfg["train"]
    epochs = t["epochs"]
    if epochs is None:
        epochs = task.default_epochs if stage == "finetune" else _STAGE_EPOCHS[stage]
    try:
        return TrainConfig(
            stage=stage,
            epochs=epochs,
            base_lr=t["base_lr"],
            batch_size=t["batch_size"],
            weight_decay=t["weight_decay"],
            max_seq_len=t["max_seq_len"],
            seed=cfg["seed"],
            restart_count=t["restart_count"],
        )
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _encoder_config(cfg, vocab):
    try:
        return EncoderConfig(
            vocab_size=len(vocab),
            max_seq_len=cfg["train"]["max_seq_len"],
            **cfg["encoder"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad encoder config: {exc}") from exc


def _augment_config(cfg):
    a = cfg["augment"]
    return AugmentConfig(method=a["method"], eda_alpha=a["eda_alpha"], stream=a["stream"])


def _translator(cfg):
    t = cfg["translator"]
    kind = t["kind"]
    if kind == "identity":
        return IdentityTranslator()
    if kind == "table":
        path = t["tables"]
        if path is None:
            raise ConfigError("translator.kind 'table' needs translator.tables")
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read translation tables {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"translation tables {path} are not valid JSON: {exc}") from exc
        tables = {}
        for pair, entries in raw.items():
            src, sep, tgt = pair.partition("->")
            if not sep or not src or not tgt:
                raise DataError(
                    f"translation table key {pair!r} must look like 'en->de'"
                )
            tables[(src, tgt)] = entries
        return TableTranslator(tables, strict=t["strict"])
    if kind == "http":
        if t["endpoint"] is None:
            raise ConfigError("translator.kind 'http' needs translator.endpoint")
        return HttpTranslator(
            t["endpoint"], auth_token=t["auth_token"],
            timeout=t["timeout"], retries=t["retries"],
        )
    raise ConfigError(f"unknown translator.kind {kind!r}")


def _load_lexicon(cfg):
    path = cfg["data"]["lexicon"]
    return Lexicon.load(path) if path else None


def _load_bundle(cfg, args, need_task_head=False):
    path = getattr(args, "checkpoint", None) or cfg["data"]["checkpoint"]
    if path is None:
        raise ConfigError("this command needs --checkpoint (or data.checkpoint)")
    bundle = load_checkpoint(path)
    if need_task_head and bundle.task_head is None:
        raise DataError(
            f"checkpoint {path} carries no task head; run finetune first"
        )
    return bundle


def _verify_vocab(bundle, vocab, what):
    if bundle.vocab_sha256 != vocab.sha256:
        raise DataError(
            f"{what}: vocabulary hash {vocab.sha256} does not match the "
            f"checkpoint's {bundle.vocab_sha256}"
        )


# --- subcommands -------------------------------------------------------------

def cmd_build_vocab(args, cfg):
    corpus = _read_corpus(_need(cfg, "data.corpus"))
    vocab = build_vocab(corpus, min_count=cfg["vocab"]["min_count"])
    run_dir = _run_dir(args, cfg, "build-vocab")
    out = os.path.join(run_dir, "vocab.txt")
    vocab.save(out)
    print(f"vocabulary: {len(vocab)} tokens ({len(vocab) - 5} regular) -> {out}")
    return 0


def cmd_pretrain_mlm(args, cfg):
    corpus = _read_corpus(_need(cfg, "data.corpus"))
    if cfg["data"]["vocab"]:
        vocab = _load_vocab(cfg["data"]["vocab"])
    else:
        vocab = build_vocab(corpus, min_count=cfg["vocab"]["min_count"])
    run_dir = _run_dir(args, cfg, "pretrain-mlm")
    vocab.save(os.path.join(run_dir, "vocab.txt"))
    config = _train_config(cfg, "mlm")
    params, record = pretrain_mlm(
        corpus, vocab, config,
        encoder_config=_encoder_config(cfg, vocab),
        run_dir=run_dir,
    )
    print(
        f"mlm: {config.epochs} epochs, final loss {record.epoch_losses[-1]:.4f} "
        f"-> {record.checkpoint_path}"
    )
    return 0


def cmd_augment(args, cfg):
    corpus = _read_corpus(_need(cfg, "data.corpus"))
    acfg = _augment_config(cfg)
    translator = _translator(cfg) if acfg.method == "back_translation" else None
    from .augment import make_pairs

    pairs = make_pairs(
        corpus, acfg,
        translator=translator,
        lexicon=_load_lexicon(cfg),
        seed=cfg["seed"],
        bt_fallback=cfg["augment"]["bt_fallback"],
    )
    run_dir = _run_dir(args, cfg, "augment")
    out = os.path.join(run_dir, "pairs.tsv")
    save_pairs(out, pairs)
    print(f"augment: {len(pairs)} pairs ({acfg.method}) -> {out}")
    return 0


def cmd_pretrain_cssl(args, cfg):
    corpus = _read_corpus(_need(cfg, "data.corpus"))
    ckpt_path = args.checkpoint or cfg["data"]["checkpoint"]
    if ckpt_path is None and not args.allow_random_init:
        raise ConfigError(
            "pretrain-cssl continues from a pretrained encoder: run "
            "pretrain-mlm first and pass its checkpoint, or accept a random "
            "start with --allow-random-init"
        )

    if ckpt_path is not None:
        bundle = load_checkpoint(ckpt_path)
        vocab = _load_vocab(_need(cfg, "data.vocab"))
        _verify_vocab(bundle, vocab, "pretrain-cssl")
        params, source_stage = bundle.encoder, bundle.stage
    else:
        if cfg["data"]["vocab"]:
            vocab = _load_vocab(cfg["data"]["vocab"])
        else:
            vocab = build_vocab(corpus, min_count=cfg["vocab"]["min_count"])
        source_stage = "random"
        params = None  # built after config resolution below

    config = _train_config(cfg, "cssl")
    if params is None:
        params = EncoderParams.init(
            _encoder_config(cfg, vocab), np.random.default_rng(config.seed)
        )

    acfg = _augment_config(cfg)
    translator = _translator(cfg) if acfg.method == "back_translation" else None
    pairs = None
    if cfg["data"]["pairs"]:
        try:
            pairs = load_pairs(cfg["data"]["pairs"])
        except OSError as exc:
            raise DataError(f"cannot read pairs {cfg['data']['pairs']}: {exc}") from exc

    run_dir = _run_dir(args, cfg, "pretrain-cssl")
    vocab.save(os.path.join(run_dir, "vocab.txt"))
    mcfg = MoCoConfig(
        queue_capacity=cfg["moco"]["queue_capacity"],
        momentum=cfg["moco"]["momentum"],
        temperature=cfg["moco"]["temperature"],
    )
    _, _, record = pretrain_cssl(
        params, corpus, mcfg, config, vocab,
        aug_config=acfg,
        translator=translator,
        lexicon=_load_lexicon(cfg),
        d_proj=cfg["moco"]["d_proj"],
        source_stage=source_stage,
        allow_random_init=args.allow_random_init,
        bt_fallback=cfg["augment"]["bt_fallback"],
        pairs=pairs,
        run_dir=run_dir,
    )
    print(
        f"cssl: {config.epochs} epochs, final loss {record.epoch_losses[-1]:.4f} "
        f"-> {record.checkpoint_path}"
    )
    return 0


def cmd_finetune(args, cfg):
    task = _load_task(cfg)
    vocab = _load_vocab(_need(cfg, "data.vocab"))
    bundle = _load_bundle(cfg, args)
    _verify_vocab(bundle, vocab, "finetune")
    train_examples = load_tsv(_need(cfg, "data.train"), task, split="train")
    dev_examples = load_tsv(_need(cfg, "data.dev"), task, split="dev")
    config = _train_config(cfg, "finetune", task)
    run_dir = _run_dir(args, cfg, "finetune")
    _, summary, _, _ = finetune(
        bundle.encoder, task, train_examples, dev_examples, config, vocab,
        run_dir=run_dir,
    )
    for name, stats in summary["metrics"].items():
        print(f"{task.name} {name}: median {stats['median']:.4f} best {stats['best']:.4f}")
    print(f"checkpoint -> {summary['checkpoint_path']}")
    return 0


def cmd_evaluate(args, cfg):
    task = _load_task(cfg)
    vocab = _load_vocab(_need(cfg, "data.vocab"))
    bundle = _load_bundle(cfg, args, need_task_head=True)
    _verify_vocab(bundle, vocab, "evaluate")
    examples = load_tsv(_need(cfg, f"data.{args.split}"), task, split=args.split)
    report = evaluate(
        bundle.encoder, bundle.task_head, task, examples, vocab,
        cfg["train"]["max_seq_len"], batch_size=cfg["train"]["batch_size"],
    )
    run_dir = _run_dir(args, cfg, "evaluate")
    payload = {"task": task.name, "split": args.split, "count": report.count,
               "metrics": report.values}
    with open(os.path.join(run_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_predict(args, cfg):
    task = _load_task(cfg)
    vocab = _load_vocab(_need(cfg, "data.vocab"))
    bundle = _load_bundle(cfg, args, need_task_head=True)
    _verify_vocab(bundle, vocab, "predict")
    examples = load_tsv(_need(cfg, f"data.{args.split}"), task, split=args.split)
    run_dir = _run_dir(args, cfg, "predict")
    out = os.path.join(run_dir, "predictions.tsv")
    predict(
        bundle.encoder, bundle.task_head, task, examples, vocab,
        cfg["train"]["max_seq_len"], out, batch_size=cfg["train"]["batch_size"],
    )
    print(f"predictions: {len(examples)} rows -> {out}")
    return 0


# --- wiring ------------------------------------------------------------------

def _common_flags(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                     help="override a config key (dotted path, JSON value)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--run-dir", help="explicit output directory")
    sub.add_argument("--force", action="store_true",
                     help="overwrite an existing run directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sentcl",
        description="Encoder pretraining, contrastive continuation, and "
                    "GLUE-style finetuning, one batch run at a time.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    commands = {
        "build-vocab": (cmd_build_vocab, "build a vocabulary from a corpus"),
        "pretrain-mlm": (cmd_pretrain_mlm, "masked-token pretraining from scratch"),
        "augment": (cmd_augment, "write augmented sentence pairs"),
        "pretrain-cssl": (cmd_pretrain_cssl, "contrastive pretraining on task text"),
        "finetune": (cmd_finetune, "supervised finetuning with restarts"),
        "evaluate": (cmd_evaluate, "metrics for a finetuned checkpoint"),
        "predict": (cmd_predict, "write a predictions TSV"),
    }
    for name, (handler, help_text) in commands.items():
        sub = subs.add_parser(name, help=help_text)
        _common_flags(sub)
        sub.set_defaults(handler=handler)
        if name in ("pretrain-mlm", "build-vocab", "augment", "pretrain-cssl"):
            sub.add_argument("--corpus", help="corpus file (maps to data.corpus)")
        if name == "augment":
            sub.add_argument("--method", choices=["eda", "back_translation"],
                             help="maps to augment.method")
        if name in ("pretrain-cssl", "finetune", "evaluate", "predict"):
            sub.add_argument("--checkpoint", help="input checkpoint path")
            sub.add_argument("--vocab", help="vocabulary file (maps to data.vocab)")
        if name == "pretrain-cssl":
            sub.add_argument("--allow-random-init", action="store_true",
                             help="permit contrastive training from a random encoder")
        if name in ("finetune", "evaluate", "predict"):
            sub.add_argument("--task", help="task name (maps to task)")
        if name == "finetune":
            sub.add_argument("--train-file", help="maps to data.train")
            sub.add_argument("--dev-file", help="maps to data.dev")
        if name in ("evaluate", "predict"):
            sub.add_argument(
                "--split", default="dev" if name == "evaluate" else "test",
                choices=["train", "dev", "test"],
                help="which data.* split to read",
            )
            sub.add_argument("--data-file", help="maps to data.<split>")
    return parser


def _fold_args_into_config(args, cfg):
    """Convenience flags are just spellings of config keys."""
    mapping = [
        ("seed", ("seed",)),
        ("corpus", ("data", "corpus")),
        ("vocab", ("data", "vocab")),
        ("method", ("augment", "method")),
        ("task", ("task",)),
        ("train_file", ("data", "train")),
        ("dev_file", ("data", "dev")),
    ]
    for attr, path in mapping:
        value = getattr(args, attr, None)
        if value is None:
            continue
        node = cfg
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = value
    data_file = getattr(args, "data_file", None)
    if data_file is not None:
        cfg["data"][args.split] = data_file
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; 2 for bad flags, 0 for --help
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        cfg = _fold_args_into_config(args, cfg)
        cfg = apply_overrides(cfg, args.set)
        return args.handler(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
