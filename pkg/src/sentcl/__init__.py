"""Sentence-encoder pretraining with a contrastive continuation stage.

The package covers the full loop: build a vocabulary, pretrain a small
Transformer encoder with masked-token prediction, continue pretraining
contrastively on augmented sentence pairs, then finetune and evaluate on
sentence-classification tasks. Everything runs on numpy float64; no deep
learning framework is involved.
"""

from .augment import (
    AugmentConfig,
    AugmentedPair,
    HttpTranslator,
    IdentityTranslator,
    Lexicon,
    TableTranslator,
    TranslationError,
    TranslatorInterface,
    back_translate,
    eda_augment,
    load_pairs,
    make_pairs,
    save_pairs,
)
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .encoder import (
    EncoderConfig,
    EncoderParams,
    ProjectionHead,
    TaskHead,
    encode,
    mlm_logits,
    project,
    task_logits,
)
from .errors import ConfigError, DataError, NumericError
from .metrics import MetricReport, compute_metrics
from .moco import (
    MoCoConfig,
    MoCoQueue,
    MoCoState,
    cssl_step,
    moco_loss,
    momentum_update,
    simclr_inbatch_loss,
    warmup,
)
from .optim import SGDMomentum, ScheduleConfig, lr_at
from .pipeline import (
    RunRecord,
    TrainConfig,
    evaluate,
    finetune,
    mask_tokens,
    predict,
    pretrain_cssl,
    pretrain_mlm,
)
from .tasks import GLUE_TASKS, TaskSpec, load_corpus_texts, load_tsv
from .text import Vocabulary, build_vocab, detokenize, tokenize

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "AugmentedPair",
    "CheckpointBundle",
    "ConfigError",
    "DataError",
    "EncoderConfig",
    "EncoderParams",
    "GLUE_TASKS",
    "HttpTranslator",
    "IdentityTranslator",
    "Lexicon",
    "MetricReport",
    "MoCoConfig",
    "MoCoQueue",
    "MoCoState",
    "NumericError",
    "ProjectionHead",
    "RunRecord",
    "SGDMomentum",
    "ScheduleConfig",
    "TableTranslator",
    "TaskHead",
    "TaskSpec",
    "TrainConfig",
    "TranslationError",
    "TranslatorInterface",
    "Vocabulary",
    "back_translate",
    "build_vocab",
    "compute_metrics",
    "cssl_step",
    "detokenize",
    "eda_augment",
    "encode",
    "evaluate",
    "finetune",
    "load_checkpoint",
    "load_corpus_texts",
    "load_pairs",
    "load_tsv",
    "lr_at",
    "make_pairs",
    "mask_tokens",
    "mlm_logits",
    "moco_loss",
    "momentum_update",
    "predict",
    "pretrain_cssl",
    "pretrain_mlm",
    "project",
    "save_checkpoint",
    "save_pairs",
    "simclr_inbatch_loss",
    "task_logits",
    "tokenize",
    "warmup",
]
