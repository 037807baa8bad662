"""Checkpoint container: one .npz file holding every parameter as a float64
array plus a JSON metadata record.

Layout (documented contract):
  __meta__            0-d unicode array, JSON: format_version, encoder
                      (EncoderConfig fields), vocab_sha256, stage, seed,
                      and optional head descriptors
  enc/<name>          encoder arrays, names from encoder.param_layout
  proj/{w1,b1,w2,b2}  projection head, present only for cssl checkpoints
                      (flagged discardable: finetuning drops it)
  task/{w,b}          task head, present only for finetuned checkpoints

The MoCo queue is never checkpointed; resuming contrastive training re-warms
the queue from data.
"""

import json
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, EncoderParams, ProjectionHead, TaskHead
from .errors import DataError

FORMAT_VERSION = 1
STAGES = ("random", "mlm", "cssl", "finetune")


@dataclass
class CheckpointBundle:
    encoder: EncoderParams
    proj_head: ProjectionHead
    task_head: TaskHead
    meta: dict

    @property
    def stage(self):
        return self.meta["stage"]

    @property
    def vocab_sha256(self):
        return self.meta["vocab_sha256"]


def save_checkpoint(path, encoder_params, *, vocab_sha256, stage, seed,
                    proj_head=None, task_head=None, task_name=None):
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    meta = {
        "format_version": FORMAT_VERSION,
        "encoder": encoder_params.config.to_dict(),
        "vocab_sha256": vocab_sha256,
        "stage": stage,
        "seed": int(seed),
    }
    arrays = {}
    for name, p in encoder_params.tensors.items():
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"refusing to save non-finite parameter {name}")
        arrays[f"enc/{name}"] = p.data.astype(np.float64)
    if proj_head is not None:
        meta["proj_head"] = {"d_proj": proj_head.d_proj, "discardable": True}
        for name, p in proj_head.tensors.items():
            arrays[f"proj/{name}"] = p.data.astype(np.float64)
    if task_head is not None:
        meta["task_head"] = {"num_outputs": task_head.num_outputs, "task": task_name}
        for name, p in task_head.tensors.items():
            arrays[f"task/{name}"] = p.data.astype(np.float64)
    # write through a handle so numpy cannot append its own .npz suffix
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path, expect_vocab_sha256=None):
    try:
        with np.load(path, allow_pickle=False) as z:
            names = list(z.files)
            arrays = {n: z[n] for n in names}
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} does not exist") from None
    except Exception as exc:
        raise DataError(f"checkpoint {path} is not readable: {exc}") from exc

    if "__meta__" not in arrays:
        raise DataError(f"checkpoint {path} is missing its metadata record")
    try:
        meta = json.loads(str(arrays.pop("__meta__").item()))
    except (json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"checkpoint {path} has malformed metadata: {exc}") from exc

    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"checkpoint {path} has format_version {version}, expected {FORMAT_VERSION}"
        )
    if meta.get("stage") not in STAGES:
        raise DataError(f"checkpoint {path} has unknown stage {meta.get('stage')!r}")
    if expect_vocab_sha256 is not None and meta.get("vocab_sha256") != expect_vocab_sha256:
        raise DataError(
            f"checkpoint {path} was built against a different vocabulary "
            f"(hash {meta.get('vocab_sha256')}, expected {expect_vocab_sha256})"
        )

    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise DataError(f"checkpoint {path}: array {name} is not finite")

    try:
        config = EncoderConfig(**meta["encoder"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"checkpoint {path} has an invalid encoder config: {exc}") from exc

    enc_arrays = {n[len("enc/"):]: a for n, a in arrays.items() if n.startswith("enc/")}
    proj_arrays = {n[len("proj/"):]: a for n, a in arrays.items() if n.startswith("proj/")}
    task_arrays = {n[len("task/"):]: a for n, a in arrays.items() if n.startswith("task/")}
    try:
        encoder = EncoderParams.from_arrays(config, enc_arrays)
        proj_head = ProjectionHead.from_arrays(proj_arrays) if proj_arrays else None
        task_head = TaskHead.from_arrays(task_arrays) if task_arrays else None
    except ValueError as exc:
        raise DataError(f"checkpoint {path}: {exc}") from exc
    return CheckpointBundle(encoder, proj_head, task_head, meta)
