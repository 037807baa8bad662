"""Transformer text encoder, pooled sentence representation, and the heads:
projection MLP for contrastive training, tied-embedding masked-token output,
and per-task affine heads.

Blocks are post-norm (attention + residual + layer norm, then position-wise
FFN + residual + layer norm). Position embeddings are learned. Weights are
init normal(0, 0.02), biases zero, layer-norm scale one / shift zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError
from .tensor import NEG_INF, Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_seq_len: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        for field in ("vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the special tokens")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len,
            "dropout_rate": self.dropout_rate,
        }


def _normal(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


class ParamGroup:
    """Named Tensor parameters with shared init/copy/momentum plumbing."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)

    def named(self, prefix=""):
        if prefix:
            return {f"{prefix}.{k}": v for k, v in self.tensors.items()}
        return dict(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self, requires_grad=None):
        """Deep-copy the arrays; grad state is fresh on the clone."""
        cloned = {}
        for name, p in self.tensors.items():
            rg = p.requires_grad if requires_grad is None else requires_grad
            cloned[name] = Tensor(p.data.copy(), requires_grad=rg, name=p.name)
        twin = type(self).__new__(type(self))
        twin.__dict__.update({k: v for k, v in self.__dict__.items() if k != "tensors"})
        twin.tensors = cloned
        return twin


def param_layout(config):
    """name -> (shape, init kind) for every encoder array; the single source
    of truth for both fresh init and checkpoint validation."""
    c = config
    layout = {
        "tok_emb": ((c.vocab_size, c.d_model), "normal"),
        "pos_emb": ((c.max_seq_len, c.d_model), "normal"),
    }
    for i in range(c.n_layers):
        p = f"layer{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            layout[f"{p}.attn.{proj}"] = ((c.d_model, c.d_model), "normal")
            layout[f"{p}.attn.{proj}_b"] = ((c.d_model,), "zeros")
        layout[f"{p}.ln1.gamma"] = ((c.d_model,), "ones")
        layout[f"{p}.ln1.beta"] = ((c.d_model,), "zeros")
        layout[f"{p}.ffn.w1"] = ((c.d_model, c.d_ff), "normal")
        layout[f"{p}.ffn.b1"] = ((c.d_ff,), "zeros")
        layout[f"{p}.ffn.w2"] = ((c.d_ff, c.d_model), "normal")
        layout[f"{p}.ffn.b2"] = ((c.d_model,), "zeros")
        layout[f"{p}.ln2.gamma"] = ((c.d_model,), "ones")
        layout[f"{p}.ln2.beta"] = ((c.d_model,), "zeros")
    layout["pooler.w"] = ((c.d_model, c.d_model), "normal")
    layout["pooler.b"] = ((c.d_model,), "zeros")
    return layout


_INITIALIZERS = {
    "normal": lambda rng, shape: _normal(rng, shape),
    "zeros": lambda rng, shape: np.zeros(shape),
    "ones": lambda rng, shape: np.ones(shape),
}


class EncoderParams(ParamGroup):
    """All learnable arrays of the encoder; shapes derive from EncoderConfig."""

    def __init__(self, config, tensors):
        super().__init__(tensors)
        self.config = config

    @classmethod
    def init(cls, config, rng):
        tensors = {}
        for name, (shape, kind) in param_layout(config).items():
            data = _INITIALIZERS[kind](rng, shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, tensors)

    @classmethod
    def from_arrays(cls, config, arrays):
        """Rebuild from name -> array, validating against the layout."""
        layout = param_layout(config)
        if set(arrays) != set(layout):
            missing = sorted(set(layout) - set(arrays))
            extra = sorted(set(arrays) - set(layout))
            raise ValueError(f"parameter name mismatch: missing {missing}, extra {extra}")
        tensors = {}
        for name, (shape, _) in layout.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            tensors[name] = Tensor(arr, requires_grad=True, name=name)
        return cls(config, tensors)


def _dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, keep)


def encode(params, ids, mask, train=False, rng=None):
    """Run the encoder over a batch.

    ids, mask: int arrays [B, L] with L == config.max_seq_len; mask is 1 on
    real tokens. Returns (per-token Tensor [B, L, d_model], pooled Tensor
    [B, d_model]) where pooled is the [CLS] row through the affine+tanh
    pooler. PAD keys get a -1e9 attention bias, so their content cannot
    reach real positions. train=True applies dropout and needs an rng.
    """
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ValueError(f"ids/mask must be matching [B, L] arrays, got {ids.shape} / {mask.shape}")
    B, L = ids.shape
    if L != cfg.max_seq_len:
        raise ValueError(f"sequence length {L} != configured max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("token id outside vocabulary")
    if train and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    drop = cfg.dropout_rate if train else 0.0

    d, H = cfg.d_model, cfg.n_heads
    dh = d // H
    scale = 1.0 / math.sqrt(dh)
    # keys at PAD positions are unreachable: finite -1e9 underflows to exactly 0
    attn_bias = ((1.0 - mask) * NEG_INF)[:, None, None, :].astype(np.float64)

    x = T.add(T.embedding(params["tok_emb"], ids), T.embedding(params["pos_emb"], np.arange(L)))
    x = _dropout(x, drop, rng) if drop else x

    for i in range(cfg.n_layers):
        p = f"layer{i}"
        q = _heads(T.add(T.matmul(x, params[f"{p}.attn.wq"]), params[f"{p}.attn.wq_b"]), B, L, H, dh)
        k = _heads(T.add(T.matmul(x, params[f"{p}.attn.wk"]), params[f"{p}.attn.wk_b"]), B, L, H, dh)
        v = _heads(T.add(T.matmul(x, params[f"{p}.attn.wv"]), params[f"{p}.attn.wv_b"]), B, L, H, dh)
        scores = T.add(T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), scale), attn_bias)
        weights = T.softmax(scores, axis=-1)  # [B, H, L, L]
        ctx = T.matmul(weights, v)  # [B, H, L, dh]
        ctx = T.reshape(T.swapaxes(ctx, 1, 2), (B, L, d))
        attn_out = T.add(T.matmul(ctx, params[f"{p}.attn.wo"]), params[f"{p}.attn.wo_b"])
        attn_out = _dropout(attn_out, drop, rng) if drop else attn_out
        x = _affine_ln(T.add(x, attn_out), params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])

        h = T.gelu(T.add(T.matmul(x, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
        ffn_out = T.add(T.matmul(h, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
        ffn_out = _dropout(ffn_out, drop, rng) if drop else ffn_out
        x = _affine_ln(T.add(x, ffn_out), params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])

        if not np.all(np.isfinite(x.data)):
            raise NumericError(f"non-finite activations after encoder layer {i}")

    cls_rows = T.take(x, (slice(None), 0))  # [B, d]
    pooled = T.tanh(T.add(T.matmul(cls_rows, params["pooler.w"]), params["pooler.b"]))
    if not np.all(np.isfinite(pooled.data)):
        raise NumericError("non-finite activations in pooler")
    return x, pooled


def _heads(x, B, L, H, dh):
    return T.swapaxes(T.reshape(x, (B, L, H, dh)), 1, 2)  # [B, H, L, dh]


def _affine_ln(x, gamma, beta):
    return T.add(T.mul(T.layer_norm(x), gamma), beta)


def attention_weights(params, ids, mask, layer=0):
    """Forward the attention probabilities of one layer (diagnostics/tests)."""
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    B, L = ids.shape
    d, H = cfg.d_model, cfg.n_heads
    dh = d // H
    attn_bias = ((1.0 - mask) * NEG_INF)[:, None, None, :].astype(np.float64)
    x = T.add(T.embedding(params["tok_emb"], ids), T.embedding(params["pos_emb"], np.arange(L)))
    for i in range(layer + 1):
        p = f"layer{i}"
        q = _heads(T.add(T.matmul(x, params[f"{p}.attn.wq"]), params[f"{p}.attn.wq_b"]), B, L, H, dh)
        k = _heads(T.add(T.matmul(x, params[f"{p}.attn.wk"]), params[f"{p}.attn.wk_b"]), B, L, H, dh)
        v = _heads(T.add(T.matmul(x, params[f"{p}.attn.wv"]), params[f"{p}.attn.wv_b"]), B, L, H, dh)
        scores = T.add(T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh)), attn_bias)
        weights = T.softmax(scores, axis=-1)
        if i == layer:
            return weights.data
        ctx = T.reshape(T.swapaxes(T.matmul(weights, v), 1, 2), (B, L, d))
        attn_out = T.add(T.matmul(ctx, params[f"{p}.attn.wo"]), params[f"{p}.attn.wo_b"])
        x = _affine_ln(T.add(x, attn_out), params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        h = T.gelu(T.add(T.matmul(x, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
        ffn_out = T.add(T.matmul(h, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
        x = _affine_ln(T.add(x, ffn_out), params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    raise ValueError(f"layer {layer} out of range")


class ProjectionHead(ParamGroup):
    """Two affine layers with a GELU between; outputs land on the unit sphere."""

    def __init__(self, tensors, d_proj):
        super().__init__(tensors)
        self.d_proj = d_proj

    @classmethod
    def init(cls, d_model, d_proj, rng, d_hidden=None):
        d_hidden = d_hidden or d_model
        t = {
            "w1": _normal(rng, (d_model, d_hidden)),
            "b1": np.zeros(d_hidden),
            "w2": _normal(rng, (d_hidden, d_proj)),
            "b2": np.zeros(d_proj),
        }
        tensors = {k: Tensor(v, requires_grad=True, name=f"proj.{k}") for k, v in t.items()}
        return cls(tensors, d_proj)

    @classmethod
    def from_arrays(cls, arrays):
        if set(arrays) != {"w1", "b1", "w2", "b2"}:
            raise ValueError(f"projection head needs w1/b1/w2/b2, got {sorted(arrays)}")
        t = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        if t["w1"].ndim != 2 or t["w2"].ndim != 2 or t["w1"].shape[1] != t["w2"].shape[0]:
            raise ValueError("projection head weight shapes are inconsistent")
        if t["b1"].shape != (t["w1"].shape[1],) or t["b2"].shape != (t["w2"].shape[1],):
            raise ValueError("projection head bias shapes are inconsistent")
        tensors = {k: Tensor(v, requires_grad=True, name=f"proj.{k}") for k, v in t.items()}
        return cls(tensors, t["w2"].shape[1])


def project(head, h):
    """z = normalize(W2 . gelu(W1 . h + b1) + b2); rows of h -> unit rows z."""
    hidden = T.gelu(T.add(T.matmul(h, head["w1"]), head["b1"]))
    z = T.add(T.matmul(hidden, head["w2"]), head["b2"])
    return T.l2_normalize(z)


def mlm_logits(params, hidden):
    """Token logits tied to the embedding matrix: hidden @ tok_emb^T."""
    return T.matmul(hidden, T.swapaxes(params["tok_emb"], 0, 1))


class TaskHead(ParamGroup):
    """Single affine layer from the pooled representation to task outputs."""

    def __init__(self, tensors, num_outputs):
        super().__init__(tensors)
        self.num_outputs = num_outputs

    @classmethod
    def init(cls, d_model, num_outputs, rng):
        t = {
            "w": _normal(rng, (d_model, num_outputs)),
            "b": np.zeros(num_outputs),
        }
        tensors = {k: Tensor(v, requires_grad=True, name=f"task.{k}") for k, v in t.items()}
        return cls(tensors, num_outputs)

    @classmethod
    def from_arrays(cls, arrays):
        if set(arrays) != {"w", "b"}:
            raise ValueError(f"task head needs w/b, got {sorted(arrays)}")
        w = np.asarray(arrays["w"], dtype=np.float64)
        b = np.asarray(arrays["b"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValueError("task head shapes are inconsistent")
        tensors = {
            "w": Tensor(w, requires_grad=True, name="task.w"),
            "b": Tensor(b, requires_grad=True, name="task.b"),
        }
        return cls(tensors, w.shape[1])


def task_logits(head, pooled, task):
    """Logits [B, n_classes] for classification, scores [B] for regression."""
    expected = task.num_outputs
    if head.num_outputs != expected:
        raise ValueError(
            f"task head emits {head.num_outputs} outputs but task {task.name} "
            f"needs {expected}"
        )
    out = T.add(T.matmul(pooled, head["w"]), head["b"])
    if task.label_kind == "regression":
        return T.reshape(out, (out.shape[0],))
    return out
