"""Momentum-contrast machinery: the FIFO key queue, InfoNCE losses, momentum
key-encoder updates, queue warmup, and the single contrastive training step.

Similarity lives on the projected, normalized vectors z, so cosine similarity
reduces to a dot product everywhere below. Keys are detached: gradients reach
the query tower only, and the key tower moves by momentum interpolation.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import encode, project
from .errors import ConfigError
from .tasks import encode_sentences
from .tensor import NEG_INF, Tensor


@dataclass
class MoCoConfig:
    queue_capacity: int = 4096
    momentum: float = 0.999
    temperature: float = 0.07

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ConfigError(f"queue_capacity must be positive, got {self.queue_capacity}")
        if not (0.0 <= self.momentum <= 1.0):
            raise ConfigError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    def validate_batch(self, batch_size):
        if batch_size < 1 or self.queue_capacity % batch_size != 0:
            raise ConfigError(
                f"batch size {batch_size} must divide queue capacity "
                f"{self.queue_capacity}"
            )


class MoCoQueue:
    """Ring buffer of the last K unit keys with their origin ids, FIFO."""

    def __init__(self, capacity, d_proj):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.keys = np.zeros((capacity, d_proj))
        self.origins = np.full(capacity, -1, dtype=np.int64)
        self.head = 0
        self.count = 0

    def __len__(self):
        return self.count

    def enqueue(self, keys, origins):
        keys = np.asarray(keys, dtype=np.float64)
        origins = np.asarray(origins, dtype=np.int64)
        if keys.ndim != 2 or keys.shape[1] != self.keys.shape[1]:
            raise ValueError(f"keys must be [B, {self.keys.shape[1]}], got {keys.shape}")
        if origins.shape != (keys.shape[0],):
            raise ValueError("origins must align with keys")
        if keys.shape[0] > self.capacity:
            raise ValueError("batch larger than queue capacity")
        norms = np.linalg.norm(keys, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-10):
            raise ValueError("queue keys must have unit norm")
        slots = (self.head + np.arange(keys.shape[0])) % self.capacity
        self.keys[slots] = keys
        self.origins[slots] = origins
        self.head = int((self.head + keys.shape[0]) % self.capacity)
        self.count = min(self.capacity, self.count + keys.shape[0])

    def contents(self):
        """(keys, origins) oldest first; views are copies."""
        if self.count < self.capacity:
            idx = np.arange(self.count)
        else:
            idx = (self.head + np.arange(self.capacity)) % self.capacity
        return self.keys[idx].copy(), self.origins[idx].copy()


def cosine_sim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(a @ b) / (na * nb)


def _nce_logits(q, keys, tau, bias=None):
    """[1, N] scaled similarity logits for one query against key rows."""
    logits = T.mul(T.matmul(T.reshape(q, (1, q.shape[-1])), keys.T), 1.0 / tau)
    if bias is not None:
        logits = T.add(logits, bias)
    return logits


def moco_loss(q, queue, positive_index, tau):
    """-log softmax probability of the positive among the queue keys.

    q may be a Tensor (gradients flow to it) or an array; keys never receive
    gradients.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    keys, _ = queue.contents() if isinstance(queue, MoCoQueue) else (np.asarray(queue, dtype=np.float64), None)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("queue holds no keys")
    if not (0 <= positive_index < keys.shape[0]):
        raise ValueError(f"positive_index {positive_index} out of range [0, {keys.shape[0]})")
    q = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
    logits = _nce_logits(q, keys, tau)
    return T.cross_entropy(logits, np.array([positive_index]))


def simclr_inbatch_loss(z_i, z_j, negatives, tau):
    """Eq.-1-style in-batch loss; reference variant, not the training path."""
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z_i = z_i if isinstance(z_i, Tensor) else Tensor(np.asarray(z_i, dtype=np.float64))
    z_j = np.asarray(z_j.data if isinstance(z_j, Tensor) else z_j, dtype=np.float64)
    negs = [np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64) for z in negatives]
    stack = np.stack([z_j] + negs) if negs else z_j[None, :]
    for row in np.concatenate([z_i.data[None, :], stack]):
        if abs(np.linalg.norm(row) - 1.0) > 1e-8:
            raise ValueError("simclr inputs must be unit vectors")
    logits = _nce_logits(z_i, stack, tau)
    return T.cross_entropy(logits, np.array([0]))


def momentum_update(key_params, query_params, m):
    """theta_k <- m * theta_k + (1 - m) * theta_q, every array, in place."""
    if not (0.0 <= m <= 1.0):
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    if set(key_params) != set(query_params):
        raise ValueError("key/query parameter names differ")
    for name, kp in key_params.items():
        qp = query_params[name]
        if kp.data.shape != qp.data.shape:
            raise ValueError(f"shape mismatch for {name}: {kp.data.shape} vs {qp.data.shape}")
        kp.data *= m
        kp.data += (1.0 - m) * qp.data


class MoCoState:
    """Query and key towers plus the queue. The key tower never sees
    gradients; it is a momentum-trailing copy of the query tower."""

    def __init__(self, query_encoder, query_head, key_encoder, key_head, queue, config):
        self.query_encoder = query_encoder
        self.query_head = query_head
        self.key_encoder = key_encoder
        self.key_head = key_head
        self.queue = queue
        self.config = config

    @classmethod
    def init(cls, encoder_params, proj_head, config):
        key_encoder = encoder_params.copy(requires_grad=False)
        key_head = proj_head.copy(requires_grad=False)
        queue = MoCoQueue(config.queue_capacity, proj_head.d_proj)
        return cls(encoder_params, proj_head, key_encoder, key_head, queue, config)

    def query_params(self):
        return {**self.query_encoder.named("enc"), **self.query_head.named("proj")}

    def key_params(self):
        return {**self.key_encoder.named("enc"), **self.key_head.named("proj")}

    def encode_keys(self, ids, mask):
        """x'' -> z under the key tower; plain array, no graph."""
        _, pooled = encode(self.key_encoder, ids, mask, train=False)
        z = project(self.key_head, pooled)
        return z.data.copy()


def warmup(state, batches, target=None):
    """Fill the queue with real keys before training; no optimizer steps.

    batches yields (ids, mask, origin_ids). Stops once ceil(K / B) batches
    are enqueued (or `target` keys, when given). Returns keys enqueued.
    """
    target = state.config.queue_capacity if target is None else target
    enqueued = 0
    for ids, mask, origins in batches:
        if enqueued >= target:
            break
        keys = state.encode_keys(ids, mask)
        state.queue.enqueue(keys, origins)
        enqueued += keys.shape[0]
    return enqueued


def cssl_step(state, pairs, vocab, optimizer, lr, rng):
    """One contrastive update over a batch of AugmentedPairs.

    Order: encode queries (train mode) -> encode keys (no grad) -> mean
    InfoNCE where each query's positive is its own fresh key and negatives
    are the current queue minus same-origin entries -> backprop + SGD on the
    query tower -> momentum update -> enqueue the fresh keys.
    """
    if not pairs:
        raise ValueError("empty batch")
    state.config.validate_batch(len(pairs))
    if len(state.queue) < len(pairs):
        raise ValueError("queue not warmed up; run warmup() first")
    max_len = state.query_encoder.config.max_seq_len
    origins = np.array([p.origin_id for p in pairs], dtype=np.int64)

    q_ids, q_mask = encode_sentences([p.x_prime for p in pairs], vocab, max_len)
    k_ids, k_mask = encode_sentences([p.x_double_prime for p in pairs], vocab, max_len)

    _, pooled_q = encode(state.query_encoder, q_ids, q_mask, train=True, rng=rng)
    q = project(state.query_head, pooled_q)  # [B, d_proj]
    keys = state.encode_keys(k_ids, k_mask)  # [B, d_proj] detached

    queue_keys, queue_origins = state.queue.contents()
    pos = T.tsum(T.mul(q, keys), axis=-1, keepdims=True)  # [B, 1]
    neg = T.matmul(q, queue_keys.T)  # [B, K']
    logits = T.mul(T.concatenate([pos, neg], axis=1), 1.0 / state.config.temperature)
    # stale same-origin keys would be false negatives; push them out of the
    # softmax entirely
    bias = np.zeros((len(pairs), 1 + queue_keys.shape[0]))
    bias[:, 1:][origins[:, None] == queue_origins[None, :]] = NEG_INF
    logits = T.add(logits, bias)

    loss = T.cross_entropy(logits, np.zeros(len(pairs), dtype=np.int64))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step(lr)
    momentum_update(state.key_params(), state.query_params(), state.config.momentum)
    state.queue.enqueue(keys, origins)
    return loss.item()


def warmup_batches_needed(capacity, batch_size):
    return math.ceil(capacity / batch_size)
