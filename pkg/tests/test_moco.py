"""Contrastive machinery: InfoNCE oracle, momentum update, FIFO queue,
warmup, and one fully hand-checked training step.
"""

import math
from collections import deque

import numpy as np
import pytest
from scipy.special import log_softmax

from sentcl import (
    AugmentConfig, ConfigError, EncoderConfig, EncoderParams, MoCoConfig,
    MoCoQueue, MoCoState, ProjectionHead, SGDMomentum, build_vocab, encode,
    make_pairs, moco_loss, momentum_update, project, simclr_inbatch_loss,
    warmup,
)
from sentcl.moco import cssl_step
from sentcl.tasks import encode_sentences
from sentcl.tensor import NEG_INF, Tensor


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def manual_nce(q, keys, positive_index, tau):
    logits = keys @ q / tau
    return float(-log_softmax(logits)[positive_index])


class TestMocoLoss:
    def test_matches_brute_force(self, rng):
        for _ in range(50):
            d = int(rng.integers(2, 12))
            k = int(rng.integers(1, 40))
            q = unit_rows(rng, 1, d)[0]
            keys = unit_rows(rng, k, d)
            idx = int(rng.integers(k))
            for tau in (0.07, 0.5, 1.0):
                got = moco_loss(q, keys, idx, tau).item()
                assert got == pytest.approx(manual_nce(q, keys, idx, tau),
                                            abs=1e-10)

    def test_single_key_is_zero(self, rng):
        q = unit_rows(rng, 1, 6)[0]
        keys = unit_rows(rng, 1, 6)
        assert moco_loss(q, keys, 0, 0.07).item() == pytest.approx(0.0, abs=1e-15)

    def test_uniform_similarity_is_ln_k(self, rng):
        q = unit_rows(rng, 1, 8)[0]
        keys = np.tile(unit_rows(rng, 1, 8), (4, 1))  # four identical keys
        got = moco_loss(q, keys, 2, 0.07).item()
        assert got == pytest.approx(math.log(4), abs=1e-12)

    def test_gradient_reaches_query(self, rng):
        from gradcheck import fd_gradcheck
        q = Tensor(unit_rows(rng, 1, 5)[0], requires_grad=True)
        keys = unit_rows(rng, 7, 5)

        def build():
            return moco_loss(q, keys, 3, 0.2)

        assert fd_gradcheck(build, {"q": q}, sample=5, rng=rng) < 1e-4

    def test_validation(self, rng):
        q = unit_rows(rng, 1, 4)[0]
        keys = unit_rows(rng, 3, 4)
        with pytest.raises(ValueError, match="temperature"):
            moco_loss(q, keys, 0, 0.0)
        with pytest.raises(ValueError, match="positive_index"):
            moco_loss(q, keys, 3, 0.1)
        with pytest.raises(ValueError, match="no keys"):
            moco_loss(q, np.zeros((0, 4)), 0, 0.1)


class TestSimclrLoss:
    def test_matches_manual(self, rng):
        z_i = unit_rows(rng, 1, 6)[0]
        z_j = unit_rows(rng, 1, 6)[0]
        negs = [unit_rows(rng, 1, 6)[0] for _ in range(5)]
        got = simclr_inbatch_loss(z_i, z_j, negs, 0.3).item()
        want = manual_nce(z_i, np.stack([z_j] + negs), 0, 0.3)
        assert got == pytest.approx(want, abs=1e-10)

    def test_requires_unit_vectors(self, rng):
        with pytest.raises(ValueError, match="unit"):
            simclr_inbatch_loss(np.ones(4), unit_rows(rng, 1, 4)[0], [], 0.1)


class TestMomentumUpdate:
    def params(self, rng, shapes=((3, 4), (5,))):
        def fresh():
            return {
                f"p{i}": Tensor(rng.standard_normal(s), requires_grad=True)
                for i, s in enumerate(shapes)
            }
        return fresh(), fresh()

    def test_closed_form(self, rng):
        key, query = self.params(rng)
        before = {n: p.data.copy() for n, p in key.items()}
        momentum_update(key, query, 0.999)
        for name in key:
            want = 0.999 * before[name] + 0.001 * query[name].data
            np.testing.assert_allclose(key[name].data, want, atol=1e-15)

    def test_m_one_is_fixed_point(self, rng):
        key, query = self.params(rng)
        before = {n: p.data.copy() for n, p in key.items()}
        momentum_update(key, query, 1.0)
        for name in key:
            np.testing.assert_array_equal(key[name].data, before[name])

    def test_m_zero_copies_query(self, rng):
        key, query = self.params(rng)
        momentum_update(key, query, 0.0)
        for name in key:
            np.testing.assert_array_equal(key[name].data, query[name].data)

    def test_name_mismatch_rejected(self, rng):
        key, query = self.params(rng)
        del query["p0"]
        query["other"] = Tensor(np.zeros((3, 4)))
        with pytest.raises(ValueError, match="names"):
            momentum_update(key, query, 0.9)

    def test_out_of_range_momentum(self, rng):
        key, query = self.params(rng)
        with pytest.raises(ValueError):
            momentum_update(key, query, 1.5)


class TestQueue:
    def test_fifo_matches_deque_oracle(self, rng):
        for capacity in (4, 16):
            queue = MoCoQueue(capacity, 3)
            oracle = deque(maxlen=capacity)
            next_origin = 0
            for _ in range(300):
                b = int(rng.integers(1, capacity + 1))
                keys = unit_rows(rng, b, 3)
                origins = np.arange(next_origin, next_origin + b)
                next_origin += b
                queue.enqueue(keys, origins)
                oracle.extend(zip(keys, origins))
                got_keys, got_origins = queue.contents()
                want_keys = np.array([k for k, _ in oracle])
                want_origins = np.array([o for _, o in oracle])
                np.testing.assert_array_equal(got_keys, want_keys)
                np.testing.assert_array_equal(got_origins, want_origins)

    def test_rejects_non_unit_keys(self):
        queue = MoCoQueue(4, 3)
        with pytest.raises(ValueError, match="unit"):
            queue.enqueue(np.ones((1, 3)), np.array([0]))

    def test_rejects_oversized_batch(self, rng):
        queue = MoCoQueue(2, 3)
        with pytest.raises(ValueError, match="capacity"):
            queue.enqueue(unit_rows(rng, 3, 3), np.arange(3))

    def test_rejects_misaligned_origins(self, rng):
        queue = MoCoQueue(4, 3)
        with pytest.raises(ValueError, match="origins"):
            queue.enqueue(unit_rows(rng, 2, 3), np.arange(3))

    def test_len_saturates_at_capacity(self, rng):
        queue = MoCoQueue(4, 2)
        for i in range(6):
            queue.enqueue(unit_rows(rng, 1, 2), np.array([i]))
        assert len(queue) == 4


@pytest.fixture
def small_state():
    corpus = [
        "amber fox runs forest", "brisk wolf sleeps meadow",
        "cedar otter hides valley", "dusky heron hunts marsh",
        "ember crow drinks ridge", "frost lynx waits burrow",
        "golden hare climbs glade", "hazel stoat digs thicket",
    ]
    vocab = build_vocab(corpus)
    cfg = EncoderConfig(vocab_size=len(vocab), d_model=16, n_heads=2,
                        n_layers=1, d_ff=32, max_seq_len=6, dropout_rate=0.0)
    params = EncoderParams.init(cfg, np.random.default_rng(0))
    proj = ProjectionHead.init(cfg.d_model, 8, np.random.default_rng(1))
    state = MoCoState.init(params, proj, MoCoConfig(
        queue_capacity=8, momentum=0.99, temperature=0.3))
    pairs = make_pairs(corpus, AugmentConfig(method="eda"), seed=0)
    return state, pairs, vocab, corpus


class TestStateAndStep:
    def test_key_tower_starts_as_copy(self, small_state):
        state, _, _, _ = small_state
        for name, qp in state.query_encoder.tensors.items():
            np.testing.assert_array_equal(
                state.key_encoder.tensors[name].data, qp.data)
            assert not state.key_encoder.tensors[name].requires_grad

    def test_encode_keys_unit_and_detached(self, small_state):
        state, pairs, vocab, _ = small_state
        ids, mask = encode_sentences([p.x_double_prime for p in pairs[:4]],
                                     vocab, 6)
        keys = state.encode_keys(ids, mask)
        assert isinstance(keys, np.ndarray)
        np.testing.assert_allclose(np.linalg.norm(keys, axis=1), 1.0, atol=1e-10)

    def test_warmup_fills_queue(self, small_state):
        state, pairs, vocab, _ = small_state

        def batches():
            while True:
                for i in range(0, len(pairs), 4):
                    chunk = pairs[i:i + 4]
                    ids, mask = encode_sentences(
                        [p.x_double_prime for p in chunk], vocab, 6)
                    yield ids, mask, np.array([p.origin_id for p in chunk])

        enqueued = warmup(state, batches())
        assert enqueued >= state.config.queue_capacity
        assert len(state.queue) == state.config.queue_capacity

    def test_step_requires_warmup(self, small_state):
        state, pairs, vocab, _ = small_state
        opt = SGDMomentum(state.query_params())
        with pytest.raises(ValueError, match="warm"):
            cssl_step(state, pairs[:4], vocab, opt, 0.01,
                      np.random.default_rng(0))

    def test_step_matches_manual_loss(self, small_state):
        """Loss returned by one step == eval-mode hand computation with the
        same-origin entries pushed out of the softmax."""
        state, pairs, vocab, _ = small_state
        self._warm(state, pairs, vocab)
        batch = pairs[:4]

        # snapshot BEFORE the step mutates anything
        q_ids, q_mask = encode_sentences([p.x_prime for p in batch], vocab, 6)
        k_ids, k_mask = encode_sentences([p.x_double_prime for p in batch], vocab, 6)
        _, pooled = encode(state.query_encoder, q_ids, q_mask)
        zq = project(state.query_head, pooled).data.copy()
        zk = state.encode_keys(k_ids, k_mask)
        queue_keys, queue_origins = state.queue.contents()
        tau = state.config.temperature

        want = 0.0
        for i, pair in enumerate(batch):
            logits = np.concatenate(
                [[zq[i] @ zk[i]], zq[i] @ queue_keys.T]) / tau
            logits[1:][queue_origins == pair.origin_id] += NEG_INF
            want += -log_softmax(logits)[0]
        want /= len(batch)

        opt = SGDMomentum(state.query_params())
        got = cssl_step(state, batch, vocab, opt, 0.01, np.random.default_rng(0))
        assert got == pytest.approx(want, abs=1e-10)

    def test_step_enqueues_and_updates(self, small_state):
        state, pairs, vocab, _ = small_state
        self._warm(state, pairs, vocab)
        tok_before = state.query_encoder["tok_emb"].data.copy()
        key_before = state.key_encoder["tok_emb"].data.copy()
        _, head_before = state.queue.head, state.queue.head
        opt = SGDMomentum(state.query_params())
        cssl_step(state, pairs[:4], vocab, opt, 0.05, np.random.default_rng(0))
        assert not np.array_equal(state.query_encoder["tok_emb"].data, tok_before)
        assert not np.array_equal(state.key_encoder["tok_emb"].data, key_before)
        # key tower must move only a little: m=0.99 interpolation
        drift = np.abs(state.key_encoder["tok_emb"].data - key_before).max()
        step = np.abs(state.query_encoder["tok_emb"].data - tok_before).max()
        assert drift < step

    def test_batch_must_divide_capacity(self, small_state):
        state, pairs, vocab, _ = small_state
        self._warm(state, pairs, vocab)
        opt = SGDMomentum(state.query_params())
        with pytest.raises(ConfigError, match="divide"):
            cssl_step(state, pairs[:3], vocab, opt, 0.01,
                      np.random.default_rng(0))

    @staticmethod
    def _warm(state, pairs, vocab):
        def batches():
            while True:
                for i in range(0, len(pairs), 4):
                    chunk = pairs[i:i + 4]
                    ids, mask = encode_sentences(
                        [p.x_double_prime for p in chunk], vocab, 6)
                    yield ids, mask, np.array([p.origin_id for p in chunk])
        warmup(state, batches())


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            MoCoConfig(queue_capacity=0)
        with pytest.raises(ConfigError):
            MoCoConfig(momentum=1.2)
        with pytest.raises(ConfigError):
            MoCoConfig(temperature=0.0)

    def test_validate_batch(self):
        cfg = MoCoConfig(queue_capacity=16)
        cfg.validate_batch(8)
        with pytest.raises(ConfigError):
            cfg.validate_batch(5)
