"""Encoder forward-pass properties: masking, pooling, heads, dropout."""

import numpy as np
import pytest

from sentcl import (
    EncoderConfig, EncoderParams, GLUE_TASKS, ProjectionHead, TaskHead,
    encode, mlm_logits, project, task_logits,
)
from sentcl.encoder import attention_weights, param_layout
from sentcl.text import CLS_ID, PAD_ID, SEP_ID


def batch(tiny_config, rng, b=3):
    length = tiny_config.max_seq_len
    ids = rng.integers(5, tiny_config.vocab_size, size=(b, length))
    ids[:, 0] = CLS_ID
    lengths = rng.integers(3, length, size=b)
    mask = (np.arange(length)[None, :] < lengths[:, None]).astype(np.int64)
    ids[mask == 0] = PAD_ID
    return ids, mask


class TestShapes:
    def test_hidden_and_pooled(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        hidden, pooled = encode(tiny_params, ids, mask)
        assert hidden.shape == (3, tiny_config.max_seq_len, tiny_config.d_model)
        assert pooled.shape == (3, tiny_config.d_model)

    def test_mlm_logits_tied_to_embeddings(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        hidden, _ = encode(tiny_params, ids, mask)
        logits = mlm_logits(tiny_params, hidden)
        assert logits.shape == (3, tiny_config.max_seq_len, tiny_config.vocab_size)
        want = hidden.data @ tiny_params["tok_emb"].data.T
        np.testing.assert_allclose(logits.data, want, atol=1e-12)

    def test_task_logits_classification(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        _, pooled = encode(tiny_params, ids, mask)
        head = TaskHead.init(tiny_config.d_model, 3, rng)
        out = task_logits(head, pooled, GLUE_TASKS["mnli"])
        assert out.shape == (3, 3)

    def test_task_logits_regression_flattens(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        _, pooled = encode(tiny_params, ids, mask)
        head = TaskHead.init(tiny_config.d_model, 1, rng)
        out = task_logits(head, pooled, GLUE_TASKS["stsb"])
        assert out.shape == (3,)

    def test_task_head_arity_checked(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        _, pooled = encode(tiny_params, ids, mask)
        head = TaskHead.init(tiny_config.d_model, 2, rng)
        with pytest.raises(ValueError, match="outputs"):
            task_logits(head, pooled, GLUE_TASKS["mnli"])


class TestInit:
    def test_layout_covers_params_exactly(self, tiny_params, tiny_config):
        assert set(tiny_params.tensors) == set(param_layout(tiny_config))

    def test_weight_init_scale(self, tiny_config):
        params = EncoderParams.init(tiny_config, np.random.default_rng(0))
        w = params["layer0.attn.wq"].data
        assert 0.01 < w.std() < 0.03  # normal(0, 0.02) draws
        assert np.all(params["layer0.ln1.gamma"].data == 1.0)
        assert np.all(params["layer0.attn.wq_b"].data == 0.0)

    def test_head_count_divides_d_model(self):
        with pytest.raises(ValueError):
            EncoderConfig(vocab_size=10, d_model=10, n_heads=3)

    def test_copy_is_deep(self, tiny_params):
        clone = tiny_params.copy()
        clone["tok_emb"].data[0, 0] += 1.0
        assert tiny_params["tok_emb"].data[0, 0] != clone["tok_emb"].data[0, 0]


class TestMasking:
    def test_pad_content_cannot_leak(self, tiny_params, tiny_config, rng):
        """Changing token ids under mask==0 must not move any valid output."""
        ids, mask = batch(tiny_config, rng)
        hidden1, pooled1 = encode(tiny_params, ids, mask)
        ids2 = ids.copy()
        ids2[mask == 0] = SEP_ID  # arbitrary junk in padded slots
        hidden2, pooled2 = encode(tiny_params, ids2, mask)
        np.testing.assert_allclose(pooled1.data, pooled2.data, atol=1e-12)
        valid = mask.astype(bool)
        np.testing.assert_allclose(
            hidden1.data[valid], hidden2.data[valid], atol=1e-12)

    def test_attention_rows_are_distributions(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        att = attention_weights(tiny_params, ids, mask, layer=0)
        b, h, q, k = att.shape
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-10)
        # no weight may land on padded keys
        padded = mask == 0
        for row in range(b):
            assert att[row, :, :, padded[row]].max() == pytest.approx(0.0, abs=1e-12)


class TestDeterminismAndDropout:
    def test_eval_mode_deterministic(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        a = encode(tiny_params, ids, mask)[1].data
        b = encode(tiny_params, ids, mask)[1].data
        np.testing.assert_array_equal(a, b)

    def test_train_mode_needs_rng(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        with pytest.raises(ValueError):
            encode(tiny_params, ids, mask, train=True, rng=None)

    def test_dropout_reproducible_per_seed(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        a = encode(tiny_params, ids, mask, train=True,
                   rng=np.random.default_rng(3))[1].data
        b = encode(tiny_params, ids, mask, train=True,
                   rng=np.random.default_rng(3))[1].data
        c = encode(tiny_params, ids, mask, train=True,
                   rng=np.random.default_rng(4))[1].data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_zero_rate_train_equals_eval(self, tiny_config, rng):
        cfg = EncoderConfig(
            vocab_size=tiny_config.vocab_size, d_model=16, n_heads=2,
            n_layers=2, d_ff=32, max_seq_len=10, dropout_rate=0.0)
        params = EncoderParams.init(cfg, np.random.default_rng(1))
        ids, mask = batch(cfg, rng)
        train_out = encode(params, ids, mask, train=True,
                           rng=np.random.default_rng(0))[1].data
        eval_out = encode(params, ids, mask)[1].data
        np.testing.assert_allclose(train_out, eval_out, atol=1e-15)


class TestPoolerAndProjection:
    def test_pooled_is_tanh_bounded(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        _, pooled = encode(tiny_params, ids, mask)
        assert np.all(np.abs(pooled.data) <= 1.0)

    def test_pooler_reads_first_position(self, tiny_params, tiny_config, rng):
        ids, mask = batch(tiny_config, rng)
        hidden, pooled = encode(tiny_params, ids, mask)
        w, b = tiny_params["pooler.w"].data, tiny_params["pooler.b"].data
        want = np.tanh(hidden.data[:, 0, :] @ w + b)
        np.testing.assert_allclose(pooled.data, want, atol=1e-12)

    def test_projection_rows_unit_norm(self, tiny_config, rng):
        head = ProjectionHead.init(tiny_config.d_model, 8, np.random.default_rng(2))
        h = rng.standard_normal((6, tiny_config.d_model))
        z = project(head, np.asarray(h))
        assert z.shape == (6, 8)
        np.testing.assert_allclose(
            np.linalg.norm(z.data, axis=-1), 1.0, atol=1e-10)

    def test_projection_head_shapes(self, tiny_config):
        head = ProjectionHead.init(tiny_config.d_model, 8, np.random.default_rng(2))
        assert head["w1"].data.shape == (tiny_config.d_model, tiny_config.d_model)
        assert head["w2"].data.shape == (tiny_config.d_model, 8)
        assert head.d_proj == 8
