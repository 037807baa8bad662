import pytest

from sentcl import Vocabulary, build_vocab, detokenize, tokenize
from sentcl.text import (
    CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
)


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("The CAT sat") == ["the", "cat", "sat"]

    def test_punctuation_detached(self):
        assert tokenize("Hello, world!") == ["hello", ",", "world", "!"]

    def test_empty_string(self):
        assert tokenize("") == []

    def test_detokenize_joins(self):
        assert detokenize(["a", "b", "c"]) == "a b c"


class TestVocabulary:
    def test_special_ids_pinned(self):
        v = Vocabulary(["cat"])
        assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID) == (0, 1, 2, 3, 4)
        for i, tok in enumerate(SPECIAL_TOKENS):
            assert v.lookup(tok) == i
        assert v.lookup("cat") == NUM_SPECIALS

    def test_unknown_maps_to_unk(self):
        v = Vocabulary(["cat"])
        assert v.lookup("zebra") == UNK_ID
        assert v.encode(["cat", "zebra"]) == [NUM_SPECIALS, UNK_ID]

    def test_frequency_then_lexical_order(self):
        v = build_vocab(["b b a a c", "a"])
        # a seen 3x, b 2x, c 1x
        assert v.id_to_token[NUM_SPECIALS:] == ["a", "b", "c"]

    def test_tie_broken_lexicographically(self):
        v = build_vocab(["dog cat", "cat dog"])
        assert v.id_to_token[NUM_SPECIALS:] == ["cat", "dog"]

    def test_min_count_filters(self):
        v = build_vocab(["a a b"], min_count=2)
        assert "a" in v
        assert "b" not in v

    def test_min_count_validation(self):
        with pytest.raises(ValueError):
            build_vocab(["a"], min_count=0)

    def test_duplicate_regular_token_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["cat", "cat"])

    def test_special_collision_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["[PAD]"])

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab(["the cat sat on the mat"])
        path = tmp_path / "vocab.txt"
        v.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == v.id_to_token
        assert loaded.sha256 == v.sha256

    def test_save_writes_only_regular_tokens(self, tmp_path):
        v = build_vocab(["cat dog"])
        path = tmp_path / "vocab.txt"
        v.save(path)
        lines = path.read_text().splitlines()
        assert lines == ["cat", "dog"]

    def test_sha256_changes_with_content(self):
        assert build_vocab(["cat"]).sha256 != build_vocab(["dog"]).sha256

    def test_token_inverse(self):
        v = build_vocab(["cat dog"])
        for i in range(len(v)):
            assert v.lookup(v.token(i)) == i
