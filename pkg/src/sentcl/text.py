"""Tokenization and vocabulary: lowercase whitespace/punctuation splitting,
frequency-ordered vocab with fixed special ids, save/load as one token per line.
"""

import hashlib
import re
from collections import Counter

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIALS = len(SPECIAL_TOKENS)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text):
    """Lowercase, split on whitespace, detach punctuation. Deterministic."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens):
    return " ".join(tokens)


class Vocabulary:
    """Token<->id bijection with the five specials pinned to ids 0..4.

    Regular tokens are ordered by descending corpus frequency, ties
    broken lexicographically, so builds are reproducible.
    """

    def __init__(self, regular_tokens=()):
        self.id_to_token = list(SPECIAL_TOKENS) + list(regular_tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        for i, tok in enumerate(SPECIAL_TOKENS):
            if self.token_to_id[tok] != i:
                raise ValueError(f"special token {tok} must keep id {i}")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.lookup(t) for t in tokens]

    def token(self, idx):
        return self.id_to_token[idx]

    @property
    def sha256(self):
        joined = "\n".join(self.id_to_token[NUM_SPECIALS:])
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()

    def save(self, path):
        # one regular token per line; line number = id - 5, specials implicit
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[NUM_SPECIALS:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


def build_vocab(corpus, min_count=1):
    """Count tokens over an iterable of strings; keep those seen >= min_count."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)
