"""Sentence augmentation: the four EDA token operations and a back-translation
composer over a pluggable translator, plus pair generation for contrastive
pretraining and the pairs TSV format.

Augmentation rng is per sentence: each (stream name, seed, origin_id, view)
tuple seeds its own generator, so corpus order and batching cannot change the
output.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .text import detokenize, tokenize

# Only used to exclude replacement/insertion anchors. Deliberately small;
# documented in the README.
STOPWORDS = frozenset(
    """a an the and or but if then else for nor so yet at by in of on to up
    as is are was were be been being am do does did have has had i you he
    she it we they me him her us them my your his its our their this that
    these those not no with from into over under again there here when
    where why how all any both each few more most other some such only own
    same than too very can will just should now""".split()
)

BT_PIVOTS = ("de", "zh")

_EDA_METHODS = ("eda", "back_translation")


@dataclass
class AugmentConfig:
    method: str = "eda"
    eda_alpha: float = 0.1
    stream: str = "augment"

    def __post_init__(self):
        if self.method not in _EDA_METHODS:
            raise ConfigError(f"augment method must be one of {_EDA_METHODS}, got {self.method!r}")
        if not (0.0 <= self.eda_alpha <= 1.0):
            raise ConfigError(f"eda_alpha must be in [0, 1], got {self.eda_alpha}")
        if not self.stream:
            raise ConfigError("rng stream name must be nonempty")


class Lexicon:
    """Token -> synonym list. A token is never its own synonym."""

    def __init__(self, entries):
        table = {}
        for token, syns in entries.items():
            syns = tuple(syns)
            if token in syns:
                raise ValueError(f"token {token!r} listed as its own synonym")
            if syns:
                table[token] = syns
        self._table = table

    def synonyms(self, token):
        return self._table.get(token, ())

    def __contains__(self, token):
        return token in self._table

    def __len__(self):
        return len(self._table)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"lexicon {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataError(f"lexicon {path} must be a JSON object")
        try:
            return cls(raw)
        except ValueError as exc:
            raise DataError(f"lexicon {path}: {exc}") from exc


EMPTY_LEXICON = Lexicon({})


def _require_tokens(tokens):
    if not tokens:
        raise ValueError("token list is empty")


def _anchor_positions(tokens, lexicon):
    return [i for i, t in enumerate(tokens) if t not in STOPWORDS and lexicon.synonyms(t)]


def synonym_replacement(tokens, lexicon, n, rng):
    """Replace n distinct anchor tokens with a random synonym each.

    Anchors are non-stopword tokens with lexicon entries; fewer anchors than
    n just replaces what exists. No anchors: the input comes back unchanged.
    """
    _require_tokens(tokens)
    out = list(tokens)
    anchors = _anchor_positions(tokens, lexicon)
    if not anchors:
        return out
    k = min(n, len(anchors))
    for a in rng.choice(len(anchors), size=k, replace=False):
        pos = anchors[a]
        syns = lexicon.synonyms(tokens[pos])
        out[pos] = syns[rng.integers(len(syns))]
    return out


def random_insertion(tokens, lexicon, n, rng):
    """Insert n synonyms of random anchors at random positions."""
    _require_tokens(tokens)
    out = list(tokens)
    for _ in range(n):
        anchors = _anchor_positions(out, lexicon)
        if not anchors:
            break
        word = out[anchors[rng.integers(len(anchors))]]
        syns = lexicon.synonyms(word)
        syn = syns[rng.integers(len(syns))]
        out.insert(rng.integers(len(out) + 1), syn)
    return out


def random_swap(tokens, n, rng):
    """Swap two uniformly chosen distinct positions, n times."""
    _require_tokens(tokens)
    out = list(tokens)
    if len(out) < 2:
        return out
    for _ in range(n):
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def random_deletion(tokens, alpha, rng):
    """Drop each token independently with probability alpha; never returns
    empty (one uniformly chosen survivor is kept instead)."""
    _require_tokens(tokens)
    draws = rng.random(len(tokens))
    kept = [t for t, u in zip(tokens, draws) if u >= alpha]
    if not kept:
        kept = [tokens[rng.integers(len(tokens))]]
    return kept


def eda_augment(tokens, lexicon, alpha, rng):
    """One uniformly chosen EDA op applied once.

    n = max(1, round(alpha * len(tokens))) positions for replacement,
    insertion, and swap; deletion drops tokens independently with
    probability alpha. alpha == 0 is the identity.
    """
    _require_tokens(tokens)
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return list(tokens)
    n = max(1, round(alpha * len(tokens)))
    op = int(rng.integers(4))
    if op == 0:
        return synonym_replacement(tokens, lexicon, n, rng)
    if op == 1:
        return random_insertion(tokens, lexicon, n, rng)
    if op == 2:
        return random_swap(tokens, n, rng)
    return random_deletion(tokens, alpha, rng)


# --- translation -------------------------------------------------------------

class TranslationError(DataError):
    """Translator failure; carries the pivot language when known."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class TranslatorInterface:
    """translate(sentence, source_lang, target_lang) -> sentence."""

    def translate(self, sentence, source_lang, target_lang):
        raise NotImplementedError


class IdentityTranslator(TranslatorInterface):
    def translate(self, sentence, source_lang, target_lang):
        return sentence


class TableTranslator(TranslatorInterface):
    """Deterministic mock backed by {(source, target): {sentence: out}} tables.

    Sentences missing from a table pass through unchanged unless strict=True,
    which raises instead.
    """

    def __init__(self, tables, strict=False):
        self.tables = {pair: dict(entries) for pair, entries in tables.items()}
        self.strict = strict

    def translate(self, sentence, source_lang, target_lang):
        table = self.tables.get((source_lang, target_lang), {})
        if sentence in table:
            return table[sentence]
        if self.strict:
            raise TranslationError(
                f"no {source_lang}->{target_lang} entry for {sentence!r}"
            )
        return sentence


class HttpTranslator(TranslatorInterface):
    """Client for an external MT service.

    POSTs JSON {"text", "source", "target"} to the endpoint and expects
    {"text": ...} back. Failures (connection, non-2xx, bad payload) raise
    TranslationError after the configured retries.
    """

    def __init__(self, endpoint, auth_token=None, timeout=10.0, retries=0):
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout = timeout
        self.retries = retries

    def translate(self, sentence, source_lang, target_lang):
        import requests

        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        payload = {"text": sentence, "source": source_lang, "target": target_lang}
        last = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code != 200:
                    last = TranslationError(
                        f"translator returned HTTP {resp.status_code}"
                    )
                    continue
                body = resp.json()
                if not isinstance(body, dict) or "text" not in body:
                    raise TranslationError("translator response missing 'text'")
                return body["text"]
            except TranslationError as exc:
                raise exc
            except Exception as exc:  # noqa: BLE001 - network errors vary by backend
                last = TranslationError(f"translator request failed: {exc}")
        raise last


def back_translate(x, translator, pivot_lang):
    """x -> pivot -> english. Empty output on nonempty input counts as a
    translator failure; all failures carry the pivot language."""
    try:
        pivoted = translator.translate(x, "en", pivot_lang)
        result = translator.translate(pivoted, pivot_lang, "en")
    except TranslationError as exc:
        raise TranslationError(str(exc), pivot=pivot_lang) from exc
    except Exception as exc:  # noqa: BLE001 - translator implementations vary
        raise TranslationError(
            f"translator failed for pivot {pivot_lang}: {exc}", pivot=pivot_lang
        ) from exc
    if x and not result:
        raise TranslationError(
            f"translator returned empty text for pivot {pivot_lang}", pivot=pivot_lang
        )
    return result


# --- pair generation ---------------------------------------------------------

@dataclass(frozen=True)
class AugmentedPair:
    origin_id: int
    x_prime: str
    x_double_prime: str


def _stream_hash(name):
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "big")


def view_rng(stream, seed, origin_id, view):
    """Generator for one (sentence, view); independent of corpus order."""
    entropy = (
        _stream_hash(stream),
        int(seed) % 2**32,
        int(origin_id) % 2**32,
        int(view) % 2**32,
    )
    return np.random.default_rng(entropy)


def _eda_view(text, origin_id, view, cfg, lexicon, seed):
    toks = tokenize(text)
    if not toks:
        raise DataError(f"sentence {origin_id} has no tokens after tokenization")
    rng = view_rng(cfg.stream, seed, origin_id, view)
    return detokenize(eda_augment(toks, lexicon, cfg.eda_alpha, rng))


def make_pairs(corpus, cfg, translator=None, lexicon=None, seed=0, bt_fallback="raise"):
    """One AugmentedPair per corpus sentence.

    eda: two independent draws per sentence. back_translation: x' via the de
    pivot, x'' via zh; a missing translator is a configuration error, and
    bt_fallback="eda" downgrades per-sentence translator failures to EDA
    draws instead of raising.
    """
    if not corpus:
        raise DataError("corpus is empty")
    if bt_fallback not in ("raise", "eda"):
        raise ConfigError(f"bt_fallback must be 'raise' or 'eda', got {bt_fallback!r}")
    lexicon = lexicon if lexicon is not None else EMPTY_LEXICON

    pairs = []
    if cfg.method == "back_translation":
        if translator is None:
            raise ConfigError("back_translation needs a translator")
        for i, x in enumerate(corpus):
            try:
                views = (
                    back_translate(x, translator, BT_PIVOTS[0]),
                    back_translate(x, translator, BT_PIVOTS[1]),
                )
            except TranslationError:
                if bt_fallback == "raise":
                    raise
                views = (
                    _eda_view(x, i, 1, cfg, lexicon, seed),
                    _eda_view(x, i, 2, cfg, lexicon, seed),
                )
            pairs.append(AugmentedPair(i, views[0], views[1]))
        return pairs

    for i, x in enumerate(corpus):
        pairs.append(
            AugmentedPair(
                i,
                _eda_view(x, i, 1, cfg, lexicon, seed),
                _eda_view(x, i, 2, cfg, lexicon, seed),
            )
        )
    return pairs


# --- pairs TSV ---------------------------------------------------------------

_PAIRS_HEADER = ("origin_id", "view", "text")


def save_pairs(path, pairs):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(_PAIRS_HEADER) + "\n")
        for pair in pairs:
            for view, text in ((1, pair.x_prime), (2, pair.x_double_prime)):
                if "\t" in text or "\n" in text:
                    raise DataError(
                        f"pair {pair.origin_id} view {view} contains a tab or newline"
                    )
                fh.write(f"{pair.origin_id}\t{view}\t{text}\n")


def load_pairs(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path} is empty")
    header = tuple(lines[0].split("\t"))
    if header != _PAIRS_HEADER:
        raise DataError(f"{path}: expected header {_PAIRS_HEADER}, got {header}")
    views = {}
    order = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
        try:
            origin = int(parts[0])
            view = int(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer origin_id/view") from exc
        if view not in (1, 2):
            raise DataError(f"{path}:{lineno}: view must be 1 or 2, got {view}")
        slot = views.setdefault(origin, {})
        if view in slot:
            raise DataError(f"{path}:{lineno}: duplicate view {view} for origin {origin}")
        if not slot:
            order.append(origin)
        slot[view] = parts[2]
    pairs = []
    for origin in order:
        slot = views[origin]
        if set(slot) != {1, 2}:
            raise DataError(f"{path}: origin {origin} is missing a view")
        pairs.append(AugmentedPair(origin, slot[1], slot[2]))
    return pairs
