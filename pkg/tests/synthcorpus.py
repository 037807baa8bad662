"""Slot-template sentences over two disjoint content vocabularies.

Each family fills four slots (modifier, noun, verb, place) from its own
eight-word lists, so the two families share no content words at all. The
held-out pool is filtered to pairwise slot-Hamming distance >= 2: no two
held-out sentences differ in a single word, so deleting one word during
augmentation can never make two of them identical.
"""

import numpy as np

from sentcl.tasks import Example

SLOTS_A = (
    "amber brisk cedar dusky ember frost golden hazel".split(),
    "fox wolf otter heron crow lynx hare stoat".split(),
    "runs sleeps hides hunts drinks waits climbs digs".split(),
    "forest meadow valley thicket marsh ridge burrow glade".split(),
)
SLOTS_B = (
    "rusty sturdy oiled forged tempered blunt carbide crude".split(),
    "hammer chisel wrench lathe pliers saw drill anvil".split(),
    "cuts grinds polishes shapes joins bends drills clamps".split(),
    "bench plank sheet panel beam plate rail frame".split(),
)
MAX_LEN = 8  # 4 content words + [CLS]/[SEP] fits with room to spare


def _slot_words(slots, pick):
    words, rem = [], int(pick)
    for values in reversed(slots):
        words.append(values[rem % len(values)])
        rem //= len(values)
    return tuple(reversed(words))


def _distinct_heldout(slots, picks, start, count):
    """Greedy scan for sentences pairwise differing in >= 2 slots."""
    chosen, out = [], []
    for pick in picks[start:]:
        words = _slot_words(slots, pick)
        if all(sum(a != b for a, b in zip(words, c)) >= 2 for c in chosen):
            chosen.append(words)
            out.append(" ".join(words))
            if len(out) == count:
                return out
    raise RuntimeError("slot space exhausted before finding enough sentences")


def build_corpus(seed=0):
    """Returns (corpus, train, dev, heldout).

    corpus: 200 sentences, 100 per family; train/dev: 50 + 50 labeled
    Examples each, label = family; heldout: 50 distance-filtered
    sentences disjoint from the corpus.
    """
    rng = np.random.default_rng(seed)
    picks_a = rng.permutation(int(np.prod([len(s) for s in SLOTS_A])))
    picks_b = rng.permutation(int(np.prod([len(s) for s in SLOTS_B])))
    sent_a = [" ".join(_slot_words(SLOTS_A, p)) for p in picks_a[:100]]
    sent_b = [" ".join(_slot_words(SLOTS_B, p)) for p in picks_b[:100]]
    train = [
        Example(f"train-{i}", text, label=label)
        for i, (text, label) in enumerate(
            [(t, 0) for t in sent_a[:50]] + [(t, 1) for t in sent_b[:50]]
        )
    ]
    dev = [
        Example(f"dev-{i}", text, label=label)
        for i, (text, label) in enumerate(
            [(t, 0) for t in sent_a[50:]] + [(t, 1) for t in sent_b[50:]]
        )
    ]
    corpus = sent_a + sent_b
    heldout = (
        _distinct_heldout(SLOTS_A, picks_a, 100, 25)
        + _distinct_heldout(SLOTS_B, picks_b, 100, 25)
    )
    return corpus, train, dev, heldout
