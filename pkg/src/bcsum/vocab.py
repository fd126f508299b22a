"""Token <-> id vocabularies for the asm, pseudo and summary streams."""
from __future__ import annotations

import hashlib
import json
from collections import Counter

from .tokens import Origin, TokenSeq

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ["<pad>", "<unk>", "<s>", "</s>"]

DEFAULT_MAX_LEN = {Origin.ASM: 400, Origin.PSEUDO: 400, Origin.SUMMARY: 32}


class Vocab:
    def __init__(self, origin, tokens, min_freq=2):
        self.origin = Origin(origin)
        self.min_freq = min_freq
        self.token_of = list(tokens)
        if self.token_of[:4] != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        self.id_of = {t: i for i, t in enumerate(self.token_of)}
        if len(self.id_of) != len(self.token_of):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.token_of)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.origin == other.origin and self.token_of == other.token_of

    def digest(self):
        payload = json.dumps([self.origin.value, self.token_of], ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def decode(self, ids, strip_specials=True):
        out = []
        for i in ids:
            if strip_specials and i in (PAD, BOS):
                continue
            if strip_specials and i == EOS:
                break
            out.append(self.token_of[i])
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"origin": self.origin.value, "min_freq": self.min_freq, "tokens": self.token_of},
                      fh, ensure_ascii=False, indent=0)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["origin"], d["tokens"], d.get("min_freq", 2))


def build_vocab(corpus, min_freq=2, origin=None) -> Vocab:
    """Frequency-ordered vocabulary, ties broken lexicographically."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    origins = {s.origin for s in corpus if isinstance(s, TokenSeq)}
    if origin is None:
        if len(origins) != 1:
            raise ValueError(f"corpus mixes origins {sorted(o.value for o in origins)}; pass origin explicitly")
        origin = origins.pop()
    counts = Counter()
    for seq in corpus:
        counts.update(seq.tokens if isinstance(seq, TokenSeq) else seq)
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(origin, SPECIALS + kept, min_freq)


def encode(seq: TokenSeq, v: Vocab, max_len=None, add_bos_eos=None) -> list:
    if Origin(seq.origin) is not v.origin:
        raise ValueError(f"cannot encode a {seq.origin.value} sequence with a {v.origin.value} vocabulary")
    if add_bos_eos is None:
        add_bos_eos = v.origin is Origin.SUMMARY
    if max_len is None:
        max_len = DEFAULT_MAX_LEN[v.origin]
    ids = [v.id_of.get(t, UNK) for t in seq.tokens]
    if add_bos_eos:
        ids = [BOS] + ids + [EOS]
    return ids[:max_len]


def decode(ids, v: Vocab) -> list:
    return v.decode(ids)
