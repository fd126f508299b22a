import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcsum.tokens import Origin, TokenSeq
from bcsum.vocab import BOS, EOS, UNK, Vocab, build_vocab, decode, encode


def seqs(*lists, origin=Origin.ASM):
    return [TokenSeq(list(x), origin) for x in lists]


def test_frequency_then_lexicographic():
    v = build_vocab(seqs("ab", "a"), min_freq=1)
    assert v.id_of["a"] == 4 and v.id_of["b"] == 5
    assert v.token_of[:4] == ["<pad>", "<unk>", "<s>", "</s>"]


def test_min_freq_filters():
    v = build_vocab(seqs("ab", "a"), min_freq=2)
    assert v.token_of[4:] == ["a"]


def test_ties_lexicographic():
    v = build_vocab(seqs(["zeta", "alpha", "mid"]), min_freq=1)
    assert v.token_of[4:] == ["alpha", "mid", "zeta"]


def test_deterministic():
    c = seqs("abcab", "cba", "dd")
    assert build_vocab(c, 1).token_of == build_vocab(c, 1).token_of
    assert build_vocab(c, 1).digest() == build_vocab(list(reversed(c)), 1).digest()


def test_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([], 1)


def test_encode_unk_and_bos_eos():
    v = Vocab(Origin.ASM, ["<pad>", "<unk>", "<s>", "</s>", "a"])
    assert encode(TokenSeq(["a", "zz"], Origin.ASM), v) == [4, UNK]
    s = build_vocab(seqs(["hi"], origin=Origin.SUMMARY), 1)
    assert encode(TokenSeq(["hi"], Origin.SUMMARY), s) == [BOS, s.id_of["hi"], EOS]


def test_truncation_after_bos_eos():
    s = build_vocab(seqs("abcd", origin=Origin.SUMMARY), 1)
    ids = encode(TokenSeq(list("abcd"), Origin.SUMMARY), s, max_len=3)
    assert ids == [BOS, s.id_of["a"], s.id_of["b"]]


def test_origin_mismatch():
    v = build_vocab(seqs("ab"), 1)
    with pytest.raises(ValueError):
        encode(TokenSeq(["a"], Origin.PSEUDO), v)


def test_save_load(tmp_path):
    v = build_vocab(seqs("abcab"), 1)
    v.save(tmp_path / "v.json")
    w = Vocab.load(tmp_path / "v.json")
    assert w == v and w.digest() == v.digest()


def test_inverse_maps():
    v = build_vocab(seqs("the quick brown fox jumps over the lazy dog".split()), 1)
    for i, t in enumerate(v.token_of):
        assert v.id_of[t] == i


words = st.lists(st.sampled_from(["a", "b", "c", "d", "e", "f"]), min_size=1, max_size=8)


@given(st.lists(words, min_size=1, max_size=10))
@settings(max_examples=100, deadline=None)
def test_round_trip_and_unk_monotone(corpus):
    c = seqs(*corpus)
    v = build_vocab(c, 1)
    for s in c:
        assert decode(encode(s, v, max_len=100), v) == s.tokens
    unks = []
    for k in range(1, 5):
        vk = build_vocab(c, k)
        unks.append(sum(encode(s, vk, max_len=100).count(UNK) for s in c))
    assert unks == sorted(unks)
