import string

import numpy as np
import pytest

from modfusion.text import (PAD, PAD_INDEX, UNK, UNK_INDEX, EmbeddingTable, Vocabulary, build_vocab,
                            embed, encode, load_glove, tokenize)


@pytest.mark.parametrize("sentence, expected", [
    ("Hello, World!", ["hello", "world"]),
    ("", []),
    ("don't STOP!!", ["don't", "stop"]),
    ("  tabs\tand\nnewlines  ", ["tabs", "and", "newlines"]),
    ("R2-D2 x86", ["r2", "d2", "x86"]),
])
def test_tokenize(sentence, expected):
    assert tokenize(sentence) == expected


def test_tokenize_character_classes():
    # walk every printable character: only [a-z0-9'] (after lowercasing) survive
    for ch in string.printable:
        toks = tokenize(f"a{ch}b")
        keep = ch.lower() in string.ascii_lowercase + string.digits + "'"
        assert toks == ([f"a{ch.lower()}b"] if keep else ["a", "b"]), repr(ch)


def test_vocab_first_seen_order():
    v = build_vocab(["a b", "b c"])
    assert v.stoi == {PAD: 0, UNK: 1, "a": 2, "b": 3, "c": 4}


def test_vocab_duplicates_and_rebuild():
    assert build_vocab(["a a a"]).itos == [PAD, UNK, "a"]
    assert build_vocab(["x y", "z"]) == build_vocab(["x y", "z"])


def test_vocab_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_round_trip(tmp_path):
    v = build_vocab(["the cat sat", "on the mat"])
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt") == v


def test_encode_unknown():
    v = build_vocab(["a"])
    assert encode(["a", "zzz"], v) == [v["a"], UNK_INDEX]
    assert encode([], v) == []
    assert UNK_INDEX not in encode(["a", "a"], v)


def test_embedding_lookup():
    table = EmbeddingTable(5, np.random.default_rng(0))
    w = table.weight.data
    np.testing.assert_array_equal(embed([3], table).data, w[[3]])
    out = embed([2, 2], table).data
    np.testing.assert_array_equal(out[0], out[1])
    idx = np.random.default_rng(1).integers(0, 5, size=9)
    ref = np.stack([w[i] for i in idx])
    np.testing.assert_array_equal(embed(idx, table).data, ref)
    assert out.shape == (2, 300)
    np.testing.assert_array_equal(w[PAD_INDEX], 0.0)


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        embed([5], EmbeddingTable(5, np.random.default_rng(0)))


def test_frozen_embeddings():
    table = EmbeddingTable(4, np.random.default_rng(0), trainable=False)
    assert not table.weight.requires_grad
    assert table.num_parameters(trainable_only=True) == 0


def test_load_glove(tmp_path):
    v = build_vocab(["hello world"])
    row = " ".join(["0.5"] * 300)
    (tmp_path / "g.txt").write_text(f"hello {row}\nother {row}\n", encoding="utf-8")
    table, found = load_glove(tmp_path / "g.txt", v, np.random.default_rng(0))
    assert found == 1
    np.testing.assert_array_equal(table[v["hello"]], 0.5)
    assert table.shape == (len(v), 300)
    assert np.all(table[PAD_INDEX] == 0.0)


def test_load_glove_bad_width(tmp_path):
    (tmp_path / "g.txt").write_text("hello 1 2 3\n", encoding="utf-8")
    with pytest.raises(ValueError, match="301"):
        load_glove(tmp_path / "g.txt", build_vocab(["hello"]), np.random.default_rng(0))
