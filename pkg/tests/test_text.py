import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcmatch.exceptions import ConfigurationError, SchemaError
from tcmatch.labels import LabelDescription, LabelSet, load_label_mapping, save_label_mapping
from tcmatch.text import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    Example,
    build_vocab,
    encode_text,
    generate_synthetic,
    load_jsonl,
    sample_episode,
    save_jsonl,
    tokenize,
)


# ---------------------------------------------------------------- vocabulary
def test_frequency_order_puts_most_common_first():
    vocab = build_vocab(["a b", "a c"])
    assert {"a", "b", "c"} <= set(vocab.itos)
    assert vocab.stoi["a"] == 4 and vocab.stoi["a"] < vocab.stoi["b"] < vocab.stoi["c"]


def test_min_freq_filters_rare_tokens():
    assert build_vocab(["a b", "a c"], min_freq=2).to_list() == ["a"]


def test_max_size_truncates_after_ranking():
    assert build_vocab(["c c c b b a"], max_size=2).to_list() == ["c", "b"]


def test_rebuild_is_identical():
    corpus = ["The cat sat.", "the dog, the cat!"]
    assert build_vocab(corpus).stoi == build_vocab(corpus).stoi


def test_empty_corpus_is_an_input_error():
    with pytest.raises(ValueError, match="empty"):
        build_vocab([])


def test_reserved_ids_fixed():
    vocab = build_vocab(["x"])
    assert vocab.itos[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)


def test_tokenizer_lowercases_and_splits_punctuation():
    assert tokenize("Hello, World!") == ["hello", ",", "world", "!"]


@given(st.lists(st.text(alphabet="abcde ,.!", min_size=1, max_size=12), min_size=1, max_size=6))
def test_vocab_ids_dense_and_round_trip(corpus):
    vocab = build_vocab(corpus)
    assert sorted(vocab.stoi.values()) == list(range(len(vocab)))
    for token in vocab.itos:
        assert vocab.id_to_token(vocab.token_to_id(token)) == token


# ---------------------------------------------------------------- encoding
def test_empty_text_is_cls_sep_then_padding():
    ids, mask = encode_text(build_vocab(["a"]), "", 4)
    assert ids == [CLS_ID, SEP_ID, PAD_ID, PAD_ID]
    assert mask == [1, 1, 0, 0]


def test_unknown_word_maps_to_unk():
    vocab = build_vocab(["known"])
    ids, _ = encode_text(vocab, "known mystery", 6)
    assert ids[:4] == [CLS_ID, vocab.stoi["known"], UNK_ID, SEP_ID]


def test_truncation_keeps_cls_and_sep():
    vocab = build_vocab(["a b c d"])
    ids, mask = encode_text(vocab, "a b c d", 5)
    assert ids == [CLS_ID, vocab.stoi["a"], vocab.stoi["b"], vocab.stoi["c"], SEP_ID]
    assert mask == [1] * 5


@given(st.text(alphabet="ab cd,", max_size=40), st.integers(2, 16))
def test_encoded_length_and_mask_sum(text, max_len):
    ids, mask = encode_text(build_vocab(["ab cd"]), text, max_len)
    assert len(ids) == len(mask) == max_len
    assert sum(mask) == min(len(tokenize(text)) + 2, max_len)


# ---------------------------------------------------------------- episodes
def _pool(classes: int, per_class: int) -> list[Example]:
    return [Example(f"text {c} {i}", f"c{c}") for c in range(classes) for i in range(per_class)]


def test_episode_counts_and_disjointness():
    ep = sample_episode(_pool(2, 10), 5, seed=0)
    assert len(ep.train) == 10 and len(ep.valid) == 10
    assert not set(ep.train) & set(ep.valid)
    assert Counter(ex.label for ex in ep.train) == {"c0": 5, "c1": 5}


def test_same_seed_same_episode():
    pool = _pool(3, 12)
    assert sample_episode(pool, 4, 9) == sample_episode(pool, 4, 9)


def test_short_class_is_reported():
    pool = _pool(2, 10) + [Example("lonely", "rare")]
    with pytest.raises(ValueError, match="'rare'"):
        sample_episode(pool, 5, 0)


def test_different_seeds_change_membership():
    task = generate_synthetic(40, 10, 300, 6, 0, seed=0)
    differing = 0
    for s in range(100):
        a = sample_episode(task.examples, 5, 2 * s)
        b = sample_episode(task.examples, 5, 2 * s + 1)
        differing += set(a.train) != set(b.train)
    assert differing >= 99


@given(st.integers(1, 4), st.integers(0, 3), st.integers(2, 5), st.integers(0, 10_000))
def test_episode_invariants(K, extra, classes, seed):
    pool = _pool(classes, 2 * K + extra)
    ep = sample_episode(pool, K, seed)
    assert not set(ep.train) & set(ep.valid)
    assert all(n == K for n in Counter(ex.label for ex in ep.train).values())
    assert all(n == K for n in Counter(ex.label for ex in ep.valid).values())
    assert ep == sample_episode(pool, K, seed)


# ---------------------------------------------------------------- files
def test_jsonl_round_trip_and_single_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"text":"hi","label":"joy"}\n', encoding="utf-8")
    assert load_jsonl(path) == [Example("hi", "joy")]
    out = tmp_path / "out.jsonl"
    save_jsonl(out, [Example("héllo", "a"), Example("x", "b")])
    assert load_jsonl(out) == [Example("héllo", "a"), Example("x", "b")]


def test_empty_jsonl_is_empty_list(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_jsonl(path) == []


def test_missing_label_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text":"hi"}\n', encoding="utf-8")
    with pytest.raises(SchemaError, match=":1:.*label"):
        load_jsonl(path)


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text":"a","label":"b"}\n{oops\n', encoding="utf-8")
    with pytest.raises(SchemaError, match=":2:"):
        load_jsonl(path)


def test_label_mapping_round_trip(tmp_path):
    mapping = {"joy": LabelDescription("joy", "feeling happy", "what a day"), "anger": LabelDescription("anger", "mad")}
    path = tmp_path / "labels.json"
    save_label_mapping(path, mapping)
    assert load_label_mapping(path) == mapping
    assert json.loads(path.read_text())["anger"] == {"name": "anger", "definition": "mad"}


# ---------------------------------------------------------------- synthetic data
def test_small_synthetic_construction():
    task = generate_synthetic(2, 4, 20, 3, 2, seed=1)
    assert len(task.examples) == 8
    assert task.label_set.labels == ("class_0", "class_1")
    a, b = (set(task.signal_tokens[label]) for label in task.label_set.labels)
    assert not a & b


def test_synthetic_is_seed_deterministic():
    assert generate_synthetic(5, 6, 80, 4, 3, seed=2).examples == generate_synthetic(5, 6, 80, 4, 3, seed=2).examples


def test_synthetic_mappings_follow_their_recipes():
    task = generate_synthetic(4, 5, 40, 3, 2, seed=0)
    for label in task.label_set.labels:
        desc = task.label_set.mapping[label]
        assert len(tokenize(desc.name)) == 1
        assert set(task.signal_tokens[label]) <= set(tokenize(desc.definition))
        assert desc.sample in {ex.text for ex in task.examples if ex.label == label}


def test_vocab_too_small_is_configuration_error():
    with pytest.raises(ConfigurationError, match="too small"):
        generate_synthetic(10, 2, 20, 3, 1, seed=0)


def test_definition_overlap_shares_partner_tokens():
    task = generate_synthetic(4, 3, 60, 4, 0, seed=0, definition_overlap=2)
    d0 = set(tokenize(task.label_set.mapping["class_0"].definition))
    assert set(task.signal_tokens["class_1"][:2]) <= d0


def test_noiseless_data_is_solved_by_a_centroid_oracle():
    task = generate_synthetic(8, 30, 60, 5, 0, seed=4)
    signal_of = {t: label for label, toks in task.signal_tokens.items() for t in toks}
    vocab = sorted(signal_of)
    index = {t: i for i, t in enumerate(vocab)}

    def bag(text):
        v = np.zeros(len(vocab))
        for t in tokenize(text):
            if t in index:
                v[index[t]] += 1
        return v

    labels = task.label_set.labels
    centroids = np.array([np.mean([bag(ex.text) for ex in task.examples if ex.label == lab], axis=0) for lab in labels])
    predicted = [labels[int(np.argmax(centroids @ bag(ex.text)))] for ex in task.examples]
    assert predicted == [ex.label for ex in task.examples]


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 3), st.integers(0, 1000))
def test_signal_sets_pairwise_disjoint(classes, S, noise, seed):
    task = generate_synthetic(classes, 3, classes * S + 5, S, noise, seed=seed)
    seen = set()
    for toks in task.signal_tokens.values():
        assert not seen & set(toks)
        seen |= set(toks)


# ---------------------------------------------------------------- label sets
def test_label_set_modes_select_fields():
    mapping = {"a": LabelDescription("alpha", "first letter", "apple"), "b": LabelDescription("beta", "second", "bee")}
    assert LabelSet.from_mapping(mapping, "name").texts == ("alpha", "beta")
    assert LabelSet.from_mapping(mapping, "definition").texts == ("first letter", "second")
    assert LabelSet.from_mapping(mapping, "sample").texts == ("apple", "bee")


def test_missing_definition_is_schema_error():
    with pytest.raises(SchemaError, match="definition"):
        LabelSet.from_mapping({"a": LabelDescription("alpha")}, "definition")


def test_sample_mode_draws_from_pool_deterministically():
    mapping = {"a": LabelDescription("alpha"), "b": LabelDescription("beta")}
    pool = [Example(f"a{i}", "a") for i in range(5)] + [Example(f"b{i}", "b") for i in range(5)]
    first = LabelSet.from_mapping(mapping, "sample", pool=pool, seed=3)
    assert first.texts == LabelSet.from_mapping(mapping, "sample", pool=pool, seed=3).texts
    assert first.texts[0].startswith("a") and first.texts[1].startswith("b")


def test_empty_label_text_rejected():
    with pytest.raises(SchemaError):
        LabelSet.from_texts({"a": "  ", "b": "x"})
