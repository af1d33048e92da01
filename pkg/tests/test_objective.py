import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tcmatch import autodiff as ad
from tcmatch.autodiff import Tensor
from tcmatch.encoder import EncoderConfig, encode_texts, init_encoder
from tcmatch.exceptions import ConfigurationError, ShapeError, StaleCacheError
from tcmatch.labels import LabelSet
from tcmatch.objective import (
    TcmHyper,
    argmax_first,
    build_label_cache,
    matching_loss,
    predict,
    predict_batch,
    regularization_loss,
    score_texts,
    similarity,
    similarity_matrix,
    total_loss,
)
from tcmatch.text import build_vocab
from tcmatch.training import MatchingModel

from conftest import check_gradients, numeric_grad, rel_error

finite = st.floats(-4, 4, allow_nan=False)


# ---------------------------------------------------------------- similarity
def test_similarity_is_plain_inner_product():
    assert similarity(Tensor([1.0, 2.0]), Tensor([3.0, -1.0])).item() == 1.0


def test_similarity_dimension_mismatch():
    with pytest.raises(ShapeError):
        similarity(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError):
        similarity_matrix(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_similarity_symmetric_and_self_nonnegative(u, v):
    assert similarity(u, v).item() == similarity(v, u).item()
    assert similarity(u, u).item() >= 0.0


def test_similarity_gradient_through_both_arguments(rng):
    check_gradients(lambda u, v: similarity(u, v), [rng.normal(size=4), rng.normal(size=4)])


# ---------------------------------------------------------------- matching loss
@pytest.mark.parametrize("n_labels", [2, 28, 80])
@pytest.mark.parametrize("tau", [0.07, 1.0, 3.5])
def test_uniform_similarities_give_log_label_count(n_labels, tau):
    inputs = Tensor(np.ones((3, 4)))
    labels = Tensor(np.ones((n_labels, 4)) * 0.25)
    loss = matching_loss(inputs, labels, np.array([0, 1, n_labels - 1]), tau)
    assert abs(loss.item() - math.log(n_labels)) < 1e-9


def test_twenty_eight_labels_value():
    loss = matching_loss(Tensor(np.zeros((1, 3))), Tensor(np.zeros((28, 3))), np.array([5]), 0.3)
    assert round(loss.item(), 4) == 3.3322


def test_single_row_closed_form():
    # sims [2, 0, 0] realized with one-hot label vectors
    inputs = Tensor([[2.0, 0.0, 0.0]])
    labels = Tensor(np.eye(3))
    loss = matching_loss(inputs, labels, np.array([0]), 1.0)
    assert loss.item() == pytest.approx(-math.log(math.exp(2) / (math.exp(2) + 2)), abs=1e-12)


def test_nonpositive_tau_rejected():
    with pytest.raises(ConfigurationError, match="tau"):
        matching_loss(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2))), np.array([0]), 0.0)
    with pytest.raises(ConfigurationError):
        TcmHyper(tau=-1.0)
    with pytest.raises(ConfigurationError):
        TcmHyper(alpha=-0.5)


def test_matching_loss_equals_scaled_cross_entropy(rng):
    x, y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    targets = np.array([0, 4, 2, 2])
    direct = ad.softmax_cross_entropy(Tensor(x @ y.T / 0.2), targets).item()
    assert matching_loss(Tensor(x), Tensor(y), targets, 0.2).item() == pytest.approx(direct, abs=1e-12)


def test_halving_tau_lowers_loss_when_target_is_strict_max():
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(200):
        # modest scale keeps the loss far from floating-point underflow
        x, y = rng.normal(size=(1, 4)) * 0.4, rng.normal(size=(6, 4)) * 0.4
        sims = (x @ y.T)[0]
        target = int(np.argmax(sims))
        if np.sort(sims)[-1] - np.sort(sims)[-2] < 1e-9:
            continue
        tau = rng.uniform(0.2, 2.0)
        big = matching_loss(Tensor(x), Tensor(y), np.array([target]), tau).item()
        small = matching_loss(Tensor(x), Tensor(y), np.array([target]), tau / 2).item()
        assert small < big
        checked += 1
    assert checked > 150


@given(arrays(np.float64, (3, 5), elements=finite), st.floats(0.01, 5), st.floats(0.01, 5))
def test_temperature_never_changes_the_argmax(sims, tau1, tau2):
    p1 = np.exp(ad.log_softmax(Tensor(sims / tau1)).data)
    p2 = np.exp(ad.log_softmax(Tensor(sims / tau2)).data)
    assert np.array_equal(argmax_first(p1), argmax_first(p2)) or np.any(
        np.isclose(np.sort(sims, axis=1)[:, -1], np.sort(sims, axis=1)[:, -2]))


def test_matching_loss_gradient(rng):
    targets = np.array([1, 0, 2])
    check_gradients(lambda x, y: matching_loss(x, y, targets, 0.5), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))])


# ---------------------------------------------------------------- regularizer
def pairwise_oracle(labels: np.ndarray, delta: float) -> float:
    n = len(labels)
    total = 0.0
    for i in range(n):
        closest = max(float(np.dot(labels[i], labels[j])) for j in range(n) if j != i)
        total += max(delta, closest)
    return total / n


def test_all_pairs_below_threshold_gives_threshold_and_zero_gradient():
    labels = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), requires_grad=True)
    loss = regularization_loss(labels, 0.5)
    assert abs(loss.item() - 0.5) < 1e-12
    loss.backward()
    assert np.all(labels.grad == 0.0)


def test_two_labels_give_their_similarity():
    a, b = np.array([1.0, 2.0]), np.array([0.5, 1.0])
    assert regularization_loss(Tensor(np.stack([a, b])), 0.0).item() == pytest.approx(2.5)


def test_regularizer_matches_exhaustive_oracle_and_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        labels = rng.normal(size=(5, 4))
        assert regularization_loss(Tensor(labels), 0.1).item() == pytest.approx(pairwise_oracle(labels, 0.1), abs=1e-12)
        check_gradients(lambda t: regularization_loss(t, 0.1), [labels])


def test_regularizer_needs_two_labels():
    with pytest.raises(ConfigurationError):
        regularization_loss(Tensor(np.ones((1, 3))), 0.0)


@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 4)), elements=finite), st.floats(-2, 2))
def test_regularizer_floor(labels, delta):
    value = regularization_loss(Tensor(labels), delta).item()
    assert value >= delta - 1e-12
    sims = labels @ labels.T
    off = sims[~np.eye(len(labels), dtype=bool)]
    if np.all(off <= delta):
        assert value == pytest.approx(delta, abs=1e-12)
    else:
        assert value > delta


def test_regularizer_gradient_flows_to_both_pair_members():
    labels = Tensor(np.array([[1.0, 1.0], [1.0, 0.9], [-3.0, 0.0]]), requires_grad=True)
    regularization_loss(labels, 0.0).backward()
    assert np.any(labels.grad[0] != 0) and np.any(labels.grad[1] != 0)


# ---------------------------------------------------------------- total loss
def test_total_loss_combination():
    assert total_loss(Tensor(2.0), Tensor(0.5), 1.0).item() == 2.5
    lm = Tensor(1.25)
    assert total_loss(lm, Tensor(7.0), 0.0).item() == 1.25


def test_total_gradient_is_linear_in_parts(rng):
    x0, y0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
    targets = np.array([0, 3, 1])

    def grads(kind):
        x, y = Tensor(x0, requires_grad=True), Tensor(y0, requires_grad=True)
        lm = matching_loss(x, y, targets, 0.3)
        lr = regularization_loss(y, 0.0)
        {"m": lm, "r": lr, "t": total_loss(lm, lr, 0.7)}[kind].backward()
        return x.grad if x.grad is not None else np.zeros_like(x0), y.grad

    gm, gr, gt = grads("m"), grads("r"), grads("t")
    np.testing.assert_allclose(gt[0], gm[0] + 0.7 * gr[0], atol=1e-12)
    np.testing.assert_allclose(gt[1], gm[1] + 0.7 * gr[1], atol=1e-12)


# ---------------------------------------------------------------- through the encoder
def test_end_to_end_gradients_through_encoder():
    label_texts = ["alpha beta", "gamma", "beta delta gamma"]
    inputs = ["alpha", "gamma beta", "delta"]
    vocab = build_vocab(label_texts + inputs)
    cfg = EncoderConfig(vocab_size=len(vocab), max_len=6, embed_dim=8, num_layers=1, num_heads=2, ffn_dim=8,
                        repr_dim=4, seed=2)
    enc = init_encoder(cfg, vocab=vocab)
    for p in enc.params.values():
        if p.data.ndim == 2:
            p.data *= 20
    model = MatchingModel(enc, LabelSet.from_texts(dict(zip("abc", label_texts))), TcmHyper(tau=0.5, alpha=1.0))
    targets = np.array([0, 1, 2])
    loss = model.loss(inputs, targets, None)
    loss.backward()
    worst = 0.0
    for name in ("embed.tokens", "layers.0.attn.query.weight", "layers.0.ffn.in.weight", "pool.out.weight"):
        p = enc.params[name]
        original = p.data.copy()

        def f(arr):
            p.data[...] = arr
            with ad.no_grad():
                value = model.loss(inputs, targets, None).item()
            p.data[...] = original
            return value

        numeric = numeric_grad(f, [original.copy()])[0]
        worst = max(worst, rel_error(p.grad, numeric))
    assert worst < 1e-3


# ---------------------------------------------------------------- inference and cache
@pytest.fixture
def toy_model():
    labels = {"pos": "good great fine", "neg": "bad awful poor", "neu": "okay plain"}
    vocab = build_vocab(list(labels.values()) + ["good movie", "awful film", "plain day"])
    enc = init_encoder(EncoderConfig(vocab_size=len(vocab), max_len=16, embed_dim=16, num_heads=2, ffn_dim=16,
                                     repr_dim=8, seed=4), vocab=vocab)
    return enc, LabelSet.from_texts(labels)


def test_argmax_rule_and_ties():
    assert int(argmax_first(np.array([0.1, 0.9, 0.3]))) == 1
    assert int(argmax_first(np.array([0.5, 0.2, 0.5]))) == 0


def test_cache_rows_equal_fresh_encodings(toy_model):
    enc, ls = toy_model
    cache = build_label_cache(enc, ls)
    fresh = encode_texts(enc, ls.texts).data
    assert cache.matrix.tobytes() == fresh.tobytes()
    assert build_label_cache(enc, ls).matrix.tobytes() == cache.matrix.tobytes()


def test_cache_goes_stale_after_an_update(toy_model):
    enc, ls = toy_model
    cache = build_label_cache(enc, ls)
    model = MatchingModel(enc, ls)
    opt = ad.AdamW(model.trainable(), lr=1e-2)
    opt.zero_grad()
    model.loss(["good movie"], np.array([0]), None).backward()
    opt.step()
    assert not cache.is_valid(enc)
    with pytest.raises(StaleCacheError):
        predict(enc, cache, "good movie")


def test_cache_predictions_match_fresh_encoding_on_many_inputs(toy_model):
    enc, ls = toy_model
    cache = build_label_cache(enc, ls)
    words = enc.vocab.to_list() + ["unseen"]
    rng = np.random.default_rng(0)
    texts = [" ".join(rng.choice(words, size=rng.integers(0, 8))) for _ in range(1000)]
    labels, scores = predict_batch(enc, cache, texts)
    with ad.no_grad():
        fresh_labels_matrix = encode_texts(enc, ls.texts).data
    fresh = score_texts(enc, fresh_labels_matrix, texts)
    assert scores.tobytes() == fresh.tobytes()
    assert labels == [ls.labels[i] for i in argmax_first(fresh)]


def test_single_prediction_returns_all_scores(toy_model):
    enc, ls = toy_model
    label, scores = predict(enc, build_label_cache(enc, ls), "good movie")
    assert label in ls.labels and scores.shape == (3,)
    assert label == ls.labels[int(np.argmax(scores))]


def test_siamese_model_has_no_extra_parameters(toy_model):
    enc, ls = toy_model
    assert sum(p.size for p in MatchingModel(enc, ls).trainable().values()) == enc.num_parameters
