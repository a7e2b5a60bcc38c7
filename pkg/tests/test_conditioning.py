import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcdance import autograd as ag
from gcdance.autograd import ParameterStore
from gcdance.conditioning import (DEFAULT_GENRES, ConditioningError, FiLMLayer, GenreClassifier,
                                  GenreEmbeddingTable, TextAdapter, build_corpus, build_token_vocab,
                                  film_apply, film_params, genre_prompt, loss_genre_bce,
                                  timestep_embedding, validate_vocabulary)


@pytest.fixture(scope="module")
def trained():
    train, held = build_corpus(DEFAULT_GENRES)
    clf = GenreClassifier(ParameterStore(), build_token_vocab(train), DEFAULT_GENRES, np.random.default_rng(0))
    clf.fit(train)
    return clf, train, held


def test_prompt_template():
    assert genre_prompt("Jazz") == "This is a Jazz type of music."
    assert genre_prompt("Popping") == "This is a Popping type of music."
    with pytest.raises(ConditioningError):
        genre_prompt("Waltz")


def test_vocabulary_rules():
    assert len(DEFAULT_GENRES) == 16
    for bad in ([], ["a", "a"], ["a", ""], "Jazz"):
        with pytest.raises(ConditioningError):
            validate_vocabulary(bad)


def test_corpus_layout():
    train, held = build_corpus(DEFAULT_GENRES)
    assert build_corpus(DEFAULT_GENRES) == (train, held)
    for g in DEFAULT_GENRES:
        n_tr = sum(r["genre"] == g for r in train)
        n_he = sum(r["genre"] == g for r in held)
        assert n_tr + n_he >= 20 and n_tr == 4 * n_he


def test_jazz_prompt(trained):
    clf, _, _ = trained
    assert clf.genres[clf.classify("This is a Jazz type of music.").argmax] == "Jazz"


def test_every_prompt_resolves(trained):
    clf, _, _ = trained
    for g in DEFAULT_GENRES:
        assert clf.genres[clf.classify(genre_prompt(g)).argmax] == g


def test_held_out_accuracy(trained):
    clf, _, held = trained
    assert clf.accuracy(held) >= 0.95


def test_breaking_footwork_held_out(trained):
    clf, train, held = trained
    rows = [r for r in held if r["genre"] == "Breaking" and "footwork" in r["text"].lower()]
    assert rows
    for r in rows:
        assert clf.genres[clf.classify(r["text"]).argmax] == "Breaking"


def test_classifier_case_and_order_invariant(trained):
    clf, _, _ = trained
    a = clf.classify("swing saxophone broadway kicks").probs
    b = clf.classify("KICKS Broadway saxophone SWING").probs
    assert np.array_equal(a, b)
    assert np.array_equal(a, clf.classify("swing saxophone broadway kicks").probs)


def test_unknown_and_empty(trained):
    clf, _, _ = trained
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        d = clf.classify("qqq zzz")
    assert d.unknown and np.all(d.probs == 0.5) and w
    with pytest.raises(ConditioningError):
        clf.classify("")
    with pytest.raises(ConditioningError):
        clf.classify("   ")


# BCE ------------------------------------------------------------------------------

def test_bce_analytic_values():
    g = np.eye(4)[[1]]
    assert loss_genre_bce(g, g).value <= 1e-6
    assert loss_genre_bce(np.full((1, 4), 0.5), g).value == pytest.approx(np.log(2), abs=1e-12)
    assert loss_genre_bce(1 - g, g).value == pytest.approx(-np.log(1e-7), rel=1e-6)
    with pytest.raises(ag.ShapeError):
        loss_genre_bce(np.full((1, 3), 0.5), g)


@given(st.integers(0, 5), st.floats(0.05, 0.95))
def test_bce_gradient_points_towards_target(idx, q):
    g = np.eye(6)[[idx]]
    p = ag.Tensor(np.full((1, 6), q), requires_grad=True)
    grad = ag.grad(loss_genre_bce(p, g), [p])[0][0]
    assert grad[idx] < 0  # increasing the true class lowers the loss
    assert np.all(np.delete(grad, idx) > 0)


# embeddings and FiLM --------------------------------------------------------

def test_embedding_table(rng):
    table = GenreEmbeddingTable(ParameterStore(), 16, 64, rng)
    a, b, a2 = table([0]).value, table([1]).value, table([0]).value
    assert not np.allclose(a, b) and np.array_equal(a, a2)
    with pytest.raises(ConditioningError):
        table([16])


def _film(rng, d_e=8, width=6):
    store = ParameterStore()
    return store, TextAdapter(store, "ad", d_e, 10, rng), FiLMLayer(store, "film", 10, width, rng)


def test_identity_modulation_weights(rng):
    _, ad, layer = _film(rng)
    layer.theta_w.W.value[:] = 0
    layer.theta_w.b.value[:] = 1
    layer.theta_b.W.value[:] = 0
    layer.theta_b.b.value[:] = 0
    gamma, eps = film_params(ad, layer, rng.standard_normal((2, 8)), np.array([3, 7]))
    assert np.array_equal(gamma.value, np.ones((2, 6))) and np.array_equal(eps.value, np.zeros((2, 6)))
    y = rng.standard_normal((2, 5, 6))
    assert np.array_equal(film_apply(y, gamma, eps).value, y)


def test_timestep_changes_params(rng):
    _, ad, layer = _film(rng)
    c = rng.standard_normal((1, 8))
    outs = [np.concatenate([p.value.ravel() for p in film_params(ad, layer, c, np.array([t]))]) for t in range(50)]
    d = np.array([[np.abs(a - b).max() for b in outs] for a in outs])
    assert np.all(d[~np.eye(50, dtype=bool)] > 0)
    emb = timestep_embedding(np.arange(50))
    assert len({e.tobytes() for e in emb}) == 50


def test_zero_adapter_gives_biases(rng):
    _, ad, layer = _film(rng)
    for lin in (ad.mlp.fc1, ad.mlp.fc2):
        lin.W.value[:] = 0
        lin.b.value[:] = 0
    gamma, eps = film_params(ad, layer, np.zeros((1, 8)), np.array([4]))
    assert np.allclose(gamma.value[0], layer.theta_w.b.value) and np.allclose(eps.value[0], layer.theta_b.b.value)


def test_film_apply_cases(rng):
    y = rng.standard_normal((3, 7, 4))
    g, e = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert np.allclose(film_apply(y, g, e).value, y * g[:, None, :] + e[:, None, :], atol=0)
    zero = film_apply(y, np.zeros((3, 4)), e).value
    assert np.array_equal(zero, np.broadcast_to(e[:, None, :], y.shape))
    with pytest.raises(ag.ShapeError):
        film_apply(y, np.ones((3, 5)), np.zeros((3, 5)))


def test_film_composition_law(rng):
    y = rng.standard_normal((2, 9, 5))
    g1, e1, g2, e2 = (rng.standard_normal((2, 5)) for _ in range(4))
    twice = film_apply(film_apply(y, g1, e1), g2, e2).value
    once = film_apply(y, g2 * g1, g2 * e1 + e2).value
    assert np.abs(twice - once).max() < 1e-12
