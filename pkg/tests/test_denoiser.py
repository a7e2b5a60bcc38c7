import numpy as np
import pytest

from gcdance import autograd as ag
from gcdance.denoiser import DenoiserConfig, DenoiserError, merge_body_hand, split_body_hand
from gcdance.losses import loss_simple
from gcdance.model import GCDanceModel, read_checkpoint
from gcdance.nn import Adam

TINY = DenoiserConfig(width=16, heads=2, layers=1, music_dim=8, embed_dim=8)
GENRES = ["Jazz", "Dai", "Miao"]


@pytest.fixture
def model(skel52):
    return GCDanceModel(skel52, TINY, GENRES, ["jazz", "dai", "miao"], seed=3)


def _inputs(rng, B=2, k=8):
    return rng.standard_normal((B, k, 319)), rng.integers(0, 50, B), rng.standard_normal((B, k, 8))


def test_split_merge_round_trip(skel52, rng):
    x = rng.standard_normal((3, 5, 319))
    body, hand = split_body_hand(x, skel52)
    assert body.shape[-1] == 151 and hand.shape[-1] == 168 == 28 * 6
    assert np.array_equal(merge_body_hand(body, hand, skel52), x)
    tb, th = split_body_hand(ag.Tensor(x), skel52)
    assert np.array_equal(tb.value, body) and np.array_equal(th.value, hand)
    assert np.array_equal(merge_body_hand(tb, th, skel52).value, x)


def test_body_part_holds_translation_and_contacts(skel52):
    x = np.zeros(319)
    x[312:] = np.arange(1, 8)
    body, hand = split_body_hand(x, skel52)
    assert np.array_equal(body[-7:], np.arange(1, 8)) and not hand.any()


def test_split_rejects_other_presets(skel24, rng):
    with pytest.raises(ValueError):
        split_body_hand(rng.standard_normal((2, 151)), skel24)


@pytest.mark.parametrize("k", [8, 120])
def test_output_shape(model, rng, k):
    d, t, m = _inputs(rng, 2, k)
    out = model.predict(d, t, m, [0, 1]).value
    assert out.shape == d.shape and np.all(np.isfinite(out))


def test_deterministic(model, rng):
    d, t, m = _inputs(rng)
    assert np.array_equal(model.predict(d, t, m, [0, 2]).value, model.predict(d, t, m, [0, 2]).value)


def test_batch_permutation_equivariance(model, rng):
    d, t, m = _inputs(rng, B=4)
    g = np.array([0, 1, 2, 1])
    perm = np.array([2, 0, 3, 1])
    out = model.predict(d, t, m, g).value
    out_p = model.predict(d[perm], t[perm], m[perm], g[perm]).value
    assert np.allclose(out_p, out[perm], atol=1e-12)


def test_genre_sensitivity_after_training_step(model, rng, skel52):
    d, t, m = _inputs(rng, B=4)
    m0 = rng.standard_normal(d.shape)
    opt = Adam(model.store.size, lr=1e-3)
    grad = model.store.flat_grad(loss_simple(m0, model.predict(d, t, m, [0, 1, 2, 0])))
    model.store.unflatten(opt.step(model.store.flatten(), grad))
    a = model.predict(d[:1], t[:1], m[:1], [0]).value
    b = model.predict(d[:1], t[:1], m[:1], [1]).value
    assert np.linalg.norm(a - b) > 0


def test_identity_film_removes_genre_dependence(model, rng):
    for layer in model.denoiser.film_layers():
        layer.theta_w.W.value[:] = 0
        layer.theta_w.b.value[:] = 1
        layer.theta_b.W.value[:] = 0
        layer.theta_b.b.value[:] = 0
    d, t, m = _inputs(rng, B=1)
    outs = [model.predict(d, t, m, [g]).value for g in range(3)]
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[0], outs[2])


def test_cross_link_ablation_touches_hands_only(model, rng, skel52):
    d, t, m = _inputs(rng)
    before = model.predict(d, t, m, [0, 1]).value
    for blk in model.denoiser.hand_blocks:
        for lin in (blk.body_attn.q, blk.body_attn.k, blk.body_attn.v, blk.body_attn.o):
            lin.W.value[:] = 0
            lin.b.value[:] = 0
    after = model.predict(d, t, m, [0, 1]).value
    bb, hb = split_body_hand(before, skel52)
    ba, ha = split_body_hand(after, skel52)
    assert np.array_equal(bb, ba)
    assert np.abs(hb - ha).max() > 1e-8


def test_no_dead_parameters_at_init(model, rng):
    d, t, m = _inputs(rng, B=3)
    params = list(model.store)
    names = model.store.names()
    grads = ag.grad(loss_simple(rng.standard_normal(d.shape), model.predict(d, t, m, [0, 1, 2])), params)
    dead = [n for n, g in zip(names, grads) if not n.startswith("classifier") and not np.any(g)]
    assert dead == []


def test_genre_row_gradient_matches_finite_difference(model, rng):
    d, t, m = _inputs(rng, B=2)
    m0 = rng.standard_normal(d.shape)
    table = model.embed.table
    g = ag.grad(loss_simple(m0, model.predict(d, t, m, [1, 1])), [table])[0]
    direction = rng.standard_normal(table.value.shape[1])
    h = 1e-5
    base = table.value.copy()
    vals = []
    for s in (1, -1):
        table.value = base.copy()
        table.value[1] += s * h * direction
        vals.append(loss_simple(m0, model.predict(d, t, m, [1, 1])).value)
    table.value = base
    fd = (vals[0] - vals[1]) / (2 * h)
    assert vals[0] != vals[1]
    assert g[1] @ direction == pytest.approx(fd, rel=1e-5)
    assert not g[0].any() and not g[2].any()


def test_nan_reports_layer(model, rng):
    model.denoiser.hand_blocks[0].mlp.fc1.W.value[0, 0] = np.nan
    d, t, m = _inputs(rng)
    with pytest.raises(DenoiserError, match="hand.0"):
        model.predict(d, t, m, [0, 1])


def test_shape_contract(model, rng):
    d, t, m = _inputs(rng)
    with pytest.raises(ag.ShapeError):
        model.predict(d[..., :300], t, m, [0, 1])
    with pytest.raises(ag.ShapeError):
        model.predict(d, t, m[:, :5], [0, 1])


def test_checkpoint_round_trip_float32(model, tmp_path, skel52, rng):
    model.stats.mean[:] = rng.standard_normal(319)
    model.save(tmp_path / "ck")
    back = GCDanceModel.load(tmp_path / "ck")
    for name, arr in model.arrays().items():
        assert np.array_equal(back.arrays()[name], arr.astype(np.float32).astype(np.float64)), name
    back.save(tmp_path / "ck2")
    assert (tmp_path / "ck" / "params.bin").read_bytes() == (tmp_path / "ck2" / "params.bin").read_bytes()
    manifest = read_checkpoint(tmp_path / "ck")
    assert "norm.mean" in manifest
    d, t, m = _inputs(rng)
    assert np.allclose(back.predict(d, t, m, [0, 1]).value, model.predict(d, t, m, [0, 1]).value, atol=1e-4)
