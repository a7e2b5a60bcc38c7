import json

import numpy as np
import pytest

from gcdance import training as tr
from gcdance.conditioning import DEFAULT_GENRES
from gcdance.config import ConfigError, ExperimentConfig
from gcdance.denoiser import DenoiserConfig
from gcdance.mtl import AggregationError

TINY = DenoiserConfig(width=16, heads=2, layers=1, embed_dim=8)


@pytest.fixture(scope="module")
def data(skel52):
    ds = tr.synth_dataset([0, 1, 2], 4, 12, 30, skel52, seed=1)
    return tr.split_dataset(ds)


def _trainer(skel, data, out=None, **kw):
    train, held = data
    model, rows, _ = tr.build_model(skel, DEFAULT_GENRES, TINY, seed=5)
    cfg = tr.TrainConfig(**{"steps": 4, "batch": 3, "T": 10, "eval_every": 2, "n_eval": 4,
                            "classifier_warmup": 5, **kw})
    t = tr.Trainer(model, train, held, cfg, rows, out)
    t.prepare()
    return t


def test_split_is_per_genre_and_disjoint(skel52):
    ds = tr.synth_dataset([0, 1], 10, 8, 30, skel52)
    train, held = tr.split_dataset(ds)
    assert len(train) == 16 and len(held) == 4
    assert sorted(np.bincount(held.genres).tolist()) == [2, 2]
    flat = lambda d: {f.tobytes() for f in d.frames}
    assert not flat(train) & flat(held)


def test_log_rows_schema(skel52, data, tmp_path):
    t = _trainer(skel52, data, tmp_path, mtl="nash", aggregate_every=2)
    t.run()
    rows = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    for r in rows:
        assert len(r["losses"]) == 5 and len(r["alpha"]) == 5
        assert {"residual", "rank", "solved"} <= set(r)
    assert [r["solved"] for r in rows] == [True, False, True, False]
    assert rows[1]["alpha"] == rows[0]["alpha"]
    evals = [json.loads(l) for l in (tmp_path / "eval_log.jsonl").read_text().splitlines()]
    assert [e["step"] for e in evals] == [2, 4]


def test_fixed_mode_uses_configured_weights(skel52, data):
    w = (1.0, 0.5, 0.25, 0.0, 0.1)
    t = _trainer(skel52, data, mtl="fixed", weights=w, steps=2)
    t.run()
    assert all(r["alpha"] == list(w) and not r["solved"] for r in t.log)


def test_reused_aligned_weights_may_be_negative(skel52, data):
    t = _trainer(skel52, data, mtl="aligned", aggregate_every=2, steps=2)
    t.run(steps=1)
    t.alpha = np.array([1.0, -0.3, 0.2, 0.5, 0.1])
    t.run()
    assert t.log[1]["alpha"] == [1.0, -0.3, 0.2, 0.5, 0.1] and not t.log[1]["solved"]


@pytest.mark.parametrize("mode", ["fixed", "nash", "aligned"])
def test_resume_reproduces_next_steps_bitwise(skel52, data, tmp_path, mode):
    full = _trainer(skel52, data, mtl=mode, steps=4)
    full.run()
    part = _trainer(skel52, data, mtl=mode, steps=4)
    part.run(steps=2)
    part.save_checkpoint(tmp_path / "ck")
    resumed = _trainer(skel52, data, mtl=mode, steps=4)
    resumed.load_checkpoint(tmp_path / "ck")
    resumed.run()
    assert resumed.step == 4
    assert np.array_equal(resumed.model.store.flatten(), full.model.store.flatten())
    assert resumed.log == full.log[2:]


def test_nan_loss_aborts_with_dump(skel52, data, tmp_path):
    t = _trainer(skel52, data, tmp_path)
    t.train = t.train.subset(np.arange(len(t.train)))  # private copy of the shared fixture
    t.train.frames[:, :, 0] = np.nan
    with pytest.raises(tr.TrainingError, match="step 0") as exc, np.errstate(all="ignore"):
        t.run()
    assert exc.value.step == 0
    assert (tmp_path / "nan_dump" / "train_state.npz").exists()


def test_solver_failure_carries_step(skel52, data, monkeypatch):
    t = _trainer(skel52, data, mtl="nash")

    def broken(G, **kw):
        raise AggregationError("did not converge", residual=1.0)

    monkeypatch.setattr(tr, "nash_aggregate", broken)
    t.step = 7
    with pytest.raises(tr.TrainingError, match="step 7.*nash"):
        t.train_step()


def test_directory_lock(tmp_path):
    with tr.DirectoryLock(tmp_path):
        assert (tmp_path / ".lock").exists()
        with pytest.raises(tr.RunLockedError):
            with tr.DirectoryLock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()
    with tr.DirectoryLock(tmp_path):
        pass


def test_train_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(mtl="pcgrad")
    with pytest.raises(ValueError):
        tr.TrainConfig(weights=(1, 1))
    with pytest.raises(ValueError):
        tr.TrainConfig(aggregate_every=0)


# experiment config ---------------------------------------------------------------

def test_config_defaults_round_trip(tmp_path):
    cfg = ExperimentConfig()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(path)
    assert back == cfg and back.hash() == cfg.hash()
    tc = back.train_config()
    assert (tc.lr, tc.steps, tc.batch, tc.mtl) == (2e-4, 2000, 16, "nash")


def test_config_rejects_unknown_and_bad_values(tmp_path):
    for doc in ({"version": 1, "extra": 1}, {"version": 1, "mtl": {"mode": "avg"}},
                {"version": 1, "optimizer": {"lr": 0}}, {"version": 2}, {},
                {"version": 1, "mtl": {"weights": [1, 1]}}, {"version": 1, "denoiser": {"widht": 8}}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(doc)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_config_overrides_ignore_none():
    cfg = ExperimentConfig().with_overrides(mtl={"mode": "aligned"}, optimizer={"steps": None})
    assert cfg.mtl.mode == "aligned" and cfg.optimizer.steps == 2000
    assert cfg.hash() != ExperimentConfig().hash()
