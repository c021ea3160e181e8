import json

import numpy as np
import pytest

from dlfkit import dlf
from dlfkit.schedule import linear_schedule
from dlfkit.scenes import SceneConfig, evaluate, generate_scenes, majority_f1
from dlfkit.verify import SMALL, SMALL_SCENES

S = linear_schedule()


def _batch(seed=0, n=2):
    return dlf.collate([dlf.prepare(s, SMALL) for s in generate_scenes(seed, n, SMALL_SCENES)])


def test_config_json_roundtrip_and_validation():
    cfg = dlf.TrainConfig(lam=0.3, lam_b=0.2, target_kind="x0", time_mode="t_minus")
    back = dlf.TrainConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg and back.lambdas == (0.3, 0.2)
    assert dlf.TrainConfig(lam=0.4).lambdas == (0.4, 0.4)
    with pytest.raises(dlf.ConfigError):
        dlf.TrainConfig.from_json({"bogus": 1})
    with pytest.raises(dlf.ConfigError):
        dlf.TrainConfig(target_kind="nope")
    with pytest.raises(dlf.ConfigError):
        dlf.TrainConfig(time_mode="t_other")


def test_pool_matrix_row_stochastic():
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    p = dlf.pool_matrix(pts, 4)
    np.testing.assert_allclose(p.sum(1), 1.0)
    assert np.all(np.diag(p) > 0) and ((p > 0).sum(1) == 4).all()


def test_features_shape():
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    f = dlf.point_features(pts, 8)
    assert f.shape == (20, 18)
    np.testing.assert_array_equal(f[:, :2], pts)


def test_infer_shapes_and_determinism():
    m1, m2 = dlf.DlfModel(SMALL, seed=3), dlf.DlfModel(SMALL, seed=3)
    pts = generate_scenes(0, 1, SMALL_SCENES)[0].points
    p1, o1 = m1.infer(pts)
    p2, o2 = m2.infer(pts)
    assert p1.shape == (32,) and o1.shape == (32, 2)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(o1, o2)
    assert np.all((p1 > 0) & (p1 < 1))


def test_zero_head_gives_constant_output():
    m = dlf.DlfModel(SMALL)
    for p in m.head.params.values():
        p[...] = 0.0
    m.head.touch()
    prob, off = m.infer(generate_scenes(0, 1, SMALL_SCENES)[0].points)
    np.testing.assert_array_equal(prob, 0.5)
    np.testing.assert_array_equal(off, 0.0)


def test_denoisers_do_not_change_inference():
    full = dlf.DlfModel(SMALL, seed=1)
    bare = dlf.DlfModel(SMALL, seed=1, with_denoisers=False)
    pts = generate_scenes(1, 1, SMALL_SCENES)[0].points
    for a, b in zip(full.infer(pts), bare.infer(pts)):
        np.testing.assert_array_equal(a, b)
    assert set(full.detachable_nets()) and not bare.detachable_nets()
    assert sum(full.param_report().values()) > sum(bare.param_report().values())


@pytest.mark.parametrize("kind", dlf.TARGET_KINDS)
@pytest.mark.parametrize("mode", dlf.TIME_MODES)
def test_model_gradient_check(kind, mode):
    cfg = dlf.TrainConfig(model=SMALL, target_kind=kind, time_mode=mode, lam=0.7, lam_b=0.3)
    model = dlf.DlfModel.for_config(cfg)
    rep = dlf.model_grad_check(model, _batch(), S, cfg, per_net=3)
    assert rep.passed, (rep.worst, rep.worst_name)


def test_gradient_check_without_conditioning_and_with_composed_maps():
    cfg = dlf.TrainConfig(model=SMALL, sgcl_enabled=False, mix_policy="compose_all", lam=1.0)
    rep = dlf.model_grad_check(dlf.DlfModel.for_config(cfg), _batch(1), S, cfg, per_net=3)
    assert rep.passed, (rep.worst, rep.worst_name)


def test_time_modes_share_or_split_timesteps():
    b = _batch()
    for mode, same in (("t_minus", True), ("t_plus", True)):
        cfg = dlf.TrainConfig(model=SMALL, time_mode=mode)
        res = dlf.loss_and_grads(dlf.DlfModel.for_config(cfg), b, S, cfg, np.random.default_rng(0))
        assert (res.t_a == res.t_b) == same
    cfg = dlf.TrainConfig(model=SMALL, time_mode="t_star")
    model = dlf.DlfModel.for_config(cfg)
    diffs = [dlf.loss_and_grads(model, b, S, cfg, np.random.default_rng(k)) for k in range(20)]
    assert any(r.t_a != r.t_b for r in diffs)


def test_lambda_zero_matches_baseline_exactly():
    train_scenes = generate_scenes(2, 4, SMALL_SCENES)
    m0, r0 = dlf.train(train_scenes, dlf.TrainConfig(model=SMALL, epochs=2, batch=2, lam=0.0))
    mb, rb = dlf.train(train_scenes, dlf.TrainConfig(model=SMALL, epochs=2, batch=2, baseline=True))
    assert [r.task_loss for r in r0] == [r.task_loss for r in rb]
    for name in dlf.DlfModel.BACKBONE:
        for p in m0.nets()[name].params:
            np.testing.assert_array_equal(m0.nets()[name].params[p], mb.nets()[name].params[p])


def test_auxiliary_loss_reaches_backbone():
    b = _batch()
    cfg = dlf.TrainConfig(model=SMALL, lam=0.5)
    model = dlf.DlfModel.for_config(cfg)
    with_aux = dlf.loss_and_grads(model, b, S, cfg, np.random.default_rng(0)).grads
    without = dlf.loss_and_grads(model, b, S, dlf.TrainConfig(model=SMALL, lam=0.0),
                                 np.random.default_rng(0)).grads
    assert not np.allclose(with_aux["backbone_a"]["W0"], without["backbone_a"]["W0"])


def test_training_is_deterministic():
    sc = generate_scenes(3, 4, SMALL_SCENES)
    cfg = dlf.TrainConfig(model=SMALL, epochs=2, batch=2, seed=5)
    _, a = dlf.train(sc, cfg)
    _, b = dlf.train(sc, cfg)
    assert [r.total for r in a] == [r.total for r in b]


@pytest.mark.parametrize("kind", dlf.TARGET_KINDS)
def test_every_target_kind_trains_finite(kind):
    _, rec = dlf.train(generate_scenes(4, 4, SMALL_SCENES),
                       dlf.TrainConfig(model=SMALL, epochs=2, batch=2, target_kind=kind))
    assert all(np.isfinite(r.total) for r in rec)
    assert all(r.diff_loss_a > 0 and r.diff_loss_b > 0 for r in rec)


def test_trained_model_beats_majority_guess():
    scfg = SceneConfig(n_points=64, n_boxes=2)
    train_scenes, test_scenes = generate_scenes(10, 48, scfg), generate_scenes(11, 16, scfg)
    model, rec = dlf.train(train_scenes, dlf.TrainConfig(model=SMALL, epochs=15, batch=8, lr=3e-3))
    assert np.mean([r.task_loss for r in rec[-6:]]) < np.mean([r.task_loss for r in rec[:6]])
    assert evaluate(model, test_scenes).fg_f1 > majority_f1(test_scenes) + 0.3


def test_checkpoint_roundtrip(tmp_path):
    model = dlf.DlfModel(SMALL, seed=7)
    dlf.save_model(tmp_path / "m", model)
    back = dlf.load_model(tmp_path / "m")
    pts = generate_scenes(5, 1, SMALL_SCENES)[0].points
    for a, b in zip(model.infer(pts), back.infer(pts)):
        np.testing.assert_array_equal(a, b)
    assert back.param_report() == model.param_report()


def test_score_training_starts_near_unit_loss_and_decreases():
    cfg = dlf.ScoreTrainConfig(steps=300, batch=128)
    den = dlf.make_score_denoiser(1, cfg)
    data = np.random.default_rng(0).normal(1.0, 0.5, (4000, 1))
    _, losses = dlf.score_ddpm_train(den, data, S, cfg)
    assert 0.5 < losses[0] < 2.0
    assert np.mean(losses[-50:]) < np.mean(losses[:50])


def test_score_generate_zero_samples():
    res = dlf.score_ddpm_generate(lambda x, t: np.zeros_like(x), S, 0, "ancestral", np.random.default_rng(0))
    assert res.samples.shape == (0, 1) and len(res.trajectory) == S.T
