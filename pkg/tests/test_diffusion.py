import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlfkit.affine import compose, default_pairs, identity, make_givens, make_scaling, make_translation
from dlfkit.diffusion import (GAUSSIAN, NoiseKind, ancestral_step, draw_noise, eps_to_score, gaussian_optimal_eps,
                              noise_forward, noise_forward_affine, run_chain, sample_fit_step,
                              sample_fit_step_affine)
from dlfkit.schedule import ScheduleError, linear_schedule

S = linear_schedule()


def random_map(rng, d):
    pairs = default_pairs(d)
    rot = make_givens(pairs, rng.uniform(-np.pi, np.pi, len(pairs)), d)
    return compose(rot, compose(make_scaling(rng.uniform(0.05, 3), d), make_translation(rng.normal(0, 3, d))))


@given(seed=st.integers(0, 2**31), t=st.integers(1, 1000))
def test_sample_fit_exact_eps_roundtrip(seed, t):
    rng = np.random.default_rng(seed)
    x0, eps, eps_new = rng.normal(0, 2, (4, 3)), rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    got = sample_fit_step(S, t, noise_forward(S, t, x0, eps), eps, eps_new)
    ab = S.alpha_bar(t - 1)
    assert np.abs(got - (np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps_new)).max() < 1e-10


@given(seed=st.integers(0, 2**31), t=st.integers(1, 1000), d=st.sampled_from([2, 4, 8]))
def test_sample_fit_affine_exact_eps_roundtrip(seed, t, d):
    rng = np.random.default_rng(seed)
    x0, eps, eps_new = rng.normal(0, 2, (3, d)), rng.standard_normal((3, d)), rng.standard_normal((3, d))
    g_t, g_p, h_t, h_p = (random_map(rng, d) for _ in range(4))
    pair = noise_forward_affine(S, t, x0, eps, g_t, h_t)
    got = sample_fit_step_affine(S, t, pair.noisy, eps, eps_new, g_t, g_p, h_t, h_p)
    ab = S.alpha_bar(t - 1)
    want = np.sqrt(ab) * g_p.apply(x0) + np.sqrt(1 - ab) * h_p.apply(eps_new)
    assert np.abs(got - want).max() / max(1.0, np.abs(want).max()) < 1e-10


def test_per_row_timesteps_match_scalar_calls():
    rng = np.random.default_rng(1)
    t = np.array([1, 7, 500, 1000])
    x0, eps = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    batched = noise_forward(S, t, x0, eps)
    for i, ti in enumerate(t):
        np.testing.assert_allclose(batched[i], noise_forward(S, int(ti), x0[i:i + 1], eps[i:i + 1])[0], rtol=1e-15)


def test_first_step_recovers_clean_sample():
    rng = np.random.default_rng(2)
    x0, eps = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    x1 = noise_forward(S, 1, x0, eps)
    np.testing.assert_allclose(sample_fit_step(S, 1, x1, eps, rng.normal(size=(5, 2))), x0, atol=1e-12)
    np.testing.assert_allclose(ancestral_step(S, 1, x1, eps, rng), x0, atol=1e-12)


def test_ancestral_step_with_given_noise_matches_formula():
    rng = np.random.default_rng(3)
    x, e, z = rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
    t = 600
    a, ab = S.alphas[t - 1], S.alpha_bars[t - 1]
    want = (x - (1 - a) / np.sqrt(1 - ab) * e) / np.sqrt(a) + np.sqrt(S.posterior_vars[t - 1]) * z
    np.testing.assert_allclose(ancestral_step(S, t, x, e, z=z), want, rtol=1e-14)


def test_marginal_consistency_of_composed_single_steps():
    rng = np.random.default_rng(4)
    n = 100_000
    x0 = rng.normal(1.0, 0.5, n)
    x = x0.copy()
    for t in range(1, 101):
        a = S.alphas[t - 1]
        x = np.sqrt(a) * x + np.sqrt(1 - a) * rng.standard_normal(n)
    ab = S.alpha_bars[99]
    mean, var = np.sqrt(ab), ab * 0.25 + 1 - ab
    assert abs(x.mean() - mean) < 3 * np.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1))


@pytest.mark.parametrize("t", [1, 10, 100, 500, 999, 1000])
def test_optimal_eps_gives_closed_form_score(t):
    eps_fn = gaussian_optimal_eps(S, 1.0, 0.25)
    ab = S.alpha_bar(t)
    var = ab * 0.25 + 1 - ab
    x = np.linspace(-3, 3, 101)[:, None]
    np.testing.assert_allclose(eps_to_score(S, t, eps_fn(x, t)), -(x - np.sqrt(ab)) / var, atol=1e-8)


def test_optimal_eps_is_conditional_expectation():
    # regress true eps on x_t by Monte Carlo: slope and intercept match the closed form
    rng = np.random.default_rng(5)
    t, n = 300, 400_000
    x0, eps = rng.normal(1.0, 0.5, (n, 1)), rng.standard_normal((n, 1))
    x_t = noise_forward(S, t, x0, eps)
    slope, icept = np.polyfit(x_t[:, 0], eps[:, 0], 1)
    pred = gaussian_optimal_eps(S, 1.0, 0.25)(np.array([[0.0], [1.0]]), t)[:, 0]
    assert icept == pytest.approx(pred[0], abs=5e-3)
    assert slope == pytest.approx(pred[1] - pred[0], abs=5e-3)


@pytest.mark.parametrize("kind", [NoiseKind("gaussian"), NoiseKind("uniform"), NoiseKind("centered_poisson", 4.0)])
def test_noise_kinds_zero_mean(kind):
    e = draw_noise(kind, np.random.default_rng(6), 400_000)
    assert abs(e.mean()) < 3 * e.std() / np.sqrt(e.size)


def test_uniform_noise_unit_variance_and_mask_pattern():
    rng = np.random.default_rng(7)
    assert draw_noise(NoiseKind("uniform"), rng, 400_000).var() == pytest.approx(1.0, abs=0.01)
    m = draw_noise(NoiseKind("mask", prob=0.3), rng, 100_000)
    assert set(np.unique(m)) == {-1.0, 0.0}
    assert (m == -1).mean() == pytest.approx(0.3, abs=0.01)


@pytest.mark.parametrize("kw", [{"kind": "snow"}, {"kind": "centered_poisson", "rate": 0.0},
                                {"kind": "mask", "prob": -0.1}])
def test_invalid_noise_kinds(kw):
    with pytest.raises(ValueError):
        NoiseKind(**kw)


def test_noise_pair_reconstructs():
    rng = np.random.default_rng(8)
    g, h = random_map(rng, 4), random_map(rng, 4)
    x0, eps = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    pair = noise_forward_affine(S, 321, x0, eps, g, h)
    ab = S.alpha_bar(321)
    assert pair.noisy.shape == pair.target.shape
    np.testing.assert_allclose(np.sqrt(ab) * g.apply(x0) + np.sqrt(1 - ab) * h.apply(eps), pair.noisy, atol=1e-12)
    np.testing.assert_array_equal(pair.target, h.apply(eps))


def test_errors():
    with pytest.raises(ValueError):
        noise_forward(S, 5, np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ScheduleError):
        noise_forward(S, 0, np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(ScheduleError):
        sample_fit_step(S, 1001, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        sample_fit_step_affine(S, 5, np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
                               identity(2), identity(3), identity(2), identity(2))


def test_run_chain_trajectory_and_empty():
    s = linear_schedule(50)
    eps_fn = gaussian_optimal_eps(s, 0.0, 1.0)
    rng = np.random.default_rng(9)
    res = run_chain(s, eps_fn, rng.standard_normal((100, 1)), "sample_fit", rng)
    assert [t for t, _, _ in res.trajectory] == list(range(50, 0, -1))
    empty = run_chain(s, eps_fn, np.zeros((0, 1)), "ancestral", rng)
    assert empty.samples.shape == (0, 1) and len(empty.trajectory) == 50
    with pytest.raises(ValueError):
        run_chain(s, eps_fn, np.zeros((1, 1)), "euler", rng)
    with pytest.raises(ValueError):
        run_chain(s, eps_fn, np.zeros((1, 1)), "ancestral", rng, refresh=NoiseKind("uniform"))


def test_sample_fit_chain_with_refresh_draws_fresh_noise():
    s = linear_schedule(20)
    eps_fn = gaussian_optimal_eps(s, 0.0, 1.0)
    x = np.random.default_rng(10).standard_normal((50, 1))
    a = run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(0), refresh=GAUSSIAN).samples
    b = run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(1), refresh=GAUSSIAN).samples
    c = run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(1)).samples
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(c, run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(2)).samples)


def test_affine_chain_with_identity_maps_matches_plain_chain():
    s = linear_schedule(30)
    eps_fn = gaussian_optimal_eps(s, 0.5, 0.5)
    x = np.random.default_rng(11).standard_normal((20, 2))
    plain = run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(0)).samples
    mapped = run_chain(s, eps_fn, x, "sample_fit", np.random.default_rng(0), maps=lambda t: identity(2)).samples
    np.testing.assert_allclose(plain, mapped, atol=1e-12)
