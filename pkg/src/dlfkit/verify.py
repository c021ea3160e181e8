"""Registry of numerical and behavioural invariants, runnable by suite.

Every property returns ``(passed, measured, tolerance)`` and runs with fixed
seeds. Kernels under test are looked up through an ``ops`` namespace so a
caller can substitute a deliberately broken implementation and confirm the
suite catches it.
"""
from __future__ import annotations

import contextlib
import io
import json
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Dict, List, Optional

import numpy as np

from dlfkit import affine, diffusion, dlf, ncm, netcore, scenes, schedule, sgcl
from dlfkit._kernels_py import assign_nearest as _assign_ref

SUITES = ("all", "diffusion", "affine", "gradcheck", "sgcl")


class SuiteError(ValueError):
    pass


@dataclass
class Outcome:
    name: str
    suite: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0
    error: str = ""


@dataclass
class Report:
    suite: str
    outcomes: List[Outcome] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def to_json(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "n_properties": len(self.outcomes),
                "properties": [asdict(o) for o in self.outcomes]}


REGISTRY: Dict[str, tuple] = {}


def prop(name: str, suite: str):
    def deco(fn):
        if name in REGISTRY:
            raise KeyError(f"duplicate property {name}")
        REGISTRY[name] = (suite, fn)
        return fn
    return deco


def default_ops(**overrides) -> SimpleNamespace:
    ops = SimpleNamespace(
        sample_fit_step=diffusion.sample_fit_step,
        sample_fit_step_affine=diffusion.sample_fit_step_affine,
        ancestral_step=diffusion.ancestral_step,
        noise_forward=diffusion.noise_forward,
        noise_forward_affine=diffusion.noise_forward_affine,
        eps_to_score=diffusion.eps_to_score,
        compose=affine.compose,
        invert=affine.invert,
        assign_box=sgcl.assign_box,
        inside_mask=sgcl.inside_mask,
    )
    for k, v in overrides.items():
        if not hasattr(ops, k):
            raise KeyError(f"no overridable op {k!r}")
        setattr(ops, k, v)
    return ops


def run_suite(suite: str = "all", overrides: Optional[dict] = None, only: Optional[List[str]] = None) -> Report:
    if suite not in SUITES:
        raise SuiteError(f"unknown suite {suite!r}; choose from {SUITES}")
    ops = default_ops(**(overrides or {}))
    report = Report(suite)
    for name, (owner, fn) in REGISTRY.items():
        if suite != "all" and owner != suite:
            continue
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            with np.errstate(all="ignore"):
                ok, measured, tol = fn(ops)
            out = Outcome(name, owner, bool(ok), float(measured), float(tol))
        except Exception as exc:  # a crashing property is a failing property
            out = Outcome(name, owner, False, float("nan"), float("nan"), error=f"{type(exc).__name__}: {exc}")
        out.seconds = round(time.perf_counter() - t0, 3)
        report.outcomes.append(out)
    return report


# --------------------------------------------------------------------------
# shared helpers


SCHED = schedule.linear_schedule()
MU0, SD0 = 1.0, 0.5


def random_map(rng, d: int) -> affine.AffineMap:
    pairs = affine.default_pairs(d)
    rot = affine.make_givens(pairs, rng.uniform(-np.pi, np.pi, len(pairs)), d)
    return affine.compose(rot, affine.compose(affine.make_scaling(rng.uniform(0.05, 3.0), d),
                                              affine.make_translation(rng.normal(0, 3, d))))


def mean_var_band(samples, mean, var, k=3.0):
    """Worst |deviation| / (k * standard error) for the sample mean and variance."""
    n = samples.size
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2.0 / (n - 1))
    return max(abs(samples.mean() - mean) / (k * se_mean), abs(samples.var(ddof=1) - var) / (k * se_var))


def _worst(values) -> float:
    """Largest value, or infinity when any is not finite."""
    values = np.asarray(list(values), dtype=np.float64)
    return float(values.max()) if np.all(np.isfinite(values)) else float("inf")


def _acc(worst: float, value) -> float:
    value = float(value)
    return max(worst, value) if np.isfinite(value) else float("inf")


def _fails(fn, exc) -> bool:
    try:
        fn()
    except exc:
        return True
    return False


# --------------------------------------------------------------------------
# schedule (reported under the diffusion suite)


@prop("schedule.betas_increasing", "diffusion")
def _p_betas(ops):
    d = np.diff(SCHED.betas)
    return bool(np.all(d > 0)), float(d.min()), 0.0


@prop("schedule.alpha_bar_product", "diffusion")
def _p_prod(ops):
    err = 0.0
    acc = 1.0
    for t in range(SCHED.T):
        acc *= 1.0 - SCHED.betas[t]
        err = max(err, abs(SCHED.alpha_bars[t] - acc) / SCHED.alpha_bars[t])
    ok = err < 1e-12 and np.all((SCHED.betas > 0) & (SCHED.betas < 1)) and np.all(np.diff(SCHED.alpha_bars) < 0)
    return bool(ok), err, 1e-12


@prop("schedule.alpha_bar_T_bruteforce", "diffusion")
def _p_abT(ops):
    brute = 1.0
    for k in range(1000):
        beta = 1e-4 + k * (0.02 - 1e-4) / 999
        brute *= 1.0 - beta
    err = abs(SCHED.alpha_bars[-1] - brute)
    return err < 1e-12 and abs(brute - 4.0e-5) < 1e-6, err, 1e-12


@prop("schedule.posterior_vars", "diffusion")
def _p_post(ops):
    pv = SCHED.posterior_vars
    ok = pv[0] == 0.0 and np.all(pv >= 0) and np.all(pv < 1)
    return bool(ok), float(pv.max()), 1.0


@prop("schedule.rebuild_bit_identical", "diffusion")
def _p_rebuild(ops):
    again = schedule.Schedule.from_betas(SCHED.betas.copy())
    same = all(np.array_equal(getattr(SCHED, a), getattr(again, a))
               for a in ("betas", "alphas", "alpha_bars", "posterior_vars"))
    return same, 0.0 if same else 1.0, 0.0


# --------------------------------------------------------------------------
# affine


@prop("affine.givens_orthogonal", "affine")
def _p_givens(ops):
    rng = np.random.default_rng(11)
    worst = 0.0
    for d in (2, 3, 4, 8, 16):
        pairs = affine.default_pairs(d)
        for _ in range(200):
            r = affine.make_givens(pairs, rng.uniform(-10, 10, len(pairs)), d).rotation
            worst = _acc(worst, np.abs(r @ r.T - np.eye(d)).max())
    return worst < 1e-12, worst, 1e-12


@prop("affine.invert_roundtrip", "affine")
def _p_invert(ops):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.choice([2, 4, 8]))
        a = random_map(rng, d)
        x = rng.normal(0, 3, (16, d))
        worst = _acc(worst, np.abs(ops.invert(a).apply(a.apply(x)) - x).max())
        worst = _acc(worst, np.abs(ops.compose(ops.invert(a), a).apply(x) - x).max())
    return worst < 1e-10, worst, 1e-10


@prop("affine.compose_associative", "affine")
def _p_assoc(ops):
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(500):
        a, b, c = (random_map(rng, 8) for _ in range(3))
        x = rng.normal(0, 3, (8, 8))
        lhs = ops.compose(ops.compose(a, b), c).apply(x)
        rhs = ops.compose(a, ops.compose(b, c)).apply(x)
        worst = _acc(worst, np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max()))
        worst = _acc(worst, np.abs(ops.compose(a, b).apply(x) - a.apply(b.apply(x))).max()
                    / max(1.0, np.abs(lhs).max()))
    return worst < 1e-10, worst, 1e-10


@prop("affine.ramp_linear_endpoint", "affine")
def _p_ramp(ops):
    worst = 0.0
    exact = True
    for ramp in ncm.preset_ramps("3d") + ncm.preset_ramps("2d"):
        ts = np.arange(1, SCHED.T + 1)
        p = np.array([affine.ramp_param(ramp, int(t), SCHED.T) for t in ts])
        fit = np.polyval(np.polyfit(ts, p, 1), ts)
        worst = _acc(worst, np.abs(fit - p).max())
        exact &= p[-1] == ramp.param_max
    return exact and worst < 1e-10, worst, 1e-10


@prop("affine.constructor_validation", "affine")
def _p_validate(ops):
    checks = [
        _fails(lambda: affine.make_scaling(0.0, 4), affine.AffineError),
        _fails(lambda: affine.make_givens([(0, 1), (1, 2)], [0.1, 0.2], 4), affine.AffineError),
        _fails(lambda: affine.PerturbRamp("scaling", 2.0, 1.0), affine.AffineError),
        _fails(lambda: affine.PerturbRamp("rotation", 0.0, 1.0, ((0, 1), (1, 2))), affine.AffineError),
    ]
    return all(checks), float(sum(checks)), float(len(checks))


# --------------------------------------------------------------------------
# diffusion


@prop("diffusion.marginal_consistency", "diffusion")
def _p_marginal(ops):
    rng = np.random.default_rng(21)
    n = 100_000
    x0 = rng.normal(MU0, SD0, n)
    x = x0.copy()
    worst = 0.0
    checkpoints = {10, 100, 500, 1000}
    for t in range(1, SCHED.T + 1):
        a = SCHED.alphas[t - 1]
        x = np.sqrt(a) * x + np.sqrt(1.0 - a) * rng.standard_normal(n)
        if t in checkpoints:
            ab = SCHED.alpha_bars[t - 1]
            worst = _acc(worst, mean_var_band(x, np.sqrt(ab) * MU0, ab * SD0 ** 2 + 1.0 - ab))
            closed = ops.noise_forward(SCHED, t, x0[:, None], rng.standard_normal((n, 1)))[:, 0]
            worst = _acc(worst, mean_var_band(closed, np.sqrt(ab) * MU0, ab * SD0 ** 2 + 1.0 - ab))
    return worst <= 1.0, worst, 1.0


def _roundtrip_tuples(rng, n, d):
    t = rng.integers(1, SCHED.T + 1, size=n)
    return t, rng.normal(0, 2, (n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, d))


@prop("diffusion.exact_eps_roundtrip", "diffusion")
def _p_roundtrip(ops):
    rng = np.random.default_rng(22)
    worst = 0.0
    for sched in (SCHED, schedule.linear_schedule(50, 1e-3, 0.2), schedule.linear_schedule(1)):
        t, x0, eps, eps_new = _roundtrip_tuples(rng, 10_000, 3)
        t = np.minimum(t, sched.T)
        x_t = ops.noise_forward(sched, t, x0, eps)
        got = ops.sample_fit_step(sched, t, x_t, eps, eps_new)
        ab_prev = sched.alpha_bar(t - 1)[:, None]
        want = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_new
        worst = _acc(worst, np.abs(got - want).max())
    return worst < 1e-10, worst, 1e-10


@prop("diffusion.exact_eps_roundtrip_affine", "diffusion")
def _p_roundtrip_aff(ops):
    rng = np.random.default_rng(23)
    worst = 0.0
    d = 4
    for _ in range(10_000):
        t = int(rng.integers(1, SCHED.T + 1))
        x0, eps, eps_new = rng.normal(0, 2, (1, d)), rng.standard_normal((1, d)), rng.standard_normal((1, d))
        g_t, g_p, h_t, h_p = (random_map(rng, d) for _ in range(4))
        pair = ops.noise_forward_affine(SCHED, t, x0, eps, g_t, h_t)
        got = ops.sample_fit_step_affine(SCHED, t, pair.noisy, eps, eps_new, g_t, g_p, h_t, h_p)
        ab = SCHED.alpha_bar(t - 1)
        want = np.sqrt(ab) * g_p.apply(x0) + np.sqrt(1.0 - ab) * h_p.apply(eps_new)
        worst = _acc(worst, np.abs(got - want).max() / max(1.0, np.abs(want).max()))
    return worst < 1e-10, worst, 1e-10


def _chain(ops, sampler, rng, n):
    """Reverse chain with the analytic denoiser, driven through ``ops``."""
    eps_fn = diffusion.gaussian_optimal_eps(SCHED, MU0, SD0 ** 2)
    x = rng.standard_normal((n, 1))
    for t in range(SCHED.T, 0, -1):
        eps_hat = eps_fn(x, t)
        if sampler == "ancestral":
            x = ops.ancestral_step(SCHED, t, x, eps_hat, rng)
        else:
            x = ops.sample_fit_step(SCHED, t, x, eps_hat, eps_hat)
    return x[:, 0]


def sampler_agreement(ops=None, n=100_000, seed=24):
    """Terminal-moment z-scores of both samplers against the data and each other.

    Returns a dict of ``|deviation| / standard error`` values.
    """
    ops = default_ops() if ops is None else ops
    rng = np.random.default_rng(seed)
    anc = _chain(ops, "ancestral", rng, n)
    fit = _chain(ops, "sample_fit", rng, n)
    var = SD0 ** 2
    out = {}
    for name, xs in (("ancestral", anc), ("sample_fit", fit)):
        out[f"{name}_mean"] = abs(xs.mean() - MU0) / np.sqrt(var / n)
        out[f"{name}_var"] = abs(xs.var(ddof=1) - var) / (var * np.sqrt(2.0 / (n - 1)))
    out["cross_mean"] = abs(anc.mean() - fit.mean()) / np.sqrt(anc.var() / n + fit.var() / n)
    out["cross_var"] = abs(anc.var(ddof=1) - fit.var(ddof=1)) / np.sqrt(
        2.0 * anc.var() ** 2 / (n - 1) + 2.0 * fit.var() ** 2 / (n - 1))
    out["moments"] = {"ancestral": (float(anc.mean()), float(anc.var(ddof=1))),
                      "sample_fit": (float(fit.mean()), float(fit.var(ddof=1)))}
    return out


@prop("diffusion.sampler_agreement", "diffusion")
def _p_samplers(ops):
    z = sampler_agreement(ops)
    worst = _worst(v for k, v in z.items() if k != "moments")
    return worst <= 3.0, worst, 3.0


def exact_chain_moments(sampler: str, mu0=MU0, var0=SD0 ** 2, sched=SCHED):
    """Exact terminal mean and variance of a reverse chain driven by the
    analytic denoiser from ``N(0, 1)``: every step is affine in ``x`` plus
    independent Gaussian noise, so the law is propagated in closed form.
    """
    m, v = 0.0, 1.0
    for t in range(sched.T, 0, -1):
        ab, ab_prev, a = sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.alphas[t - 1]
        k = np.sqrt(1 - ab) / (ab * var0 + 1 - ab)  # eps_hat = k * (x - sqrt(ab) * mu0)
        if sampler == "ancestral":
            c = (1 - a) / np.sqrt(1 - ab)
            gain, shift, noise = (1 - c * k) / np.sqrt(a), c * k * np.sqrt(ab) * mu0 / np.sqrt(a), \
                sched.posterior_vars[t - 1]
        else:
            ce = np.sqrt(1 - ab_prev) - np.sqrt(ab_prev / ab) * np.sqrt(1 - ab)
            gain, shift, noise = np.sqrt(ab_prev / ab) + ce * k, -ce * k * np.sqrt(ab) * mu0, 0.0
        m, v = gain * m + shift, gain * gain * v + noise
    return float(m), float(v)


@prop("diffusion.chain_exact_law", "diffusion")
def _p_exact_law(ops):
    z = sampler_agreement(ops)
    n = 100_000
    devs = []
    for name in ("ancestral", "sample_fit"):
        m, v = exact_chain_moments(name)
        got_m, got_v = z["moments"][name]
        devs += [abs(got_m - m) / np.sqrt(v / n), abs(got_v - v) / (v * np.sqrt(2.0 / (n - 1)))]
    worst = _worst(devs)
    return worst <= 3.0, worst, 3.0


@prop("diffusion.optimal_score_closed_form", "diffusion")
def _p_score(ops):
    eps_fn = diffusion.gaussian_optimal_eps(SCHED, MU0, SD0 ** 2)
    worst = 0.0
    for t in (1, 10, 100, 500, 900, 1000):
        ab = SCHED.alpha_bar(t)
        var = ab * SD0 ** 2 + 1.0 - ab
        x = np.linspace(np.sqrt(ab) * MU0 - 4 * np.sqrt(var), np.sqrt(ab) * MU0 + 4 * np.sqrt(var), 401)[:, None]
        score = -(x - np.sqrt(ab) * MU0) / var
        worst = _acc(worst, np.abs(ops.eps_to_score(SCHED, t, eps_fn(x, t)) - score).max())
    return worst < 1e-8, worst, 1e-8


@prop("diffusion.noise_kinds_zero_mean", "diffusion")
def _p_noise(ops):
    rng = np.random.default_rng(25)
    n = 200_000
    worst = 0.0
    for kind in (diffusion.NoiseKind("gaussian"), diffusion.NoiseKind("uniform"),
                 diffusion.NoiseKind("centered_poisson", rate=3.0)):
        e = diffusion.draw_noise(kind, rng, n)
        worst = _acc(worst, abs(e.mean()) / (3.0 * e.std() / np.sqrt(n)))
    valid = _fails(lambda: diffusion.NoiseKind("centered_poisson", rate=0.0), ValueError) and \
        _fails(lambda: diffusion.NoiseKind("mask", prob=1.5), ValueError)
    return worst <= 1.0 and valid, worst, 1.0


@prop("diffusion.noise_pair_reconstruct", "diffusion")
def _p_pair(ops):
    rng = np.random.default_rng(26)
    worst = 0.0
    for _ in range(200):
        t = int(rng.integers(1, SCHED.T + 1))
        g, h = random_map(rng, 8), random_map(rng, 8)
        x0, eps = rng.normal(0, 1, (5, 8)), rng.standard_normal((5, 8))
        pair = ops.noise_forward_affine(SCHED, t, x0, eps, g, h)
        if pair.noisy.shape != pair.target.shape:
            return False, np.inf, 1e-12
        ab = SCHED.alpha_bar(t)
        again = np.sqrt(ab) * g.apply(x0) + np.sqrt(1.0 - ab) * h.apply(eps)
        worst = _acc(worst, np.abs(again - pair.noisy).max())
    return worst < 1e-12, worst, 1e-12


# --------------------------------------------------------------------------
# noise construction (diffusion suite)


@prop("ncm.recorded_maps_reproduce", "diffusion")
def _p_ncm_maps(ops):
    rng = np.random.default_rng(31)
    worst = 0.0
    for policy in ncm.MIX_POLICIES:
        for preset in ("3d", "2d"):
            cfg = ncm.NcmConfig(8, ncm.preset_ramps(preset), mix_policy=policy)
            for _ in range(100):
                t = int(rng.integers(1, SCHED.T + 1))
                lat = rng.normal(0, 1, (6, 8))
                pair = ncm.construct_pair(lat, t, SCHED, cfg, rng)
                ab = SCHED.alpha_bar(t)
                again = np.sqrt(ab) * pair.g_map.apply(lat) + np.sqrt(1.0 - ab) * pair.h_map.apply(pair.eps)
                worst = _acc(worst, np.abs(again - pair.noisy).max())
    return worst < 1e-12, worst, 1e-12


@prop("ncm.identity_matches_forward", "diffusion")
def _p_ncm_ident(ops):
    rng = np.random.default_rng(32)
    cfg = ncm.NcmConfig(2, ())
    n = 100_000
    worst = 0.0
    for t in (10, 500, 1000):
        lat = rng.normal(MU0, SD0, (n, 2))
        pair = ncm.construct_pair(lat, t, SCHED, cfg, rng)
        ab = SCHED.alpha_bar(t)
        for col in range(2):
            worst = _acc(worst, mean_var_band(pair.noisy[:, col], np.sqrt(ab) * MU0, ab * SD0 ** 2 + 1 - ab))
        worst = _acc(worst, float(not np.array_equal(pair.target, pair.eps)))
    return worst <= 1.0, worst, 1.0


@prop("ncm.target_is_transformed_noise", "diffusion")
def _p_ncm_target(ops):
    rng = np.random.default_rng(33)
    worst = 0.0
    raw_differs = True
    cfg = ncm.NcmConfig(8, ncm.preset_ramps("3d"), mix_policy="compose_all")
    for _ in range(200):
        t = int(rng.integers(1, SCHED.T + 1))
        pair = ncm.construct_pair(rng.normal(0, 1, (4, 8)), t, SCHED, cfg, rng)
        worst = _acc(worst, np.abs(pair.target - pair.h_map.apply(pair.eps)).max())
        raw_differs &= not np.allclose(pair.target, pair.eps)
    return worst == 0.0 and raw_differs, worst, 0.0


@prop("ncm.odd_width_rotation_rejected", "diffusion")
def _p_ncm_odd(ops):
    bad = _fails(lambda: ncm.NcmConfig(7, ncm.preset_ramps("3d", 7)), ValueError)
    cfg_bad = _fails(lambda: dlf.TrainConfig(model=dlf.ModelConfig(ncm_dim=7)), dlf.ConfigError)
    return bad and cfg_bad, float(bad + cfg_bad), 2.0


# --------------------------------------------------------------------------
# networks (gradcheck suite)


def repo_topologies() -> List[netcore.DenseNet]:
    """One instance of every distinct network topology the package builds."""
    nets = []
    for cfg in _shipped_train_configs():
        model = dlf.DlfModel.for_config(cfg)
        nets += list(model.nets().values())
        nets += list(dlf.DlfModel(cfg.model, with_denoisers=True, time_embed=False).aux.values())
    for dim in (1, 2):
        nets.append(dlf.make_score_denoiser(dim))
    seen, out = set(), []
    for net in nets:
        key = (tuple(net.sizes), net.activation, net.out_activation, net.time_embed_dim, net.cond_dim, net.bias)
        if key not in seen:
            seen.add(key)
            out.append(net)
    return out


def _shipped_train_configs() -> List[dlf.TrainConfig]:
    cfgs = [dlf.TrainConfig()]
    preset_dir = Path(__file__).parent / "presets"
    for path in sorted(preset_dir.glob("*.json")):
        obj = json.loads(path.read_text())
        if "train" in obj:
            cfgs.append(dlf.TrainConfig.from_json(obj["train"]))
    return cfgs


def check_all_topologies(tolerance=1e-4):
    reports = []
    rng = np.random.default_rng(41)
    for net in repo_topologies():
        # shake the zero-initialised fusion output so its gradient is informative
        probe = netcore.DenseNet.from_spec(net.spec())
        for p in probe.params.values():
            p[...] = rng.normal(0, 1.0 / np.sqrt(max(p.shape[0], 1)), p.shape)
        x = rng.normal(0, 1, (3, probe.in_dim))
        t = np.array([1, 500, 1000]) if probe.time_embed_dim else None
        reports.append((probe, netcore.grad_check(probe, x, tolerance=tolerance, t=t)))
    return reports


@prop("netcore.gradcheck_every_topology", "gradcheck")
def _p_grad(ops):
    reports = check_all_topologies()
    worst = max(r.max_rel_error for _, r in reports)
    return all(r.passed for _, r in reports), worst, 1e-4


@prop("netcore.forward_deterministic", "gradcheck")
def _p_det(ops):
    net = dlf.make_score_denoiser(2)
    x = np.random.default_rng(42).normal(size=(64, 2))
    same = np.array_equal(net.predict(x, 10), net.predict(x, 10))
    again = dlf.make_score_denoiser(2)
    same &= all(np.array_equal(net.params[k], again.params[k]) for k in net.params)
    return same, float(not same), 0.0


@prop("netcore.adam_linear_regression", "gradcheck")
def _p_adam(ops):
    rng = np.random.default_rng(43)
    net = netcore.DenseNet([4, 1], rng=rng, name="lin")
    x = rng.normal(size=(256, 4))
    y = x @ rng.normal(size=(4, 1)) + 0.5
    opt = netcore.Adam(lr=1e-2)
    losses = []
    for _ in range(100):
        out, tape = net.forward(x)
        losses.append(float(np.mean((out - y) ** 2)))
        g = net.backward(tape, 2 * (out - y) / out.size)
        opt.step({"lin": net}, {"lin": g.params})
    ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
    return bool(np.all(np.diff(ma) < 0)), float(ma[-1] / ma[0]), 1.0


@prop("netcore.shapes_and_param_count", "gradcheck")
def _p_shapes(ops):
    ok = True
    for net in repo_topologies():
        for i in range(net.n_layers):
            ok &= net.params[f"W{i}"].shape == (net.sizes[i] + (net.cond_dim if i == 0 else 0), net.sizes[i + 1])
        ok &= net.n_params() == sum(p.size for p in net.params.values())
    with tempfile.TemporaryDirectory() as tmp:
        net = dlf.make_score_denoiser(2)
        netcore.save_net(Path(tmp) / "n", net)
        back = netcore.load_net(Path(tmp) / "n")
        ok &= all(np.array_equal(net.params[k], back.params[k]) for k in net.params)
    return bool(ok), float(not ok), 0.0


# --------------------------------------------------------------------------
# detachable trainer (gradcheck suite)


SMALL = dlf.ModelConfig(k_in=4, k_pool=4, hidden=12, latent_a=8, latent_b=8, proj_hidden=(6, 6),
                        denoiser_hidden=8, time_embed_dim=4, sgcl_embed=4, sgcl_hidden=6)
SMALL_SCENES = scenes.SceneConfig(n_points=32, n_boxes=2)


def _small_batch(seed=0, n=2):
    return [dlf.prepare(s, SMALL) for s in scenes.generate_scenes(seed, n, SMALL_SCENES)]


@prop("dlf.model_gradcheck", "gradcheck")
def _p_model_grad(ops):
    batch = dlf.collate(_small_batch(5))
    worst = 0.0
    rng = np.random.default_rng(51)
    for kind in dlf.TARGET_KINDS:
        for mode in dlf.TIME_MODES:
            cfg = dlf.TrainConfig(model=SMALL, target_kind=kind, time_mode=mode, lam=0.7, lam_b=0.3)
            model = dlf.DlfModel.for_config(cfg)
            for net in model.nets().values():
                for p in net.params.values():
                    p += 0.05 * rng.standard_normal(p.shape)
            worst = _acc(worst, dlf.model_grad_check(model, batch, SCHED, cfg, per_net=3).max_rel_error)
    return worst < 1e-4, worst, 1e-4


@prop("dlf.detachment_invariance", "gradcheck")
def _p_detach(ops):
    cfg = dlf.TrainConfig(model=SMALL, epochs=1, batch=2)
    train_scenes = scenes.generate_scenes(6, 4, SMALL_SCENES)
    model, _ = dlf.train(train_scenes, cfg)
    pts = scenes.generate_scenes(7, 1, SMALL_SCENES)[0].points
    before = model.infer(pts)
    rng = np.random.default_rng(52)
    for net in model.detachable_nets().values():
        for p in net.params.values():
            p[...] = rng.normal(0, 100, p.shape)
        net.touch()
    after = model.infer(pts)
    same = all(np.array_equal(a, b) for a, b in zip(before, after))
    return same, float(not same), 0.0


@prop("dlf.lambda_zero_matches_baseline", "gradcheck")
def _p_lambda0(ops):
    train_scenes = scenes.generate_scenes(8, 6, SMALL_SCENES)
    cfg = dlf.TrainConfig(model=SMALL, epochs=2, batch=2, lam=0.0)
    _, rec_dlf = dlf.train(train_scenes, cfg)
    _, rec_base = dlf.train(train_scenes, dlf.TrainConfig(model=SMALL, epochs=2, batch=2, baseline=True))
    a = np.array([r.task_loss for r in rec_dlf])
    b = np.array([r.task_loss for r in rec_base])
    totals = all(r.total == r.task_loss for r in rec_dlf)
    diff_seen = all(r.diff_loss_a > 0 for r in rec_dlf)
    same = np.array_equal(a, b) and totals and diff_seen
    return same, float(np.abs(a - b).max()), 0.0


@prop("dlf.auxiliary_gradient_reaches_backbone", "gradcheck")
def _p_aux(ops):
    batch = dlf.collate(_small_batch(9))
    cfg = dlf.TrainConfig(model=SMALL, lam=0.5)
    model = dlf.DlfModel.for_config(cfg)
    # frozen zero head: the task loss sends nothing into the backbones
    for p in model.head.params.values():
        p[...] = 0.0
    res = dlf.loss_and_grads(model, batch, SCHED, cfg, np.random.default_rng(0))
    norm = min(np.abs(res.grads[n]["W0"]).sum() for n in ("backbone_a", "backbone_b"))
    ok = res.record.diff_loss_a > 0 and res.record.diff_loss_b > 0 and norm > 0
    return bool(ok), float(norm), 0.0


@prop("dlf.all_target_kinds_train", "gradcheck")
def _p_targets(ops):
    train_scenes = scenes.generate_scenes(10, 4, SMALL_SCENES)
    finite = 0
    for kind in dlf.TARGET_KINDS:
        _, rec = dlf.train(train_scenes, dlf.TrainConfig(model=SMALL, epochs=2, batch=2, target_kind=kind))
        finite += all(np.isfinite(r.total) for r in rec)
    return finite == len(dlf.TARGET_KINDS), float(finite), float(len(dlf.TARGET_KINDS))


# --------------------------------------------------------------------------
# conditioning and scenes (sgcl suite)


def _brute_assign(points, boxes):
    best = np.empty(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        dists = [float(np.sum((p - b.center) ** 2)) for b in boxes]
        best[i] = int(np.argmin(dists))
    return best


def _brute_inside(points, boxes, assignment):
    out = np.zeros(len(points), dtype=np.int8)
    for i, p in enumerate(points):
        b = boxes[assignment[i]]
        c, s = np.cos(b.yaw), np.sin(b.yaw)
        dx, dy = p[0] - b.center[0], p[1] - b.center[1]
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        out[i] = abs(lx) <= b.size[0] / 2 and abs(ly) <= b.size[1] / 2
    return out


def random_instance(rng, max_points=60, max_boxes=6):
    n = int(rng.integers(1, max_points + 1))
    k = int(rng.integers(1, max_boxes + 1))
    boxes = [sgcl.Box(rng.uniform(-1, 1, 2), rng.uniform(0.05, 1.0, 2), rng.uniform(-np.pi, np.pi))
             for _ in range(k)]
    points = rng.uniform(-1.2, 1.2, (n, 2))
    return points, boxes


def oracle_mismatches(ops=None, n_instances=1000, seed=61):
    """Count instances where the fast assignment or mask differs from brute force."""
    ops = default_ops() if ops is None else ops
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_instances):
        points, boxes = random_instance(rng)
        a = ops.assign_box(points, boxes)
        m = ops.inside_mask(points, boxes, a)
        ref = _brute_assign(points, boxes)
        bad += not (np.array_equal(a, ref) and np.array_equal(m, _brute_inside(points, boxes, ref)))
    return bad


@prop("sgcl.oracle_equivalence", "sgcl")
def _p_oracle(ops):
    bad = oracle_mismatches(ops)
    return bad == 0, float(bad), 0.0


@prop("sgcl.assign_large_instances", "sgcl")
def _p_assign_large(ops):
    rng = np.random.default_rng(62)
    bad = 0
    for _ in range(3):
        pts = rng.uniform(-1, 1, (1000, 2))
        centers = rng.uniform(-1, 1, (1000, 2))
        boxes = [sgcl.Box(c, [0.1, 0.1]) for c in centers]
        bad += not np.array_equal(ops.assign_box(pts, boxes), _assign_ref(pts, centers))
    return bad == 0, float(bad), 0.0


@prop("sgcl.mask_rotation_invariant", "sgcl")
def _p_rot(ops):
    rng = np.random.default_rng(63)
    flips = 0
    for _ in range(300):
        points, boxes = random_instance(rng)
        theta = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        a = ops.assign_box(points, boxes)
        m = ops.inside_mask(points, boxes, a)
        boxes_r = [sgcl.Box(rot @ b.center, b.size, b.yaw + theta) for b in boxes]
        pts_r = points @ rot.T
        m_r = ops.inside_mask(pts_r, boxes_r, a)
        # points within rounding distance of an edge may flip; count the rest
        local = []
        for i, p in enumerate(points):
            b = boxes[a[i]]
            cy, sy = np.cos(b.yaw), np.sin(b.yaw)
            d = p - b.center
            lx, ly = cy * d[0] + sy * d[1], -sy * d[0] + cy * d[1]
            local.append(min(abs(abs(lx) - b.size[0] / 2), abs(abs(ly) - b.size[1] / 2)))
        far = np.array(local) > 1e-9
        flips += int(np.sum(m[far] != m_r[far]))
    return flips == 0, float(flips), 0.0


@prop("sgcl.zero_fusion_is_identity", "sgcl")
def _p_residual(ops):
    rng = np.random.default_rng(64)
    layer = sgcl.ConditionLayer(8, rng=rng)
    feats = rng.normal(size=(20, 8))
    mask = rng.integers(0, 2, 20)
    fields = rng.normal(size=(20, 5)) * mask[:, None]
    same = np.array_equal(layer(feats, mask, fields).fused, feats)
    return same, float(not same), 0.0


@prop("sgcl.background_zero_fields", "sgcl")
def _p_bg(ops):
    sc = scenes.generate_scenes(65, 1)[0]
    fields = sgcl.box_fields(sc.boxes, sc.assignment, sc.labels)
    bg = sc.labels == 0
    layer = sgcl.ConditionLayer(8, rng=np.random.default_rng(0))
    emb = layer(np.zeros((len(bg), 8)), sc.labels, fields)
    zero_row = layer.geo.predict(np.zeros((1, 5)))
    ok = not fields[bg].any() and np.array_equal(emb.e_geo[bg], np.repeat(zero_row, bg.sum(), 0))
    return bool(ok), float(not ok), 0.0


@prop("scenes.corrupt_identity_at_zero", "sgcl")
def _p_corrupt0(ops):
    pts = scenes.generate_scenes(71, 1)[0].points
    specs = [scenes.CorruptionSpec("gaussian", 0.0), scenes.CorruptionSpec("translate", 0.0),
             scenes.CorruptionSpec("scale", 1.0), scenes.CorruptionSpec("rotate", 0.0)]
    same = all(np.array_equal(scenes.corrupt(pts, s, np.random.default_rng(0)), pts) for s in specs)
    return same, float(not same), 0.0


@prop("scenes.rigid_and_scale_distances", "sgcl")
def _p_dist(ops):
    rng = np.random.default_rng(72)
    pts = rng.uniform(-1, 1, (200, 2))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    worst = 0.0
    for ang in rng.uniform(-np.pi, np.pi, 20):
        r = scenes.corrupt(pts, scenes.CorruptionSpec("rotate", ang))
        worst = _acc(worst, np.abs(np.linalg.norm(r[:, None] - r[None], axis=-1) - d0).max())
    for s in (0.5, 0.95, 1.7):
        r = scenes.corrupt(pts, scenes.CorruptionSpec("scale", s))
        worst = _acc(worst, np.abs(np.linalg.norm(r[:, None] - r[None], axis=-1) - s * d0).max())
    return worst < 1e-12, worst, 1e-12


@prop("scenes.reproducible_and_consistent", "sgcl")
def _p_scene(ops):
    cfg = scenes.SceneConfig(n_points=96, n_boxes=3)
    a = scenes.generate_scenes(73, 20, cfg)
    b = scenes.generate_scenes(73, 20, cfg)
    ok = all(np.array_equal(x.points, y.points) and np.array_equal(x.labels, y.labels) for x, y in zip(a, b))
    for sc in a:
        assign = _brute_assign(sc.points, sc.boxes)
        ok &= np.array_equal(sc.labels, _brute_inside(sc.points, sc.boxes, assign))
        ok &= float(np.abs(sc.points).max()) <= 1.0
    return bool(ok), float(not ok), 0.0


# --------------------------------------------------------------------------
# command line contract (run only by the full suite)


@prop("cli.byte_identical_reruns", "all")
def _p_cli_rerun(ops):
    from dlfkit import cli

    cfg = {"scenes": {"n_train": 6, "n_val": 2, "seed": 3, "cfg": asdict(SMALL_SCENES)},
           "train": dlf.TrainConfig(model=SMALL, epochs=1, batch=2).to_json()}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for run in ("a", "b"):
            with contextlib.redirect_stdout(io.StringIO()):
                code = cli.main(["train", "--config", str(path), "--out", str(Path(tmp) / run)])
            if code != 0:
                return False, float(code), 0.0
            outs.append({p.name: p.read_bytes() for p in sorted((Path(tmp) / run).iterdir())
                         if p.name != cli.MANIFEST})
        same = outs[0] == outs[1] and len(outs[0]) >= 4
    return same, float(not same), 0.0


@prop("cli.exit_codes", "all")
def _p_cli_codes(ops):
    from dlfkit import cli

    with tempfile.TemporaryDirectory() as tmp:
        bad = Path(tmp) / "bad.json"
        bad.write_text('{"train": {"lambda": -1}}')
        broken = Path(tmp) / "broken.json"
        broken.write_text('{\n  "train": ,\n}')
        with contextlib.redirect_stderr(io.StringIO()):
            codes = (cli.main(["train", "--config", str(bad), "--out", tmp]),
                     cli.main(["train", "--config", str(broken), "--out", tmp]),
                     cli.main(["verify", "--suite", "nonsense", "--out", tmp]))
    return codes == (2, 2, 2), float(max(codes)), 2.0


__all__ = ["SUITES", "REGISTRY", "Report", "Outcome", "SuiteError", "run_suite", "default_ops",
           "sampler_agreement", "exact_chain_moments", "oracle_mismatches", "check_all_topologies", "repo_topologies"]
