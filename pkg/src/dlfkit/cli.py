"""Command-line entry point.

    dlfkit verify|train|sweep|demo-generate --config PATH [--out DIR] [--seed N]

Everything that affects results lives in the JSON config; flags only pick the
command, paths and the seed. Each run writes ``config.resolved.json`` next to
its outputs and a separate ``manifest.json`` holding the timestamp, so all
other files are byte-identical across reruns.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from dlfkit import __version__, dlf, kernels, netcore, scenes, verify
from dlfkit.diffusion import NoiseKind, gaussian_optimal_eps
from dlfkit.schedule import Schedule, linear_schedule

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
RESOLVED = "config.resolved.json"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
VAL_SEED_OFFSET = 1_000_003

LOSS_COLUMNS = ["step", "task_loss", "diff_a", "diff_b", "total"]
SWEEP_COLUMNS = ["row_type", "method", "spec_kind", "magnitude", "seed", "fg_f1", "center_mae"]


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# io helpers


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}:1:1: top level must be a JSON object")
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, kind: str, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"# schema={kind}/{SCHEMA_VERSION}"])
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> List[dict]:
    """Rows of a CSV written by :func:`write_csv` (schema line skipped)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    return list(csv.DictReader(lines[1:]))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path, command: str, argv) -> None:
    write_json(out / MANIFEST, {
        "command": command, "argv": list(argv), "version": __version__, "backend": kernels.BACKEND,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    })


def _schedule(cfg: dict) -> Schedule:
    sc = cfg.get("schedule", {})
    try:
        return linear_schedule(int(sc.get("T", 1000)), float(sc.get("beta_start", 1e-4)),
                               float(sc.get("beta_end", 0.02)))
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def _train_config(obj: dict, seed: Optional[int] = None) -> dlf.TrainConfig:
    try:
        cfg = dlf.TrainConfig.from_json(obj)
    except dlf.ConfigError as exc:
        raise ConfigError(f"train: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def _scene_spec(cfg: dict) -> dict:
    sc = dict(cfg.get("scenes", {}))
    try:
        scfg = scenes.SceneConfig.from_json(sc.get("cfg", {}))
    except TypeError as exc:
        raise ConfigError(f"scenes.cfg: {exc}") from exc
    return {"seed": int(sc.get("seed", 0)), "n_train": int(sc.get("n_train", 200)),
            "n_val": int(sc.get("n_val", 50)), "cfg": scfg.to_json()}


def _scene_sets(spec: dict):
    """Training and validation scenes; validation uses a disjoint seed."""
    scfg = scenes.SceneConfig.from_json(spec["cfg"])
    try:
        train = scenes.generate_scenes(spec["seed"], spec["n_train"], scfg)
        val = scenes.generate_scenes(spec["seed"] + VAL_SEED_OFFSET, spec["n_val"], scfg)
    except scenes.PlacementError as exc:
        raise ConfigError(f"scenes: {exc}") from exc
    return train, val


def _corruptions(items) -> List[scenes.CorruptionSpec]:
    try:
        return [scenes.CorruptionSpec.from_json(c) for c in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"corruptions: {exc}") from exc


def loss_rows(records):
    return [(r.step, r.task_loss, r.diff_loss_a, r.diff_loss_b, r.total) for r in records]


# --------------------------------------------------------------------------
# commands


def cmd_verify(cfg: dict, out: Path, suite: Optional[str]) -> int:
    suite = suite or cfg.get("suite", "all")
    if suite not in verify.SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(verify.SUITES)}")
    report = verify.run_suite(suite)
    write_json(out / "verify_report.json", report.to_json())
    for o in report.outcomes:
        status = "PASS" if o.passed else "FAIL"
        print(f"{status} {o.name}: measured={o.measured:.3g} tolerance={o.tolerance:.3g} {o.error}".rstrip())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_train(cfg: dict, out: Path, seed: Optional[int]) -> int:
    s = _schedule(cfg)
    tcfg = _train_config(cfg.get("train", {}), seed)
    scene_res = _scene_spec(cfg)
    train_scenes, val_scenes = _scene_sets(scene_res)
    model, records = dlf.train(train_scenes, tcfg, s)
    metrics = scenes.evaluate(model, val_scenes)
    write_json(out / RESOLVED, {"command": "train", "schedule": s.to_json(), "scenes": scene_res,
                                "train": tcfg.to_json()})
    write_csv(out / "loss.csv", "loss", LOSS_COLUMNS, loss_rows(records))
    dlf.save_model(out / "model", model, extra={"train": tcfg.to_json()})
    write_csv(out / "metrics.csv", "metrics", ["spec_kind", "magnitude", "fg_f1", "center_mae", "seed"],
              [("none", 0.0, metrics.fg_f1, metrics.center_mae, tcfg.seed)])
    write_json(out / "params.json", model.param_report())
    print(f"trained {len(records)} steps; clean fg_f1={metrics.fg_f1:.4f} center_mae={metrics.center_mae:.4f}")
    return EXIT_OK


def _method_configs(cfg: dict) -> Dict[str, dict]:
    base = dict(cfg.get("train", {}))
    methods = cfg.get("methods", {"dlf": {}, "baseline": {"baseline": True}})
    if not isinstance(methods, dict):
        raise ConfigError("methods must map a method name to training overrides")
    return {name: {**base, **over} for name, over in methods.items()}


def _sweep_job(job):
    """Train (or load) one model and score it on every corruption; runs in a worker."""
    method, seed, tjson, sched_json, scene_cfg, corr_json, ckpt, save_to = job
    with threadpool_limits(1):
        tcfg = dlf.TrainConfig.from_json(tjson)
        tcfg = replace(tcfg, seed=seed)
        train, val = _scene_sets(scene_cfg)
        records = []
        if ckpt is not None:
            model = dlf.load_model(ckpt)
        else:
            model, records = dlf.train(train, tcfg, Schedule.from_json(sched_json))
            if save_to is not None:
                dlf.save_model(save_to, model)
        rows = []
        for idx, c in enumerate(corr_json):
            spec = scenes.CorruptionSpec.from_json(c)
            # identical corruption draws for every method at a given seed
            rng = np.random.default_rng([seed, 7, idx])
            m = scenes.evaluate(model, val, spec, rng)
            rows.append(("cell", method, spec.kind, spec.magnitude, seed, m.fg_f1, m.center_mae))
        final = records[-1] if records else None
        return rows, (method, seed, final)


def cmd_sweep(cfg: dict, out: Path, seed: Optional[int]) -> int:
    s = _schedule(cfg)
    methods = _method_configs(cfg)
    for name, obj in methods.items():
        _train_config(obj)  # validate early, before any worker starts
    corr = _corruptions(cfg.get("corruptions", []))
    seeds = [int(x) for x in cfg.get("seeds", [0])]
    if seed is not None:
        seeds = [int(seed) + k for k in range(len(seeds))]
    sc = _scene_spec(cfg)
    ckpt_dir = cfg.get("checkpoint_dir")
    inline = bool(cfg.get("train_inline", ckpt_dir is None))
    save_ckpt = bool(cfg.get("save_checkpoints", False))
    if save_ckpt:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    jobs = []
    for name, obj in methods.items():
        for sd in seeds:
            ckpt = None
            if not inline:
                stem = Path(ckpt_dir) / f"{name}_seed{sd}"
                if not (stem.with_suffix(".json").exists() and stem.with_suffix(".bin").exists()):
                    raise ConfigError(f"missing checkpoint {stem}.json/.bin")
                ckpt = str(stem)
            save_to = str(out / "checkpoints" / f"{name}_seed{sd}") if save_ckpt and inline else None
            jobs.append((name, sd, obj, s.to_json(), sc, [c.to_json() for c in corr], ckpt, save_to))
    write_json(out / RESOLVED, {"command": "sweep", "schedule": s.to_json(), "scenes": sc, "seeds": seeds,
                                "methods": {n: _train_config(o).to_json() for n, o in methods.items()},
                                "corruptions": [c.to_json() for c in corr], "train_inline": inline,
                                "checkpoint_dir": ckpt_dir})
    workers = max(1, int(os.environ.get("DLFKIT_THREADS", "1")))
    if not corr:
        jobs = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [r for res, _ in results for r in res]
    summary = []
    for name in methods:
        for c in corr:
            vals = [r for r in rows if r[1] == name and r[2] == c.kind and r[3] == c.magnitude]
            if vals:
                summary.append(("summary", name, c.kind, c.magnitude, "mean",
                                float(np.mean([v[5] for v in vals])), float(np.nanmean([v[6] for v in vals]))))
    write_csv(out / "sweep.csv", "sweep", SWEEP_COLUMNS, rows + summary)
    finals = [(m, sd, f.task_loss, f.diff_loss_a, f.diff_loss_b, f.total) for _, (m, sd, f) in results if f]
    write_csv(out / "final_loss.csv", "final_loss", ["method", "seed", "task_loss", "diff_a", "diff_b", "total"],
              finals)
    print(f"sweep: {len(rows)} cells, {len(summary)} summary rows")
    return EXIT_OK


def _demo_data(spec: dict, rng, n: int):
    kind = spec.get("kind", "gaussian1d")
    if kind == "gaussian1d":
        mu, sd = float(spec.get("mu", 1.0)), float(spec.get("sigma", 0.5))
        return rng.normal(mu, sd, (n, 1)), (np.array([mu]), np.array([sd ** 2]))
    if kind == "two_gaussians":
        sep, sd = float(spec.get("separation", 2.0)), float(spec.get("sigma", 0.3))
        centers = np.array([[-sep / 2, 0.0], [sep / 2, 0.0]])
        pick = rng.integers(0, 2, n)
        return centers[pick] + sd * rng.standard_normal((n, 2)), None
    raise ConfigError(f"data.kind: unknown demo dataset {kind!r}")


def cmd_demo_generate(cfg: dict, out: Path, seed: Optional[int]) -> int:
    s = _schedule(cfg)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    n = int(cfg.get("n", 10000))
    samplers = list(cfg.get("samplers", ["ancestral", "sample_fit"]))
    bad = [x for x in samplers if x not in ("ancestral", "sample_fit")]
    if bad:
        raise ConfigError(f"samplers: unknown {bad}")
    data_spec = cfg.get("data", {"kind": "gaussian1d"})
    den_spec = dict(cfg.get("denoiser", {"kind": "analytic"}))
    refresh = cfg.get("refresh")
    refresh = NoiseKind.from_json(refresh) if refresh else None
    data_rng = np.random.default_rng([seed, 4])
    data, moments = _demo_data(data_spec, data_rng, int(den_spec.get("n_data", 20000)))
    dim = data.shape[1]
    resolved = {"command": "demo-generate", "schedule": s.to_json(), "seed": seed, "n": n,
                "samplers": samplers, "data": data_spec, "denoiser": den_spec,
                "refresh": refresh.to_json() if refresh else None}
    if den_spec.get("kind", "analytic") == "analytic":
        if moments is None:
            raise ConfigError("denoiser.kind=analytic needs Gaussian data")
        eps_fn = gaussian_optimal_eps(s, *moments)
    elif den_spec["kind"] == "trained":
        try:
            tc = dlf.ScoreTrainConfig(**{**den_spec.get("train", {}), "seed": seed})
        except TypeError as exc:
            raise ConfigError(f"denoiser.train: {exc}") from exc
        resolved["denoiser"] = {**den_spec, "train": asdict(tc)}
        ckpt = den_spec.get("checkpoint")
        if ckpt and Path(ckpt).with_suffix(".json").exists():
            net = netcore.load_net(ckpt)
        else:
            net, losses = dlf.score_ddpm_train(dlf.make_score_denoiser(dim, tc), data, s, tc)
            netcore.save_net(out / "denoiser", net)
            write_csv(out / "score_loss.csv", "score_loss", ["step", "loss"], enumerate(losses))
        eps_fn = net
    else:
        raise ConfigError(f"denoiser.kind: unknown {den_spec['kind']!r}")
    write_json(out / RESOLVED, resolved)
    sample_rows, traj_rows, summary = [], [], {"data_moments": None, "samplers": {}}
    if moments is not None:
        summary["data_moments"] = {"mean": moments[0].tolist(), "var": moments[1].tolist()}
    for k, name in enumerate(samplers):
        rng = np.random.default_rng([seed, 5, k])
        res = dlf.score_ddpm_generate(eps_fn, s, n, name, rng, dim=dim, refresh=refresh)
        sample_rows += [(name, i, *row) for i, row in enumerate(res.samples)]
        traj_rows += [(name, t, *m, *v) for t, m, v in res.trajectory]
        if n > 1:
            summary["samplers"][name] = {"mean": res.samples.mean(axis=0).tolist(),
                                         "var": res.samples.var(axis=0, ddof=1).tolist()}
    xs = [f"x{j}" for j in range(dim)]
    write_csv(out / "samples.csv", "samples", ["sampler", "index", *xs], sample_rows)
    write_csv(out / "trajectory.csv", "trajectory",
              ["sampler", "t", *[f"mean_{x}" for x in xs], *[f"var_{x}" for x in xs]], traj_rows)
    write_json(out / "summary.json", summary)
    print(f"generated {n} samples with {', '.join(samplers)}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlfkit", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=["verify", "train", "sweep", "demo-generate"])
    p.add_argument("--config", help="JSON experiment config (optional for verify)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--suite", default=None, help="verify only: all, diffusion, affine, gradcheck or sgcl")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    out = Path(args.out)
    try:
        if args.config is None and args.command != "verify":
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config) if args.config else {}
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(1):
            if args.command == "verify":
                code = cmd_verify(cfg, out, args.suite)
            elif args.command == "train":
                code = cmd_train(cfg, out, args.seed)
            elif args.command == "sweep":
                code = cmd_sweep(cfg, out, args.seed)
            else:
                code = cmd_demo_generate(cfg, out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out, args.command, argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
