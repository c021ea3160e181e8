"""Detachable latent denoising trainer and one-step inference.

Pipeline (per point, scenes batched with equal point counts)::

    features --backbone_a--> latent_a --kNN mean pool, concat--> backbone_b
             --> latent_b --head--> (foreground logit, offset to box center)

During training each latent is projected to a narrow width, perturbed by
the noise-construction module and denoised by a small time-conditioned
network, optionally conditioned on ground-truth box embeddings. The
denoising loss is back-propagated into the backbones; at inference only the
backbones and the head run.

A conventional score-matching path (``score_ddpm_train`` /
``score_ddpm_generate``) is kept for the multi-step comparison.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from dlfkit import kernels
from dlfkit.diffusion import ChainResult, NoiseKind, noise_forward, run_chain
from dlfkit.ncm import NcmConfig, construct_pair, preset_ramps
from dlfkit.netcore import Adam, DenseNet, GradCheckReport, load_params, save_params
from dlfkit.scenes import ToyScene, center_targets
from dlfkit.schedule import Schedule, linear_schedule, sample_timestep, sample_timesteps
from dlfkit.sgcl import ConditionLayer, box_fields

TARGET_KINDS = ("h_eps", "eps", "x0", "g_x0")
TIME_MODES = ("t_minus", "t_plus", "t_star")
REL_SCALE = 5.0
HUBER_DELTA = 0.1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    k_in: int = 8
    k_pool: int = 8
    hidden: int = 64
    latent_a: int = 64
    latent_b: int = 64
    ncm_dim: int = 8
    proj_hidden: tuple = (32, 16)
    denoiser_hidden: int = 64
    time_embed_dim: int = 32
    sgcl_embed: int = 16
    sgcl_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "proj_hidden", tuple(self.proj_hidden))
        if len(self.proj_hidden) != 2:
            raise ConfigError("the latent projection has exactly three layers")

    @property
    def in_dim(self) -> int:
        return 2 + 2 * self.k_in


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    lam_b: Optional[float] = None
    target_kind: str = "h_eps"
    time_mode: str = "t_star"
    ncm_enabled: bool = True
    sgcl_enabled: bool = True
    mix_policy: str = "single_random_per_batch"
    noise_kind: NoiseKind = field(default_factory=NoiseKind)
    ramps_a: str = "3d"
    ramps_b: str = "2d"
    lr: float = 1e-3
    epochs: int = 30
    batch: int = 8
    seed: int = 0
    baseline: bool = False
    cosine: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lam < 0 or (self.lam_b is not None and self.lam_b < 0):
            raise ConfigError("lambda must be non-negative")
        if self.target_kind not in TARGET_KINDS:
            raise ConfigError(f"target_kind must be one of {TARGET_KINDS}")
        if self.time_mode not in TIME_MODES:
            raise ConfigError(f"time_mode must be one of {TIME_MODES}")
        if self.ncm_enabled:
            # surfaces odd-width rotation and bad preset names early
            self.ncm_config("a")
            self.ncm_config("b")

    @property
    def lambdas(self):
        return self.lam, (self.lam if self.lam_b is None else self.lam_b)

    def ncm_config(self, stage: str) -> NcmConfig:
        d = self.model.ncm_dim
        if not self.ncm_enabled:
            return NcmConfig(d, (), self.noise_kind, self.mix_policy)
        preset = self.ramps_a if stage == "a" else self.ramps_b
        try:
            return NcmConfig(d, preset_ramps(preset, d), self.noise_kind, self.mix_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["lambda_b"] = out.pop("lam_b")
        out["noise_kind"] = self.noise_kind.to_json()
        out["model"]["proj_hidden"] = list(self.model.proj_hidden)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        known = {f for f in cls.__dataclass_fields__}
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        if "lambda_b" in obj:
            obj["lam_b"] = obj.pop("lambda_b")
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        if "noise_kind" in obj:
            obj["noise_kind"] = NoiseKind.from_json(obj["noise_kind"])
        if "model" in obj:
            model = dict(obj["model"])
            bad = set(model) - set(ModelConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown model config keys: {sorted(bad)}")
            obj["model"] = ModelConfig(**model)
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _net_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


# --------------------------------------------------------------------------
# input preparation


def point_features(points: np.ndarray, k: int) -> np.ndarray:
    """Absolute position plus scaled offsets to the ``k`` nearest neighbours."""
    nn = kernels.knn_indices(points, k, include_self=False)
    rel = (points[nn] - points[:, None, :]).reshape(len(points), -1)
    return np.concatenate([points, REL_SCALE * rel], axis=1)


def pool_matrix(points: np.ndarray, k: int) -> np.ndarray:
    """Row-stochastic ``(n, n)`` matrix averaging each point's k-neighbourhood (self included)."""
    nn = kernels.knn_indices(points, k, include_self=True)
    n = len(points)
    mat = np.zeros((n, n))
    np.add.at(mat, (np.repeat(np.arange(n), k), nn.reshape(-1)), 1.0 / k)
    return mat


@dataclass
class Prepared:
    feats: np.ndarray      # (n, in_dim)
    pool: np.ndarray       # (n, n)
    labels: np.ndarray     # (n,)
    offsets: np.ndarray    # (n, 2)
    fields: np.ndarray     # (n, 5)


def prepare(scene: ToyScene, mcfg: ModelConfig, points: Optional[np.ndarray] = None) -> Prepared:
    pts = scene.points if points is None else points
    return Prepared(
        feats=point_features(pts, mcfg.k_in),
        pool=pool_matrix(pts, mcfg.k_pool),
        labels=scene.labels.astype(np.float64),
        offsets=center_targets(scene),
        fields=box_fields(scene.boxes, scene.assignment, scene.labels),
    )


@dataclass
class Batch:
    feats: np.ndarray      # (B*n, in_dim)
    pool: np.ndarray       # (B, n, n)
    labels: np.ndarray
    offsets: np.ndarray
    fields: np.ndarray

    @property
    def n_scenes(self) -> int:
        return self.pool.shape[0]


def collate(items: Sequence[Prepared]) -> Batch:
    sizes = {len(p.labels) for p in items}
    if len(sizes) != 1:
        raise ValueError("all scenes in a batch must have the same number of points")
    return Batch(
        feats=np.concatenate([p.feats for p in items]),
        pool=np.stack([p.pool for p in items]),
        labels=np.concatenate([p.labels for p in items]),
        offsets=np.concatenate([p.offsets for p in items]),
        fields=np.concatenate([p.fields for p in items]),
    )


def _pool(pool: np.ndarray, h: np.ndarray) -> np.ndarray:
    b, n, _ = pool.shape
    return np.matmul(pool, h.reshape(b, n, -1)).reshape(b * n, -1)


def _pool_grad(pool: np.ndarray, g: np.ndarray) -> np.ndarray:
    b, n, _ = pool.shape
    return np.matmul(pool.transpose(0, 2, 1), g.reshape(b, n, -1)).reshape(b * n, -1)


# --------------------------------------------------------------------------
# model


class DlfModel:
    """Backbones and head, plus (unless ``with_denoisers`` is False) the
    detachable projections, denoisers and conditioning layers."""

    BACKBONE = ("backbone_a", "backbone_b", "head")

    def __init__(self, mcfg: ModelConfig = ModelConfig(), seed: int = 0, with_denoisers: bool = True,
                 time_embed: bool = True, sgcl: bool = True):
        self.mcfg = mcfg
        self.seed = seed
        self.with_denoisers = with_denoisers
        self.time_embed = time_embed
        self.sgcl = sgcl
        m = mcfg
        self.backbone_a = DenseNet([m.in_dim, m.hidden, m.latent_a], out_activation="silu",
                                   rng=_net_rng(seed, "backbone_a"), name="backbone_a")
        self.backbone_b = DenseNet([2 * m.latent_a, m.hidden, m.latent_b], out_activation="silu",
                                   rng=_net_rng(seed, "backbone_b"), name="backbone_b")
        self.head = DenseNet([m.latent_b, m.hidden, 3], rng=_net_rng(seed, "head"), name="head")
        self.aux: Dict[str, DenseNet] = {}
        self.cond: Dict[str, ConditionLayer] = {}
        if with_denoisers:
            ted = m.time_embed_dim if time_embed else 0
            for stage, width in (("a", m.latent_a), ("b", m.latent_b)):
                self.aux[f"proj_{stage}"] = DenseNet([width, *m.proj_hidden, m.ncm_dim],
                                                     rng=_net_rng(seed, f"proj_{stage}"), name=f"proj_{stage}")
                self.aux[f"denoiser_{stage}"] = DenseNet(
                    [m.ncm_dim, m.denoiser_hidden, m.denoiser_hidden, m.ncm_dim], time_embed_dim=ted,
                    rng=_net_rng(seed, f"denoiser_{stage}"), name=f"denoiser_{stage}")
                if sgcl:
                    self.cond[stage] = ConditionLayer(m.ncm_dim, m.sgcl_embed, m.sgcl_hidden,
                                                      rng=_net_rng(seed, f"sgcl_{stage}"), prefix=f"sgcl_{stage}")

    @classmethod
    def for_config(cls, cfg: TrainConfig) -> "DlfModel":
        return cls(cfg.model, cfg.seed, with_denoisers=not cfg.baseline,
                   time_embed=cfg.time_mode != "t_minus", sgcl=cfg.sgcl_enabled)

    def nets(self) -> Dict[str, DenseNet]:
        out = {"backbone_a": self.backbone_a, "backbone_b": self.backbone_b, "head": self.head}
        out.update(self.aux)
        for layer in self.cond.values():
            out.update(layer.nets())
        return out

    def detachable_nets(self) -> Dict[str, DenseNet]:
        return {k: v for k, v in self.nets().items() if k not in self.BACKBONE}

    def param_report(self) -> Dict[str, int]:
        return {name: net.n_params() for name, net in self.nets().items()}

    # ---------------- inference

    def forward_backbone(self, feats, pool):
        h_a, tape_a = self.backbone_a.forward(feats)
        in_b = np.concatenate([h_a, _pool(pool, h_a)], axis=1)
        h_b, tape_b = self.backbone_b.forward(in_b)
        out, tape_h = self.head.forward(h_b)
        return h_a, h_b, out, (tape_a, tape_b, tape_h)

    def infer(self, points: np.ndarray):
        """Single forward pass: foreground probability and box-center offsets per point."""
        points = np.asarray(points, dtype=np.float64)
        feats = point_features(points, self.mcfg.k_in)
        pool = pool_matrix(points, self.mcfg.k_pool)[None]
        _, _, out, _ = self.forward_backbone(feats, pool)
        prob = 1.0 / (1.0 + np.exp(-out[:, 0]))
        return prob, out[:, 1:3] / REL_SCALE


def infer(model: DlfModel, points: np.ndarray):
    return model.infer(points)


# --------------------------------------------------------------------------
# losses


def task_loss(out: np.ndarray, batch: Batch):
    """Binary cross-entropy on the logit plus Huber loss on foreground offsets.

    Offsets are regressed in the scaled feature units (``REL_SCALE``).
    Returns the loss and its gradient w.r.t. ``out``.
    """
    z = out[:, 0]
    y = batch.labels
    n = len(y)
    cls = np.mean(np.logaddexp(0.0, z) - y * z)
    g = np.zeros_like(out)
    g[:, 0] = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / n
    fg = y > 0.5
    reg = 0.0
    if fg.any():
        diff = out[fg, 1:3] - REL_SCALE * batch.offsets[fg]
        a = np.abs(diff)
        quad = a < HUBER_DELTA
        reg = np.mean(np.where(quad, 0.5 * diff ** 2 / HUBER_DELTA, a - 0.5 * HUBER_DELTA))
        g[fg, 1:3] = np.where(quad, diff / HUBER_DELTA, np.sign(diff)) / diff.size
    return cls + reg, g


@dataclass
class LossRecord:
    step: int
    task_loss: float
    diff_loss_a: float
    diff_loss_b: float
    total: float


@dataclass
class StepResult:
    record: LossRecord
    grads: Dict[str, Dict[str, np.ndarray]]
    t_a: Optional[int] = None
    t_b: Optional[int] = None


def _stage_timesteps(cfg: TrainConfig, T: int, rng: np.random.Generator):
    t_a = sample_timestep(rng, T)
    t_b = sample_timestep(rng, T) if cfg.time_mode == "t_star" else t_a
    return t_a, t_b


def _diffusion_stage(model: DlfModel, stage: str, h: np.ndarray, t: int, s: Schedule, cfg: TrainConfig,
                     batch: Batch, rng: np.random.Generator, weight: float, grads: dict):
    """Forward and backward of one auxiliary stage; returns (loss, grad w.r.t. ``h``)."""
    proj = model.aux[f"proj_{stage}"]
    den = model.aux[f"denoiser_{stage}"]
    z, tape_p = proj.forward(h)
    pair = construct_pair(z, t, s, cfg.ncm_config(stage), rng)
    inp = pair.noisy
    emb = None
    if stage in model.cond:
        emb = model.cond[stage](inp, batch.labels, batch.fields)
        inp = emb.fused
    pred, tape_d = den.forward(inp, t if den.time_embed_dim else None)
    kind = cfg.target_kind
    if kind == "h_eps":
        target = pair.target
    elif kind == "eps":
        target = pair.eps
    elif kind == "x0":
        target = z
    else:
        target = pair.g_map.apply(z)
    resid = pred - target
    loss = float(np.mean(resid ** 2))
    g_pred = weight * 2.0 * resid / resid.size
    g_den = den.backward(tape_d, g_pred)
    grads[den.name] = g_den.params
    g_inp = g_den.input_grad
    if emb is not None:
        g_inp, cond_grads = model.cond[stage].backward(emb, g_inp)
        grads.update(cond_grads)
    ab = s.alpha_bar(t)
    g_z = np.sqrt(ab) * pair.g_map.apply_grad(g_inp)
    if kind == "x0":
        g_z = g_z - g_pred
    elif kind == "g_x0":
        g_z = g_z - pair.g_map.apply_grad(g_pred)
    g_p = proj.backward(tape_p, g_z)
    grads[proj.name] = g_p.params
    return loss, g_p.input_grad


def loss_and_grads(model: DlfModel, batch: Batch, s: Schedule, cfg: TrainConfig,
                   rng: np.random.Generator, step: int = 0) -> StepResult:
    """Total loss ``lam_a * diff_a + lam_b * diff_b + task`` and its parameter gradients."""
    h_a, h_b, out, (tape_a, tape_b, tape_h) = model.forward_backbone(batch.feats, batch.pool)
    task, g_out = task_loss(out, batch)
    grads: Dict[str, Dict[str, np.ndarray]] = {}
    g_head = model.head.backward(tape_h, g_out)
    grads["head"] = g_head.params
    g_hb = g_head.input_grad
    diff_a = diff_b = 0.0
    t_a = t_b = None
    use_aux = model.with_denoisers and not cfg.baseline
    if use_aux:
        lam_a, lam_b = cfg.lambdas
        t_a, t_b = _stage_timesteps(cfg, s.T, rng)
        diff_b, g_hb_aux = _diffusion_stage(model, "b", h_b, t_b, s, cfg, batch, rng, lam_b, grads)
        g_hb = g_hb + g_hb_aux
    g_bb = model.backbone_b.backward(tape_b, g_hb)
    grads["backbone_b"] = g_bb.params
    la = model.mcfg.latent_a
    g_ha = g_bb.input_grad[:, :la] + _pool_grad(batch.pool, g_bb.input_grad[:, la:])
    if use_aux:
        diff_a, g_ha_aux = _diffusion_stage(model, "a", h_a, t_a, s, cfg, batch, rng, lam_a, grads)
        g_ha = g_ha + g_ha_aux
        total = lam_a * diff_a + lam_b * diff_b + task
    else:
        total = task
    grads["backbone_a"] = model.backbone_a.backward(tape_a, g_ha).params
    rec = LossRecord(step, float(task), float(diff_a), float(diff_b), float(total))
    return StepResult(rec, grads, t_a, t_b)


# --------------------------------------------------------------------------
# training


class Trainer:
    """Owns the optimizer and the random streams of one training run.

    Initialisation, data order and diffusion noise use independent streams
    derived from ``cfg.seed`` so that a baseline run and a ``lambda = 0``
    run see identical task-side randomness.
    """

    def __init__(self, model: DlfModel, s: Schedule, cfg: TrainConfig):
        if cfg.baseline and model.with_denoisers:
            model = DlfModel(model.mcfg, model.seed, with_denoisers=False)
        self.model = model
        self.s = s
        self.cfg = cfg
        self.opt = Adam(lr=cfg.lr)
        self.order_rng = np.random.default_rng([cfg.seed, 1])
        self.noise_rng = np.random.default_rng([cfg.seed, 2])
        self.step_count = 0

    def step(self, batch: Batch, lr=None) -> LossRecord:
        res = loss_and_grads(self.model, batch, self.s, self.cfg, self.noise_rng, self.step_count)
        self.opt.step(self.model.nets(), res.grads, lr=lr)
        self.step_count += 1
        return res.record

    def fit(self, scenes: Sequence[ToyScene], log: Optional[list] = None, epochs=None) -> List[LossRecord]:
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        prepared = [prepare(sc, self.model.mcfg) for sc in scenes]
        n_batches = int(np.ceil(len(prepared) / cfg.batch))
        total_steps = max(epochs * n_batches, 1)
        records = [] if log is None else log
        for _ in range(epochs):
            order = self.order_rng.permutation(len(prepared))
            for i in range(n_batches):
                idx = order[i * cfg.batch:(i + 1) * cfg.batch]
                lr = cfg.lr
                if cfg.cosine:
                    lr = 0.5 * cfg.lr * (1.0 + np.cos(np.pi * self.step_count / total_steps))
                records.append(self.step(collate([prepared[j] for j in idx]), lr=lr))
        return records


def dlf_train_step(model: DlfModel, batch: Batch, s: Schedule, cfg: TrainConfig,
                   rng: np.random.Generator, opt: Adam) -> LossRecord:
    res = loss_and_grads(model, batch, s, cfg, rng)
    opt.step(model.nets(), res.grads)
    return res.record


def baseline_train_step(model: DlfModel, batch: Batch, cfg: TrainConfig, opt: Adam) -> LossRecord:
    res = loss_and_grads(model, batch, linear_schedule(1), replace(cfg, baseline=True), np.random.default_rng(0))
    opt.step(model.nets(), res.grads)
    return res.record


def train(scenes: Sequence[ToyScene], cfg: TrainConfig, s: Optional[Schedule] = None,
          model: Optional[DlfModel] = None):
    """Build (if needed) and train a model; returns ``(model, records)``."""
    s = linear_schedule() if s is None else s
    model = DlfModel.for_config(cfg) if model is None else model
    trainer = Trainer(model, s, cfg)
    records = trainer.fit(scenes)
    return trainer.model, records


# --------------------------------------------------------------------------
# checkpoints


def save_model(stem, model: DlfModel, extra: Optional[dict] = None) -> None:
    arrays = {f"{n}.{p}": a for n, net in model.nets().items() for p, a in net.params.items()}
    meta = {"model": asdict(model.mcfg), "seed": model.seed, "with_denoisers": model.with_denoisers,
            "time_embed": model.time_embed, "sgcl": model.sgcl,
            "nets": {n: net.spec() for n, net in model.nets().items()}}
    meta["model"]["proj_hidden"] = list(model.mcfg.proj_hidden)
    if extra:
        meta["extra"] = extra
    save_params(stem, arrays, meta)


def load_model(stem) -> DlfModel:
    arrays, meta = load_params(stem)
    model = DlfModel(ModelConfig(**meta["model"]), meta["seed"], meta["with_denoisers"],
                     meta["time_embed"], meta["sgcl"])
    for n, net in model.nets().items():
        for p in net.params:
            net.params[p] = arrays[f"{n}.{p}"]
        net.touch()
    return model


# --------------------------------------------------------------------------
# conventional score-matching diffusion on low-dimensional data


@dataclass(frozen=True)
class ScoreTrainConfig:
    steps: int = 6000
    batch: int = 256
    lr: float = 2e-3
    hidden: int = 64
    time_embed_dim: int = 32
    seed: int = 0
    cosine: bool = True


def make_score_denoiser(dim: int, cfg: ScoreTrainConfig = ScoreTrainConfig()) -> DenseNet:
    return DenseNet([dim, cfg.hidden, cfg.hidden, dim], time_embed_dim=cfg.time_embed_dim,
                    rng=_net_rng(cfg.seed, "score_denoiser"), name="score_denoiser")


def score_ddpm_train(denoiser: DenseNet, data: np.ndarray, s: Schedule, cfg: ScoreTrainConfig = ScoreTrainConfig(),
                     log: Optional[list] = None):
    """Standard noise-prediction training; returns the denoiser and per-step losses."""
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng([cfg.seed, 3])
    opt = Adam(lr=cfg.lr)
    losses = [] if log is None else log
    for k in range(cfg.steps):
        x0 = data[rng.integers(len(data), size=cfg.batch)]
        t = sample_timesteps(rng, s.T, cfg.batch)
        eps = rng.standard_normal(x0.shape)
        x_t = noise_forward(s, t, x0, eps)
        pred, tape = denoiser.forward(x_t, t)
        resid = pred - eps
        losses.append(float(np.mean(resid ** 2)))
        g = denoiser.backward(tape, 2.0 * resid / resid.size)
        lr = cfg.lr
        if cfg.cosine:
            lr = 0.5 * cfg.lr * (1.0 + np.cos(np.pi * k / cfg.steps))
        opt.step({denoiser.name: denoiser}, {denoiser.name: g.params}, lr=lr)
    return denoiser, losses


def score_ddpm_generate(denoiser, s: Schedule, n: int, sampler: str, rng: np.random.Generator,
                        dim: Optional[int] = None, refresh: Optional[NoiseKind] = None) -> ChainResult:
    """T-step reverse chain from standard-normal noise.

    ``denoiser`` is a :class:`DenseNet` or any ``eps_fn(x, t)`` callable.
    """
    if isinstance(denoiser, DenseNet):
        dim = denoiser.in_dim if dim is None else dim
        eps_fn = lambda x, t: denoiser.predict(x, t)  # noqa: E731
    else:
        eps_fn = denoiser
        dim = 1 if dim is None else dim
    x_T = rng.standard_normal((n, dim))
    return run_chain(s, eps_fn, x_T, sampler, rng, refresh=refresh)


# --------------------------------------------------------------------------
# end-to-end finite-difference check of the chained backward pass


def model_grad_check(model: DlfModel, batch: Batch, s: Schedule, cfg: TrainConfig, seed: int = 0,
                     per_net: int = 6, step: float = 3e-5, tolerance: float = 1e-4,
                     floor: float = 1e-7) -> GradCheckReport:
    """Central differences on ``per_net`` random entries of every parameter
    array, replaying the same timesteps and noise for each evaluation.
    """
    def run():
        return loss_and_grads(model, batch, s, cfg, np.random.default_rng(seed))

    grads = run().grads
    pick = np.random.default_rng([seed, 9])
    worst, worst_name, count = 0.0, "", 0
    for name, net in model.nets().items():
        for pname, p in net.params.items():
            flat = p.reshape(-1)
            for idx in pick.choice(flat.size, size=min(per_net, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + step
                net.touch()
                up = run().record.total
                flat[idx] = orig - step
                net.touch()
                down = run().record.total
                flat[idx] = orig
                net.touch()
                numeric = (up - down) / (2 * step)
                analytic = grads[name][pname].reshape(-1)[idx]
                err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)
                count += 1
                if err > worst:
                    worst, worst_name = err, f"{name}.{pname}[{idx}]"
    return GradCheckReport(float(worst), worst_name, count, tolerance)
