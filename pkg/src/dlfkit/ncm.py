"""Noise construction: project a latent, perturb it and the injected noise
with the same time-ramped affine map, then apply Gaussian-schedule noising.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from dlfkit.affine import AffineMap, PerturbRamp, compose, default_pairs, identity, ramp_at
from dlfkit.diffusion import GAUSSIAN, NoiseKind, NoisePair, draw_noise, noise_forward_affine
from dlfkit.netcore import DenseNet
from dlfkit.schedule import Schedule

MIX_POLICIES = ("single_random_per_batch", "compose_all")
_ORDER = {"translation": 0, "scaling": 1, "rotation": 2}


def preset_ramps(name: str, d: int = 8) -> Tuple[PerturbRamp, ...]:
    """Ramp ranges shipped for the first ("3d") and second ("2d") stage."""
    pairs = default_pairs(d)
    if name == "3d":
        return (PerturbRamp("translation", 0.0, 5.0),
                PerturbRamp("scaling", 1.0, 2.0),
                PerturbRamp("rotation", 0.0, 3.1415, pairs))
    if name == "2d":
        return (PerturbRamp("translation", -5.0, 0.0),
                PerturbRamp("scaling", 0.01, 1.0),
                PerturbRamp("rotation", -3.1415, 0.0, pairs))
    raise ValueError(f"unknown preset {name!r}")


@dataclass(frozen=True)
class NcmConfig:
    out_dim: int = 8
    ramps: Tuple[PerturbRamp, ...] = field(default_factory=lambda: preset_ramps("3d"))
    noise_kind: NoiseKind = GAUSSIAN
    mix_policy: str = "single_random_per_batch"

    def __post_init__(self):
        object.__setattr__(self, "ramps", tuple(self.ramps))
        if self.mix_policy not in MIX_POLICIES:
            raise ValueError(f"unknown mix policy {self.mix_policy!r}")
        for r in self.ramps:
            if r.kind == "rotation":
                if self.out_dim % 2:
                    raise ValueError("rotation ramps need an even latent width")
                if any(i >= self.out_dim or j >= self.out_dim for i, j in r.dim_pairs):
                    raise ValueError("Givens pair outside the latent width")

    def to_json(self) -> dict:
        return {"out_dim": self.out_dim, "ramps": [r.to_json() for r in self.ramps],
                "noise_kind": self.noise_kind.to_json(), "mix_policy": self.mix_policy}

    @classmethod
    def from_json(cls, obj: dict) -> "NcmConfig":
        out_dim = int(obj.get("out_dim", 8))
        ramps = obj.get("ramps", "3d")
        if isinstance(ramps, str):
            ramps = preset_ramps(ramps, out_dim)
        else:
            ramps = tuple(PerturbRamp.from_json(r) for r in ramps)
        return cls(out_dim, ramps, NoiseKind.from_json(obj.get("noise_kind", "gaussian")),
                   obj.get("mix_policy", "single_random_per_batch"))


def project_latent(x, proj: DenseNet) -> np.ndarray:
    return proj.predict(x)


def build_map(cfg: NcmConfig, t: int, T: int, rng: Optional[np.random.Generator]) -> AffineMap:
    """Affine map for step ``t``: one random ramp kind, or all composed as R*S*(x - T)."""
    d = cfg.out_dim
    if not cfg.ramps:
        return identity(d)
    if cfg.mix_policy == "single_random_per_batch":
        ramp = cfg.ramps[int(rng.integers(len(cfg.ramps)))]
        return ramp_at(ramp, t, T, d)
    m = identity(d)
    for ramp in sorted(cfg.ramps, key=lambda r: _ORDER[r.kind]):
        m = compose(ramp_at(ramp, t, T, d), m)
    return m


def construct_pair(latent, t: int, s: Schedule, cfg: NcmConfig, rng: np.random.Generator,
                   g_map: Optional[AffineMap] = None) -> NoisePair:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 2 or latent.shape[1] != cfg.out_dim:
        raise ValueError(f"latent width must be {cfg.out_dim}, got shape {latent.shape}")
    s.check_t(t)
    if g_map is None:
        g_map = build_map(cfg, t, s.T, rng)
    eps = draw_noise(cfg.noise_kind, rng, latent.shape)
    return noise_forward_affine(s, t, latent, eps, g_map, g_map)
