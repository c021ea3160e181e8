"""Forward noising and reverse-step kernels.

Two reverse rules are provided:

* ``ancestral_step`` samples from the Gaussian posterior of the standard
  process (valid only for Gaussian noise);
* ``sample_fit_step`` / ``sample_fit_step_affine`` re-noise the implied clean
  sample directly to level ``t - 1``, which is valid for any noise family and
  for affine-transformed samples.

All functions take rows as samples: ``x`` has shape ``(n, d)``. Timesteps may
be a scalar or an ``(n,)`` integer array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from dlfkit.affine import AffineMap, identity, invert
from dlfkit.schedule import Schedule, ScheduleError

NOISE_KINDS = ("gaussian", "uniform", "centered_poisson", "mask")


@dataclass(frozen=True)
class NoiseKind:
    kind: str = "gaussian"
    rate: float = 1.0
    prob: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "centered_poisson" and not self.rate > 0:
            raise ValueError("poisson rate must be positive")
        if self.kind == "mask" and not 0.0 <= self.prob <= 1.0:
            raise ValueError("mask probability must lie in [0, 1]")

    def to_json(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "prob": self.prob}

    @classmethod
    def from_json(cls, obj) -> "NoiseKind":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj.get("kind", "gaussian"), float(obj.get("rate", 1.0)), float(obj.get("prob", 0.0)))


GAUSSIAN = NoiseKind("gaussian")


def draw_noise(kind: NoiseKind, rng: np.random.Generator, shape) -> np.ndarray:
    """Elementwise i.i.d. noise.

    ``uniform`` is scaled to unit variance. ``mask`` yields a ``{0, -1}``
    pattern with ``P(-1) = prob``; it is a sentinel the denoiser learns to
    predict rather than a zero-mean noise.
    """
    if kind.kind == "gaussian":
        return rng.standard_normal(shape)
    if kind.kind == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
    if kind.kind == "centered_poisson":
        return rng.poisson(kind.rate, size=shape).astype(np.float64) - kind.rate
    return -(rng.random(shape) < kind.prob).astype(np.float64)


def _col(values):
    v = np.asarray(values, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def _coefs(s: Schedule, t):
    s.check_t(t)
    ab = s.alpha_bar(t)
    return np.sqrt(ab), np.sqrt(1.0 - ab)


def noise_forward(s: Schedule, t, x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    if np.shape(x0) != np.shape(eps):
        raise ValueError("x0 and eps shapes differ")
    a, b = _coefs(s, t)
    return _col(a) * x0 + _col(b) * eps


@dataclass(frozen=True, eq=False)
class NoisePair:
    noisy: np.ndarray
    target: np.ndarray
    t: int
    g_map: AffineMap
    h_map: AffineMap
    eps: Optional[np.ndarray] = None


def noise_forward_affine(s: Schedule, t: int, x0, eps, g: AffineMap, h: AffineMap) -> NoisePair:
    if np.shape(x0) != np.shape(eps):
        raise ValueError("x0 and eps shapes differ")
    a, b = _coefs(s, t)
    target = h.apply(eps)
    noisy = _col(a) * g.apply(x0) + _col(b) * target
    return NoisePair(noisy=noisy, target=target, t=t, g_map=g, h_map=h, eps=eps)


def ancestral_step(s: Schedule, t, x_t, eps_hat, rng=None, z=None) -> np.ndarray:
    """One posterior-sampling step; ``z`` overrides the Gaussian draw."""
    s.check_t(t)
    t_arr = np.asarray(t)
    alpha = _col(s.alphas[t_arr - 1])
    ab = _col(s.alpha_bars[t_arr - 1])
    sigma = _col(np.sqrt(s.posterior_vars[t_arr - 1]))
    mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if z is None:
        if np.all(sigma == 0):
            return mean
        z = rng.standard_normal(np.shape(x_t))
    return mean + sigma * z


def sample_fit_step(s: Schedule, t, x_t, eps_hat, eps_new) -> np.ndarray:
    s.check_t(t)
    t_arr = np.asarray(t)
    a = _col(np.sqrt(s.alpha_bar(t_arr)))
    a_prev = _col(np.sqrt(s.alpha_bar(t_arr - 1)))
    b = _col(np.sqrt(1.0 - s.alpha_bar(t_arr)))
    b_prev = _col(np.sqrt(1.0 - s.alpha_bar(t_arr - 1)))
    return a_prev / a * (x_t - b * eps_hat) + b_prev * eps_new


def sample_fit_step_affine(s: Schedule, t: int, x_t_tf, eps_hat, eps_new,
                           g_t: AffineMap, g_prev: AffineMap,
                           h_t: AffineMap, h_prev: AffineMap) -> np.ndarray:
    s.check_t(t)
    dims = {g_t.dim, g_prev.dim, h_t.dim, h_prev.dim, np.shape(x_t_tf)[-1]}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch among maps and samples: {sorted(dims)}")
    a = np.sqrt(s.alpha_bar(t))
    b = np.sqrt(1.0 - s.alpha_bar(t))
    c = np.sqrt(s.alpha_bar(t - 1))
    d = np.sqrt(1.0 - s.alpha_bar(t - 1))
    x0_tf = (x_t_tf - b * h_t.apply(eps_hat)) / a
    return c * g_prev.apply(invert(g_t).apply(x0_tf)) + d * h_prev.apply(eps_new)


def eps_to_score(s: Schedule, t, eps_hat) -> np.ndarray:
    _, b = _coefs(s, t)
    return -eps_hat / _col(b)


# --------------------------------------------------------------------------
# Reverse chains


SAMPLERS = ("ancestral", "sample_fit")


@dataclass
class ChainResult:
    samples: np.ndarray
    trajectory: list  # (t, mean, var) after each step, t = T..1


def run_chain(s: Schedule, eps_fn: Callable[[np.ndarray, int], np.ndarray], x_T: np.ndarray,
              sampler: str, rng: np.random.Generator,
              refresh: Optional[NoiseKind] = None,
              maps: Optional[Callable[[int], AffineMap]] = None) -> ChainResult:
    """Iterate a reverse chain from ``x_T`` down to ``t = 0``.

    For ``sample_fit`` the re-injected noise is the prediction itself unless
    ``refresh`` names a noise family to draw it from. ``maps(t)`` supplies the
    per-step affine map (``g_t == h_t``); identity when omitted.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    if sampler == "ancestral" and (maps is not None or (refresh is not None and refresh.kind != "gaussian")):
        raise ValueError("ancestral sampling assumes untransformed Gaussian noise")
    x = np.array(x_T, dtype=np.float64)
    trajectory = []
    d = x.shape[1] if x.ndim == 2 else 1
    ident = identity(d)
    for t in range(s.T, 0, -1):
        eps_hat = eps_fn(x, t)
        if sampler == "ancestral":
            x = ancestral_step(s, t, x, eps_hat, rng)
        else:
            eps_new = eps_hat if refresh is None else draw_noise(refresh, rng, x.shape)
            if maps is None:
                x = sample_fit_step(s, t, x, eps_hat, eps_new)
            else:
                g_t = maps(t)
                g_prev = maps(t - 1) if t > 1 else ident
                x = sample_fit_step_affine(s, t, x, eps_hat, eps_new, g_t, g_prev, g_t, g_prev)
        if x.shape[0]:
            trajectory.append((t, x.mean(axis=0), x.var(axis=0)))
        else:
            trajectory.append((t, np.full(d, np.nan), np.full(d, np.nan)))
    return ChainResult(samples=x, trajectory=trajectory)


def gaussian_optimal_eps(s: Schedule, mu0, var0) -> Callable[[np.ndarray, int], np.ndarray]:
    """Exact ``E[eps | x_t]`` when the data are ``N(mu0, var0)`` per coordinate."""
    mu0 = np.asarray(mu0, dtype=np.float64)
    var0 = np.asarray(var0, dtype=np.float64)

    def eps_fn(x, t):
        ab = s.alpha_bar(t)
        ab = _col(ab) if np.ndim(ab) else ab
        return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * mu0) / (ab * var0 + 1.0 - ab)

    return eps_fn


__all__ = [
    "NoiseKind", "GAUSSIAN", "NoisePair", "ChainResult", "ScheduleError", "draw_noise",
    "noise_forward", "noise_forward_affine", "ancestral_step", "sample_fit_step",
    "sample_fit_step_affine", "eps_to_score", "run_chain", "gaussian_optimal_eps",
]
