"""Linear variance schedule and its derived per-step coefficients.

Timesteps are 1-indexed, ``t in {1, ..., T}``. Arrays are stored 0-based, so
the value for step ``t`` lives at index ``t - 1``. A virtual ``alpha_bar(0) = 1``
makes the first reverse step an exact recovery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    """Invalid schedule parameters or an out-of-range timestep."""


@dataclass(frozen=True, eq=False)
class Schedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_vars: np.ndarray
    beta_start: float
    beta_end: float
    kind: str = "linear"

    @classmethod
    def from_betas(cls, betas, kind="linear") -> "Schedule":
        betas = np.array(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ScheduleError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        prev = np.concatenate(([1.0], alpha_bars[:-1]))
        posterior_vars = (1.0 - prev) / (1.0 - alpha_bars) * betas
        for arr in (betas, alphas, alpha_bars, posterior_vars):
            arr.flags.writeable = False
        return cls(
            T=int(betas.size),
            betas=betas,
            alphas=alphas,
            alpha_bars=alpha_bars,
            posterior_vars=posterior_vars,
            beta_start=float(betas[0]),
            beta_end=float(betas[-1]),
            kind=kind,
        )

    def check_t(self, t) -> None:
        t_arr = np.asarray(t)
        if t_arr.size and (t_arr.min() < 1 or t_arr.max() > self.T):
            raise ScheduleError(f"timestep out of range 1..{self.T}: {t}")

    def alpha_bar(self, t):
        """``alpha_bar`` at step ``t`` (scalar or int array); ``t = 0`` gives 1."""
        t_arr = np.asarray(t)
        if t_arr.size and (t_arr.min() < 0 or t_arr.max() > self.T):
            raise ScheduleError(f"timestep out of range 0..{self.T}: {t}")
        padded = np.concatenate(([1.0], self.alpha_bars))
        return padded[t_arr]

    def to_json(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": self.kind}

    @classmethod
    def from_json(cls, obj: dict) -> "Schedule":
        kind = obj.get("kind", "linear")
        if kind != "linear":
            raise ScheduleError(f"unsupported schedule kind {kind!r}")
        return linear_schedule(int(obj["T"]), float(obj["beta_start"]), float(obj["beta_end"]))


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = beta_start + np.arange(T) * ((beta_end - beta_start) / (T - 1))
        betas[-1] = beta_end
    sched = Schedule.from_betas(betas)
    # keep the declared endpoints even when the degenerate T == 1 drops beta_end
    return Schedule(
        T=sched.T,
        betas=sched.betas,
        alphas=sched.alphas,
        alpha_bars=sched.alpha_bars,
        posterior_vars=sched.posterior_vars,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def sample_timestep(rng: np.random.Generator, T: int) -> int:
    """Uniform draw from ``{1, ..., T}``."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    return int(rng.integers(1, T + 1))


def sample_timesteps(rng: np.random.Generator, T: int, size: int) -> np.ndarray:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    return rng.integers(1, T + 1, size=size)
