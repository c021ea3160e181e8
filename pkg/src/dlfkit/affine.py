"""Invertible affine maps ``x -> R @ (S * (x - T))`` acting on row vectors.

Used to build the translation / scaling / rotation perturbations applied to
both the clean latent and the injected noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("translation", "scaling", "rotation")


class AffineError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AffineMap:
    rotation: np.ndarray
    scale: float
    offset: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise AffineError(f"scale must be positive, got {self.scale}")
        if self.rotation.shape != (self.dim, self.dim):
            raise AffineError("rotation and offset dimensions disagree")

    @property
    def dim(self) -> int:
        return self.offset.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map each row of ``x`` (shape ``(n, d)`` or ``(d,)``)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise AffineError(f"expected width {self.dim}, got {x.shape[-1]}")
        return (self.scale * (x - self.offset)) @ self.rotation.T

    __call__ = apply

    def apply_grad(self, grad_out: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the output back to the input."""
        return self.scale * (grad_out @ self.rotation)

    def to_json(self) -> dict:
        return {"rotation": self.rotation.tolist(), "scale": self.scale, "offset": self.offset.tolist()}


def identity(d: int) -> AffineMap:
    return AffineMap(np.eye(d), 1.0, np.zeros(d))


def make_translation(v) -> AffineMap:
    v = np.array(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise AffineError("translation vector must be finite")
    return AffineMap(np.eye(v.size), 1.0, v)


def make_scaling(s: float, d: int) -> AffineMap:
    if not (np.isfinite(s) and s > 0):
        raise AffineError(f"scale must be positive and finite, got {s}")
    return AffineMap(np.eye(d), float(s), np.zeros(d))


def _check_pairs(dim_pairs, d):
    seen = set()
    for i, j in dim_pairs:
        if not (0 <= i < d and 0 <= j < d) or i == j:
            raise AffineError(f"invalid Givens pair ({i}, {j}) for dimension {d}")
        if i in seen or j in seen:
            raise AffineError(f"Givens pairs overlap at ({i}, {j})")
        seen.update((i, j))


def make_givens(dim_pairs, angles, d: int) -> AffineMap:
    """Product of planar rotations, one per disjoint index pair."""
    dim_pairs = [tuple(p) for p in dim_pairs]
    angles = list(angles)
    if len(dim_pairs) != len(angles):
        raise AffineError("need exactly one angle per pair")
    _check_pairs(dim_pairs, d)
    rot = np.eye(d)
    for (i, j), theta in zip(dim_pairs, angles):
        c, s = np.cos(theta), np.sin(theta)
        rot[i, i] = c
        rot[i, j] = -s
        rot[j, i] = s
        rot[j, j] = c
    return AffineMap(rot, 1.0, np.zeros(d))


def compose(a: AffineMap, b: AffineMap) -> AffineMap:
    """Map equal to applying ``b`` first, then ``a``."""
    if a.dim != b.dim:
        raise AffineError(f"dimension mismatch {a.dim} vs {b.dim}")
    # a(b(x)) = Ra Rb Sa Sb (x - Tb - Rb^T Ta / Sb)
    offset = b.offset + (b.rotation.T @ a.offset) / b.scale
    return AffineMap(a.rotation @ b.rotation, a.scale * b.scale, offset)


def invert(a: AffineMap) -> AffineMap:
    return AffineMap(a.rotation.T.copy(), 1.0 / a.scale, -a.scale * (a.rotation @ a.offset))


@dataclass(frozen=True)
class PerturbRamp:
    """Perturbation whose intensity grows linearly with ``t / T``."""

    kind: str
    param_min: float
    param_max: float
    dim_pairs: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AffineError(f"unknown ramp kind {self.kind!r}")
        if self.param_min > self.param_max:
            raise AffineError("param_min must not exceed param_max")
        if self.kind == "scaling" and self.param_min <= 0:
            raise AffineError("scaling ramp must stay positive")
        if self.kind == "rotation":
            object.__setattr__(self, "dim_pairs", tuple(tuple(p) for p in self.dim_pairs))
            flat = [i for p in self.dim_pairs for i in p]
            if len(flat) != len(set(flat)):
                raise AffineError("Givens pairs must be disjoint")
        elif self.dim_pairs:
            raise AffineError("dim_pairs only apply to rotation ramps")

    def to_json(self) -> dict:
        return {"kind": self.kind, "min": self.param_min, "max": self.param_max,
                "dim_pairs": [list(p) for p in self.dim_pairs]}

    @classmethod
    def from_json(cls, obj: dict) -> "PerturbRamp":
        return cls(obj["kind"], float(obj["min"]), float(obj["max"]),
                   tuple(tuple(p) for p in obj.get("dim_pairs", ())))


def default_pairs(d: int):
    return tuple((i, i + 1) for i in range(0, d - 1, 2))


def ramp_param(ramp: PerturbRamp, t: int, T: int) -> float:
    if not 1 <= t <= T:
        raise AffineError(f"timestep {t} outside 1..{T}")
    if t == T:
        return ramp.param_max
    return ramp.param_min + (t / T) * (ramp.param_max - ramp.param_min)


def ramp_at(ramp: PerturbRamp, t: int, T: int, d: int) -> AffineMap:
    p = ramp_param(ramp, t, T)
    if ramp.kind == "translation":
        return make_translation(np.full(d, p))
    if ramp.kind == "scaling":
        return make_scaling(p, d)
    pairs = ramp.dim_pairs or default_pairs(d)
    return make_givens(pairs, [p] * len(pairs), d)
