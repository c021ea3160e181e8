"""Semantic-geometric conditioning from ground-truth boxes.

Each point is assigned the box with the nearest center (pure center
distance, no size awareness), flagged inside/outside that box, and the pair
(mask, box fields) is embedded and added residually to a feature matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from dlfkit import kernels
from dlfkit.netcore import DenseNet


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=np.float64))
        if self.center.shape != self.size.shape or self.center.ndim != 1:
            raise ValueError("center and size must be vectors of equal length")
        if np.any(self.size <= 0):
            raise ValueError("box size must be strictly positive")

    @property
    def dim(self) -> int:
        return self.center.size

    def fields(self) -> np.ndarray:
        """Geometric descriptor: center, size, yaw (class label excluded)."""
        return np.concatenate([self.center, self.size, [self.yaw]])

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "size": self.size.tolist(), "yaw": float(self.yaw)}

    @classmethod
    def from_json(cls, obj) -> "Box":
        return cls(obj["center"], obj["size"], float(obj.get("yaw", 0.0)))


def _stack(boxes: Sequence[Box]):
    centers = np.stack([b.center for b in boxes])
    sizes = np.stack([b.size for b in boxes])
    yaws = np.array([b.yaw for b in boxes], dtype=np.float64)
    return centers, sizes, yaws


def assign_box(centers, boxes: Sequence[Box]) -> np.ndarray:
    """Index of the box whose center is nearest each point; ties go to the lowest index."""
    if len(boxes) == 0:
        raise ValueError("cannot assign points to an empty box list")
    centers = np.asarray(centers, dtype=np.float64)
    box_centers, _, _ = _stack(boxes)
    if centers.shape[1] != box_centers.shape[1]:
        raise ValueError("point and box dimensions differ")
    return kernels.assign_nearest(centers, box_centers)


def inside_mask(centers, boxes: Sequence[Box], assignment) -> np.ndarray:
    """1 where a point lies inside its assigned (oriented) box, else 0."""
    if len(boxes) == 0:
        return np.zeros(len(centers), dtype=np.int8)
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.size and (assignment.min() < 0 or assignment.max() >= len(boxes)):
        raise ValueError("assignment refers to a missing box")
    box_centers, sizes, yaws = _stack(boxes)
    return kernels.inside_oriented(np.asarray(centers, dtype=np.float64), box_centers, sizes, yaws, assignment)


def box_fields(boxes: Sequence[Box], assignment, mask, dim: int = 2) -> np.ndarray:
    """Per-point box descriptors, zero-filled for background points."""
    width = 2 * dim + 1
    out = np.zeros((len(mask), width))
    if len(boxes) == 0:
        return out
    table = np.stack([b.fields() for b in boxes])
    fg = np.asarray(mask).astype(bool)
    out[fg] = table[np.asarray(assignment)[fg]]
    return out


@dataclass
class ConditionEmbedding:
    e_sem: np.ndarray
    e_geo: np.ndarray
    fused: np.ndarray
    tapes: Optional[tuple] = None


class ConditionLayer:
    """Learned embeddings for the mask and box fields plus a fusion MLP.

    The semantic embedding is a two-row lookup table, realised as a
    bias-free linear layer on the one-hot mask.
    """

    def __init__(self, feature_dim: int, embed_dim: int = 16, hidden: int = 32, box_dim: int = 2,
                 rng=None, prefix="sgcl"):
        rng = np.random.default_rng(0) if rng is None else rng
        width = 2 * box_dim + 1
        self.sem = DenseNet([2, embed_dim], out_activation="identity", bias=False, rng=rng, name=f"{prefix}_sem")
        self.geo = DenseNet([width, hidden, embed_dim], rng=rng, name=f"{prefix}_geo")
        self.fuse = DenseNet([2 * embed_dim, hidden, feature_dim], rng=rng, name=f"{prefix}_fuse")
        # start as an exact residual identity
        last = self.fuse.n_layers - 1
        self.fuse.params[f"W{last}"][:] = 0.0

    def nets(self):
        return {n.name: n for n in (self.sem, self.geo, self.fuse)}

    def __call__(self, features, mask, fields) -> ConditionEmbedding:
        return embed_and_fuse(features, mask, fields, self.sem, self.geo, self.fuse)

    def backward(self, emb: ConditionEmbedding, grad_fused) -> tuple:
        """Returns (grad w.r.t. features, {net name: param grads})."""
        sem_tape, geo_tape, fuse_tape = emb.tapes
        k = emb.e_sem.shape[1]
        g_fuse = self.fuse.backward(fuse_tape, grad_fused)
        g_sem = self.sem.backward(sem_tape, g_fuse.input_grad[:, :k])
        g_geo = self.geo.backward(geo_tape, g_fuse.input_grad[:, k:])
        params = {self.sem.name: g_sem.params, self.geo.name: g_geo.params, self.fuse.name: g_fuse.params}
        return grad_fused, params


def embed_and_fuse(features, mask, fields, sem_net: DenseNet, geo_net: DenseNet,
                   fuse_net: DenseNet) -> ConditionEmbedding:
    features = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask).astype(np.int64)
    if fuse_net.out_dim != features.shape[1]:
        raise ValueError(f"fusion output width {fuse_net.out_dim} != feature width {features.shape[1]}")
    onehot = np.zeros((mask.size, 2))
    onehot[np.arange(mask.size), mask] = 1.0
    e_sem, sem_tape = sem_net.forward(onehot)
    e_geo, geo_tape = geo_net.forward(np.asarray(fields, dtype=np.float64))
    delta, fuse_tape = fuse_net.forward(np.concatenate([e_sem, e_geo], axis=1))
    return ConditionEmbedding(e_sem, e_geo, features + delta, (sem_tape, geo_tape, fuse_tape))


__all__: List[str] = ["Box", "assign_box", "inside_mask", "box_fields", "ConditionEmbedding",
                      "ConditionLayer", "embed_and_fuse"]
