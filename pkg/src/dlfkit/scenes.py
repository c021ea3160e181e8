"""Synthetic planar scenes, input corruptions and desk-scale metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from dlfkit.sgcl import Box, assign_box, inside_mask

CORRUPTION_KINDS = ("none", "gaussian", "translate", "scale", "rotate")


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 128
    n_boxes: int = 3
    fg_fraction: float = 0.4
    size_min: float = 0.25
    size_max: float = 0.5
    yaw_min: float = -np.pi
    yaw_max: float = np.pi
    max_attempts: int = 2000

    @classmethod
    def from_json(cls, obj: dict) -> "SceneConfig":
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ToyScene:
    points: np.ndarray
    labels: np.ndarray
    boxes: List[Box]
    assignment: np.ndarray
    seed: Optional[int] = None
    cfg: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "labels": self.labels.astype(int).tolist(),
                "boxes": [b.to_json() for b in self.boxes], "seed": self.seed, "cfg": self.cfg}

    @classmethod
    def from_json(cls, obj: dict) -> "ToyScene":
        points = np.asarray(obj["points"], dtype=np.float64).reshape(-1, 2)
        boxes = [Box.from_json(b) for b in obj["boxes"]]
        assignment = assign_box(points, boxes) if boxes else np.full(len(points), -1, dtype=np.int64)
        return cls(points, np.asarray(obj["labels"], dtype=np.int8), boxes, assignment,
                   obj.get("seed"), obj.get("cfg", {}))


def save_scenes(path, scenes: Sequence[ToyScene]) -> None:
    with open(path, "w") as fh:
        json.dump([s.to_json() for s in scenes], fh)


def load_scenes(path) -> List[ToyScene]:
    with open(path) as fh:
        return [ToyScene.from_json(o) for o in json.load(fh)]


def _place_boxes(rng, cfg: SceneConfig) -> List[Box]:
    boxes: List[Box] = []
    radii: List[float] = []
    attempts = 0
    while len(boxes) < cfg.n_boxes:
        attempts += 1
        if attempts > cfg.max_attempts:
            raise PlacementError(f"could not place {cfg.n_boxes} boxes in {cfg.max_attempts} attempts")
        size = rng.uniform(cfg.size_min, cfg.size_max, size=2)
        yaw = rng.uniform(cfg.yaw_min, cfg.yaw_max)
        r = 0.5 * float(np.hypot(*size))
        center = rng.uniform(-1.0 + r, 1.0 - r, size=2)
        # separation > twice the larger circumradius keeps every interior
        # point strictly nearer its own box center than any other
        if all(np.linalg.norm(center - b.center) > 2.0 * max(r, rb) for b, rb in zip(boxes, radii)):
            boxes.append(Box(center, size, yaw))
            radii.append(r)
    return boxes


def _sample_in_box(rng, box: Box, n: int) -> np.ndarray:
    local = rng.uniform(-0.5, 0.5, size=(n, 2)) * box.size
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + box.center


def _inside_any(points, boxes) -> np.ndarray:
    hit = np.zeros(len(points), dtype=bool)
    for k in range(len(boxes)):
        hit |= inside_mask(points, boxes, np.full(len(points), k)).astype(bool)
    return hit


def generate_scene(rng: np.random.Generator, cfg: SceneConfig = SceneConfig(), seed=None) -> ToyScene:
    boxes = _place_boxes(rng, cfg)
    n_fg = int(round(cfg.fg_fraction * cfg.n_points)) if boxes else 0
    parts = []
    if n_fg:
        areas = np.array([b.size.prod() for b in boxes])
        counts = rng.multinomial(n_fg, areas / areas.sum())
        parts += [_sample_in_box(rng, b, c) for b, c in zip(boxes, counts)]
    n_bg = cfg.n_points - n_fg
    bg = np.empty((0, 2))
    while len(bg) < n_bg:
        cand = rng.uniform(-1.0, 1.0, size=(2 * (n_bg - len(bg)) + 8, 2))
        if boxes:
            cand = cand[~_inside_any(cand, boxes)]
        bg = np.concatenate([bg, cand])[:n_bg]
    points = np.concatenate(parts + [bg]) if parts else bg
    points = points[rng.permutation(len(points))]
    if boxes:
        assignment = assign_box(points, boxes)
        labels = inside_mask(points, boxes, assignment)
    else:
        assignment = np.full(len(points), -1, dtype=np.int64)
        labels = np.zeros(len(points), dtype=np.int8)
    return ToyScene(points, labels, boxes, assignment, seed, cfg.to_json())


def generate_scenes(seed: int, n: int, cfg: SceneConfig = SceneConfig()) -> List[ToyScene]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [generate_scene(np.random.default_rng(c), cfg, seed=seed) for c in children]


# --------------------------------------------------------------------------
# corruptions


@dataclass(frozen=True)
class CorruptionSpec:
    """``gaussian`` magnitude is the noise variance tau; ``rotate`` is in radians."""

    kind: str
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if self.kind == "gaussian" and self.magnitude < 0:
            raise ValueError("tau must be non-negative")
        if self.kind == "scale" and self.magnitude <= 0:
            raise ValueError("scale factor must be positive")

    def to_json(self) -> dict:
        return {"kind": self.kind, "magnitude": self.magnitude}

    @classmethod
    def from_json(cls, obj: dict) -> "CorruptionSpec":
        return cls(obj["kind"], float(obj.get("magnitude", 0.0)))


CLEAN = CorruptionSpec("none", 0.0)


def corrupt(points, spec: CorruptionSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    m = spec.magnitude
    if spec.kind == "none":
        return points.copy()
    if spec.kind == "gaussian":
        if m == 0:
            return points.copy()
        return points + np.sqrt(m) * rng.standard_normal(points.shape)
    if spec.kind == "translate":
        return points - m
    if spec.kind == "scale":
        return m * points
    c, s = np.cos(m), np.sin(m)
    out = points.copy()
    out[:, 0] = c * points[:, 0] - s * points[:, 1]
    out[:, 1] = s * points[:, 0] + c * points[:, 1]
    return out


# --------------------------------------------------------------------------
# metrics


def f1_score(pred, truth) -> float:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    tp = np.sum(pred & truth)
    fp = np.sum(pred & ~truth)
    fn = np.sum(~pred & truth)
    if tp + fp + fn == 0:
        return 1.0
    return float(2 * tp / (2 * tp + fp + fn))


def center_targets(scene: ToyScene) -> np.ndarray:
    """Offset from each point to its assigned box center (zero for background)."""
    out = np.zeros_like(scene.points)
    if scene.boxes:
        centers = np.stack([b.center for b in scene.boxes])
        fg = scene.labels.astype(bool)
        out[fg] = centers[scene.assignment[fg]] - scene.points[fg]
    return out


def majority_f1(scenes: Sequence[ToyScene]) -> float:
    labels = np.concatenate([s.labels for s in scenes]).astype(bool)
    guess = np.full(labels.shape, labels.mean() > 0.5)
    return f1_score(guess, labels)


@dataclass
class Metrics:
    fg_f1: float
    center_mae: float
    per_scene: list


def evaluate(predict, scenes: Sequence[ToyScene], spec: Optional[CorruptionSpec] = None,
             rng: Optional[np.random.Generator] = None, threshold: float = 0.5) -> Metrics:
    """Score a predictor on (optionally corrupted) scenes.

    ``predict`` maps an ``(n, 2)`` point array to ``(fg_probability, offsets)``;
    objects with an ``infer`` method are accepted too. Labels and boxes are
    never corrupted. The center error compares ``input point + offset`` with
    the true box center over true foreground points.
    """
    fn: Callable = predict.infer if hasattr(predict, "infer") else predict
    rng = np.random.default_rng(0) if rng is None else rng
    spec = CLEAN if spec is None else spec
    all_pred, all_true, abs_err = [], [], []
    per_scene = []
    for scene in scenes:
        pts = corrupt(scene.points, spec, rng)
        prob, offsets = fn(pts)
        pred = np.asarray(prob) >= threshold
        all_pred.append(pred)
        all_true.append(scene.labels.astype(bool))
        fg = scene.labels.astype(bool)
        if fg.any():
            centers = np.stack([b.center for b in scene.boxes])[scene.assignment[fg]]
            err = np.abs(pts[fg] + np.asarray(offsets)[fg] - centers)
            abs_err.append(err.reshape(-1))
            mae = float(err.mean())
        else:
            mae = float("nan")
        per_scene.append({"fg_f1": f1_score(pred, scene.labels), "center_mae": mae})
    f1 = f1_score(np.concatenate(all_pred), np.concatenate(all_true)) if scenes else float("nan")
    mae = float(np.concatenate(abs_err).mean()) if abs_err else float("nan")
    return Metrics(f1, mae, per_scene)
