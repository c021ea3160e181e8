"""Small time-conditioned feedforward networks with hand-written reverse mode.

Row-vector convention: a layer maps ``x @ W + b``. Each ``forward`` returns
the output together with a :class:`Tape`; ``backward`` consumes the tape and
returns parameter gradients plus gradients w.r.t. the data input and the
condition input, so several networks can be chained by hand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

ACTIVATIONS = ("silu", "tanh", "identity")
FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    """Backward called with a tape recorded before the last parameter update."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name, z):
    if name == "silu":
        return z * _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z):
    if name == "silu":
        s = _sigmoid(z)
        return s * (1.0 + z * (1.0 - s))
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


def sinusoidal_features(t, dim: int) -> np.ndarray:
    """Sin/cos features of the timestep, shape ``(n, dim)`` or ``(1, dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class Tape:
    inputs: list
    preacts: list
    temb: Optional[np.ndarray]
    version: int
    n_data: int
    gates: Optional[list] = None


@dataclass
class Gradients:
    params: Dict[str, np.ndarray]
    input_grad: np.ndarray
    cond_grad: Optional[np.ndarray] = None


class DenseNet:
    """Multilayer perceptron ``sizes[0] -> ... -> sizes[-1]``.

    ``cond_dim`` extra columns are concatenated to the input. When
    ``time_embed_dim > 0`` a learned projection of sinusoidal timestep
    features is added to the first layer's pre-activation.
    """

    def __init__(self, sizes, activation="silu", out_activation="identity",
                 time_embed_dim=0, cond_dim=0, rng=None, bias=True, name="net"):
        if len(sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        if activation not in ACTIVATIONS or out_activation not in ACTIVATIONS:
            raise ValueError("unknown activation")
        if time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        self.name = name
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.out_activation = out_activation
        self.time_embed_dim = int(time_embed_dim)
        self.cond_dim = int(cond_dim)
        self.bias = bias
        self.version = 0
        rng = np.random.default_rng(0) if rng is None else rng
        self.params: Dict[str, np.ndarray] = {}
        fan_in = self.sizes[0] + self.cond_dim
        for i, fan_out in enumerate(self.sizes[1:]):
            self.params[f"W{i}"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            if bias:
                self.params[f"b{i}"] = np.zeros(fan_out)
            fan_in = fan_out
        if self.time_embed_dim:
            self.params["Wt"] = rng.standard_normal((self.time_embed_dim, self.sizes[1])) / np.sqrt(self.time_embed_dim)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def layer_activation(self, i):
        return self.out_activation if i == self.n_layers - 1 else self.activation

    def touch(self) -> None:
        """Mark parameters as modified so outstanding tapes become stale."""
        self.version += 1

    def spec(self) -> dict:
        return {"sizes": self.sizes, "activation": self.activation,
                "out_activation": self.out_activation, "time_embed_dim": self.time_embed_dim,
                "cond_dim": self.cond_dim, "bias": self.bias, "name": self.name}

    @classmethod
    def from_spec(cls, spec: dict) -> "DenseNet":
        return cls(**spec)

    def forward(self, x, t=None, cond=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"{self.name}: expected input width {self.sizes[0]}, got shape {x.shape}")
        if self.cond_dim:
            if cond is None or cond.shape != (x.shape[0], self.cond_dim):
                raise ShapeError(f"{self.name}: condition of shape ({x.shape[0]}, {self.cond_dim}) required")
            h = np.concatenate([x, cond], axis=1)
        else:
            if cond is not None:
                raise ShapeError(f"{self.name}: network takes no condition")
            h = x
        temb = None
        if self.time_embed_dim:
            if t is None:
                raise ShapeError(f"{self.name}: timestep required")
            temb = sinusoidal_features(t, self.time_embed_dim)
        inputs, preacts, gates = [], [], []
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"]
            if self.bias:
                z = z + self.params[f"b{i}"]
            if i == 0 and temb is not None:
                z = z + temb @ self.params["Wt"]
            inputs.append(h)
            preacts.append(z)
            act = self.layer_activation(i)
            if act == "silu":
                gate = _sigmoid(z)
                gates.append(gate)
                h = z * gate
            else:
                gates.append(None)
                h = _act(act, z)
        return h, Tape(inputs, preacts, temb, self.version, x.shape[1], gates)

    __call__ = forward

    def predict(self, x, t=None, cond=None) -> np.ndarray:
        return self.forward(x, t, cond)[0]

    def backward(self, tape: Tape, grad_out) -> Gradients:
        if tape.version != self.version:
            raise StaleTapeError(f"{self.name}: tape recorded at version {tape.version}, net is at {self.version}")
        g = np.asarray(grad_out, dtype=np.float64)
        grads: Dict[str, np.ndarray] = {}
        for i in reversed(range(self.n_layers)):
            z = tape.preacts[i]
            if g.shape != z.shape:
                raise ShapeError(f"{self.name}: gradient shape {g.shape} != output shape {z.shape}")
            act = self.layer_activation(i)
            if act == "identity":
                gz = g
            elif act == "silu" and tape.gates is not None:
                s = tape.gates[i]
                gz = g * (s * (1.0 + z * (1.0 - s)))
            else:
                gz = g * _act_grad(act, z)
            grads[f"W{i}"] = tape.inputs[i].T @ gz
            if self.bias:
                grads[f"b{i}"] = gz.sum(axis=0)
            if i == 0 and tape.temb is not None:
                if tape.temb.shape[0] == 1:
                    grads["Wt"] = tape.temb.T @ gz.sum(axis=0, keepdims=True)
                else:
                    grads["Wt"] = tape.temb.T @ gz
            g = gz @ self.params[f"W{i}"].T
        input_grad = g[:, :tape.n_data]
        cond_grad = g[:, tape.n_data:] if self.cond_dim else None
        return Gradients(grads, input_grad, cond_grad)


# convenience functional forms


def forward(net: DenseNet, x, t=None, cond=None):
    return net.forward(x, t, cond)


def backward(net: DenseNet, loss_grad, tape: Tape) -> Gradients:
    return net.backward(tape, loss_grad)


class Adam:
    """Adam with bias correction over a collection of named networks."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.k = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, nets: Mapping[str, DenseNet], grads: Mapping[str, Mapping[str, np.ndarray]], lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.k += 1
        c1 = 1.0 - b1 ** self.k
        c2 = 1.0 - b2 ** self.k
        for net_name, net_grads in grads.items():
            net = nets[net_name]
            for pname, g in net_grads.items():
                p = net.params[pname]
                if g.shape != p.shape:
                    raise ShapeError(f"{net_name}.{pname}: gradient {g.shape} vs parameter {p.shape}")
                key = f"{net_name}.{pname}"
                m = self._m.get(key)
                if m is None:
                    m = self._m[key] = np.zeros_like(p)
                    self._v[key] = np.zeros_like(p)
                v = self._v[key]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            net.touch()


def adam_step(net: DenseNet, grads: Gradients, opt: Adam, lr=None) -> DenseNet:
    opt.step({net.name: net}, {net.name: grads.params}, lr=lr)
    return net


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_error < self.tolerance)


def _rel_err(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def grad_check(net: DenseNet, x, loss="mse", tolerance=1e-4, t=None, cond=None,
               seed=0, step=1e-5, analytic: Optional[Gradients] = None) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    ``loss`` is ``"mse"`` (against a fixed random target) or ``"linear"``
    (a fixed random functional of the output). Pass ``analytic`` to check a
    supplied gradient instead of the network's own backward.
    """
    rng = np.random.default_rng(seed)
    out, tape = net.forward(x, t, cond)
    ref = rng.standard_normal(out.shape)

    def loss_and_grad(y):
        if loss == "mse":
            return np.mean((y - ref) ** 2), 2.0 * (y - ref) / y.size
        if loss == "linear":
            return np.sum(y * ref), ref
        raise ValueError(f"unknown loss tag {loss!r}")

    def value():
        return loss_and_grad(net.predict(x, t, cond))[0]

    if analytic is None:
        analytic = net.backward(tape, loss_and_grad(out)[1])
    worst, worst_name, count = 0.0, "", 0
    for pname, p in net.params.items():
        numeric = np.empty_like(p)
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = value()
            flat[idx] = orig - step
            down = value()
            flat[idx] = orig
            numeric.reshape(-1)[idx] = (up - down) / (2 * step)
        err = _rel_err(analytic.params[pname], numeric)
        count += err.size
        if err.size and err.max() > worst:
            worst, worst_name = float(err.max()), pname
    x = np.array(x, dtype=np.float64)
    num_in = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = loss_and_grad(net.predict(x, t, cond))[0]
        x[idx] = orig - step
        down = loss_and_grad(net.predict(x, t, cond))[0]
        x[idx] = orig
        num_in[idx] = (up - down) / (2 * step)
    err = _rel_err(analytic.input_grad, num_in)
    count += err.size
    if err.size and err.max() > worst:
        worst, worst_name = float(err.max()), "input"
    return GradCheckReport(worst, worst_name, count, tolerance)


# --------------------------------------------------------------------------
# serialization: flat little-endian float64 blob plus a JSON manifest


def save_params(stem, arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    stem = Path(stem)
    entries, offset = [], 0
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    stem.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())
    manifest = {"format": "dlfkit-params", "version": FORMAT_VERSION, "dtype": "<f8",
                "entries": entries, "meta": meta or {}}
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_params(stem):
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != "dlfkit-params" or manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported parameter manifest in {stem}")
    blob = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays = {}
    for e in manifest["entries"]:
        arrays[e["name"]] = blob[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]


def save_net(stem, net: DenseNet) -> None:
    save_params(stem, net.params, {"nets": {net.name: net.spec()}})


def load_net(stem) -> DenseNet:
    arrays, meta = load_params(stem)
    (name, spec), = meta["nets"].items()
    net = DenseNet.from_spec(spec)
    for k in net.params:
        net.params[k] = arrays[k]
    return net
