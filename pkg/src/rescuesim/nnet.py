"""Dense feedforward networks with hand-written backprop and RMSProp.

Everything is float64. Inputs may be a single vector ``(in,)`` or a batch
``(batch, in)``; gradients are summed over the batch, so the caller chooses
the loss reduction through the upstream gradient it passes to ``backward``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "elu", "identity", "abs")
CHECKPOINT_VERSION = 1

_net_ids = itertools.count()


class NetError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "abs":
        return np.abs(z)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray | float:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if name == "abs":
        return np.sign(z)
    return 1.0


def elu(z):
    return _act("elu", np.asarray(z, dtype=np.float64))


def elu_grad(z):
    return _act_grad("elu", np.asarray(z, dtype=np.float64))


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise NetError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")
        if self.activation not in ACTIVATIONS:
            raise NetError(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list[Layer]
    # bumped on every parameter update so stale caches can be detected
    version: int = 0
    uid: int = field(default_factory=lambda: next(_net_ids))

    def __post_init__(self) -> None:
        if not self.layers:
            raise NetError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.W.shape[1] != a.W.shape[0]:
                raise NetError("layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def zeros_like(self) -> "Gradients":
        return Gradients([(np.zeros_like(l.W), np.zeros_like(l.b)) for l in self.layers])

    def clone(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def load_from(self, other: "DenseNet") -> None:
        """Copy parameters in place (used for target-network syncs)."""
        for mine, theirs in zip(self.layers, other.layers):
            if mine.W.shape != theirs.W.shape:
                raise NetError("shape mismatch on parameter copy")
            mine.W[...] = theirs.W
            mine.b[...] = theirs.b
        self.version += 1

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class Gradients:
    layers: list[tuple[np.ndarray, np.ndarray]]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for dW, db in self.layers:
            out += [dW, db]
        return out

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients([(a + c, b + d) for (a, b), (c, d) in zip(self.layers, other.layers)])


@dataclass
class Cache:
    net_uid: int
    version: int
    batched: bool
    inputs: list[np.ndarray]
    pre: list[np.ndarray]


def init_net(sizes: Sequence[int], activations: Sequence[str],
             rng: np.random.Generator) -> DenseNet:
    """Weights and biases uniform in +-1/sqrt(fan_in)."""
    if len(activations) != len(sizes) - 1:
        raise NetError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Layer(W, b, act))
    return DenseNet(layers)


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int, rng: np.random.Generator,
        hidden_act: str = "relu", out_act: str = "identity") -> DenseNet:
    sizes = [in_dim, *hidden, out_dim]
    acts = [hidden_act] * len(hidden) + [out_act]
    return init_net(sizes, acts, rng)


def forward(net: DenseNet, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    a = x if batched else x[None, :]
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise NetError(f"expected input dim {net.input_dim}, got shape {x.shape}")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.W.T + layer.b
        pre.append(z)
        a = _act(layer.activation, z)
    return (a if batched else a[0]), Cache(net.uid, net.version, batched, inputs, pre)


def backward(net: DenseNet, cache: Cache, dy) -> tuple[Gradients, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given ``dL/dy``."""
    if cache.net_uid != net.uid or cache.version != net.version:
        raise NetError("cache does not belong to this network state")
    g = np.asarray(dy, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise NetError(f"upstream gradient shape {g.shape} != output {cache.pre[-1].shape}")
    grads = []
    for layer, a, z in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.pre)):
        gz = g * _act_grad(layer.activation, z)
        grads.append((gz.T @ a, gz.sum(axis=0)))
        g = gz @ layer.W
    grads.reverse()
    dx = g if cache.batched else g[0]
    return Gradients(grads), dx


def grad_norm(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_grads(arrays: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = grad_norm(arrays)
    if not np.isfinite(norm):
        raise TrainingDivergence("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in arrays:
            a *= scale
    return norm


class RMSProp:
    """w -= lr * g / (sqrt(s) + eps),  s = decay * s + (1 - decay) * g^2."""

    def __init__(self, params: list[np.ndarray], lr: float, decay: float = 0.99,
                 eps: float = 1e-5):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.square_avg = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise NetError("gradient list does not match parameters")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDivergence("non-finite gradient")
        for p, g, s in zip(self.params, grads, self.square_avg):
            if p.shape != g.shape:
                raise NetError("gradient shape mismatch")
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(s) + self.eps)


def optimizer_step(net: DenseNet, grads: Gradients, lr: float,
                   opt_state: RMSProp | None = None) -> tuple[DenseNet, RMSProp]:
    """One RMSProp update of a single network; pass the returned state back in."""
    if opt_state is None:
        opt_state = RMSProp(net.params(), lr)
    opt_state.lr = lr
    opt_state.step(grads.arrays())
    net.version += 1
    return net, opt_state


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path: str | Path, nets: dict[str, DenseNet],
                    manifest: dict | None = None) -> None:
    """Write networks to a ``.npz`` archive; values round-trip bit-exactly."""
    arrays: dict[str, np.ndarray] = {}
    layout = {}
    for name, net in nets.items():
        layout[name] = [l.activation for l in net.layers]
        for i, l in enumerate(net.layers):
            arrays[f"{name}/{i}/W"] = l.W
            arrays[f"{name}/{i}/b"] = l.b
    header = {"format": "rescuesim-nets", "version": CHECKPOINT_VERSION,
              "layout": layout, "manifest": manifest or {}}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != "rescuesim-nets":
            raise NetError(f"{path} is not a network checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise NetError(f"unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, acts in header["layout"].items():
            layers = [Layer(data[f"{name}/{i}/W"].copy(), data[f"{name}/{i}/b"].copy(), a)
                      for i, a in enumerate(acts)]
            nets[name] = DenseNet(layers)
    return nets, header["manifest"]
