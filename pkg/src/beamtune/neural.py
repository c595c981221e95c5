"""Small dense networks in numpy: forward/backward, Adam, soft updates and a
JSON checkpoint format.

Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(B, fan_in)`` maps to ``x @ W + b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
CHECKPOINT_FORMAT = "beamtune-checkpoint"
CHECKPOINT_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "relu":
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (fan_in, fan_out) and bias (fan_out,)")


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Multi-layer perceptron.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(57, 256, 256, 4)``.
    activations : sequence of str
        One activation per weight layer.
    rng : numpy Generator, optional
        Source for Xavier-uniform initialisation (biases start at zero).
    out_scale : float
        Multiplier applied to the initial weights of the last layer.
    """

    def __init__(self, sizes, activations, rng=None, out_scale: float = 1.0, layers=None):
        if layers is not None:
            self.layers = list(layers)
        else:
            sizes = [int(s) for s in sizes]
            if len(activations) != len(sizes) - 1:
                raise ValueError("need one activation per layer")
            rng = np.random.default_rng(0) if rng is None else rng
            self.layers = []
            for k, (fi, fo, act) in enumerate(zip(sizes[:-1], sizes[1:], activations)):
                w = xavier_uniform(fi, fo, rng)
                if k == len(sizes) - 2:
                    w = w * out_scale
                self.layers.append(Dense(w, np.zeros(fo), act))
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("layer dimensions do not chain")
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def architecture(self) -> list[tuple[int, int, str]]:
        return [(l.weight.shape[0], l.weight.shape[1], l.activation) for l in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def forward(self, x) -> np.ndarray:
        """Evaluate on one input vector or a batch; caches activations."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.input_dim:
            raise ValueError(f"expected input of size {self.input_dim}, got {h.shape[1]}")
        cache = [h]
        for layer in self.layers:
            z = h @ layer.weight + layer.bias
            h = _act(layer.activation, z)
            cache.append((z, h))
        self._cache = (single, cache)
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out, grad_preact=None):
        """Reverse pass for the last :meth:`forward` call.

        ``grad_preact``, if given, is an extra gradient with respect to the
        output layer's pre-activation (used for regularisers on it).
        Returns ``(grads, grad_input)`` where ``grads`` lines up with
        :meth:`params` and gradients are summed over the batch.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward()")
        single, cache = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        g = g[None, :] if single else g
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            z, a = cache[k + 1]
            h_in = cache[0] if k == 0 else cache[k][1]
            g = _act_grad(layer.activation, z, a, g)
            if grad_preact is not None and k == len(self.layers) - 1:
                extra = np.asarray(grad_preact, dtype=np.float64)
                g = g + (extra[None, :] if single else extra)
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.weight.T
        return grads, (g[0] if single else g)

    def output_preactivation(self) -> np.ndarray:
        """Pre-activation of the output layer from the last forward pass."""
        if self._cache is None:
            raise RuntimeError("no forward pass recorded")
        single, cache = self._cache
        z = cache[-1][0]
        return z[0] if single else z

    def copy(self) -> "Mlp":
        return Mlp(None, None, layers=[Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "activation": l.activation,
                    "weight": _array_to_dict(l.weight),
                    "bias": _array_to_dict(l.bias),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        layers = [
            Dense(_array_from_dict(d["weight"]), _array_from_dict(d["bias"]), d["activation"])
            for d in data["layers"]
        ]
        return cls(None, None, layers=layers)


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [_array_to_dict(a) for a in self.m],
            "v": [_array_to_dict(a) for a in self.v],
        }

    def load_dict(self, data: dict) -> None:
        self.lr, self.beta1, self.beta2, self.eps = data["lr"], data["beta1"], data["beta2"], data["eps"]
        self.t = int(data["t"])
        for dst, src in zip(self.m, data["m"]):
            dst[...] = _array_from_dict(src)
        for dst, src in zip(self.v, data["v"]):
            dst[...] = _array_from_dict(src)


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    """target <- (1 - tau) * target + tau * source, parameter-wise."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    if target.architecture != source.architecture:
        raise ValueError("target and source architectures differ")
    for t, s in zip(target.params(), source.params()):
        if tau == 1.0:
            t[...] = s
        else:
            t *= 1.0 - tau
            t += tau * s
    return target


def _array_to_dict(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    # json writes floats with repr(), which round-trips exactly
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def _array_from_dict(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(path, networks: dict[str, Mlp], optimizers: dict[str, Adam] | None = None, seed=None, extra=None):
    """Write networks and optimiser state as JSON.

    Schema::

        {"format": "beamtune-checkpoint", "version": 1, "seed": int | null,
         "networks": {name: {"layers": [{"activation", "weight", "bias"}]}},
         "optimizers": {name: {"lr", "beta1", "beta2", "eps", "t", "m", "v"}},
         "extra": {...}}

    Arrays are ``{"shape": [...], "data": [row-major floats]}``.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "networks": {k: n.to_dict() for k, n in networks.items()},
        "optimizers": {k: o.to_dict() for k, o in (optimizers or {}).items()},
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns a dict with ``networks`` as :class:`Mlp`
    objects and the raw optimiser dictionaries (see :meth:`Adam.load_dict`)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    doc["networks"] = {k: Mlp.from_dict(v) for k, v in doc["networks"].items()}
    return doc
