"""Multilayer feedforward network evaluated on jets.

Hidden layers compute ``z = theta @ y + beta`` followed by the activation;
the output layer is affine.  "Four-layer" networks in the examples mean
input + two hidden + output, e.g. widths ``(1, 20, 20, 1)``.

Flat parameter layout, used by the optimizer and by ``params.json``: layer by
layer, each layer contributing its weight matrix (shape ``(out, in)``,
row-major) followed by its bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, Node

ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid}


class ConfigurationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MFN:
    widths: tuple[int, ...]
    thetas: tuple[np.ndarray, ...]
    betas: tuple[np.ndarray, ...]
    activation: str = "tanh"
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_widths(self.widths)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for i, (t, b) in enumerate(zip(self.thetas, self.betas)):
            if t.shape != (self.widths[i + 1], self.widths[i]) or b.shape != (self.widths[i + 1],):
                raise ShapeError(f"layer {i} parameters do not match widths {self.widths}")

    @property
    def param_count(self) -> int:
        return param_count(self.widths)


def _check_widths(widths) -> None:
    if len(widths) < 2 or any(int(w) != w or w <= 0 for w in widths):
        raise ConfigurationError(f"invalid widths {widths!r}: need >= 2 positive integers")


def param_count(widths: Sequence[int]) -> int:
    return sum(widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1))


def mfn_init(widths: Sequence[int], seed: int, activation: str = "tanh") -> MFN:
    """Glorot-uniform weights, zero biases, drawn from ``numpy.random.default_rng(seed)``."""
    _check_widths(widths)
    widths = tuple(int(w) for w in widths)
    rng = np.random.default_rng(seed)
    thetas, betas = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        thetas.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        betas.append(np.zeros(fan_out))
    return MFN(widths, tuple(thetas), tuple(betas), activation, seed)


def get_params(net: MFN) -> np.ndarray:
    parts = []
    for t, b in zip(net.thetas, net.betas):
        parts.append(t.ravel())
        parts.append(b)
    return np.concatenate(parts)


def set_params(net: MFN, v) -> MFN:
    v = np.asarray(v, dtype=float)
    if v.shape != (net.param_count,):
        raise ShapeError(f"expected {net.param_count} parameters, got {v.shape}")
    layers = unflatten(v, net.widths)
    return MFN(net.widths, tuple(t.copy() for t, _ in layers),
               tuple(b.copy() for _, b in layers), net.activation, net.seed)


def unflatten(v, widths: Sequence[int]) -> list:
    """Split a flat vector (array or tape node) into ``(theta, beta)`` per layer."""
    if v.shape != (param_count(widths),):
        raise ShapeError(f"expected {param_count(widths)} parameters, got {v.shape}")
    layers, pos = [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        t = v[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = v[pos:pos + fan_out]
        pos += fan_out
        layers.append((t, b))
    return layers


def _stack(xs: Sequence[Jet]) -> Jet:
    order = xs[0].order
    if any(x.order != order for x in xs):
        raise ShapeError("input jets must share one order")
    coeffs = []
    for k in range(order + 1):
        cs = [x.coeffs[k] for x in xs]
        if any(isinstance(c, Node) for c in cs):
            raise ShapeError("network inputs must not depend on trainable parameters")
        if all(isinstance(c, (int, float)) and c == 0 for c in cs):
            coeffs.append(0.0)
        else:
            coeffs.append(np.stack(np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in cs]), axis=-1))
    return Jet(coeffs)


def _affine(h: Jet, theta, beta) -> Jet:
    tt = theta.T
    z = h.map_linear(lambda c: c @ tt)
    return Jet((z.coeffs[0] + beta,) + z.coeffs[1:])


def mfn_forward(net: MFN, x: Sequence[Jet], params=None) -> list[Jet]:
    """Evaluate the network on one jet per input coordinate.

    ``params`` optionally replaces the network's own parameters with a flat
    vector (a plain array or a tape node); this is how training obtains
    parameter gradients.
    """
    if len(x) != net.widths[0]:
        raise ShapeError(f"network expects {net.widths[0]} inputs, got {len(x)}")
    layers = unflatten(params, net.widths) if params is not None else list(zip(net.thetas, net.betas))
    act = ACTIVATIONS[net.activation]
    h = _stack(x)
    for i, (theta, beta) in enumerate(layers):
        h = _affine(h, theta, beta)
        if i < len(layers) - 1:
            h = act(h)
    return [h[..., k] for k in range(net.widths[-1])]


# -- snapshots ---------------------------------------------------------------


def params_to_dict(net: MFN) -> dict:
    return {
        "widths": list(net.widths),
        "activation": net.activation,
        "seed": net.seed,
        "params": get_params(net).tolist(),
    }


def params_from_dict(doc: dict) -> MFN:
    try:
        widths = tuple(int(w) for w in doc["widths"])
        skeleton = MFN(widths, tuple(np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])),
                       tuple(np.zeros(o) for o in widths[1:]), doc.get("activation", "tanh"),
                       doc.get("seed"))
        return set_params(skeleton, doc["params"])
    except KeyError as exc:
        raise ConfigurationError(f"parameter snapshot missing field {exc}") from None


def save_params(net: MFN, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(net), indent=2) + "\n")


def load_params(path) -> MFN:
    return params_from_dict(json.loads(Path(path).read_text()))
