"""Feedforward ReLU networks: evaluation, normal forms and cost vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


def _as_matrix(weights) -> np.ndarray:
    rows = [list(r) for r in weights]
    if rows and len({len(r) for r in rows}) != 1:
        raise ValueError("ragged weight matrix: rows have differing lengths")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ValueError("weight must be a 2-D array")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias length {b.size} does not match {w.shape[0]} rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite network parameter")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ReluNetwork:
    """A chain of affine maps, each followed by an elementwise relu.

    ``layers[k]`` maps the activation ``x[k]`` to the preactivation of
    layer ``k + 1``; the network output is the last activation.
    """

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        layers = tuple(
            l if isinstance(l, Layer) else Layer(*l) for l in self.layers
        )
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].n_in != layers[k - 1].n_out:
                raise ValueError(
                    f"layer {k} expects {layers[k].n_in} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].n_out}"
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence | None = None) -> "ReluNetwork":
        if biases is None:
            biases = [np.zeros(np.shape(w)[0]) for w in weights]
        return cls(tuple(Layer(np.asarray(w, float), np.asarray(b, float))
                         for w, b in zip(weights, biases, strict=True)))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def widths(self) -> list[int]:
        """Sizes of every activation vector, input first."""
        return [self.input_dim] + [l.n_out for l in self.layers]

    @property
    def weights(self) -> list[np.ndarray]:
        return [l.weight for l in self.layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [l.bias for l in self.layers]

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "layers": [
                {"weights": l.weight.tolist(), "bias": l.bias.tolist()} for l in self.layers
            ],
        }


def forward_eval(net: ReluNetwork, x) -> np.ndarray:
    return trajectory(net, x)[-1]


def trajectory(net: ReluNetwork, x) -> list[np.ndarray]:
    """All activations ``[x, x1, ..., xK]`` for a single input."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.input_dim:
        raise ValueError(f"input has dimension {x.size}, network expects {net.input_dim}")
    acts = [x]
    for layer in net.layers:
        acts.append(np.maximum(layer.weight @ acts[-1] + layer.bias, 0.0))
    return acts


def preactivations(net: ReluNetwork, xs: np.ndarray) -> list[np.ndarray]:
    """Batched preactivations; ``xs`` has one input per row."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    out = []
    act = xs
    for layer in net.layers:
        pre = act @ layer.weight.T + layer.bias
        out.append(pre)
        act = np.maximum(pre, 0.0)
    return out


def forward_batch(net: ReluNetwork, xs: np.ndarray) -> np.ndarray:
    return np.maximum(preactivations(net, xs)[-1], 0.0)


def absorb_bias(net: ReluNetwork) -> ReluNetwork:
    """Bias-free equivalent acting on inputs with a trailing constant 1.

    Every hidden activation also carries a trailing 1 (relu(1) = 1), so the
    rewritten network maps ``[x, 1]`` to ``[f(x), 1]`` except at the output,
    where the constant coordinate is dropped.
    """
    layers = []
    last = net.depth - 1
    for k, layer in enumerate(net.layers):
        w = np.hstack([layer.weight, layer.bias[:, None]])
        if k < last:
            unit = np.zeros((1, w.shape[1]))
            unit[0, -1] = 1.0
            w = np.vstack([w, unit])
        layers.append(Layer(w, np.zeros(w.shape[0])))
    return ReluNetwork(tuple(layers))


def with_unit_input(x) -> np.ndarray:
    return np.append(np.asarray(x, dtype=np.float64), 1.0)


@dataclass(frozen=True)
class NormalizedNetwork:
    norm: ReluNetwork
    scale: np.ndarray

    def rescaled(self) -> ReluNetwork:
        first = self.norm.layers[0]
        layer = Layer(first.weight * self.scale[:, None], first.bias * self.scale)
        return ReluNetwork((layer,) + self.norm.layers[1:])


def normalize_rows(net: ReluNetwork) -> NormalizedNetwork:
    """Scale first-layer rows to unit l1 norm, returning the scale factors.

    The bias of each row is scaled along with it, so the positive homogeneity
    of relu gives ``relu(w x + b) = s * relu((w x + b) / s)``.
    """
    first = net.layers[0]
    scale = np.abs(first.weight).sum(axis=1)
    if np.any(scale == 0.0):
        bad = int(np.flatnonzero(scale == 0.0)[0])
        raise ValueError(f"row {bad} of the first weight matrix is zero")
    layer = Layer(first.weight / scale[:, None], first.bias / scale)
    scale = scale.copy()
    scale.setflags(write=False)
    return NormalizedNetwork(ReluNetwork((layer,) + net.layers[1:]), scale)


def argmax_lowest(values) -> int:
    """Index of the maximum, preferring the lowest index among ties."""
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.max())[0])


def classification_cost(nominal_output, challenger: int) -> np.ndarray:
    """Cost ``e_challenger - e_top`` where ``top`` is the nominal class.

    Indices are zero-based.
    """
    out = np.asarray(nominal_output, dtype=np.float64).reshape(-1)
    top = argmax_lowest(out)
    if not 0 <= challenger < out.size:
        raise ValueError(f"challenger {challenger} out of range for {out.size} outputs")
    if challenger == top:
        raise ValueError(f"challenger {challenger} is the nominal class")
    c = np.zeros(out.size)
    c[challenger] = 1.0
    c[top] = -1.0
    return c


def runner_up(nominal_output) -> int:
    """Best class other than the nominal argmax (lowest index on ties)."""
    out = np.asarray(nominal_output, dtype=np.float64).reshape(-1).copy()
    if out.size < 2:
        raise ValueError("need at least two outputs")
    out[argmax_lowest(out)] = -np.inf
    return argmax_lowest(out)


DISTRIBUTIONS = ("normal", "uniform")


def random_network(sizes: Sequence[int], distribution: str = "normal", seed: int = 0,
                   bias: bool = False) -> ReluNetwork:
    """Random network with the given activation widths (input first).

    Biases are zero unless ``bias`` is set, in which case they are drawn
    from the same distribution as the weights.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("need an input width and at least one layer width")
    if any(s < 1 for s in sizes):
        raise ValueError("layer widths must be positive")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown weight distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    draw = rng.standard_normal if distribution == "normal" else rng.random
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = draw((n_out, n_in))
        b = draw(n_out) if bias else np.zeros(n_out)
        layers.append(Layer(w, b))
    return ReluNetwork(tuple(layers))


def normalize_all_layers(net: ReluNetwork) -> ReluNetwork:
    """Rescale every row of every layer to unit l1 norm (zero rows left alone)."""
    layers = []
    for layer in net.layers:
        s = np.abs(layer.weight).sum(axis=1)
        s[s == 0.0] = 1.0
        layers.append(Layer(layer.weight / s[:, None], layer.bias / s))
    return ReluNetwork(tuple(layers))


def network_from_dict(doc: dict) -> ReluNetwork:
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ValueError("network document needs a 'layers' field")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {version!r}")
    layers = []
    for k, entry in enumerate(doc["layers"]):
        try:
            w = _as_matrix(entry["weights"])
            b = np.asarray(entry.get("bias", np.zeros(w.shape[0])), dtype=np.float64)
            layers.append(Layer(w, b))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"layer {k}: {exc}") from exc
    return ReluNetwork(tuple(layers))


def load_network(path: str | Path) -> ReluNetwork:
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))


def save_network(net: ReluNetwork, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh, indent=1)
        fh.write("\n")
