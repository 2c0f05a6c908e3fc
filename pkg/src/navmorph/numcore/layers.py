"""Parameterized building blocks: affine maps, MLPs, a GRU cell, and the
Gaussian helpers used by the posterior and prior heads."""

from __future__ import annotations

import json
import math
from typing import Iterator, Mapping

import numpy as np

from navmorph.errors import DimensionError, DomainError, FormatError
from navmorph.numcore.tensor import Tensor, concat

CHECKPOINT_FORMAT = "navmorph-ckpt-v1"


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParameterSet(Mapping[str, Parameter]):
    """Insertion-ordered registry of parameters with unique names."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def subset(self, keep) -> "ParameterSet":
        """A view holding the same Parameter objects whose names satisfy ``keep``."""
        out = ParameterSet()
        out._params = {n: p for n, p in self._params.items() if keep(n)}
        return out

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise FormatError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {value.shape} != {p.shape}"
                )
            p.data = value.copy()


def save_checkpoint(params: ParameterSet, extra: dict | None = None) -> str:
    """Serialize parameters to the JSON checkpoint document (returned as text)."""
    doc = {"format": CHECKPOINT_FORMAT}
    if extra:
        doc.update(extra)
    doc["params"] = [
        {"name": name, "shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
        for name, p in params.items()
    ]
    return json.dumps(doc)


def parse_checkpoint(text: str) -> tuple[dict[str, np.ndarray], dict]:
    """Parse checkpoint text into ``(state, document_without_params)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"malformed checkpoint at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a {CHECKPOINT_FORMAT} document")
    state = {}
    for entry in doc.get("params", []):
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != math.prod(shape):
            raise FormatError(f"parameter {entry['name']!r}: data length does not match shape")
        state[entry["name"]] = data.reshape(shape)
    meta = {k: v for k, v in doc.items() if k != "params"}
    return state, meta


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector input."""
    if (
        weight.data.ndim != 2
        or x.data.ndim != 1
        or bias.data.ndim != 1
        or weight.shape[1] != x.shape[0]
        or weight.shape[0] != bias.shape[0]
    ):
        raise DimensionError(
            f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    return weight @ x + bias


class Linear:
    def __init__(self, params: ParameterSet, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.weight = params.add(f"{name}.weight", uniform_init(rng, n_in, (n_out, n_in)))
        self.bias = params.add(f"{name}.bias", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class MLP:
    """Stack of affine layers with tanh between them (none after the last)."""

    def __init__(self, params: ParameterSet, name: str, sizes: list[int],
                 rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.layers = [
            Linear(params, f"{name}.{i}", n_in, n_out, rng)
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).tanh()
        return self.layers[-1](x)


def gru_step(h_prev: Tensor, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU update over the concatenation ``[x, h_prev]``.

    ``params`` holds ``w_z, b_z, w_r, b_r, w_n, b_n``; each ``w_*`` has shape
    ``(d_h, d_in + d_h)``.
    """
    d_h = h_prev.shape[0] if h_prev.data.ndim == 1 else -1
    d_in = x.shape[0] if x.data.ndim == 1 else -1
    if params["w_z"].shape != (d_h, d_in + d_h):
        raise DimensionError(
            f"gru_step: h {h_prev.shape}, x {x.shape}, w_z {params['w_z'].shape}"
        )
    xh = concat([x, h_prev])
    z = affine(xh, params["w_z"], params["b_z"]).sigmoid()
    r = affine(xh, params["w_r"], params["b_r"]).sigmoid()
    n = affine(concat([x, r * h_prev]), params["w_n"], params["b_n"]).tanh()
    return (1.0 - z) * n + z * h_prev


class GRUCell:
    def __init__(self, params: ParameterSet, name: str, d_in: int, d_h: int,
                 rng: np.random.Generator):
        self.d_in, self.d_h = d_in, d_h
        fan_in = d_in + d_h
        self.weights = {}
        for gate in ("z", "r", "n"):
            self.weights[f"w_{gate}"] = params.add(
                f"{name}.w_{gate}", uniform_init(rng, fan_in, (d_h, fan_in))
            )
            self.weights[f"b_{gate}"] = params.add(f"{name}.b_{gate}", np.zeros(d_h))

    def __call__(self, h_prev: Tensor, x: Tensor) -> Tensor:
        return gru_step(h_prev, x, self.weights)


def softplus_floor(raw: Tensor, floor: float) -> Tensor:
    """``floor + log(1 + exp(raw))``; strictly above ``floor``."""
    if not floor > 0:
        raise DomainError(f"softplus floor must be positive, got {floor}")
    return raw.softplus() + floor


def sample_gaussian(mu: Tensor, sigma: Tensor, rng: np.random.Generator | None = None,
                    eps: np.ndarray | None = None) -> Tensor:
    """Reparameterized draw ``mu + sigma * eps`` with ``eps ~ N(0, I)``.

    Pass ``eps`` to fix the noise (it is then treated as a constant).
    """
    if np.any(sigma.data <= 0.0):
        raise DomainError("sample_gaussian: sigma must be strictly positive")
    if eps is None:
        if rng is None:
            raise ValueError("sample_gaussian needs either rng or eps")
        eps = rng.standard_normal(mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise DimensionError(f"noise shape {eps.shape} != mean shape {mu.shape}")
    return mu + sigma * Tensor(eps)
