"""Coordinate MLP ``(x, y) -> kappa`` with one tanh hidden layer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape as ad
from .mesh import TriMesh

N_IN = 2
N_HIDDEN = 10
N_OUT = 1

_SHAPES = (
    ("W1", (N_HIDDEN, N_IN)),
    ("b1", (N_HIDDEN,)),
    ("W2", (N_OUT, N_HIDDEN)),
    ("b2", (N_OUT,)),
)
N_PARAMS = sum(int(np.prod(shape)) for _, shape in _SHAPES)


def _slices():
    start = 0
    for name, shape in _SHAPES:
        size = int(np.prod(shape))
        yield name, shape, slice(start, start + size)
        start += size


@dataclass(frozen=True, eq=False)
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name, shape in _SHAPES:
            value = np.array(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, value)

    def flatten(self) -> np.ndarray:
        """Flat vector ordered W1 (row-major), b1, W2 (row-major), b2."""
        return np.concatenate([getattr(self, name).ravel() for name, _ in _SHAPES])

    @classmethod
    def unflatten(cls, theta) -> MlpParams:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {theta.shape}")
        return cls(**{name: theta[sl].reshape(shape) for name, shape, sl in _slices()})

    def save_json(self, path):
        Path(path).write_text(json.dumps({"theta": self.flatten().tolist()}, indent=2))

    @classmethod
    def load_json(cls, path) -> MlpParams:
        return cls.unflatten(json.loads(Path(path).read_text())["theta"])


def init_params(seed=0) -> MlpParams:
    """Glorot-uniform weights, zero hidden biases, output bias 1."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (N_IN + N_HIDDEN))
    lim2 = np.sqrt(6.0 / (N_HIDDEN + N_OUT))
    return MlpParams(
        W1=rng.uniform(-lim1, lim1, size=(N_HIDDEN, N_IN)),
        b1=np.zeros(N_HIDDEN),
        W2=rng.uniform(-lim2, lim2, size=(N_OUT, N_HIDDEN)),
        b2=np.ones(N_OUT),
    )


def evaluate(params: MlpParams, points) -> np.ndarray:
    """Plain numpy forward pass over an ``(n, 2)`` array of points."""
    hidden = np.tanh(points @ params.W1.T + params.b1)
    return (hidden @ params.W2.T + params.b2)[:, 0]


def nn_kappa(theta: ad.Node, mesh: TriMesh) -> ad.Node:
    """Record the network evaluated at every mesh vertex.

    ``theta`` is a tape node holding the flat parameter vector; the result
    is a node of nodal conductivity values.
    """
    parts = {
        name: ad.reshape(ad.take(theta, sl), shape) for name, shape, sl in _slices()
    }
    hidden = ad.tanh(ad.affine(parts["W1"], parts["b1"], mesh.vertices))
    out = ad.affine(parts["W2"], parts["b2"], hidden)
    return ad.reshape(out, (mesh.n_vertices,))
