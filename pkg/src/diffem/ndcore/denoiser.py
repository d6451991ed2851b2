"""The MLP that predicts the score of noised data.

Layer chain: ``FC_in (d->h)``, add the time embedding, then three SiLU
layers ``h -> 2h -> 2h -> h`` and a linear read-out ``h -> d``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

import numpy as np

from ..errors import ShapeError
from . import kernels
from .layers import as_matrix, sinusoidal_embed

LAYER_NAMES = ("in", "1", "2", "3", "out")
PARAM_NAMES = tuple(f"{p}_{name}" for name in LAYER_NAMES for p in ("w", "b"))
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserParams:
    w_in: np.ndarray
    b_in: np.ndarray
    w_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray
    w_3: np.ndarray
    b_3: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        d, h = self.w_in.shape
        expected = {
            "w_in": (d, h), "b_in": (h,),
            "w_1": (h, 2 * h), "b_1": (2 * h,),
            "w_2": (2 * h, 2 * h), "b_2": (2 * h,),
            "w_3": (2 * h, h), "b_3": (h,),
            "w_out": (h, d), "b_out": (d,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
        if h % 2:
            raise ShapeError(f"hidden_dim must be even for the time embedding, got {h}")

    @property
    def data_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.hidden_dim

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def map(self, fn) -> "DenoiserParams":
        return DenoiserParams(**{k: fn(v) for k, v in self.arrays().items()})

    def with_arrays(self, **arrays) -> "DenoiserParams":
        return replace(self, **arrays)

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def digest(self) -> str:
        """SHA-256 over shapes and values; equal digests mean equal params."""
        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(data_dim: int, hidden_dim: int, rng: np.random.Generator) -> DenoiserParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    if data_dim < 1 or hidden_dim < 2:
        raise ShapeError(f"invalid sizes data_dim={data_dim}, hidden_dim={hidden_dim}")
    h = hidden_dim
    dims = [(data_dim, h), (h, 2 * h), (2 * h, 2 * h), (2 * h, h), (h, data_dim)]
    arrays = {}
    for name, (fan_in, fan_out) in zip(LAYER_NAMES, dims):
        bound = 1.0 / np.sqrt(fan_in)
        arrays[f"w_{name}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"b_{name}"] = np.zeros(fan_out)
    return DenoiserParams(**arrays)


def zeros_like_params(params: DenoiserParams) -> DenoiserParams:
    return params.map(np.zeros_like)


def _time_rows(t, n):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    if t.shape != (n,):
        raise ShapeError(f"per-row times must have shape ({n},), got {t.shape}")
    return t


def forward_with_cache(params: DenoiserParams, x_t, t):
    x_t = as_matrix(x_t, "x_t")
    if x_t.shape[1] != params.data_dim:
        raise ShapeError(f"x_t has {x_t.shape[1]} columns, network expects {params.data_dim}")
    t = _time_rows(t, x_t.shape[0])
    emb = sinusoidal_embed(t, params.hidden_dim)
    h_in = x_t @ params.w_in + params.b_in + emb
    a1 = h_in @ params.w_1 + params.b_1
    h1, s1 = kernels.silu_forward(a1)
    a2 = h1 @ params.w_2 + params.b_2
    h2, s2 = kernels.silu_forward(a2)
    a3 = h2 @ params.w_3 + params.b_3
    h3, s3 = kernels.silu_forward(a3)
    out = h3 @ params.w_out + params.b_out
    cache = (x_t, h_in, a1, s1, h1, a2, s2, h2, a3, s3, h3)
    return out, cache


def denoiser_forward(params: DenoiserParams, x_t, t) -> np.ndarray:
    """Predicted score for each row of ``x_t`` at time ``t`` (scalar or per row)."""
    return forward_with_cache(params, x_t, t)[0]


def backward_from_cache(params: DenoiserParams, cache, upstream) -> DenoiserParams:
    x_t, h_in, a1, s1, h1, a2, s2, h2, a3, s3, h3 = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != x_t.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {x_t.shape}")
    grads = {}
    grads["w_out"] = h3.T @ g
    grads["b_out"] = g.sum(axis=0)
    g = g @ params.w_out.T
    g = kernels.silu_backward(a3, s3, g)
    grads["w_3"] = h2.T @ g
    grads["b_3"] = g.sum(axis=0)
    g = g @ params.w_3.T
    g = kernels.silu_backward(a2, s2, g)
    grads["w_2"] = h1.T @ g
    grads["b_2"] = g.sum(axis=0)
    g = g @ params.w_2.T
    g = kernels.silu_backward(a1, s1, g)
    grads["w_1"] = h_in.T @ g
    grads["b_1"] = g.sum(axis=0)
    g = g @ params.w_1.T
    # the embedding term carries no parameters
    grads["w_in"] = x_t.T @ g
    grads["b_in"] = g.sum(axis=0)
    return DenoiserParams(**grads)


def denoiser_backward(params: DenoiserParams, x_t, t, upstream_grad) -> DenoiserParams:
    """Parameter gradients of ``sum(upstream_grad * denoiser_forward(params, x_t, t))``."""
    _, cache = forward_with_cache(params, x_t, t)
    return backward_from_cache(params, cache, upstream_grad)


def save_params(params: DenoiserParams, path) -> None:
    """Write a checkpoint as an ``.npz`` archive (see README for the layout)."""
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "hidden_dim": np.array(params.hidden_dim, dtype=np.int64),
        "data_dim": np.array(params.data_dim, dtype=np.int64),
    }
    payload.update({k: np.ascontiguousarray(v, dtype="<f8") for k, v in params.arrays().items()})
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_params(path) -> DenoiserParams:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return DenoiserParams(**{name: np.array(data[name]) for name in PARAM_NAMES})
