import numpy as np

from ..errors import ShapeError
from . import kernels


def as_matrix(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def linear_forward(w, b, x):
    """Affine map applied row-wise: ``x @ w + b``.

    Args:
        w: weights of shape ``(in_dim, out_dim)``.
        b: bias of shape ``(out_dim,)``.
        x: inputs of shape ``(rows, in_dim)``.
    """
    w = as_matrix(w, "w")
    x = as_matrix(x)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} columns but weight expects {w.shape[0]} "
            f"(x {x.shape}, w {w.shape})"
        )
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
    return x @ w + b


def silu(x):
    """Elementwise ``x * sigmoid(x)``."""
    return kernels.silu_forward(np.asarray(x, dtype=np.float64))[0]


def embedding_frequencies(dim):
    half = dim // 2
    return np.exp(-np.log(10000.0) * np.arange(half) / half)


def sinusoidal_embed(t, dim):
    """Sinusoidal time embedding, sine half first then cosine half.

    ``t`` may be a scalar (returns shape ``(dim,)``) or a 1-D array of
    per-row times (returns shape ``(len(t), dim)``).
    """
    if dim <= 0 or dim % 2:
        raise ShapeError(f"embedding dimension must be a positive even number, got {dim}")
    freqs = embedding_frequencies(dim)
    t = np.asarray(t, dtype=np.float64)
    angles = np.multiply.outer(t, freqs)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
