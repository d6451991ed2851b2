"""Dense numerics: layers, the score MLP, its gradients, and Adam."""
from .adam import AdamState, adam_update
from .denoiser import (
    CHECKPOINT_VERSION,
    DenoiserParams,
    backward_from_cache,
    denoiser_backward,
    denoiser_forward,
    forward_with_cache,
    init_params,
    load_params,
    save_params,
    zeros_like_params,
)
from .kernels import BACKEND
from .layers import linear_forward, silu, sinusoidal_embed

__all__ = [
    "AdamState",
    "BACKEND",
    "CHECKPOINT_VERSION",
    "DenoiserParams",
    "adam_update",
    "backward_from_cache",
    "denoiser_backward",
    "denoiser_forward",
    "forward_with_cache",
    "init_params",
    "linear_forward",
    "load_params",
    "save_params",
    "silu",
    "sinusoidal_embed",
    "zeros_like_params",
]
