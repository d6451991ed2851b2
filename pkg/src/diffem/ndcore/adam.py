from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteError, ShapeError
from . import kernels
from .denoiser import DenoiserParams, zeros_like_params


@dataclass(frozen=True)
class AdamState:
    m: DenoiserParams
    v: DenoiserParams
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: DenoiserParams, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(m=zeros_like_params(params), v=zeros_like_params(params), lr=lr, **kw)


def adam_update(params: DenoiserParams, grads: DenoiserParams, state: AdamState):
    """Apply one Adam step and return ``(new_params, new_state)``.

    Raises:
        NonFiniteError: if any gradient entry is NaN or infinite. The
            message lists the offending tensors.
    """
    p_arr, g_arr = params.arrays(), grads.arrays()
    bad = []
    for name, g in g_arr.items():
        if g.shape != p_arr[name].shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, param has {p_arr[name].shape}")
        if not kernels.all_finite(g):
            bad.append(f"{name}: {int(np.count_nonzero(~np.isfinite(g)))} non-finite of {g.size}")
    if bad:
        raise NonFiniteError(f"non-finite gradient at Adam step {state.step + 1}; " + "; ".join(bad))

    step = state.step + 1
    bc1 = 1.0 - state.beta1**step
    bc2 = 1.0 - state.beta2**step
    m_arr, v_arr = state.m.arrays(), state.v.arrays()
    new_p, new_m, new_v = {}, {}, {}
    for name in p_arr:
        new_p[name], new_m[name], new_v[name] = kernels.adam_step(
            p_arr[name], g_arr[name], m_arr[name], v_arr[name],
            state.lr, state.beta1, state.beta2, state.eps, bc1, bc2,
        )
    new_state = AdamState(
        m=DenoiserParams(**new_m), v=DenoiserParams(**new_v), step=step,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )
    return DenoiserParams(**new_p), new_state
