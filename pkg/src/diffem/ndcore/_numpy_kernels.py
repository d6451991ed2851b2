"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    s = _sigmoid(x)
    return x * s, s


def silu_backward(x, sig, grad_out):
    return grad_out * (sig + x * sig * (1.0 - sig))


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m_new = beta1 * m + (1.0 - beta1) * grad
    v_new = beta2 * v + (1.0 - beta2) * (grad * grad)
    p_new = param - lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
    return p_new, m_new, v_new


def inpaint_update(x, score, z, observed, eps_fwd, mask, t, t_next):
    dt = t - t_next
    drift = 2.0 * t * dt
    diffusion = np.sqrt(2.0 * t * dt)
    reverse = x + drift * score + diffusion * z
    forward = observed + t_next * eps_fwd
    return np.where(mask != 0.0, reverse, forward)


def all_finite(a):
    return bool(np.isfinite(a).all())
