"""Variance-exploding diffusion with noise level ``sigma(t) = t``.

Forward noising, the denoising score-matching loss, the sampling time
ladder, and the Euler-Maruyama step of the reverse-time SDE.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import NonFiniteError, ShapeError
from .ndcore import DenoiserParams, backward_from_cache, forward_with_cache
from .ndcore.layers import as_matrix

ScoreFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    T: float = 80.0
    t_min: float = 0.002

    def __post_init__(self):
        if not 0.0 < self.t_min < self.T:
            raise ValueError(f"need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")

    @staticmethod
    def sigma(t):
        return t

    @staticmethod
    def sigma_dot(t):
        return np.ones_like(np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-process settings.

    ``steps`` is the number of discretization steps M, ``repeats`` the
    number of conditional draws N averaged by the E-step, and ``rho`` the
    warp exponent of the time ladder (``rho=1`` gives linear spacing).
    ``resample > 1`` re-noises and repeats each inpainting step that many
    times before moving on (RePaint-style harmonization); the default of 1
    is the plain merge.
    """

    steps: int = 50
    repeats: int = 10
    rho: float = 7.0
    seed: int = 0
    resample: int = 1

    def __post_init__(self):
        if self.steps < 1 or self.repeats < 1 or self.resample < 1:
            raise ValueError(
                f"steps, repeats and resample must be >= 1, got "
                f"{self.steps}, {self.repeats}, {self.resample}"
            )
        if self.rho < 1:
            raise ValueError(f"rho must be >= 1, got {self.rho}")


def _check_time(t, sched: NoiseSchedule):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > sched.T):
        raise ValueError(f"time outside [0, {sched.T}]: {t}")
    return t_arr


def perturb(x0, t, eps, sched: NoiseSchedule = NoiseSchedule()):
    """``x0 + sigma(t) * eps``; ``t`` is a scalar or one time per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} != data shape {x0.shape}")
    t_arr = _check_time(t, sched)
    sig = sched.sigma(t_arr)
    if sig.ndim == 1 and x0.ndim == 2:
        sig = sig[:, None]
    return x0 + sig * eps


def score_target(eps, t, sched: NoiseSchedule = NoiseSchedule()):
    """Score of the Gaussian perturbation kernel, ``-eps / sigma(t)``."""
    eps = np.asarray(eps, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < sched.t_min):
        raise ValueError(f"time below t_min={sched.t_min}: target is unbounded as t -> 0")
    sig = sched.sigma(t_arr)
    if sig.ndim == 1 and eps.ndim == 2:
        sig = sig[:, None]
    return -eps / sig


def sample_train_times(n: int, sched: NoiseSchedule, rng: np.random.Generator):
    """Log-uniform training times on ``[t_min, T]``."""
    u = rng.uniform(np.log(sched.t_min), np.log(sched.T), size=n)
    return np.exp(u)


WEIGHTINGS = ("sigma2", "none")


def loss_weights(t, weighting: str, sched: NoiseSchedule = NoiseSchedule()):
    """Per-row loss weights: ``sigma(t)^2`` or all ones."""
    t = np.asarray(t, dtype=np.float64)
    if weighting == "sigma2":
        return sched.sigma(t) ** 2
    if weighting == "none":
        return np.ones_like(t)
    raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")


def loss_from_output(output, eps, t, sched: NoiseSchedule = NoiseSchedule(), weights=None):
    """Mean (optionally row-weighted) squared error against the score target.

    Returns ``(loss, d loss / d output)``.
    """
    target = score_target(eps, t, sched)
    output = np.asarray(output, dtype=np.float64)
    if output.shape != target.shape:
        raise ShapeError(f"output shape {output.shape} != target shape {target.shape}")
    resid = output - target
    if weights is None:
        weighted = resid
    else:
        weighted = np.asarray(weights, dtype=np.float64)[:, None] * resid
    loss = float(np.mean(weighted * resid))
    return loss, (2.0 / resid.size) * weighted


@dataclass(frozen=True)
class ScoreModel:
    """Score estimate built around the denoiser MLP.

    With ``preconditioned=True`` the network sees ``x / sqrt(t^2 + s^2)``
    and time ``log(t) / 4``, and its output is combined with the exact score
    of ``N(0, s^2)`` noised to level ``t``::

        score(x, t) = -x / (t^2 + s^2) + F(x, t) * s / (t * sqrt(t^2 + s^2))

    where ``s = sigma_data``. Large-``t`` scores then come out right before
    any training, which the sampler needs because it multiplies score errors
    by ``2 t dt``. With ``preconditioned=False`` the raw network output is
    the score.
    """

    params: DenoiserParams
    preconditioned: bool = True
    sigma_data: float = 1.0

    def _coefficients(self, t):
        t = np.asarray(t, dtype=np.float64)
        if not self.preconditioned:
            return np.ones_like(t), np.zeros_like(t), np.ones_like(t), t
        s2 = self.sigma_data**2
        norm = np.sqrt(t * t + s2)
        return 1.0 / norm, -1.0 / (t * t + s2), self.sigma_data / (t * norm), np.log(t) / 4.0

    def forward_with_cache(self, x, t):
        """Return ``(score, cache, out_scale)``; ``out_scale`` is d score / d F per row."""
        x = as_matrix(x, "x")
        t_rows = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        if np.any(t_rows <= 0) and self.preconditioned:
            raise ValueError("preconditioned score needs t > 0")
        c_in, c_skip, c_out, c_time = self._coefficients(t_rows)
        out, cache = forward_with_cache(self.params, x * c_in[:, None], c_time)
        score = c_skip[:, None] * x + c_out[:, None] * out
        return score, cache, c_out

    def __call__(self, x, t):
        return self.forward_with_cache(x, t)[0]


@dataclass(frozen=True)
class LossResult:
    loss: float
    grads: DenoiserParams
    t: np.ndarray
    eps: np.ndarray


def sm_loss(params: DenoiserParams, x0_batch, rng: np.random.Generator,
            sched: NoiseSchedule = NoiseSchedule(), *, weighting: str = "sigma2",
            preconditioned: bool = True, sigma_data: float = 1.0) -> LossResult:
    """Denoising score-matching loss on one batch, with parameter gradients.

    Draws one time per row (log-uniform) and standard normal noise, then
    regresses the score estimate on ``-eps / t``. The drawn ``t`` and
    ``eps`` are returned for inspection and replay.
    """
    x0 = as_matrix(x0_batch, "x0_batch")
    if x0.shape[0] == 0:
        raise ShapeError("empty batch")
    model = ScoreModel(params, preconditioned=preconditioned, sigma_data=sigma_data)
    t = sample_train_times(x0.shape[0], sched, rng)
    eps = rng.standard_normal(x0.shape)
    x_t = x0 + t[:, None] * eps
    score, cache, out_scale = model.forward_with_cache(x_t, t)
    loss, upstream = loss_from_output(score, eps, t, sched, loss_weights(t, weighting, sched))
    if not np.isfinite(loss):
        rows = ~np.isfinite(score).all(axis=1)
        bad = t[rows] if rows.any() else t
        raise NonFiniteError(f"non-finite score-matching loss; offending t values: {bad.tolist()}")
    grads = backward_from_cache(params, cache, upstream * out_scale[:, None])
    return LossResult(loss=loss, grads=grads, t=t, eps=eps)


def timestep_schedule(cfg: SamplerConfig, sched: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    """Descending times ``[t_M, ..., t_1, t_0]`` with ``t_M = T``, ``t_1 = t_min``, ``t_0 = 0``."""
    m = cfg.steps
    if m == 1:
        return np.array([sched.T, 0.0])
    inv = 1.0 / cfg.rho
    lo, hi = sched.t_min**inv, sched.T**inv
    frac = np.arange(m) / (m - 1)
    ladder = (lo + frac * (hi - lo)) ** cfg.rho
    ladder[0], ladder[-1] = sched.t_min, sched.T
    return np.concatenate([ladder[::-1], [0.0]])


def reverse_step(x_t, t: float, t_next: float, score, z):
    """One Euler-Maruyama step of the reverse SDE from ``t`` down to ``t_next``.

    With ``sigma(t) = t`` the drift is ``2 t score dt`` and the diffusion
    ``sqrt(2 t dt) z``.
    """
    if not 0.0 <= t_next < t:
        raise ValueError(f"need 0 <= t_next < t, got t={t}, t_next={t_next}")
    x_t = np.asarray(x_t, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if score.shape != x_t.shape or z.shape != x_t.shape:
        raise ShapeError(f"score {score.shape} / noise {z.shape} must match x {x_t.shape}")
    dt = t - t_next
    return x_t + (2.0 * t * dt) * score + np.sqrt(2.0 * t * dt) * z


def as_score_fn(model: Union[DenoiserParams, ScoreFn]) -> ScoreFn:
    """Accept trained params or any callable ``(x, t) -> score``."""
    if isinstance(model, DenoiserParams):
        return ScoreModel(model)
    if callable(model):
        return model
    raise TypeError(f"expected DenoiserParams or a callable, got {type(model).__name__}")


def sample_unconditional(model, sched: NoiseSchedule, cfg: SamplerConfig, n: int, d: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples by integrating the reverse SDE from the ``N(0, T^2 I)`` prior."""
    width = model.data_dim if isinstance(model, DenoiserParams) else getattr(
        getattr(model, "params", None), "data_dim", d)
    if width != d:
        raise ShapeError(f"network width {width} != requested d={d}")
    score_fn = as_score_fn(model)
    times = timestep_schedule(cfg, sched)
    x = sched.sigma(sched.T) * rng.standard_normal((n, d))
    for t, t_next in zip(times[:-1], times[1:]):
        score = score_fn(x, float(t))
        x = reverse_step(x, float(t), float(t_next), score, rng.standard_normal((n, d)))
    return x


def gaussian_score(mean, cov, sched: NoiseSchedule = NoiseSchedule()) -> ScoreFn:
    """Exact score of ``N(mean, cov)`` convolved with ``N(0, sigma(t)^2 I)``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    eye = np.eye(len(mean))

    def score(x, t):
        prec = np.linalg.inv(cov + sched.sigma(float(t)) ** 2 * eye)
        return -(x - mean) @ prec

    return score
