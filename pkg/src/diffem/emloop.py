"""EM imputation: score-matching training (M-step), conditional inpainting
with sample averaging (E-step), and the loop that alternates them.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ndcore
from .diffusion import NoiseSchedule, SamplerConfig, ScoreModel, sm_loss, timestep_schedule
from .errors import NonFiniteError, ShapeError
from .ndcore import AdamState, DenoiserParams, adam_update, init_params, kernels
from .seeding import derive_rng
from .tabular import EncodedMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    K: int = 5
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-4
    hidden_dim: int = 1024
    sampler: SamplerConfig = SamplerConfig()
    schedule: NoiseSchedule = NoiseSchedule()
    seed: int = 0
    warm_start: bool = True
    early_stop_window: int = 50
    early_stop_tol: float = 1e-3
    weighting: str = "sigma2"
    preconditioned: bool = True
    sigma_data: float = 1.0
    block_rows: int = 512
    workers: int = 1

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.block_rows < 1 or self.workers < 1:
            raise ValueError("batch_size, block_rows and workers must be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EmConfig":
        obj = dict(obj)
        if "sampler" in obj:
            obj["sampler"] = SamplerConfig(**obj["sampler"])
        if "schedule" in obj:
            obj["schedule"] = NoiseSchedule(**obj["schedule"])
        return cls(**obj)

    def score_model(self, params: DenoiserParams) -> ScoreModel:
        return ScoreModel(params, preconditioned=self.preconditioned, sigma_data=self.sigma_data)


# --- M-step -----------------------------------------------------------------


def m_step(x_complete, cfg: EmConfig, params_init: DenoiserParams, rng: np.random.Generator,
           trace: Optional[list] = None) -> DenoiserParams:
    """Fit the score network to ``x_complete`` by mini-batch Adam.

    All entries are treated as observed. Training stops after
    ``cfg.epochs`` epochs, or earlier once the mean loss over the last
    ``early_stop_window`` epochs improves on the window before it by less
    than ``early_stop_tol`` (relative). Per-epoch mean losses are appended
    to ``trace`` when given.
    """
    x = x_complete.values if isinstance(x_complete, EncodedMatrix) else np.asarray(x_complete, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params_init.data_dim:
        raise ShapeError(f"data shape {x.shape} does not fit a network of width {params_init.data_dim}")
    params = params_init
    state = AdamState.create(params, lr=cfg.lr)
    n = x.shape[0]
    losses = []
    w = cfg.early_stop_window
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = x[order[start:start + cfg.batch_size]]
            try:
                res = sm_loss(params, batch, rng, cfg.schedule, weighting=cfg.weighting,
                              preconditioned=cfg.preconditioned, sigma_data=cfg.sigma_data)
                params, state = adam_update(params, res.grads, state)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"M-step diverged at epoch {epoch}; recent epoch losses {losses[-5:]}: {exc}"
                ) from exc
            total += res.loss * batch.shape[0]
        losses.append(total / n)
        if w and len(losses) >= 2 * w:
            recent = np.mean(losses[-w:])
            before = np.mean(losses[-2 * w:-w])
            if (before - recent) < cfg.early_stop_tol * abs(before):
                log.info("M-step early stop after %d epochs (loss %.5g)", epoch + 1, recent)
                break
    if trace is not None:
        trace.extend(losses)
    return params


# --- E-step -----------------------------------------------------------------


def _as_model(model, cfg: Optional[EmConfig] = None):
    if isinstance(model, DenoiserParams):
        return cfg.score_model(model) if cfg is not None else ScoreModel(model)
    return model


def inpaint_once(x_hat, mask, model, sched: NoiseSchedule, cfg: SamplerConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw one conditional completion of ``x_hat``.

    Starting from ``N(0, sigma(T)^2 I)``, every step noises the observed
    entries forward to the next time and moves the missing entries one
    reverse-SDE step; ``mask == 1`` marks missing entries. The final time is
    0, so observed entries come back exactly.
    """
    x_hat = np.ascontiguousarray(x_hat, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if x_hat.ndim != 2 or mask.shape != x_hat.shape:
        raise ShapeError(f"x_hat {x_hat.shape} and mask {mask.shape} must be equal 2-D shapes")
    score_fn = _as_model(model)
    shape = x_hat.shape
    times = timestep_schedule(cfg, sched)
    x = sched.sigma(sched.T) * rng.standard_normal(shape)
    for t, t_next in zip(times[:-1], times[1:]):
        t, t_next = float(t), float(t_next)
        for u in range(cfg.resample):
            score = score_fn(x, t)
            z = rng.standard_normal(shape)
            eps = rng.standard_normal(shape)
            x_next = kernels.inpaint_update(x, score, z, x_hat, eps, mask, t, t_next)
            if u < cfg.resample - 1:
                # jump back to t before repeating the step
                x = x_next + np.sqrt(t * t - t_next * t_next) * rng.standard_normal(shape)
        x = x_next
    # t_0 = 0 makes the forward branch the data itself
    return np.where(mask != 0.0, x, x_hat)


def _block_draws(x_hat, mask, model, sched, cfg, base_seed, block, rows):
    out = np.empty((cfg.repeats, len(rows), x_hat.shape[1]))
    for j in range(cfg.repeats):
        rng = derive_rng(base_seed, "block", block, "repeat", j)
        out[j] = inpaint_once(x_hat[rows], mask[rows], model, sched, cfg, rng)
    return out


def e_step(x_hat, mask, model, sched: NoiseSchedule, cfg: SamplerConfig, rng: np.random.Generator,
           *, block_rows: int = 512, workers: int = 1, return_draws: bool = False):
    """Average ``cfg.repeats`` conditional draws into new missing-entry estimates.

    Rows with a missing entry are processed in fixed blocks of
    ``block_rows`` with one random stream per (block, repetition), so the
    output does not depend on ``workers``. Observed entries are copied
    from ``x_hat`` unchanged. With ``return_draws`` the raw draws
    (``repeats x rows x dim``) are returned alongside; fully observed rows
    appear there as copies of ``x_hat``.
    """
    x_hat = np.ascontiguousarray(x_hat, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    if x_hat.ndim != 2 or mask.shape != x_hat.shape:
        raise ShapeError(f"x_hat {x_hat.shape} and mask {mask.shape} must be equal 2-D shapes")
    model = _as_model(model)
    base_seed = int(rng.integers(0, 2**63 - 1))
    # fully observed rows skip the sampler; blocks are cut from the
    # remaining rows, so their layout depends only on the mask
    needed = np.flatnonzero(mask.any(axis=1))
    blocks = [needed[s:s + block_rows] for s in range(0, len(needed), block_rows)]
    todo = list(enumerate(blocks))

    def run(item):
        b, rows = item
        return b, _block_draws(x_hat, mask, model, sched, cfg, base_seed, b, rows)

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run, todo))
    else:
        results = dict(map(run, todo))

    mean = x_hat.copy()
    draws = np.broadcast_to(x_hat, (cfg.repeats,) + x_hat.shape).copy() if return_draws else None
    for b, d in results.items():
        rows = blocks[b]
        mean[rows] = d.mean(axis=0)
        if return_draws:
            draws[:, rows] = d
    out = np.where(mask != 0.0, mean, x_hat)
    return (out, draws) if return_draws else out


# --- the loop ---------------------------------------------------------------


@dataclass
class EmState:
    x_k: EncodedMatrix
    params_k: Optional[DenoiserParams]
    k: int = 0
    history: list = field(default_factory=list)


@dataclass
class ImputationResult:
    imputed: EncodedMatrix
    snapshots: list
    params: Optional[DenoiserParams]
    loss_traces: list
    timings: list
    history: list

    @property
    def final(self) -> EncodedMatrix:
        return self.imputed


def _checkpoint_paths(directory: Path, k: int):
    stem = directory / f"iter_{k:03d}"
    return stem.with_suffix(".params.npz"), stem.with_suffix(".values.npy"), stem.with_suffix(".json")


def save_checkpoint(directory, state: EmState, loss_trace, timing) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p_path, v_path, j_path = _checkpoint_paths(directory, state.k)
    if state.params_k is not None:
        ndcore.save_params(state.params_k, p_path)
    np.save(v_path, state.x_k.values)
    with open(j_path, "w") as fh:
        json.dump({"k": state.k, "loss_trace": list(map(float, loss_trace)), "timing": timing,
                   "history": state.history}, fh)


def _latest_checkpoint(directory: Path, K: int):
    for k in range(K, 0, -1):
        paths = _checkpoint_paths(directory, k)
        if all(p.exists() for p in paths):
            return k
    return 0


def run_em(encoded: EncodedMatrix, cfg: EmConfig, *, checkpoint_dir=None, resume: bool = False,
           callback=None) -> ImputationResult:
    """Alternate M- and E-steps ``cfg.K`` times starting from ``encoded``.

    ``encoded`` must come from :func:`diffem.tabular.encode`, so missing
    entries start at 0. Every iterate is kept in ``snapshots`` (K + 1 of
    them, the first being the initialization). With ``checkpoint_dir`` the
    params and values after each iteration are saved, and ``resume=True``
    continues from the latest complete iteration found there. ``callback``
    is called as ``callback(k, encoded_k)`` after each iteration.
    """
    values0 = np.where(encoded.mask != 0.0, 0.0, encoded.values)
    state = EmState(x_k=encoded.with_values(values0), params_k=None)
    snapshots = [state.x_k]
    loss_traces, timings = [], []
    start_k = 0

    if checkpoint_dir is not None and resume:
        directory = Path(checkpoint_dir)
        start_k = _latest_checkpoint(directory, cfg.K)
        for k in range(1, start_k + 1):
            p_path, v_path, j_path = _checkpoint_paths(directory, k)
            with open(j_path) as fh:
                meta = json.load(fh)
            snapshots.append(encoded.with_values(np.load(v_path)))
            loss_traces.append(meta["loss_trace"])
            timings.append(meta["timing"])
            state.history = meta["history"]
        if start_k:
            state.params_k = ndcore.load_params(_checkpoint_paths(directory, start_k)[0])
            state.x_k = snapshots[-1]
            state.k = start_k
            log.info("resuming EM from iteration %d", start_k)

    d = encoded.shape[1]
    for k in range(start_k + 1, cfg.K + 1):
        if state.params_k is None or not cfg.warm_start:
            params_init = init_params(d, cfg.hidden_dim, derive_rng(cfg.seed, "init", k if not cfg.warm_start else 0))
        else:
            params_init = state.params_k
        trace = []
        t0 = time.perf_counter()
        params = m_step(state.x_k, cfg, params_init, derive_rng(cfg.seed, "mstep", k), trace)
        t1 = time.perf_counter()
        values = e_step(state.x_k.values, encoded.mask, cfg.score_model(params), cfg.schedule,
                        cfg.sampler, derive_rng(cfg.seed, "estep", k),
                        block_rows=cfg.block_rows, workers=cfg.workers)
        t2 = time.perf_counter()
        state = EmState(x_k=encoded.with_values(values), params_k=params, k=k, history=state.history)
        state.history.append({"k": k, "epochs": len(trace), "final_loss": float(trace[-1]) if trace else None})
        timing = {"m_step_s": t1 - t0, "e_step_s": t2 - t1}
        snapshots.append(state.x_k)
        loss_traces.append(trace)
        timings.append(timing)
        log.info("EM iteration %d/%d: %d epochs, loss %s, %.1fs", k, cfg.K, len(trace),
                 state.history[-1]["final_loss"], t2 - t0)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, state, trace, timing)
        if callback is not None:
            callback(k, state.x_k)

    return ImputationResult(
        imputed=state.x_k, snapshots=snapshots, params=state.params_k,
        loss_traces=loss_traces, timings=timings, history=state.history,
    )


def impute_out_of_sample(params, test_encoded: EncodedMatrix, cfg: EmConfig,
                         rng: np.random.Generator) -> EncodedMatrix:
    """Fill missing test entries with one E-step under frozen ``params``.

    ``test_encoded`` must be encoded against the training split
    (``encode(test, reference=train_encoded)``).
    """
    model = _as_model(params, cfg)
    values0 = np.where(test_encoded.mask != 0.0, 0.0, test_encoded.values)
    values = e_step(values0, test_encoded.mask, model, cfg.schedule, cfg.sampler, rng,
                    block_rows=cfg.block_rows, workers=cfg.workers)
    return test_encoded.with_values(values)
