"""Imputation metrics, train/test splits, and synthetic benchmarks with
closed-form conditional-mean oracles.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError
from .seeding import derive_rng
from .tabular import CATEGORICAL, NUMERIC, TabularDataset, from_matrix, numeric_matrix


def _masked_diffs(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(mask) != 0
    if pred.shape != truth.shape or mask.shape != pred.shape:
        raise ShapeError(f"shapes differ: pred {pred.shape}, truth {truth.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("no masked entries to evaluate")
    return (pred - truth)[mask]


def mae(pred, truth, mask) -> float:
    """Mean absolute error over entries where ``mask`` is nonzero."""
    return float(np.mean(np.abs(_masked_diffs(pred, truth, mask))))


def rmse(pred, truth, mask) -> float:
    """Root mean squared error over entries where ``mask`` is nonzero."""
    diff = _masked_diffs(pred, truth, mask)
    return float(np.sqrt(np.mean(diff * diff)))


def accuracy(pred_ds: TabularDataset, truth_ds: TabularDataset, mask) -> float:
    """Share of masked categorical cells whose category matches the truth."""
    mask = np.asarray(mask, dtype=bool)
    hits = total = 0
    for j, spec in enumerate(truth_ds.specs):
        if spec.kind != CATEGORICAL:
            continue
        rows = mask[:, j]
        total += int(rows.sum())
        hits += int(np.sum(np.asarray(pred_ds.columns[j], dtype=object)[rows]
                           == np.asarray(truth_ds.columns[j], dtype=object)[rows]))
    if total == 0:
        raise ValueError("no masked categorical cells to evaluate")
    return hits / total


@dataclass
class MetricReport:
    mae: Optional[float]
    rmse: Optional[float]
    accuracy: Optional[float]
    n_numeric: int
    n_categorical: int
    space: str = "standardized"
    per_column: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def evaluate(pred_ds: TabularDataset, truth_ds: TabularDataset, mask, means=None, stds=None,
             space: str = "standardized") -> MetricReport:
    """Metrics over masked cells only.

    Numeric errors are divided by the per-column ``stds`` in the default
    standardized space (``means`` cancel in differences and are accepted
    for symmetry). With ``space="raw"`` errors stay in data units. When no
    ``stds`` are given, they are computed from the truth's unmasked cells.
    """
    if space not in ("standardized", "raw"):
        raise ValueError(f"space must be 'standardized' or 'raw', got {space!r}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (truth_ds.n_rows, len(truth_ds.specs)) or pred_ds.n_rows != truth_ds.n_rows:
        raise ShapeError("prediction, truth and mask shapes differ")
    if pred_ds.names != truth_ds.names:
        raise ShapeError(f"column names differ: {pred_ds.names} vs {truth_ds.names}")
    if not mask.any():
        raise ValueError("mask has no missing entries; nothing to evaluate")
    pred_m = numeric_matrix(pred_ds)
    truth_m = numeric_matrix(truth_ds)
    per_column = {}
    abs_errs, sq_errs = [], []
    n_cat = hits = 0
    for j, spec in enumerate(truth_ds.specs):
        rows = mask[:, j]
        if not rows.any():
            continue
        if spec.kind == NUMERIC:
            if stds is not None:
                scale = float(stds[j])
            else:
                ref = truth_m[~mask[:, j], j]
                ref = ref[np.isfinite(ref)]
                scale = float(ref.std()) if ref.size > 1 and ref.std() > 0 else 1.0
            diff = pred_m[rows, j] - truth_m[rows, j]
            if space == "standardized":
                diff = diff / scale
            abs_errs.append(np.abs(diff))
            sq_errs.append(diff * diff)
            per_column[spec.name] = {
                "mae": float(np.mean(np.abs(diff))),
                "rmse": float(np.sqrt(np.mean(diff * diff))),
                "count": int(rows.sum()),
            }
        else:
            ok = np.asarray(pred_ds.columns[j], dtype=object)[rows] == np.asarray(truth_ds.columns[j], dtype=object)[rows]
            per_column[spec.name] = {"accuracy": float(np.mean(ok)), "count": int(rows.sum())}
            n_cat += int(rows.sum())
            hits += int(ok.sum())
    n_num = int(sum(a.size for a in abs_errs))
    return MetricReport(
        mae=float(np.mean(np.concatenate(abs_errs))) if n_num else None,
        rmse=float(np.sqrt(np.mean(np.concatenate(sq_errs)))) if n_num else None,
        accuracy=hits / n_cat if n_cat else None,
        n_numeric=n_num,
        n_categorical=n_cat,
        space=space,
        per_column=per_column,
    )


def split_indices(n: int, fraction: float, seed: int):
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = int(math.floor(n * fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {fraction} leaves one side empty")
    order = derive_rng(seed, "split").permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_train_test(ds: TabularDataset, fraction: float = 0.7, seed: int = 0):
    """Seeded shuffle split; ``floor(n * fraction)`` rows go to training."""
    train_idx, test_idx = split_indices(ds.n_rows, fraction, seed)
    return ds.take(train_idx), ds.take(test_idx)


# --- synthetic benchmarks ---------------------------------------------------


def equicorrelation(dim: int, rho: float) -> np.ndarray:
    return (1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim))


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian or Gaussian-mixture benchmark.

    ``means`` is ``(components, dim)`` and ``covs`` ``(components, dim,
    dim)``; when omitted, a single zero-mean component with unit variances
    and pairwise correlation ``correlation`` is used.
    """

    family: str = "gaussian"
    dim: int = 2
    rows: int = 5000
    seed: int = 0
    correlation: float = 0.8
    means: Optional[tuple] = None
    covs: Optional[tuple] = None
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in ("gaussian", "gaussian-mixture"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.dim < 1 or self.rows < 1:
            raise ValueError("dim and rows must be >= 1")
        means, covs, weights = self.components()
        if self.family == "gaussian" and len(weights) != 1:
            raise ValueError("the gaussian family has exactly one component")
        if means.shape != (len(weights), self.dim) or covs.shape != (len(weights), self.dim, self.dim):
            raise ValueError("means/covs shapes do not match dim and component count")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {weights.tolist()}")
        for c in covs:
            if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
                raise ValueError("covariance must be symmetric positive definite")

    def components(self):
        if self.means is None:
            means = np.zeros((1, self.dim))
        else:
            means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k = means.shape[0]
        if self.covs is None:
            covs = np.stack([equicorrelation(self.dim, self.correlation)] * k)
        else:
            covs = np.asarray(self.covs, dtype=np.float64).reshape(k, self.dim, self.dim)
        weights = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        return means, covs, weights

    def to_json(self) -> dict:
        means, covs, weights = self.components()
        return {"family": self.family, "dim": self.dim, "rows": self.rows, "seed": self.seed,
                "correlation": self.correlation, "means": means.tolist(), "covs": covs.tolist(),
                "weights": weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        obj = dict(obj)
        for key in ("means", "covs", "weights"):
            if obj.get(key) is not None:
                obj[key] = tuple(map(tuple, np.asarray(obj[key]).reshape(len(obj[key]), -1).tolist())) \
                    if key != "weights" else tuple(obj[key])
        return cls(**obj)


@dataclass(frozen=True)
class GaussianOracle:
    """Closed-form conditionals of a Gaussian mixture."""

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray

    def conditional_mean(self, x, mask) -> np.ndarray:
        """``E[x_mis | x_obs]`` per row; observed entries pass through."""
        x = np.asarray(x, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        out = x.copy()
        patterns = {}
        for i, row in enumerate(mask):
            patterns.setdefault(row.tobytes(), []).append(i)
        for key, rows in patterns.items():
            miss = np.frombuffer(key, dtype=bool)
            if not miss.any():
                continue
            obs = ~miss
            xo = x[np.ix_(rows, obs)]
            log_w, cond = [], []
            for mu, cov, w in zip(self.means, self.covs, self.weights):
                s_oo = cov[np.ix_(obs, obs)]
                s_mo = cov[np.ix_(miss, obs)]
                if obs.any():
                    diff = xo - mu[obs]
                    sol = np.linalg.solve(s_oo, diff.T).T
                    _, logdet = np.linalg.slogdet(s_oo)
                    ll = -0.5 * np.sum(diff * sol, axis=1) - 0.5 * logdet
                    cond.append(mu[miss] + sol @ s_mo.T)
                else:
                    ll = np.zeros(len(rows))
                    cond.append(np.broadcast_to(mu[miss], (len(rows), miss.sum())))
                log_w.append(np.log(w) + ll)
            log_w = np.array(log_w)
            resp = np.exp(log_w - log_w.max(axis=0))
            resp /= resp.sum(axis=0)
            out[np.ix_(rows, miss)] = np.einsum("kr,krm->rm", resp, np.array(cond))
        return out

    def residual_std(self, j: int) -> float:
        """Std of column ``j`` given all others (single-component case)."""
        if len(self.weights) != 1:
            raise ValueError("residual std is closed-form only for a single Gaussian")
        cov = self.covs[0]
        rest = [k for k in range(cov.shape[0]) if k != j]
        if not rest:
            return float(np.sqrt(cov[j, j]))
        s = cov[j, j] - cov[j, rest] @ np.linalg.solve(cov[np.ix_(rest, rest)], cov[rest, j])
        return float(np.sqrt(s))

    def oracle_mae(self, j: int = -1) -> float:
        """MAE of the conditional mean for one missing column given the rest: ``s * sqrt(2 / pi)``."""
        j = j % self.means.shape[1]
        return self.residual_std(j) * math.sqrt(2.0 / math.pi)

    def to_json(self) -> dict:
        out = {"means": self.means.tolist(), "covs": self.covs.tolist(), "weights": self.weights.tolist()}
        if len(self.weights) == 1:
            d = self.means.shape[1]
            out["residual_std"] = [self.residual_std(j) for j in range(d)]
            out["oracle_mae"] = [self.oracle_mae(j) for j in range(d)]
        return out


def synth_generate(spec: SyntheticSpec):
    """Sample ``spec.rows`` rows; returns ``(dataset, oracle)``."""
    means, covs, weights = spec.components()
    rng = derive_rng(spec.seed, "synth")
    comp = rng.choice(len(weights), size=spec.rows, p=weights)
    chol = np.linalg.cholesky(covs)
    z = rng.standard_normal((spec.rows, spec.dim))
    x = means[comp] + np.einsum("nij,nj->ni", chol[comp], z)
    return from_matrix(x), GaussianOracle(means, covs, weights)
