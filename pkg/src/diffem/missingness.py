"""Missing-value masks: MCAR, MAR and MNAR with calibrated ratios.

Masks are boolean arrays with True marking a missing cell.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CalibrationError
from .seeding import derive_rng

log = logging.getLogger(__name__)

MECHANISMS = ("MCAR", "MAR", "MNAR")


@dataclass(frozen=True)
class MaskSpec:
    mechanism: str = "MCAR"
    ratio: float = 0.3
    seed: int = 0
    observed_cols: tuple = ()
    ensure_observed: bool = True

    def __post_init__(self):
        mech = self.mechanism.upper()
        object.__setattr__(self, "mechanism", mech)
        object.__setattr__(self, "observed_cols", tuple(int(c) for c in self.observed_cols))
        if mech not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")
        if mech == "MAR" and not self.observed_cols:
            raise ValueError("MAR needs a nonempty observed_cols")

    def to_json(self) -> dict:
        d = asdict(self)
        d["observed_cols"] = list(self.observed_cols)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "MaskSpec":
        return cls(**obj)


def mcar(rows: int, cols: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Each entry missing independently with probability ``r``."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {r}")
    return rng.random((rows, cols)) < r


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _standardize(x):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=0)) / sd


def fit_intercept(logits: np.ndarray, r: float, tol: float = 1e-3, max_iter: int = 200) -> float:
    """Bisect ``b`` so that ``mean(sigmoid(logits + b)) == r`` within ``tol``."""
    lo, hi = -50.0 - logits.max(), 50.0 - logits.min()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p = _sigmoid(logits + mid).mean()
        if abs(p - r) <= tol * 1e-3:
            break
        if p < r:
            lo = mid
        else:
            hi = mid
    p = _sigmoid(logits + mid).mean()
    if abs(p - r) > tol:
        raise CalibrationError(f"intercept bisection reached ratio {p:.4f}, target {r:.4f}")
    return mid


def _logistic_mask(inputs, r, rng, weight_scale, n_out, seed_tag):
    base = int(rng.integers(0, 2**63 - 1))
    rows = inputs.shape[0]
    mask = np.zeros((rows, n_out), dtype=bool)
    for j in range(n_out):
        col_rng = derive_rng(base, seed_tag, j)
        w = weight_scale * col_rng.standard_normal(inputs.shape[1])
        logits = inputs @ w
        b = fit_intercept(logits, r)
        mask[:, j] = col_rng.random(rows) < _sigmoid(logits + b)
    return mask


def mar(data, r: float, observed_cols, rng: np.random.Generator, weight_scale: float = 1.0) -> np.ndarray:
    """Logistic missingness driven by fully observed columns.

    Columns in ``observed_cols`` are never masked. Every other column gets
    its own logistic model on the standardized observed columns, with
    weights ``N(0, weight_scale^2)`` and an intercept fitted so the
    expected missing ratio of the column is ``r``.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    observed = sorted(set(int(c) for c in observed_cols))
    if not observed or len(observed) >= d or min(observed) < 0 or max(observed) >= d:
        raise ValueError(f"observed_cols must be a nonempty proper subset of 0..{d - 1}, got {observed_cols}")
    maskable = [j for j in range(d) if j not in observed]
    mask = np.zeros((n, d), dtype=bool)
    mask[:, maskable] = _logistic_mask(_standardize(data[:, observed]), r, rng, weight_scale,
                                       len(maskable), "mar")
    return mask


def mnar(data, r: float, rng: np.random.Generator, weight_scale: float = 1.0) -> np.ndarray:
    """Logistic missingness driven by MCAR-masked inputs.

    A first MCAR mask at rate ``r`` hides inputs (set to 0 after
    standardization); each column is then masked by a logistic model over
    all the partially hidden columns, including itself, so missingness
    depends on values that may end up unobserved.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {r}")
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    self_mask = mcar(n, d, r, rng)
    inputs = np.where(self_mask, 0.0, _standardize(data))
    return _logistic_mask(inputs, r, rng, weight_scale, d, "mnar")


def ensure_observed(mask: np.ndarray, rng: np.random.Generator):
    """Unmask one random entry in every fully masked row; returns ``(mask, n_rows_fixed)``."""
    mask = np.array(mask, dtype=bool)
    full = np.flatnonzero(mask.all(axis=1))
    if len(full) and mask.shape[1]:
        keep = rng.integers(0, mask.shape[1], size=len(full))
        mask[full, keep] = False
    return mask, len(full)


def generate_mask(data, spec: MaskSpec) -> np.ndarray:
    """Mask for ``data`` following ``spec``; reproducible from ``spec.seed``."""
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    rng = derive_rng(spec.seed, "mask", spec.mechanism)
    if spec.mechanism == "MCAR":
        mask = mcar(n, d, spec.ratio, rng)
    elif spec.mechanism == "MAR":
        mask = mar(data, spec.ratio, spec.observed_cols, rng)
    else:
        mask = mnar(data, spec.ratio, rng)
    if spec.ensure_observed:
        mask, fixed = ensure_observed(mask, derive_rng(spec.seed, "mask-guard"))
        if fixed:
            log.info("kept one entry observed in %d fully masked row(s)", fixed)
    return mask


def write_mask_csv(mask, header, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in mask.astype(np.uint8):
            fh.write(",".join(map(str, row)) + "\n")


def read_mask_csv(path):
    """Return ``(mask, header)``."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    mask = np.array([[c == "1" for c in r] for r in rows], dtype=bool).reshape(len(rows), len(header))
    return mask, header


def write_mask_spec(spec: MaskSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_json(), fh, indent=2)
        fh.write("\n")
