import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import multivariate_normal

from diffem.errors import ShapeError
from diffem.evalkit import (
    GaussianOracle,
    SyntheticSpec,
    accuracy,
    evaluate,
    mae,
    rmse,
    split_indices,
    split_train_test,
    synth_generate,
)
from diffem.tabular import CATEGORICAL, NUMERIC, ColumnSpec, TabularDataset, from_matrix


class TestMetrics:
    def test_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        m = np.ones_like(x, dtype=bool)
        assert mae(x, x, m) == 0.0 and rmse(x, x, m) == 0.0

    def test_hand_fixture(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        truth = np.array([[1.0, 0.0], [0.0, 4.0], [5.0, 7.0]])
        mask = np.array([[0, 1], [1, 0], [0, 1]], dtype=bool)
        # errors on masked cells: 2, 3, 1
        assert mae(pred, truth, mask) == pytest.approx(2.0)
        assert rmse(pred, truth, mask) == pytest.approx(math.sqrt(14 / 3))

    def test_only_masked_cells_count(self):
        pred = np.array([[100.0, 1.0]])
        assert mae(pred, np.zeros((1, 2)), np.array([[False, True]])) == 1.0

    def test_empty_mask(self):
        with pytest.raises(ValueError, match="no masked"):
            mae(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmse(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2), bool))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
    def test_rmse_at_least_mae(self, errs):
        e = np.array(errs)[:, None]
        m = np.ones_like(e, dtype=bool)
        assert rmse(e, np.zeros_like(e), m) >= mae(e, np.zeros_like(e), m) - 1e-9


def cat_ds(values, missing=None):
    spec = ColumnSpec("c", CATEGORICAL, ("a", "b", "c"))
    n = len(values)
    return TabularDataset([spec], [np.array(values, dtype=object)],
                          np.zeros((n, 1), bool) if missing is None else missing)


class TestEvaluate:
    def test_perfect(self):
        ds = cat_ds(["a", "b", "c"])
        assert accuracy(ds, ds, np.ones((3, 1), bool)) == 1.0

    def test_accuracy_hand(self):
        m = np.array([[True], [True], [False]])
        assert accuracy(cat_ds(["a", "a", "c"]), cat_ds(["a", "b", "b"]), m) == 0.5

    def test_mixed_report(self):
        specs = [ColumnSpec("x", NUMERIC), ColumnSpec("c", CATEGORICAL, ("a", "b"))]
        truth = TabularDataset(specs, [np.array([0.0, 2.0, 4.0]), np.array(["a", "b", "a"], dtype=object)],
                               np.zeros((3, 2), bool))
        pred = TabularDataset(specs, [np.array([0.0, 3.0, 4.0]), np.array(["a", "a", "a"], dtype=object)],
                              np.zeros((3, 2), bool))
        mask = np.array([[False, True], [True, True], [False, False]])
        rep = evaluate(pred, truth, mask, stds=[2.0, 1.0])
        assert rep.mae == pytest.approx(0.5) and rep.rmse == pytest.approx(0.5)
        assert rep.accuracy == 0.5
        assert rep.n_numeric == 1 and rep.n_categorical == 2
        raw = evaluate(pred, truth, mask, space="raw")
        assert raw.mae == pytest.approx(1.0)
        assert set(rep.to_json()) == {"mae", "rmse", "accuracy", "n_numeric", "n_categorical", "space", "per_column"}

    def test_default_std_from_truth_observed(self):
        truth = from_matrix(np.array([[0.0], [2.0], [9.0]]))
        pred = from_matrix(np.array([[0.0], [2.0], [10.0]]))
        rep = evaluate(pred, truth, np.array([[False], [False], [True]]))
        assert rep.mae == pytest.approx(1.0)  # observed {0, 2} has std 1

    def test_empty_mask_rejected(self):
        ds = from_matrix(np.zeros((2, 1)))
        with pytest.raises(ValueError, match="nothing to evaluate"):
            evaluate(ds, ds, np.zeros((2, 1), bool))

    def test_column_names_checked(self):
        a = from_matrix(np.zeros((2, 1)), names=["a"])
        b = from_matrix(np.zeros((2, 1)), names=["b"])
        with pytest.raises(ShapeError):
            evaluate(a, b, np.ones((2, 1), bool))


class TestSplit:
    def test_sizes_and_partition(self):
        tr, te = split_indices(10, 0.7, seed=1)
        assert len(tr) == 7 and len(te) == 3
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(10))

    def test_deterministic(self):
        a = split_indices(100, 0.7, 3)
        b = split_indices(100, 0.7, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_indices(10, 1.0, 0)
        with pytest.raises(ValueError):
            split_indices(2, 0.1, 0)

    def test_split_dataset(self):
        ds = from_matrix(np.arange(20.0).reshape(10, 2))
        tr, te = split_train_test(ds, 0.7, 0)
        assert tr.n_rows == 7 and te.n_rows == 3


class TestSynthetic:
    def test_shape_and_correlation(self):
        ds, oracle = synth_generate(SyntheticSpec(rows=5000, seed=1))
        x = np.column_stack(ds.columns)
        assert x.shape == (5000, 2)
        assert abs(np.corrcoef(x.T)[0, 1] - 0.8) <= 0.03

    def test_oracle_constants(self):
        _, oracle = synth_generate(SyntheticSpec())
        assert oracle.residual_std(1) == pytest.approx(0.6)
        assert oracle.oracle_mae(1) == pytest.approx(0.6 * math.sqrt(2 / math.pi))
        assert oracle.to_json()["residual_std"] == pytest.approx([0.6, 0.6])

    def test_gaussian_conditional_mean(self):
        oracle = GaussianOracle(np.zeros((1, 2)), np.array([[[1.0, 0.8], [0.8, 1.0]]]), np.ones(1))
        x = np.array([[1.0, 99.0], [99.0, -0.5]])
        mask = np.array([[False, True], [True, False]])
        np.testing.assert_allclose(oracle.conditional_mean(x, mask), [[1.0, 0.8], [-0.4, -0.5]])

    def test_fully_masked_row_gets_mean(self):
        oracle = GaussianOracle(np.array([[1.0, 2.0]]), np.array([np.eye(2)]), np.ones(1))
        np.testing.assert_allclose(oracle.conditional_mean(np.zeros((1, 2)), np.ones((1, 2), bool)), [[1.0, 2.0]])

    def test_empirical_oracle_mae(self):
        ds, oracle = synth_generate(SyntheticSpec(rows=20_000, seed=4))
        x = np.column_stack(ds.columns)
        mask = np.zeros_like(x, dtype=bool)
        mask[:, 1] = True
        pred = oracle.conditional_mean(x, mask)
        assert mae(pred, x, mask) == pytest.approx(oracle.oracle_mae(1), rel=0.02)

    def test_mixture_matches_quadrature(self):
        means = np.array([[-1.5, 1.0], [2.0, -0.5]])
        covs = np.array([[[1.0, 0.6], [0.6, 1.0]], [[0.5, -0.2], [-0.2, 0.8]]])
        weights = np.array([0.3, 0.7])
        oracle = GaussianOracle(means, covs, weights)
        comps = [multivariate_normal(m, c) for m, c in zip(means, covs)]

        def density(x1, x2):
            return sum(w * c.pdf([x1, x2]) for w, c in zip(weights, comps))

        for x1 in (-2.0, 0.0, 0.7, 3.0):
            num = quad(lambda v: v * density(x1, v), -np.inf, np.inf, epsabs=1e-12)[0]
            den = quad(lambda v: density(x1, v), -np.inf, np.inf, epsabs=1e-12)[0]
            got = oracle.conditional_mean(np.array([[x1, 0.0]]), np.array([[False, True]]))[0, 1]
            assert got == pytest.approx(num / den, abs=1e-7)

    def test_mixture_spec_round_trip(self):
        spec = SyntheticSpec("gaussian-mixture", dim=2, means=((0.0, 0.0), (3.0, 3.0)),
                             covs=(((1.0, 0.0), (0.0, 1.0)), ((1.0, 0.5), (0.5, 1.0))), weights=(0.5, 0.5))
        again = SyntheticSpec.from_json(spec.to_json())
        assert again.to_json() == spec.to_json()

    @pytest.mark.parametrize("kwargs", [
        {"correlation": 1.5},
        {"family": "uniform"},
        {"family": "gaussian-mixture", "means": ((0.0,), (1.0,)), "dim": 1, "weights": (0.9, 0.9)},
        {"covs": (((1.0, 2.0), (2.0, 1.0)),)},
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticSpec(**kwargs)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_seeded(self, seed):
        a, _ = synth_generate(SyntheticSpec(rows=20, seed=seed))
        b, _ = synth_generate(SyntheticSpec(rows=20, seed=seed))
        assert all(np.array_equal(x, y) for x, y in zip(a.columns, b.columns))
