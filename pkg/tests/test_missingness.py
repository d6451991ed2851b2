import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from diffem.errors import CalibrationError
from diffem.missingness import (
    MaskSpec,
    ensure_observed,
    fit_intercept,
    generate_mask,
    mar,
    mcar,
    mnar,
    read_mask_csv,
    write_mask_csv,
    write_mask_spec,
)


def correlated(n=10_000, d=8, rho=0.7, seed=0):
    rng = np.random.default_rng(seed)
    cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
    return rng.multivariate_normal(np.zeros(d), cov, size=n)


class TestMcar:
    def test_extremes(self):
        rng = np.random.default_rng(0)
        assert not mcar(50, 4, 0.0, rng).any()
        assert mcar(50, 4, 1.0, rng).all()

    def test_ratio(self):
        m = mcar(10_000, 8, 0.3, np.random.default_rng(1))
        assert abs(m.mean() - 0.3) <= 0.01

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            mcar(2, 2, 1.5, np.random.default_rng(0))

    def test_independent_of_data(self):
        x = correlated(seed=2)
        m = generate_mask(x, MaskSpec("MCAR", 0.3, seed=5, ensure_observed=False))
        m2 = generate_mask(x * 100 + 7, MaskSpec("MCAR", 0.3, seed=5, ensure_observed=False))
        np.testing.assert_array_equal(m, m2)


class TestIntercept:
    def test_constant_logits(self):
        b = fit_intercept(np.zeros(100), 0.3)
        assert 1 / (1 + np.exp(-b)) == pytest.approx(0.3, abs=1e-3)

    def test_calibration_failure(self):
        # a mean of sigmoids never exceeds 1
        with pytest.raises(CalibrationError):
            fit_intercept(np.zeros(10), 1.5)


class TestMar:
    def test_observed_columns_untouched_and_ratio(self):
        x = correlated(seed=3)
        m = mar(x, 0.3, [0, 3], np.random.default_rng(4))
        assert not m[:, [0, 3]].any()
        maskable = [j for j in range(8) if j not in (0, 3)]
        assert abs(m[:, maskable].mean() - 0.3) <= 0.01

    def test_zero_weights_reduce_to_mcar(self):
        x = correlated(seed=3)
        m = mar(x, 0.3, [0], np.random.default_rng(5), weight_scale=0.0)
        # with constant logits, missingness cannot depend on the observed column
        q = np.digitize(x[:, 0], np.quantile(x[:, 0], [0.25, 0.5, 0.75]))
        table = np.array([[np.sum((q == k) & m[:, 1]), np.sum((q == k) & ~m[:, 1])] for k in range(4)])
        assert chi2_contingency(table)[1] > 0.001
        assert abs(m[:, 1:].mean() - 0.3) <= 0.01

    def test_depends_on_observed(self):
        x = correlated(seed=6)
        m = mar(x, 0.3, [0], np.random.default_rng(7))
        q = np.digitize(x[:, 0], np.quantile(x[:, 0], [0.25, 0.5, 0.75]))
        table = np.array([[np.sum((q == k) & m[:, 1]), np.sum((q == k) & ~m[:, 1])] for k in range(4)])
        assert chi2_contingency(table)[1] < 0.01

    @pytest.mark.parametrize("cols", [[], [0, 1, 2, 3, 4, 5, 6, 7], [9]])
    def test_observed_cols_validated(self, cols):
        with pytest.raises(ValueError):
            mar(correlated(100), 0.3, cols, np.random.default_rng(0))

    def test_spec_requires_cols(self):
        with pytest.raises(ValueError):
            MaskSpec("MAR", 0.3)


class TestMnar:
    def test_ratio(self):
        m = mnar(correlated(seed=8), 0.3, np.random.default_rng(9))
        assert abs(m.mean() - 0.3) <= 0.01

    def test_depends_on_data(self):
        x = correlated(seed=10)
        m = mnar(x, 0.3, np.random.default_rng(11))
        rejections = 0
        for j in range(8):
            q = np.digitize(x[:, j], np.quantile(x[:, j], [0.25, 0.5, 0.75]))
            table = np.array([[np.sum((q == k) & m[:, j]), np.sum((q == k) & ~m[:, j])] for k in range(4)])
            rejections += chi2_contingency(table)[1] < 0.01
        assert rejections >= 6

    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            mnar(correlated(10), 1.0, np.random.default_rng(0))


class TestGenerate:
    @pytest.mark.parametrize("spec", [MaskSpec("MCAR", 0.3, 1), MaskSpec("MAR", 0.3, 1, (2,)), MaskSpec("mnar", 0.3, 1)])
    def test_seed_determinism(self, spec):
        x = correlated(500, seed=12)
        np.testing.assert_array_equal(generate_mask(x, spec), generate_mask(x, spec))

    def test_different_seeds_differ(self):
        x = correlated(500, seed=12)
        assert not np.array_equal(generate_mask(x, MaskSpec(seed=1)), generate_mask(x, MaskSpec(seed=2)))

    def test_guard_keeps_one_per_row(self):
        x = correlated(2000, d=2, seed=13)
        m = generate_mask(x, MaskSpec("MCAR", 0.6, seed=3))
        assert not m.all(axis=1).any()

    def test_guard_can_be_disabled(self):
        m = generate_mask(np.zeros((5, 3)), MaskSpec("MCAR", 1.0, seed=0, ensure_observed=False))
        assert m.all()

    def test_raw_mcar_unguarded(self):
        assert mcar(3, 2, 1.0, np.random.default_rng(0)).all()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6), st.floats(0.0, 1.0))
    def test_ensure_observed_property(self, seed, d, r):
        rng = np.random.default_rng(seed)
        m0 = rng.random((40, d)) < r
        m, fixed = ensure_observed(m0, rng)
        assert not m.all(axis=1).any()
        assert fixed == int(m0.all(axis=1).sum())
        # only fully masked rows change, and by exactly one cell
        changed = (m != m0).sum(axis=1)
        assert np.all(changed[~m0.all(axis=1)] == 0)
        assert np.all(changed[m0.all(axis=1)] == 1)


def test_mask_file_round_trip(tmp_path):
    m = mcar(7, 3, 0.5, np.random.default_rng(0))
    write_mask_csv(m, ["a", "b", "c"], tmp_path / "m.csv")
    back, header = read_mask_csv(tmp_path / "m.csv")
    assert header == ["a", "b", "c"]
    np.testing.assert_array_equal(back, m)
    write_mask_spec(MaskSpec("MAR", 0.2, 4, (0,)), tmp_path / "m.json")
    assert '"observed_cols": [\n    0\n  ]' in (tmp_path / "m.json").read_text()
