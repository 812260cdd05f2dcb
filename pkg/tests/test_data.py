import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixed_scglr import (
    Dataset,
    FamilySpec,
    Weighting,
    build_indicator,
    gaussian_family,
    load_dataset,
    poisson_family,
    standardize,
)


class TestStandardize:
    def test_single_column(self):
        X = np.array([[1.0], [2.0], [3.0]])
        Xs, centers, scales = standardize(X)
        w = np.full(3, 1 / 3)
        assert abs(w @ Xs[:, 0]) < 1e-12
        assert abs(w @ Xs[:, 0] ** 2 - 1.0) < 1e-12
        assert centers[0] == pytest.approx(2.0)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((20, 3))
        Xs, _, _ = standardize(X)
        Xs2, centers2, scales2 = standardize(Xs)
        assert np.abs(centers2).max() < 1e-12
        assert np.abs(scales2 - 1.0).max() < 1e-12
        assert np.abs(Xs2 - Xs).max() < 1e-12

    def test_weighted_moments_independent_loop(self):
        # oracle: recompute weighted moments column by column with plain loops
        rng = np.random.default_rng(2)
        X = rng.standard_normal((10, 3)) * np.array([2.0, 0.5, 7.0]) + 1.5
        w = rng.uniform(0.5, 2.0, 10)
        w = w / w.sum()
        Xs, _, _ = standardize(X, w)
        for j in range(3):
            mean = sum(w[i] * Xs[i, j] for i in range(10))
            var = sum(w[i] * Xs[i, j] ** 2 for i in range(10))
            assert abs(mean) < 1e-12
            assert abs(var - 1.0) < 1e-10

    def test_constant_column_rejected(self):
        X = np.ones((5, 2))
        X[:, 0] = np.arange(5)
        with pytest.raises(ValueError, match="column 1"):
            standardize(X)

    @settings(max_examples=25, deadline=None)
    @given(
        arrays(
            np.float64,
            (8, 2),
            elements=st.floats(-50, 50, allow_nan=False),
        )
    )
    def test_double_standardize_is_identity(self, X):
        if np.any(X.var(axis=0) < 1e-6):
            return
        Xs, _, _ = standardize(X)
        Xs2, _, _ = standardize(Xs)
        assert np.abs(Xs2 - Xs).max() < 1e-10


class TestIndicator:
    def test_definition(self):
        U = build_indicator(np.array([1, 1, 2]))
        assert np.array_equal(U, np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))

    def test_balanced_kronecker_form(self):
        groups = np.repeat(np.arange(1, 11), 10)
        U = build_indicator(groups, 10)
        assert np.array_equal(U, np.kron(np.eye(10), np.ones((10, 1))))

    def test_column_sums_are_group_sizes(self):
        groups = np.array([1, 2, 2, 3, 3, 3])
        U = build_indicator(groups)
        assert np.array_equal(U.sum(axis=0), np.array([1.0, 2.0, 3.0]))

    def test_empty_group_named(self):
        with pytest.raises(ValueError, match="group 2"):
            build_indicator(np.array([1, 1, 3]), n_groups=3)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=4, max_size=30))
    def test_row_sums_one(self, labels):
        labels = np.array(labels)
        present = np.unique(labels)
        relabeled = np.searchsorted(present, labels) + 1
        U = build_indicator(relabeled)
        assert np.array_equal(U.sum(axis=1), np.ones(len(labels)))


class TestWeighting:
    def test_default_sums_to_one(self):
        wt = Weighting.default(10)
        assert wt.w.sum() == pytest.approx(1.0)
        assert wt.A is None

    def test_custom_weights_normalised(self):
        wt = Weighting(np.array([1.0, 3.0]))
        assert wt.w.sum() == pytest.approx(1.0)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            Weighting(np.array([0.5, -0.1]))

    def test_non_spd_metric_rejected(self):
        A = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(ValueError, match="positive definite"):
            Weighting(np.ones(3) / 3, A)

    def test_asymmetric_metric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            Weighting(np.ones(3) / 3, np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestFamilies:
    def test_poisson_dispersion_fixed(self):
        with pytest.raises(ValueError):
            FamilySpec("poisson", 2.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            FamilySpec("binomial")

    def test_links(self):
        fam = poisson_family()
        assert fam.inverse_link(np.array([0.0]))[0] == pytest.approx(1.0)
        assert fam.link_derivative(np.array([4.0]))[0] == pytest.approx(0.25)
        assert fam.conditional_variance(np.array([4.0]), 1.0)[0] == pytest.approx(4.0)
        gauss = gaussian_family(2.0)
        assert gauss.conditional_variance(np.array([1.0]), 2.0)[0] == pytest.approx(2.0)


class TestDatasetValidation:
    def test_missing_values_rejected(self, gaussian_dataset):
        Y = gaussian_dataset.Y.copy()
        Y[0, 0] = np.nan
        with pytest.raises(ValueError, match="missing"):
            Dataset(
                Y=Y,
                X=gaussian_dataset.X,
                T=gaussian_dataset.T,
                groups=gaussian_dataset.groups,
                families=list(gaussian_dataset.families),
            )

    def test_constant_x_column_rejected(self, gaussian_dataset):
        X = gaussian_dataset.X.copy()
        X[:, 2] = 5.0
        with pytest.raises(ValueError, match="column 2"):
            Dataset(
                Y=gaussian_dataset.Y,
                X=X,
                T=gaussian_dataset.T,
                groups=gaussian_dataset.groups,
                families=list(gaussian_dataset.families),
            )

    def test_needs_two_groups(self):
        with pytest.raises(ValueError, match="two groups"):
            Dataset(
                Y=np.ones((3, 1)) + np.arange(3)[:, None],
                X=np.arange(3, dtype=float)[:, None],
                T=np.zeros((3, 0)),
                groups=np.array([1, 1, 1]),
                families=[gaussian_family()],
            )

    def test_poisson_negative_rejected(self):
        with pytest.raises(ValueError, match="poisson"):
            Dataset(
                Y=np.array([[-1.0], [2.0], [3.0], [4.0]]),
                X=np.arange(4, dtype=float)[:, None],
                T=np.zeros((4, 0)),
                groups=np.array([1, 1, 2, 2]),
                families=[poisson_family()],
            )


class TestCsvIngestion:
    def _write(self, tmp_path, rows, roles):
        data = tmp_path / "data.csv"
        data.write_text("\n".join(",".join(map(str, r)) for r in rows) + "\n")
        roles_path = tmp_path / "roles.json"
        roles_path.write_text(json.dumps(roles))
        return data, roles_path

    def test_roundtrip(self, tmp_path):
        rows = [
            ["y", "x1", "x2", "t1", "site", "junk"],
            [1.5, 0.1, 2.0, 1.0, "a", "zzz"],
            [2.5, 0.7, 1.0, 0.0, "a", "zzz"],
            [0.5, -0.3, 0.5, 1.0, "b", "zzz"],
            [1.0, 0.9, 1.5, 0.0, "b", "zzz"],
        ]
        roles = {
            "responses": {"y": "gaussian"},
            "x": ["x1", "x2"],
            "t": ["t1"],
            "group": "site",
        }
        data, roles_path = self._write(tmp_path, rows, roles)
        ds = load_dataset(data, roles_path)
        assert ds.n == 4 and ds.p == 2 and ds.r == 1 and ds.n_groups == 2
        assert ds.group_labels == ["a", "b"]
        assert ds.Y[1, 0] == pytest.approx(2.5)

    def test_missing_column_reported(self, tmp_path):
        rows = [["y", "x1", "site"], [1, 0.3, "a"], [2, 0.5, "b"]]
        roles = {"responses": {"y": "gaussian"}, "x": ["x1", "x9"], "group": "site"}
        data, roles_path = self._write(tmp_path, rows, roles)
        with pytest.raises(ValueError, match="x9"):
            load_dataset(data, roles_path)

    def test_bad_family_rejected(self, tmp_path):
        rows = [["y", "x1", "site"], [1, 0.3, "a"], [2, 0.5, "b"]]
        roles = {"responses": {"y": "gamma"}, "x": ["x1"], "group": "site"}
        data, roles_path = self._write(tmp_path, rows, roles)
        with pytest.raises(ValueError, match="family"):
            load_dataset(data, roles_path)

    def test_non_numeric_entry_reported(self, tmp_path):
        rows = [["y", "x1", "site"], [1, "oops", "a"], [2, 0.5, "b"]]
        roles = {"responses": {"y": "gaussian"}, "x": ["x1"], "group": "site"}
        data, roles_path = self._write(tmp_path, rows, roles)
        with pytest.raises(ValueError, match="x1"):
            load_dataset(data, roles_path)
