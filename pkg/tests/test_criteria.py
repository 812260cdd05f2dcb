import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixed_scglr import (
    CriterionConfig,
    ProjectionContext,
    criterion,
    grad_criterion,
    grad_phi,
    grad_psi,
    phi,
    psi,
    standardize,
)


def make_instance(seed=0, n=15, p=4, q=2, r=2):
    rng = np.random.default_rng(seed)
    X, _, _ = standardize(rng.standard_normal((n, p)) @ (np.eye(p) + 0.3 * rng.standard_normal((p, p))))
    w = np.full(n, 1.0 / n)
    T = rng.standard_normal((n, r)) if r else np.zeros((n, 0))
    z_list = [rng.standard_normal(n) for _ in range(q)]
    w_list = [rng.uniform(0.5, 2.0, n) for _ in range(q)]
    ctx = ProjectionContext(X=X, z_list=z_list, w_list=w_list, T_extra=T)
    return X, w, T, z_list, w_list, ctx, rng


def fd_gradient(fn, u, h=1e-6):
    p = u.shape[0]
    out = np.zeros(p)
    for j in range(p):
        e = np.zeros(p)
        e[j] = h
        out[j] = (fn(u + e) - fn(u - e)) / (2.0 * h)
    return out


class TestPhi:
    def test_single_unit_variance_column(self):
        rng = np.random.default_rng(1)
        x, _, _ = standardize(rng.standard_normal((30, 1)))
        w = np.full(30, 1 / 30)
        for loc in (1.0, 2.0, 4.0):
            assert phi(np.array([1.0]), x, w, loc) == pytest.approx(1.0)

    def test_locality_one_matches_direct_sum(self):
        # oracle: explicit loop over columns of the stated covariance sum
        X, w, *_ = make_instance(2)
        rng = np.random.default_rng(3)
        u = rng.standard_normal(4)
        expected = sum(
            float(u @ (X.T @ (w * X[:, j]))) ** 2 for j in range(X.shape[1])
        )
        assert phi(u, X, w, 1.0) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(1.0, 8.0),
        st.integers(0, 10_000),
    )
    def test_degree_two_homogeneity(self, loc, seed):
        X, w, *_ = make_instance(4)
        u = np.random.default_rng(seed).standard_normal(4)
        assert phi(2.0 * u, X, w, loc) == pytest.approx(4.0 * phi(u, X, w, loc), rel=1e-10)

    def test_large_locality_approaches_max(self):
        X, w, *_ = make_instance(5, n=25, p=6)
        u = np.random.default_rng(6).standard_normal(6)
        u /= np.linalg.norm(u)
        su = X.T @ (w * (X @ u))
        assert phi(u, X, w, 32.0) == pytest.approx(np.max(su**2), rel=0.05)


class TestGradPhi:
    @pytest.mark.parametrize("loc", [1.0, 2.0, 4.0, 7.5])
    def test_matches_finite_differences(self, loc):
        X, w, *_ = make_instance(7, n=12, p=4)
        rng = np.random.default_rng(8)
        for _ in range(10):
            u = rng.standard_normal(4)
            g = grad_phi(u, X, w, loc)
            fd = fd_gradient(lambda v: phi(v, X, w, loc), u)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_locality_one_closed_form(self):
        X, w, *_ = make_instance(9)
        u = np.random.default_rng(10).standard_normal(4)
        S = X.T @ (w[:, None] * X)
        assert np.allclose(grad_phi(u, X, w, 1.0), 2.0 * S @ S @ u, atol=1e-12)

    def test_stationary_at_sphere_maximum(self):
        # locality 1: argmax over the sphere is the top eigenvector
        X, w, *_ = make_instance(11)
        S = X.T @ (w[:, None] * X)
        u = np.linalg.eigh(S @ S)[1][:, -1]
        g = grad_phi(u, X, w, 1.0)
        projected = g - (u @ g) * u
        assert np.linalg.norm(projected) < 1e-10


class TestPsi:
    def test_working_variable_in_component_span(self):
        rng = np.random.default_rng(12)
        X, _, _ = standardize(rng.standard_normal((20, 3)))
        u = np.array([0.5, -1.0, 0.25])
        z = 3.0 * (X @ u)
        wk = rng.uniform(0.5, 2.0, 20)
        ctx = ProjectionContext(X=X, z_list=[z], w_list=[wk], T_extra=np.zeros((20, 0)))
        assert psi(u, ctx) == pytest.approx(float(z @ (wk * z)), rel=1e-12)

    def test_orthogonal_working_variable(self):
        rng = np.random.default_rng(13)
        X, _, _ = standardize(rng.standard_normal((20, 3)))
        u = np.array([1.0, 0.0, 0.0])
        T = rng.standard_normal((20, 2))
        wk = np.ones(20)
        V = np.column_stack([X @ u, T])
        z = rng.standard_normal(20)
        z -= V @ np.linalg.solve(V.T @ V, V.T @ z)  # W=I orthogonal complement
        ctx = ProjectionContext(X=X, z_list=[z], w_list=[wk], T_extra=T)
        assert psi(u, ctx) == pytest.approx(0.0, abs=1e-18)

    def test_normal_equations_oracle(self):
        X, w, T, z_list, w_list, ctx, rng = make_instance(14, n=15, p=4, q=2, r=2)
        u = rng.standard_normal(4)
        expected = 0.0
        for z, wk in zip(z_list, w_list):
            V = np.column_stack([X @ u, T])
            G = V.T @ (wk[:, None] * V)
            proj = V @ np.linalg.solve(G, V.T @ (wk * z))
            expected += float(proj @ (wk * proj))
        assert psi(u, ctx) == pytest.approx(expected, rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 50.0), st.booleans())
    def test_invariant_to_loading_scale(self, c, negate):
        X, w, T, z_list, w_list, ctx, rng = make_instance(15)
        u = np.random.default_rng(16).standard_normal(4)
        scale = -c if negate else c
        assert psi(scale * u, ctx) == pytest.approx(psi(u, ctx), rel=1e-9)

    def test_collinear_component_rejected(self):
        rng = np.random.default_rng(17)
        X, _, _ = standardize(rng.standard_normal((20, 3)))
        T = (X @ np.array([1.0, 1.0, 0.0]))[:, None]
        ctx = ProjectionContext(
            X=X, z_list=[rng.standard_normal(20)], w_list=[np.ones(20)], T_extra=T
        )
        with pytest.raises(ValueError, match="collinear"):
            psi(np.array([1.0, 1.0, 0.0]), ctx)

    def test_gradient_matches_finite_differences(self):
        X, w, T, z_list, w_list, ctx, rng = make_instance(18)
        for _ in range(5):
            u = rng.standard_normal(4)
            g = grad_psi(u, ctx)
            fd = fd_gradient(lambda v: psi(v, ctx), u)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_rank_deficient_extra_block_rejected(self):
        rng = np.random.default_rng(19)
        X, _, _ = standardize(rng.standard_normal((10, 3)))
        T = np.ones((10, 2))
        with pytest.raises(ValueError, match="rank deficient"):
            ProjectionContext(
                X=X, z_list=[rng.standard_normal(10)], w_list=[np.ones(10)], T_extra=T
            )


class TestProjector:
    def test_idempotent_and_self_adjoint(self):
        # the projector the fit measure is built on, assembled explicitly
        rng = np.random.default_rng(20)
        n = 12
        V = rng.standard_normal((n, 3))
        w = rng.uniform(0.5, 2.0, n)
        W = np.diag(w)
        P = V @ np.linalg.solve(V.T @ W @ V, V.T @ W)
        assert np.abs(P @ P - P).max() < 1e-10
        assert np.abs(W @ P - P.T @ W).max() < 1e-10


class TestCriterion:
    def test_structure_only_collapse(self):
        X, w, T, z_list, w_list, ctx, rng = make_instance(21)
        cfg = CriterionConfig(structure_weight=1.0, locality=2.0)
        u = rng.standard_normal(4)
        assert criterion(u, cfg, ctx, X, w) == pytest.approx(np.log(phi(u, X, w, 2.0)))
        g = grad_criterion(u, cfg, ctx, X, w)
        assert np.allclose(g, grad_phi(u, X, w, 2.0) / phi(u, X, w, 2.0))

    def test_fit_only_collapse(self):
        X, w, T, z_list, w_list, ctx, rng = make_instance(22)
        cfg = CriterionConfig(structure_weight=0.0, locality=1.0)
        u = rng.standard_normal(4)
        assert criterion(u, cfg, ctx, X, w) == pytest.approx(np.log(psi(u, ctx)))

    def test_gradient_matches_finite_differences(self):
        X, w, T, z_list, w_list, ctx, rng = make_instance(23)
        cfg = CriterionConfig(structure_weight=0.5, locality=4.0)
        for _ in range(5):
            u = rng.standard_normal(4)
            g = grad_criterion(u, cfg, ctx, X, w)
            fd = fd_gradient(lambda v: criterion(v, cfg, ctx, X, w), u)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_zero_fit_rejected_unless_structure_only(self):
        rng = np.random.default_rng(24)
        X, _, _ = standardize(rng.standard_normal((20, 3)))
        u = np.array([1.0, 0.0, 0.0])
        V = (X @ u)[:, None]
        z = rng.standard_normal(20)
        z -= V @ np.linalg.solve(V.T @ V, V.T @ z)
        ctx = ProjectionContext(X=X, z_list=[z], w_list=[np.ones(20)], T_extra=np.zeros((20, 0)))
        with pytest.raises(ValueError, match="zero"):
            criterion(u, CriterionConfig(0.5, 1.0), ctx, X, np.full(20, 1 / 20))
        value = criterion(u, CriterionConfig(1.0, 1.0), ctx, X, np.full(20, 1 / 20))
        assert np.isfinite(value)

    def test_argmax_invariant_to_common_working_scale(self):
        # multiplying every working variable by c shifts the log criterion by
        # a constant, so the landscape (and its argmax) is unchanged
        X, w, T, z_list, w_list, ctx, rng = make_instance(25)
        scaled = ProjectionContext(
            X=X, z_list=[3.0 * z for z in z_list], w_list=w_list, T_extra=T
        )
        cfg = CriterionConfig(0.5, 4.0)
        us = [np.random.default_rng(s).standard_normal(4) for s in range(6)]
        diffs = [
            criterion(u, cfg, scaled, X, w) - criterion(u, cfg, ctx, X, w) for u in us
        ]
        assert np.ptp(diffs) < 1e-10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CriterionConfig(structure_weight=1.2)
        with pytest.raises(ValueError):
            CriterionConfig(locality=0.5)
