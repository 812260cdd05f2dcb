"""Shared test fixtures and small data factories."""

import numpy as np
import pytest

from mixed_scglr import Dataset, build_indicator, gaussian_family, poisson_family


def small_gaussian_dataset(seed=0, n_groups=4, group_size=8, p=5, q=1, r=0):
    """Well-conditioned grouped Gaussian data for structural tests."""
    rng = np.random.default_rng(seed)
    n = n_groups * group_size
    X = rng.standard_normal((n, p)) @ (np.eye(p) + 0.2 * rng.standard_normal((p, p)))
    T = rng.standard_normal((n, r)) if r else np.zeros((n, 0))
    groups = np.repeat(np.arange(1, n_groups + 1), group_size)
    U = build_indicator(groups, n_groups)
    xi = rng.normal(0.0, 0.5, (n_groups, q))
    beta = rng.normal(0.0, 0.5, (p, q))
    Y = X @ beta + U @ xi + rng.normal(0.0, 1.0, (n, q))
    if r:
        Y = Y + T @ rng.normal(0.0, 0.5, (r, q))
    return Dataset(
        Y=Y, X=X, T=T, groups=groups, families=[gaussian_family() for _ in range(q)]
    )


def poisson_two_component_dataset(seed, n_groups=10, group_size=10, tau=0.6):
    """Counts driven by two bundle-aligned directions plus a noise bundle;
    the intercept rides in the clean covariate block."""
    rng = np.random.default_rng(seed)
    n = n_groups * group_size
    blocks = []
    for size in (8, 8, 5):
        shared = rng.standard_normal(n)
        own = rng.standard_normal((n, size))
        blocks.append(np.sqrt(tau) * shared[:, None] + np.sqrt(1.0 - tau) * own)
    X = np.hstack(blocks)
    p = X.shape[1]
    w1 = np.zeros(p)
    w1[:8] = 1.0 / 8.0
    w2 = np.zeros(p)
    w2[8:16] = 1.0 / 8.0
    groups = np.repeat(np.arange(1, n_groups + 1), group_size)
    U = build_indicator(groups, n_groups)
    xi = rng.normal(0.0, 0.3, (n_groups, 2))
    eta1 = 1.5 + 0.7 * (X @ w1) + U @ xi[:, 0]
    eta2 = 1.5 + 0.7 * (X @ w2) + U @ xi[:, 1]
    Y = np.column_stack(
        [rng.poisson(np.exp(eta1)), rng.poisson(np.exp(eta2))]
    ).astype(float)
    return Dataset(
        Y=Y,
        X=X,
        T=np.ones((n, 1)),
        groups=groups,
        families=[poisson_family(), poisson_family()],
        response_names=["y1", "y2"],
        t_names=["intercept"],
    )


@pytest.fixture
def gaussian_dataset():
    return small_gaussian_dataset()


@pytest.fixture
def poisson_dataset():
    return poisson_two_component_dataset(seed=0)
