"""Metrics and model selection: relative-error summaries, prediction error,
group-stratified cross-validation over hyperparameter grids, and correlation
data export for component interpretation plots."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .criteria import CriterionConfig
from .data import Dataset
from .model import FitOptions, FitResult, fit, predict
from .util import parallel_map


def mlre(estimates: list[tuple[np.ndarray, np.ndarray]],
         truths: tuple[np.ndarray, np.ndarray]) -> float:
    """Mean (over replicates) of the lower of the two responses' relative
    squared coefficient errors."""
    beta1, beta2 = (np.asarray(b, dtype=float) for b in truths)
    norm1, norm2 = float(beta1 @ beta1), float(beta2 @ beta2)
    if norm1 == 0.0 or norm2 == 0.0:
        raise ValueError("true coefficient vectors must have nonzero norm")
    lows = []
    for est1, est2 in estimates:
        err1 = float(np.sum((np.asarray(est1) - beta1) ** 2)) / norm1
        err2 = float(np.sum((np.asarray(est2) - beta2) ** 2)) / norm2
        lows.append(min(err1, err2))
    return float(np.mean(lows))


def ave_nrmse(Y: np.ndarray, Y_hat: np.ndarray) -> float:
    """Root mean squared prediction error normalised by the response mean,
    averaged over responses."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Y_hat = np.atleast_2d(np.asarray(Y_hat, dtype=float))
    if Y.shape != Y_hat.shape:
        raise ValueError("Y and Y_hat must have matching shapes")
    if Y.shape[0] == 1:
        Y, Y_hat = Y.T, Y_hat.T
    means = Y.mean(axis=0)
    zero = np.flatnonzero(means == 0.0)
    if zero.size:
        raise ValueError(f"response {int(zero[0])} has zero mean")
    scaled = (Y - Y_hat) / means
    return float(np.mean(np.sqrt(np.mean(scaled**2, axis=0))))


@dataclass(frozen=True)
class CvPlan:
    """Fold layout and hyperparameter grids for cross-validated selection."""

    k_grid: tuple[int, ...]
    s_grid: tuple[float, ...] = (0.5,)
    locality_grid: tuple[float, ...] = (4.0,)
    n_folds: int = 5
    metric: str = "ave_nrmse"
    conditional: bool = True
    tie_tolerance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.k_grid or not self.s_grid or not self.locality_grid:
            raise ValueError("hyperparameter grids must be nonempty")
        if self.n_folds < 2:
            raise ValueError("need at least two folds")
        if self.metric != "ave_nrmse":
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.tie_tolerance < 0:
            raise ValueError("tie_tolerance must be nonnegative")


def group_stratified_folds(
    groups: np.ndarray, n_folds: int, seed: int, order: np.ndarray | None = None
) -> np.ndarray:
    """Fold assignment per row, spreading every group across folds so each
    training complement retains all groups.

    ``order`` optionally fixes the within-group row ordering the seeded
    shuffle is applied to (used to make assignment independent of row
    permutation)."""
    groups = np.asarray(groups)
    if order is None:
        order = np.arange(groups.shape[0])
    rng = np.random.default_rng(seed)
    folds = np.empty(groups.shape[0], dtype=int)
    ordered_groups = groups[order]
    for g in np.unique(groups):
        idx = order[ordered_groups == g]
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = np.arange(idx.size) % n_folds
    return folds


def _content_order(dataset: Dataset) -> np.ndarray:
    """Lexicographic row order over (group, Y, X, T): a canonical ordering
    that does not depend on how the rows happened to be stored."""
    mat = np.column_stack(
        [np.asarray(dataset.groups, dtype=float), dataset.Y, dataset.X, dataset.T]
    )
    return np.lexsort(mat.T[::-1])


@dataclass
class CvResult:
    table: list[dict]
    best: dict
    folds: np.ndarray


def cross_validate(
    dataset: Dataset,
    plan: CvPlan,
    opts: FitOptions | None = None,
    threads: int = 1,
) -> CvResult:
    """Out-of-fold prediction error over the grid.

    Grid points whose metric is within ``tie_tolerance`` (relative) of the
    minimum count as tied with it; the winner is the tied point with the
    fewest components, then the smallest trade-off weight.
    """
    opts = opts or FitOptions()
    folds = group_stratified_folds(
        dataset.groups, plan.n_folds, plan.seed, order=_content_order(dataset)
    )
    grid = sorted(itertools.product(plan.k_grid, plan.s_grid, plan.locality_grid))

    def eval_point(point):
        k, s, loc = point
        cfg = CriterionConfig(structure_weight=s, locality=loc)
        Y_hat = np.full_like(dataset.Y, np.nan)
        failed = 0
        for fold in range(plan.n_folds):
            test = folds == fold
            if not np.any(test):
                continue
            train_ds = dataset.subset(~test)
            try:
                result = fit(train_ds, k, cfg, opts)
                _, mu = predict(
                    result,
                    dataset.X[test],
                    dataset.T[test] if dataset.r else None,
                    groups=np.asarray(dataset.groups)[test] if plan.conditional else None,
                )
                Y_hat[test] = mu
            except (ValueError, np.linalg.LinAlgError, FloatingPointError):
                failed += 1
        if failed or np.any(np.isnan(Y_hat)):
            return {"n_components": k, "structure_weight": s, "locality": loc,
                    "metric": np.nan, "failed_folds": failed or plan.n_folds}
        return {"n_components": k, "structure_weight": s, "locality": loc,
                "metric": ave_nrmse(dataset.Y, Y_hat), "failed_folds": 0}

    table = parallel_map(eval_point, grid, threads)

    best = select_best(table, plan.tie_tolerance)
    return CvResult(table=table, best=best, folds=folds)


def select_best(table: list[dict], tie_tolerance: float = 0.01) -> dict:
    """Pick the winning grid point: near-minimal metric (relative tie band),
    parsimony first, then smaller trade-off weight."""
    usable = [row for row in table if row["failed_folds"] == 0]
    if not usable:
        raise RuntimeError("every grid point failed cross-validation")
    floor = min(row["metric"] for row in usable)
    tied = [row for row in usable if row["metric"] <= floor * (1.0 + tie_tolerance)]
    return dict(
        min(tied, key=lambda r: (r["n_components"], r["structure_weight"], r["metric"]))
    )


def correlation_scatterplot_data(
    result: FitResult,
    dataset: Dataset,
    plane: tuple[int, int] = (1, 2),
    threshold: float = 0.8,
) -> list[dict]:
    """Weighted correlations of every X column (plus the per-response X-part
    predictors as supplementary rows) with the two components of a plane,
    filtered by the plane cosine."""
    a, b = plane
    if not (1 <= a <= result.n_components and 1 <= b <= result.n_components) or a == b:
        raise ValueError(f"invalid component plane {plane!r}")
    w = result.weights
    Xs = (dataset.X - result.centers) / result.scales
    F = Xs @ result.loadings
    fa, fb = F[:, a - 1], F[:, b - 1]

    def w_corr(x, f):
        xm = x - w @ x
        fm = f - w @ f
        denom = np.sqrt(float(w @ xm**2) * float(w @ fm**2))
        if denom <= 0.0:
            raise ValueError("degenerate variance in correlation computation")
        return float(w @ (xm * fm)) / denom

    if float(w @ (fa - w @ fa) ** 2) <= 0.0 or float(w @ (fb - w @ fb) ** 2) <= 0.0:
        raise ValueError("component has degenerate variance")

    names = result.x_names or [f"x{j + 1}" for j in range(dataset.p)]
    rows = []
    for j in range(dataset.p):
        ca, cb = w_corr(Xs[:, j], fa), w_corr(Xs[:, j], fb)
        rows.append({"name": names[j], "cor_a": ca, "cor_b": cb,
                     "cosine": float(np.hypot(ca, cb)), "supplementary": False})
    response_names = result.response_names or [f"y{k + 1}" for k in range(len(result.families))]
    for k, rname in enumerate(response_names):
        pred = F @ result.gamma[k]
        if float(w @ (pred - w @ pred) ** 2) <= 0.0:
            continue
        ca, cb = w_corr(pred, fa), w_corr(pred, fb)
        rows.append({"name": f"predictor:{rname}", "cor_a": ca, "cor_b": cb,
                     "cosine": float(np.hypot(ca, cb)), "supplementary": True})
    return [row for row in rows if row["cosine"] >= threshold]
