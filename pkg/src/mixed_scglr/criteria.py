"""Component-quality criteria: structural relevance, goodness of fit, trade-off.

Structural relevance rewards loadings aligned with strong variable bundles
in the explanatory block; goodness of fit measures how well the span of the
component plus extra covariates captures each response's working variable.
The trade-off criterion geometrically mixes the two, and is maximised on the
unit sphere in log form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CriterionConfig:
    """Trade-off weight (structure vs fit, in [0,1]) and locality exponent (>= 1)."""

    structure_weight: float = 0.5
    locality: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.structure_weight <= 1.0:
            raise ValueError("structure_weight must lie in [0, 1]")
        if self.locality < 1.0:
            raise ValueError("locality must be >= 1")


def _bundle_scores(u, X, w):
    # j-th entry is <Xu, x_j>_W; equals (X'WX)u without forming the p x p matrix
    return X.T @ (w * (X @ u))


def phi(u: np.ndarray, X: np.ndarray, w: np.ndarray, locality: float) -> float:
    """Structural relevance of loading u: the 2l-norm (squared) of bundle scores.

    Larger locality drives the measure toward the single strongest bundle;
    locality 1 recovers the total squared covariance with all columns.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("loading vector contains non-finite entries")
    su = _bundle_scores(u, X, w)
    m = np.max(np.abs(su))
    if m == 0.0:
        return 0.0
    # scaled to keep |su|^(2l) in range for large locality
    return float(m * m * np.sum(np.abs(su / m) ** (2 * locality)) ** (1.0 / locality))


def grad_phi(u: np.ndarray, X: np.ndarray, w: np.ndarray, locality: float) -> np.ndarray:
    """Gradient of the structural-relevance measure at u."""
    u = np.asarray(u, dtype=float)
    su = _bundle_scores(u, X, w)
    m = np.max(np.abs(su))
    if m == 0.0:
        raise ValueError("structural relevance vanishes at u; gradient undefined")
    t = su / m
    # sign-preserving power, valid for real locality
    t_pow = np.abs(t) ** (2 * locality - 2) * t
    s0 = np.sum(np.abs(t) ** (2 * locality))
    return 2.0 * m * s0 ** (1.0 / locality - 1.0) * (X.T @ (w * (X @ t_pow)))


@dataclass
class ProjectionContext:
    """Per-response working data for the goodness-of-fit measure.

    Holds working variables z, their weight diagonals, and the extra-covariate
    block spanned together with the candidate component. Construction
    pre-factorises the weighted extra block (QR) and stacks the per-response
    arrays so every later evaluation is a handful of batched products.
    """

    X: np.ndarray
    z_list: list[np.ndarray]
    w_list: list[np.ndarray]
    T_extra: np.ndarray

    # derived, stacked over responses in __post_init__
    _Xs: np.ndarray = field(init=False, repr=False)  # (q, n, p)
    _Q: np.ndarray = field(init=False, repr=False)  # (q, n, m)
    _z_resid: np.ndarray = field(init=False, repr=False)  # (q, n)
    _base: np.ndarray = field(init=False, repr=False)  # (q,)
    _znorm2: np.ndarray = field(init=False, repr=False)  # (q,)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        n = self.X.shape[0]
        if self.T_extra is None or self.T_extra.size == 0:
            self.T_extra = np.zeros((n, 0))
        self.T_extra = np.asarray(self.T_extra, dtype=float)
        if len(self.z_list) != len(self.w_list):
            raise ValueError("need one weight diagonal per working variable")
        m = self.T_extra.shape[1]
        Xs_all, Q_all, zres_all, base, znorm2 = [], [], [], [], []
        for z, w in zip(self.z_list, self.w_list):
            z = np.asarray(z, dtype=float)
            w = np.asarray(w, dtype=float)
            if np.any(w <= 0):
                raise ValueError("weight diagonals must be strictly positive")
            sw = np.sqrt(w)
            zs = sw * z
            Xs_all.append(sw[:, None] * self.X)
            if m:
                Q, R = np.linalg.qr(sw[:, None] * self.T_extra)
                diag = np.abs(np.diag(R))
                if diag.min() <= 1e-12 * max(diag.max(), 1.0):
                    raise ValueError("extra-covariate block is rank deficient")
                fit_part = Q.T @ zs
                z_res = zs - Q @ fit_part
                base.append(float(fit_part @ fit_part))
            else:
                Q = np.zeros((n, 0))
                z_res = zs
                base.append(0.0)
            Q_all.append(Q)
            zres_all.append(z_res)
            znorm2.append(float(zs @ zs))
        self._Xs = np.stack(Xs_all)
        self._Q = np.stack(Q_all)
        self._z_resid = np.stack(zres_all)
        self._base = np.array(base)
        self._znorm2 = np.array(znorm2)

    @property
    def n_responses(self) -> int:
        return len(self.z_list)

    def _component_terms(self, u):
        """Per-response residuals of the weighted component against the extra
        block, with the inner products the fit measure is built from."""
        f = self._Xs @ u  # (q, n)
        raw_norm2 = np.einsum("qn,qn->q", f, f)
        if self._Q.shape[2]:
            coefs = np.einsum("qnm,qn->qm", self._Q, f)
            f = f - np.einsum("qnm,qm->qn", self._Q, coefs)
        b = np.einsum("qn,qn->q", f, f)
        if np.any(b <= 1e-12 * np.maximum(raw_norm2, 1e-300)):
            raise ValueError("component is collinear with the extra covariates")
        a = np.einsum("qn,qn->q", self._z_resid, f)
        return f, a, b


def psi(u: np.ndarray, ctx: ProjectionContext) -> float:
    """Goodness of fit: summed squared projections of working variables onto
    the span of the component and the extra covariates, in each response's
    weight metric."""
    u = np.asarray(u, dtype=float)
    _, a, b = ctx._component_terms(u)
    return float(np.sum(ctx._base + a * a / b))


def grad_psi(u: np.ndarray, ctx: ProjectionContext) -> np.ndarray:
    """Gradient of the goodness-of-fit measure at u."""
    u = np.asarray(u, dtype=float)
    f, a, b = ctx._component_terms(u)
    ratio = a / b
    # d/du sum_k [a_k^2/b_k]; a is linear and b quadratic in u
    resid = 2.0 * ratio[:, None] * (ctx._z_resid - ratio[:, None] * f)
    return np.einsum("qnp,qn->p", ctx._Xs, resid)


def criterion(u: np.ndarray, cfg: CriterionConfig, ctx: ProjectionContext,
              X: np.ndarray, w: np.ndarray) -> float:
    """Log trade-off criterion s*log(phi) + (1-s)*log(psi).

    The log form has the same argmax as the product of powers and avoids the
    conditioning problems of multiplying large powers directly.
    """
    s = cfg.structure_weight
    value = 0.0
    if s > 0.0:
        p_val = phi(u, X, w, cfg.locality)
        if p_val <= 0.0:
            raise ValueError("structural relevance is zero at u")
        value += s * np.log(p_val)
    if s < 1.0:
        g_val = psi(u, ctx)
        if g_val <= 0.0:
            raise ValueError("goodness of fit is zero at u; criterion undefined")
        value += (1.0 - s) * np.log(g_val)
    return float(value)


def grad_criterion(u: np.ndarray, cfg: CriterionConfig, ctx: ProjectionContext,
                   X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of the log trade-off criterion at u."""
    s = cfg.structure_weight
    g = np.zeros(np.asarray(u).shape[0])
    if s > 0.0:
        p_val = phi(u, X, w, cfg.locality)
        if p_val <= 0.0:
            raise ValueError("structural relevance is zero at u")
        g += s * grad_phi(u, X, w, cfg.locality) / p_val
    if s < 1.0:
        g_val = psi(u, ctx)
        if g_val <= 0.0:
            raise ValueError("goodness of fit is zero at u; criterion undefined")
        g += (1.0 - s) * grad_psi(u, ctx) / g_val
    return g
