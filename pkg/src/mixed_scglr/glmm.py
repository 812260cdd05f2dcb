"""Per-response mixed-model machinery.

Linearisation produces working variables and weight diagonals from the
current linear predictor; the block mixed-model system jointly solves fixed
coefficients and random-effect predictions with a ridge on the random block;
the variance component is refreshed by a fixed-point update built from the
random-effect posterior covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import GAUSSIAN, POISSON, FamilySpec

SIGMA2_FLOOR = 1e-8
DISPERSION_FLOOR = 1e-8
# |eta| cap used when damping log-link predictor updates
ETA_CAP = 30.0


@dataclass
class ResponseState:
    """Current per-response estimation state inside the alternating fit."""

    gamma: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    sigma2: float
    dispersion: float
    z: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    sigma2_floored: bool = False
    dispersion_floored: bool = False


def working_update(
    y: np.ndarray, eta: np.ndarray, family: FamilySpec, dispersion: float
) -> tuple[np.ndarray, np.ndarray]:
    """Working variable and weight diagonal for the current linear predictor.

    Gaussian/identity: z = y and constant weights 1/dispersion. Poisson/log:
    z = eta + (y - mu)/mu and weights mu. Overflow of the log link is an
    error naming the offending row; the caller is expected to damp eta.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise FloatingPointError("linear predictor contains non-finite entries")
    if family.kind == GAUSSIAN:
        return y.copy(), np.full(y.shape[0], 1.0 / dispersion)
    mu = family.inverse_link(eta)
    z = eta + (y - mu) / mu
    return z, mu.copy()


def _as_columns(M):
    if M is None or M.size == 0:
        return None
    M = np.asarray(M, dtype=float)
    return M[:, None] if M.ndim == 1 else M


def _block_design(F, T, U):
    F, T = _as_columns(F), _as_columns(T)
    blocks = [M for M in (F, T, U) if M is not None]
    k_f = 0 if F is None else F.shape[1]
    k_t = 0 if T is None else T.shape[1]
    return np.hstack(blocks) if len(blocks) > 1 else U, k_f, k_t


def _name_deficient_block(F, T, w):
    """Diagnose which fixed-effect block made the system singular."""
    sw = np.sqrt(w)
    stack = []
    for name, M in (("component", _as_columns(F)), ("covariate", _as_columns(T))):
        if M is None:
            continue
        scaled = sw[:, None] * M
        if np.linalg.matrix_rank(scaled) < M.shape[1]:
            return f"{name} block is rank deficient"
        stack.append(scaled)
    if len(stack) > 1:
        combined = np.hstack(stack)
        if np.linalg.matrix_rank(combined) < combined.shape[1]:
            return "component and covariate blocks are jointly rank deficient"
    return "mixed-model system is singular"


def _spd_inverse(D):
    D = np.asarray(D, dtype=float)
    c, low = scipy.linalg.cho_factor(D, lower=True)
    return scipy.linalg.cho_solve((c, low), np.eye(D.shape[0]))


def solve_henderson(
    F: np.ndarray | None,
    T: np.ndarray | None,
    U: np.ndarray,
    w: np.ndarray,
    D: np.ndarray,
    z: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the symmetric block system for (component coefs, covariate coefs,
    random effects), with the random block ridged by the inverse of D.

    F and T may be None/empty; the system then shrinks accordingly.
    """
    U = np.asarray(U, dtype=float)
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    M, k_f, k_t = _block_design(F, T, U)
    Dinv = _spd_inverse(D)
    WM = w[:, None] * M
    H = M.T @ WM
    n_fixed = k_f + k_t
    H[n_fixed:, n_fixed:] += Dinv
    rhs = WM.T @ z
    try:
        c, low = scipy.linalg.cho_factor(H, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(_name_deficient_block(F, T, w)) from exc
    sol = scipy.linalg.cho_solve((c, low), rhs)
    return sol[:k_f], sol[k_f:n_fixed], sol[n_fixed:]


def henderson_edf(
    F: np.ndarray | None,
    T: np.ndarray | None,
    U: np.ndarray,
    w: np.ndarray,
    D: np.ndarray,
) -> float:
    """Effective degrees of freedom: trace of the operator mapping the working
    variable to its fitted predictor."""
    U = np.asarray(U, dtype=float)
    w = np.asarray(w, dtype=float)
    M, k_f, k_t = _block_design(F, T, U)
    Dinv = _spd_inverse(D)
    H = M.T @ (w[:, None] * M)
    n_fixed = k_f + k_t
    H[n_fixed:, n_fixed:] += Dinv
    penalty = np.zeros_like(H)
    penalty[n_fixed:, n_fixed:] = Dinv
    c, low = scipy.linalg.cho_factor(H, lower=True)
    shrink = scipy.linalg.cho_solve((c, low), penalty)
    return float(H.shape[0] - np.trace(shrink))


def posterior_group_cov(U: np.ndarray, w: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Posterior covariance block of the random effects given the working data."""
    U = np.asarray(U, dtype=float)
    w = np.asarray(w, dtype=float)
    return _spd_inverse(U.T @ (w[:, None] * U) + _spd_inverse(D))


def update_variance(
    xi_hat: np.ndarray,
    sigma2_current: float,
    A_k: np.ndarray | None,
    C: np.ndarray,
) -> tuple[float, bool]:
    """Fixed-point update of the variance component, clamped at a small floor
    when the random effects have collapsed."""
    xi_hat = np.asarray(xi_hat, dtype=float)
    n_groups = xi_hat.shape[0]
    if A_k is None:
        quad = float(xi_hat @ xi_hat)
        trace = float(np.trace(C))
    else:
        A_inv = _spd_inverse(A_k)
        quad = float(xi_hat @ (A_inv @ xi_hat))
        trace = float(np.trace(A_inv @ C))
    denom = n_groups - trace / sigma2_current
    if denom <= 0.0:
        return SIGMA2_FLOOR, True
    value = quad / denom
    if value <= SIGMA2_FLOOR:
        return SIGMA2_FLOOR, True
    return value, False


def detect_variance_collapse(
    sigma2_new: float, sigma2_old: float, decay_streak: int, scale: float
) -> tuple[float, int, bool]:
    """Clamp a variance component that is decaying geometrically toward zero.

    The fixed-point variance update approaches a zero optimum only in the
    limit, which stalls the relative-change stability test; after a sustained
    decay streak with the component already negligible against the noise
    scale, the value is pinned at the floor and flagged.
    """
    if sigma2_new < 0.995 * sigma2_old:
        decay_streak += 1
    else:
        decay_streak = 0
    if decay_streak >= 6 and sigma2_new < 1e-3 * max(scale, SIGMA2_FLOOR):
        return SIGMA2_FLOOR, 0, True
    return sigma2_new, decay_streak, False


def update_dispersion_gaussian(
    z: np.ndarray, eta_hat: np.ndarray, weights: np.ndarray | None, edf: float
) -> tuple[float, bool]:
    """Residual dispersion estimate: weighted RSS over residual degrees of freedom."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    if n <= edf:
        raise ValueError("residual degrees of freedom must be positive")
    resid = z - np.asarray(eta_hat, dtype=float)
    if weights is None:
        rss = float(resid @ resid)
    else:
        rss = float(np.asarray(weights, dtype=float) @ resid**2)
    value = rss / (n - edf)
    if value <= DISPERSION_FLOOR:
        return DISPERSION_FLOOR, True
    return value, False


def initial_eta(y: np.ndarray, family: FamilySpec) -> np.ndarray:
    """Starting linear predictor for the linearisation loop."""
    y = np.asarray(y, dtype=float)
    if family.kind == POISSON:
        return np.log(y + 0.5)
    return y.copy()


def initial_sigma2(z: np.ndarray, U: np.ndarray) -> float:
    """Scale-aware positive start: a tenth of the variance of group means."""
    counts = U.sum(axis=0)
    means = (U.T @ z) / counts
    value = 0.1 * float(np.var(means))
    return max(value, 1e-3)


def damped_eta(eta_new: np.ndarray, eta_old: np.ndarray, family: FamilySpec) -> np.ndarray:
    """Step-halving toward the previous predictor while the log link would overflow."""
    if family.kind != POISSON:
        return eta_new
    eta = eta_new
    for _ in range(60):
        if np.max(np.abs(eta)) <= ETA_CAP:
            return eta
        eta = 0.5 * (eta + eta_old)
    return np.clip(eta, -ETA_CAP, ETA_CAP)


@dataclass
class GlmmFit:
    """Converged per-response mixed-model fit on a fixed design."""

    coef: np.ndarray
    xi: np.ndarray
    sigma2: float
    dispersion: float
    eta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    iterations: int
    converged: bool
    sigma2_floored: bool = False


def fit_glmm(
    y: np.ndarray,
    design: np.ndarray | None,
    U: np.ndarray,
    family: FamilySpec,
    A_k: np.ndarray | None = None,
    max_iterations: int = 200,
    tol: float = 1e-8,
    fix_sigma2: float | None = None,
) -> GlmmFit:
    """Alternating estimation of a single-response mixed model on a fixed design:
    linearise, solve the block system, refresh variance and dispersion.

    ``design`` holds all fixed-effect columns (may be None for a
    random-effects-only model). ``fix_sigma2`` pins the variance component,
    which is mainly useful for degenerate-limit checks.
    """
    y = np.asarray(y, dtype=float)
    U = np.asarray(U, dtype=float)
    n, n_groups = U.shape
    d = 0 if design is None or design.size == 0 else design.shape[1]
    design = None if d == 0 else np.asarray(design, dtype=float)

    dispersion = max(float(np.var(y)), 1e-6) if family.kind == GAUSSIAN else 1.0
    eta = initial_eta(y, family)
    z, w = working_update(y, eta, family, dispersion)
    sigma2 = initial_sigma2(z, U) if fix_sigma2 is None else fix_sigma2
    coef = np.zeros(d)
    xi = np.zeros(n_groups)
    sigma2_floored = False
    converged = False
    iterations = 0
    decay_streak = 0

    for iterations in range(1, max_iterations + 1):
        D = sigma2 * (np.eye(n_groups) if A_k is None else A_k)
        _, coef_new, xi_new = solve_henderson(None, design, U, w, D, z)
        eta_new = (design @ coef_new if design is not None else 0.0) + U @ xi_new
        eta_new = damped_eta(eta_new, eta, family)

        if fix_sigma2 is None:
            C = posterior_group_cov(U, w, D)
            sigma2_new, floored = update_variance(xi_new, sigma2, A_k, C)
            if not floored:
                sigma2_new, decay_streak, floored = detect_variance_collapse(
                    sigma2_new, sigma2, decay_streak, dispersion
                )
            sigma2_floored = floored
        else:
            sigma2_new = fix_sigma2

        if family.kind == GAUSSIAN:
            edf = henderson_edf(None, design, U, w, D)
            dispersion, _ = update_dispersion_gaussian(z, eta_new, None, min(edf, n - 1))

        z, w = working_update(y, eta_new, family, dispersion)

        delta = max(
            float(np.max(np.abs(coef_new - coef))) if d else 0.0,
            float(np.max(np.abs(xi_new - xi))),
            abs(sigma2_new - sigma2) / max(sigma2, SIGMA2_FLOOR),
        )
        coef, xi, sigma2, eta = coef_new, xi_new, sigma2_new, eta_new
        if delta < tol:
            converged = True
            break

    return GlmmFit(
        coef=coef,
        xi=xi,
        sigma2=sigma2,
        dispersion=dispersion,
        eta=eta,
        z=z,
        w=w,
        iterations=iterations,
        converged=converged,
        sigma2_floored=sigma2_floored,
    )
