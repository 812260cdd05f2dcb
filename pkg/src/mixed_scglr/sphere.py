"""Maximisation of a smooth criterion on the unit sphere under linear constraints.

The iteration normalises the constraint-projected gradient and then maximises
the objective along the geodesic arc between the current point and that
direction, which makes the objective sequence monotone even though the bare
projected-gradient step alone would not. With a quadratic objective and no
constraints this reduces to the power method with a line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize


class StationarityError(RuntimeError):
    """Projected gradient vanished: the iterate is a constrained stationary point."""


@dataclass
class SphereProgram:
    """Objective/gradient callbacks on unit vectors, plus orthogonality constraints.

    ``constraints`` columns span the subspace the solution must be orthogonal
    to (empty or None for none). ``init`` optionally seeds the first restart.
    """

    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: np.ndarray | None = None
    init: np.ndarray | None = None

    def __post_init__(self):
        if self.constraints is not None and self.constraints.size == 0:
            self.constraints = None
        if self.constraints is not None:
            self.constraints = np.asarray(self.constraints, dtype=float)
            if self.constraints.ndim == 1:
                self.constraints = self.constraints[:, None]
            if self.constraints.shape[0] != self.dim:
                raise ValueError("constraint rows must match the program dimension")


@dataclass(frozen=True)
class PingOptions:
    max_iterations: int = 500
    tolerance: float = 1e-8
    restarts: int = 2
    arc_newton_iterations: int = 50
    arc_tolerance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.tolerance <= 0 or self.arc_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one restart")


@dataclass
class PingResult:
    v: np.ndarray
    value: float
    trace: list[float]
    iterations: int
    converged: bool
    stationary_start: bool = False


def project_orthogonal(C: np.ndarray | None, vec: np.ndarray) -> np.ndarray:
    """Remove from ``vec`` its projection onto the column span of C.

    Empty C is the identity. Rank-deficient C is rejected.
    """
    if C is None or C.size == 0:
        return np.array(vec, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    Q, R = np.linalg.qr(C)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise ValueError("constraint matrix is rank deficient")
    return vec - Q @ (Q.T @ vec)


def ping_step(v: np.ndarray, prog: SphereProgram) -> np.ndarray:
    """One normalised projected-gradient step; raises StationarityError when
    the projected gradient vanishes."""
    grad = prog.gradient(v)
    direction = project_orthogonal(prog.constraints, grad)
    norm = float(np.linalg.norm(direction))
    if norm <= 1e-13 * max(1.0, float(np.linalg.norm(grad))):
        raise StationarityError("projected gradient vanished")
    return direction / norm


def arc_search(v: np.ndarray, kappa: np.ndarray, prog: SphereProgram,
               options: PingOptions | None = None,
               value_v: float | None = None) -> np.ndarray:
    """Maximise the objective on the great-circle arc through v and kappa.

    Newton-type iterations on the arc angle (secant-updated curvature, one
    gradient per step), falling back to a bracketed root find on [0, pi/2]
    when they leave the window or stall; the returned point is never worse
    than either arc endpoint. ``value_v`` optionally supplies the
    already-known objective at v.
    """
    options = options or PingOptions()
    v = np.asarray(v, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    cos_vk = float(v @ kappa)
    w = kappa - cos_vk * v
    w_norm = float(np.linalg.norm(w))
    if w_norm <= 1e-12:
        raise ValueError("arc endpoints are parallel")
    w_hat = w / w_norm
    theta_kappa = float(np.arctan2(w_norm, cos_vk))

    def point(theta):
        return np.cos(theta) * v + np.sin(theta) * w_hat

    def value(theta):
        return prog.objective(point(theta))

    def slope(theta):
        tangent = -np.sin(theta) * v + np.cos(theta) * w_hat
        return float(prog.gradient(point(theta)) @ tangent)

    hi = np.pi / 2.0
    grad_v = prog.gradient(v)
    slope_0 = float(grad_v @ w_hat)
    theta = 0.0
    # the ascent direction guarantees slope_0 >= 0 up to roundoff; a vanishing
    # slope means v already maximises this arc and the search can be skipped
    if slope_0 > 1e-10 * max(1.0, float(np.linalg.norm(grad_v))):
        theta = _maximise_angle(slope, slope_0, min(theta_kappa, hi), hi, options)

    # never return a point worse than either endpoint
    candidates = [
        (value(theta), point(theta)),
        (value(0.0) if value_v is None else value_v, v),
        (value(theta_kappa), kappa),
    ]
    _, best = max(candidates, key=lambda item: item[0])
    return best / np.linalg.norm(best)


def _maximise_angle(slope, slope_0, theta_start, hi, options):
    """Zero of the arc slope: secant iterations first, bracketed root find
    as the fallback, the window edge when the slope never changes sign."""
    theta_a, d_a = 0.0, slope_0
    theta_b = theta_start if theta_start > 0.0 else hi / 2.0
    d_b = slope(theta_b)
    for _ in range(options.arc_newton_iterations):
        if not (np.isfinite(d_a) and np.isfinite(d_b)) or d_a == d_b:
            break
        theta_new = theta_b - d_b * (theta_b - theta_a) / (d_b - d_a)
        if not 0.0 <= theta_new <= hi:
            break
        if abs(theta_new - theta_b) < options.arc_tolerance:
            return theta_new
        theta_a, d_a = theta_b, d_b
        theta_b, d_b = theta_new, slope(theta_new)

    lo, d_lo = 0.0, slope_0
    for probe in (theta_start, hi / 2.0, hi):
        if probe <= lo or probe > hi:
            continue
        d_probe = slope(probe)
        if d_probe <= 0.0:
            return float(
                scipy.optimize.brentq(slope, lo, probe, xtol=options.arc_tolerance)
            )
        lo, d_lo = probe, d_probe
    return hi


def _feasible_unit(vec, constraints):
    proj = project_orthogonal(constraints, vec)
    norm = float(np.linalg.norm(proj))
    if norm <= 1e-12:
        return None
    return proj / norm


def ping_maximize(prog: SphereProgram, options: PingOptions | None = None) -> PingResult:
    """Run the projected normed-gradient ascent from several starts and keep the best.

    The first restart uses ``prog.init`` when supplied; the rest are uniform
    on the sphere (projected to the feasible subspace). Each restart's
    objective trace is nondecreasing by construction of the arc search.
    """
    options = options or PingOptions()
    rng = np.random.default_rng(options.seed)

    starts: list[np.ndarray] = []
    if prog.init is not None:
        first = _feasible_unit(np.asarray(prog.init, dtype=float), prog.constraints)
        if first is not None:
            starts.append(first)
    while len(starts) < options.restarts:
        cand = _feasible_unit(rng.standard_normal(prog.dim), prog.constraints)
        if cand is not None:
            starts.append(cand)

    best: PingResult | None = None
    for v0 in starts:
        v = v0
        trace = [float(prog.objective(v))]
        converged = False
        stationary = False
        iterations = 0
        for iterations in range(1, options.max_iterations + 1):
            try:
                kappa = ping_step(v, prog)
            except StationarityError:
                stationary = True
                converged = True
                break
            # kappa parallel to v: the normed-gradient map fixes v, so stop
            tangent_norm = float(np.linalg.norm(kappa - (v @ kappa) * v))
            if tangent_norm <= 1e-12:
                stationary = True
                converged = True
                break
            v_new = arc_search(v, kappa, prog, options, value_v=trace[-1])
            if prog.constraints is not None:
                # re-project: roundoff leaking into the constrained span would
                # otherwise be amplified by the ascent itself
                refeasible = _feasible_unit(v_new, prog.constraints)
                if refeasible is None:
                    stationary = True
                    converged = True
                    break
                v_new = refeasible
            trace.append(float(prog.objective(v_new)))
            delta = float(np.linalg.norm(v_new - v))
            v = v_new
            if delta < options.tolerance:
                converged = True
                break
        result = PingResult(
            v=v,
            value=trace[-1],
            trace=trace,
            iterations=iterations,
            converged=converged,
            stationary_start=stationary and iterations == 1,
        )
        if best is None or result.value > best.value:
            best = result

    assert best is not None
    # canonical sign: flip only when the objective is indifferent to it
    idx = int(np.argmax(np.abs(best.v)))
    if best.v[idx] < 0:
        flipped = -best.v
        flipped_value = float(prog.objective(flipped))
        if flipped_value >= best.value - 1e-12 * (1.0 + abs(best.value)):
            best.v = flipped
            best.value = max(best.value, flipped_value)
    return best


def metric_sqrt(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root of an SPD matrix and its inverse."""
    vals, vecs = scipy.linalg.eigh(A)
    if vals.min() <= 0:
        raise ValueError("metric must be positive definite")
    root = np.sqrt(vals)
    return (vecs * root) @ vecs.T, (vecs / root) @ vecs.T


def build_metric_program(
    objective_u: Callable[[np.ndarray], float],
    gradient_u: Callable[[np.ndarray], np.ndarray],
    dim: int,
    A: np.ndarray | None = None,
    orth_to: np.ndarray | None = None,
    init_u: np.ndarray | None = None,
) -> tuple[SphereProgram, Callable[[np.ndarray], np.ndarray]]:
    """Rewrite a metric-normalised program (u'Au = 1, D'u = 0) on the plain sphere.

    Returns the sphere program and the map from sphere solutions back to
    loading space. Identity metric avoids all matrix transforms.
    """
    if A is None:
        prog = SphereProgram(
            dim=dim,
            objective=objective_u,
            gradient=gradient_u,
            constraints=orth_to,
            init=init_u,
        )
        return prog, lambda v: v
    A_half, A_inv_half = metric_sqrt(A)

    def objective_v(v):
        return objective_u(A_inv_half @ v)

    def gradient_v(v):
        return A_inv_half @ gradient_u(A_inv_half @ v)

    constraints = None if orth_to is None or orth_to.size == 0 else A_inv_half @ orth_to
    init_v = None if init_u is None else A_half @ init_u
    prog = SphereProgram(
        dim=dim,
        objective=objective_v,
        gradient=gradient_v,
        constraints=constraints,
        init=init_v,
    )
    return prog, lambda v: A_inv_half @ v
