"""Supervised-component mixed-model estimator.

Each component is found by alternating two steps until joint stability: a
sphere maximisation of the trade-off criterion given the current working
data, and per-response mixed-model solves (with variance and dispersion
refreshes) given the component. Higher-rank components treat the earlier
ones as extra covariates and are constrained to be orthogonal to them in
the unit-weight metric.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import glmm
from .criteria import CriterionConfig, ProjectionContext, criterion, grad_criterion
from .data import Dataset, FamilySpec, Weighting, standardize
from .glmm import ResponseState
from .sphere import PingOptions, build_metric_program, ping_maximize

FORMAT_VERSION = 1


@dataclass(frozen=True)
class FitOptions:
    """Controls for the alternating fit and its inner sphere optimisation."""

    max_outer_iterations: int = 200
    tolerance: float = 1e-6
    ping: PingOptions = field(default_factory=PingOptions)
    warm_restarts: int = 1
    fix_sigma2: float | None = None
    seed: int = 0


@dataclass
class ComponentSet:
    """Loadings and components extracted so far, with the orthogonality bookkeeping."""

    loadings: np.ndarray
    components: np.ndarray

    @classmethod
    def empty(cls, n: int, p: int) -> "ComponentSet":
        return cls(loadings=np.zeros((p, 0)), components=np.zeros((n, 0)))

    @property
    def count(self) -> int:
        return self.loadings.shape[1]

    def extended(self, u: np.ndarray, f: np.ndarray) -> "ComponentSet":
        return ComponentSet(
            loadings=np.column_stack([self.loadings, u]),
            components=np.column_stack([self.components, f]),
        )

    def constraint_matrix(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Columns X'W f^j; loadings orthogonal to these keep F'W f_new = 0."""
        return X.T @ (w[:, None] * self.components)


@dataclass
class FitResult:
    """Converged components, per-response states, and everything predict needs."""

    loadings: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    sigma2: np.ndarray
    dispersion: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    metric: np.ndarray | None
    config: CriterionConfig
    families: list[FamilySpec]
    diagnostics: dict
    converged: bool
    response_names: list[str] | None = None
    x_names: list[str] | None = None
    t_names: list[str] | None = None
    group_labels: list | None = None
    components: np.ndarray | None = None
    fitted_eta: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def beta_standardized(self) -> np.ndarray:
        """Implied coefficients on the standardized X block, one row per response."""
        return self.gamma @ self.loadings.T

    @property
    def beta_original(self) -> np.ndarray:
        """Implied coefficients on the original X scale, one row per response."""
        return self.beta_standardized / self.scales

    @property
    def intercept_adjustment(self) -> np.ndarray:
        """Constant absorbed by centering, per response (add to original-scale predictor)."""
        return -self.beta_standardized @ (self.centers / self.scales)

    def to_dict(self) -> dict:
        responses = []
        for k, fam in enumerate(self.families):
            responses.append(
                {
                    "name": self.response_names[k] if self.response_names else f"y{k + 1}",
                    "family": fam.kind,
                    "gamma": self.gamma[k].tolist(),
                    "delta": self.delta[k].tolist(),
                    "xi": self.xi[k].tolist(),
                    "sigma2": float(self.sigma2[k]),
                    "dispersion": float(self.dispersion[k]),
                }
            )
        return {
            "format_version": FORMAT_VERSION,
            "config": {
                "n_components": self.n_components,
                "structure_weight": self.config.structure_weight,
                "locality": self.config.locality,
            },
            "loadings": self.loadings.T.tolist(),
            "responses": responses,
            "standardization": {
                "centers": self.centers.tolist(),
                "scales": self.scales.tolist(),
            },
            "weights": self.weights.tolist(),
            "metric": None if self.metric is None else self.metric.tolist(),
            "x_names": self.x_names,
            "t_names": self.t_names,
            "group_labels": self.group_labels,
            "converged": bool(self.converged),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FitResult":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        responses = doc["responses"]
        families = [FamilySpec(r["family"], r.get("dispersion", 1.0) if r["family"] == "gaussian" else 1.0)
                    for r in responses]
        p = len(doc["standardization"]["centers"])
        # C-contiguous so matrix products take the same code path as a fresh fit
        loadings = np.ascontiguousarray(np.array(doc["loadings"], dtype=float).T)
        if loadings.size == 0:
            loadings = np.zeros((p, 0))
        metric = doc.get("metric")

        def stack(key):
            rows = [np.asarray(r[key], dtype=float) for r in responses]
            if rows[0].size == 0:
                return np.zeros((len(rows), 0))
            return np.vstack(rows)

        return cls(
            loadings=loadings,
            gamma=stack("gamma"),
            delta=stack("delta"),
            xi=np.array([r["xi"] for r in responses], dtype=float),
            sigma2=np.array([r["sigma2"] for r in responses], dtype=float),
            dispersion=np.array([r["dispersion"] for r in responses], dtype=float),
            centers=np.array(doc["standardization"]["centers"], dtype=float),
            scales=np.array(doc["standardization"]["scales"], dtype=float),
            weights=np.array(doc["weights"], dtype=float),
            metric=None if metric is None else np.array(metric, dtype=float),
            config=CriterionConfig(
                structure_weight=doc["config"]["structure_weight"],
                locality=doc["config"]["locality"],
            ),
            families=families,
            diagnostics=doc.get("diagnostics", {}),
            converged=bool(doc.get("converged", True)),
            response_names=[r["name"] for r in responses],
            x_names=doc.get("x_names"),
            t_names=doc.get("t_names"),
            group_labels=doc.get("group_labels"),
        )

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        doc = self.to_dict()
        if meta:
            doc["meta"] = meta
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _initial_states(dataset: Dataset, U: np.ndarray, fix_sigma2: float | None) -> list[ResponseState]:
    states = []
    for k, fam in enumerate(dataset.families):
        y = dataset.Y[:, k]
        dispersion = max(float(np.var(y)), 1e-6) if fam.estimates_dispersion else 1.0
        eta = glmm.initial_eta(y, fam)
        z, w = glmm.working_update(y, eta, fam, dispersion)
        sigma2 = glmm.initial_sigma2(z, U) if fix_sigma2 is None else fix_sigma2
        states.append(
            ResponseState(
                gamma=np.zeros(1),
                delta=np.zeros(0),
                xi=np.zeros(U.shape[1]),
                sigma2=sigma2,
                dispersion=dispersion,
                z=z,
                w=w,
                eta=eta,
            )
        )
    return states


def _ping_seed(base: int, rank: int, outer: int) -> int:
    return int(np.random.SeedSequence((base, rank, outer)).generate_state(1)[0])


def _svd_init(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(np.sqrt(w)[:, None] * X, full_matrices=False)
    return vt[0]


def _fit_component_core(
    X: np.ndarray,
    T: np.ndarray,
    U: np.ndarray,
    Y: np.ndarray,
    families: list[FamilySpec],
    weighting: Weighting,
    prior: ComponentSet,
    states: list[ResponseState],
    cfg: CriterionConfig,
    opts: FitOptions,
) -> tuple[np.ndarray, list[ResponseState], dict]:
    """One alternating extraction at rank prior.count + 1, on standardized X."""
    n, p = X.shape
    w = weighting.w
    rank = prior.count + 1
    T_extra = np.hstack([prior.components, T]) if prior.count else T
    orth_to = prior.constraint_matrix(X, w) if prior.count else None

    svd_start = _svd_init(X, w)
    u_prev: np.ndarray | None = None
    criterion_trace: list[float] = []
    ping_monotone = True
    criterion_decreased = False
    converged = False
    u = svd_start
    outer = 0
    decay_streaks = [0] * len(states)

    for outer in range(1, opts.max_outer_iterations + 1):
        ctx = ProjectionContext(
            X=X,
            z_list=[st.z for st in states],
            w_list=[st.w for st in states],
            T_extra=T_extra,
        )

        def objective(vec, _ctx=ctx):
            return criterion(vec, cfg, _ctx, X, w)

        def gradient(vec, _ctx=ctx):
            return grad_criterion(vec, cfg, _ctx, X, w)

        init_u = u_prev if u_prev is not None else svd_start
        restarts = opts.ping.restarts if u_prev is None else opts.warm_restarts
        ping_opts = dataclasses.replace(
            opts.ping, restarts=restarts, seed=_ping_seed(opts.seed, rank, outer)
        )
        prog, u_of_v = build_metric_program(
            objective, gradient, p, A=weighting.A, orth_to=orth_to, init_u=init_u
        )
        result = ping_maximize(prog, ping_opts)
        if np.any(np.diff(result.trace) < -1e-10):
            ping_monotone = False
        u = u_of_v(result.v)
        f = X @ u

        value = result.value
        if criterion_trace and value < criterion_trace[-1] - 1e-8 * (1.0 + abs(criterion_trace[-1])):
            criterion_decreased = True
        criterion_trace.append(value)

        max_change = 0.0 if u_prev is None else float(np.linalg.norm(u - u_prev))
        for k, fam in enumerate(families):
            st = states[k]
            D = st.sigma2 * np.eye(U.shape[1])
            gamma, delta, xi = glmm.solve_henderson(f, T_extra, U, st.w, D, st.z)
            eta = f * gamma[0] + (T_extra @ delta if T_extra.shape[1] else 0.0) + U @ xi
            eta = glmm.damped_eta(eta, st.eta, fam)

            if opts.fix_sigma2 is None:
                C = glmm.posterior_group_cov(U, st.w, D)
                sigma2, floored = glmm.update_variance(xi, st.sigma2, None, C)
                if not floored:
                    sigma2, decay_streaks[k], floored = glmm.detect_variance_collapse(
                        sigma2, st.sigma2, decay_streaks[k],
                        st.dispersion if fam.estimates_dispersion else 1.0,
                    )
            else:
                sigma2, floored = opts.fix_sigma2, False

            dispersion = st.dispersion
            if fam.estimates_dispersion:
                edf = glmm.henderson_edf(f, T_extra, U, st.w, D)
                dispersion, _ = glmm.update_dispersion_gaussian(
                    st.z, eta, None, min(edf, n - 1)
                )

            z, w_k = glmm.working_update(Y[:, k], eta, fam, dispersion)

            def block_change(new, old):
                if new.size != old.size:
                    return np.inf
                return float(np.max(np.abs(new - old))) if new.size else 0.0

            max_change = max(
                max_change,
                block_change(gamma, st.gamma),
                block_change(delta, st.delta),
                abs(sigma2 - st.sigma2) / max(st.sigma2, glmm.SIGMA2_FLOOR),
            )
            states[k] = ResponseState(
                gamma=gamma,
                delta=delta,
                xi=xi,
                sigma2=sigma2,
                dispersion=dispersion,
                z=z,
                w=w_k,
                eta=eta,
                sigma2_floored=floored,
                dispersion_floored=st.dispersion_floored,
            )

        if u_prev is not None and max_change < opts.tolerance:
            converged = True
            u_prev = u
            break
        u_prev = u

    diagnostics = {
        "rank": rank,
        "outer_iterations": outer,
        "converged": converged,
        "criterion_trace": criterion_trace,
        "criterion_decreased": criterion_decreased,
        "ping_monotone": ping_monotone,
    }
    return u, states, diagnostics


def fit_component(
    dataset: Dataset,
    prior: ComponentSet | None,
    cfg: CriterionConfig,
    opts: FitOptions | None = None,
    weighting: Weighting | None = None,
    states: list[ResponseState] | None = None,
) -> tuple[np.ndarray, list[ResponseState], dict]:
    """Extract the next component given the prior set; returns the loading on
    the standardized scale together with the updated response states."""
    opts = opts or FitOptions()
    weighting = weighting or Weighting.default(dataset.n)
    X, _, _ = standardize(dataset.X, weighting.w)
    U = dataset.indicator()
    if prior is None:
        prior = ComponentSet.empty(dataset.n, dataset.p)
    if states is None:
        states = _initial_states(dataset, U, opts.fix_sigma2)
    return _fit_component_core(
        X, dataset.T, U, dataset.Y, dataset.families, weighting, prior, states, cfg, opts
    )


def fit(
    dataset: Dataset,
    n_components: int,
    cfg: CriterionConfig | None = None,
    opts: FitOptions | None = None,
    weighting: Weighting | None = None,
) -> FitResult:
    """Sequentially extract components and return the full fitted model.

    ``n_components == 0`` fits the null model: covariates and random effects
    only. Extraction stops early (with an explanation in the diagnostics)
    if a rank fails its feasibility conditions.
    """
    cfg = cfg or CriterionConfig()
    opts = opts or FitOptions()
    weighting = weighting or Weighting.default(dataset.n)
    if n_components > dataset.p:
        raise ValueError("cannot extract more components than X columns")
    if weighting.w.shape[0] != dataset.n:
        raise ValueError("weight vector length must match the number of rows")
    if weighting.A is not None and weighting.A.shape[0] != dataset.p:
        raise ValueError("metric dimension must match the number of X columns")

    X, centers, scales = standardize(dataset.X, weighting.w)
    U = dataset.indicator()
    n, p = X.shape
    q = dataset.q

    prior = ComponentSet.empty(n, p)
    component_diags: list[dict] = []
    stopped_early: str | None = None

    if n_components == 0:
        states = []
        for k, fam in enumerate(dataset.families):
            base = glmm.fit_glmm(
                dataset.Y[:, k],
                dataset.T if dataset.r else None,
                U,
                fam,
                fix_sigma2=opts.fix_sigma2,
                max_iterations=opts.max_outer_iterations,
            )
            states.append(
                ResponseState(
                    gamma=np.zeros(0),
                    delta=base.coef,
                    xi=base.xi,
                    sigma2=base.sigma2,
                    dispersion=base.dispersion,
                    z=base.z,
                    w=base.w,
                    eta=base.eta,
                    sigma2_floored=base.sigma2_floored,
                )
            )
            component_diags.append(
                {"rank": 0, "response": k, "outer_iterations": base.iterations,
                 "converged": base.converged}
            )
    else:
        states = _initial_states(dataset, U, opts.fix_sigma2)
        for _ in range(n_components):
            try:
                u, states, diag = _fit_component_core(
                    X, dataset.T, U, dataset.Y, dataset.families,
                    weighting, prior, states, cfg, opts,
                )
            except (ValueError, np.linalg.LinAlgError) as exc:
                stopped_early = str(exc)
                break
            prior = prior.extended(u, X @ u)
            component_diags.append(diag)

    achieved = prior.count
    # reorder the coefficient blocks: earlier components live in the extra-
    # covariate block of the final rank's solve
    gamma = np.zeros((q, achieved))
    delta = np.zeros((q, dataset.r))
    xi = np.zeros((q, U.shape[1]))
    sigma2 = np.zeros(q)
    dispersion = np.zeros(q)
    fitted_eta = np.zeros((n, q))
    for k, st in enumerate(states):
        if achieved:
            gamma[k, : achieved - 1] = st.delta[: achieved - 1]
            gamma[k, achieved - 1] = st.gamma[0]
            delta[k] = st.delta[achieved - 1 :]
        else:
            delta[k] = st.delta
        xi[k] = st.xi
        sigma2[k] = st.sigma2
        dispersion[k] = st.dispersion
        fitted_eta[:, k] = st.eta

    converged = all(d.get("converged", False) for d in component_diags) and stopped_early is None
    diagnostics = {
        "components": component_diags,
        "requested_components": n_components,
        "achieved_components": achieved,
        "stopped_early": stopped_early,
    }
    return FitResult(
        loadings=prior.loadings,
        gamma=gamma,
        delta=delta,
        xi=xi,
        sigma2=sigma2,
        dispersion=dispersion,
        centers=centers,
        scales=scales,
        weights=weighting.w,
        metric=weighting.A,
        config=cfg,
        families=list(dataset.families),
        diagnostics=diagnostics,
        converged=converged,
        response_names=dataset.response_names,
        x_names=dataset.x_names,
        t_names=dataset.t_names,
        group_labels=dataset.group_labels,
        components=prior.components,
        fitted_eta=fitted_eta,
    )


def predict(
    result: FitResult,
    Xnew: np.ndarray,
    Tnew: np.ndarray | None = None,
    groups: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Linear predictors and response-scale predictions for new rows.

    With ``groups`` given, predictions condition on the estimated group
    effects (unknown labels are an error); otherwise the random effects are
    set to zero (marginal prediction).
    """
    Xnew = np.asarray(Xnew, dtype=float)
    Xs = (Xnew - result.centers) / result.scales
    n = Xs.shape[0]
    q = len(result.families)
    F = Xs @ result.loadings
    eta = F @ result.gamma.T
    r = result.delta.shape[1]
    if r:
        if Tnew is None:
            raise ValueError("model was fitted with extra covariates; Tnew is required")
        Tnew = np.asarray(Tnew, dtype=float)
        if Tnew.ndim == 1:
            Tnew = Tnew[:, None]
        eta += Tnew @ result.delta.T
    if groups is not None:
        codes = _group_codes(result, groups)
        eta += result.xi.T[codes - 1]
    mu = np.column_stack(
        [result.families[k].inverse_link(eta[:, k]) for k in range(q)]
    )
    return eta, mu


def _group_codes(result: FitResult, groups: np.ndarray) -> np.ndarray:
    """Integer arrays are read as group codes 1..N (the Dataset convention);
    anything else is matched against the stored original labels."""
    n_groups = result.xi.shape[1]
    groups = np.asarray(groups)
    if np.issubdtype(groups.dtype, np.integer):
        if groups.min() < 1 or groups.max() > n_groups:
            bad = groups[(groups < 1) | (groups > n_groups)][0]
            raise ValueError(f"unknown group label {bad!r} in conditional prediction")
        return groups
    if result.group_labels is None:
        raise ValueError("model carries no group labels; pass integer group codes")
    mapping = {str(lab): i + 1 for i, lab in enumerate(result.group_labels)}
    codes = []
    for g in groups:
        key = str(g)
        if key not in mapping:
            raise ValueError(f"unknown group label {g!r} in conditional prediction")
        codes.append(mapping[key])
    return np.asarray(codes)
