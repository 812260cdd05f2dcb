"""Command-line front end: fit, predict, simulate, cross-validate, plot data.

Every command is deterministic given its config and seed; outputs carry a
metadata block (version, config hash, seed). A JSON config file can supply
any option, with explicit flags taking precedence. Verbosity is controlled
by the SCGLR_LOG environment variable (debug, info, warning, quiet).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .criteria import CriterionConfig
from .data import load_dataset
from .evaluation import CvPlan, correlation_scatterplot_data, cross_validate
from .model import FitOptions, FitResult, fit, predict
from .simulate import SimDesign, lmm_estimator, mixed_scglr_estimator, run_study
from .util import config_hash, meta_lines, write_csv

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

log = logging.getLogger("mixed_scglr")


def _setup_logging():
    level = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "quiet": logging.CRITICAL,
    }.get(os.environ.get("SCGLR_LOG", "warning").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixed-scglr",
        description="Supervised-component regularisation for multivariate grouped GLMMs",
    )
    parser.add_argument("--config", help="JSON file of option defaults (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_data=True):
        if with_data:
            p.add_argument("--data", help="CSV data file with header row")
            p.add_argument("--roles", help="JSON column-role config")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--out", help="output directory")

    p_fit = sub.add_parser("fit", help="fit the component model")
    add_common(p_fit)
    p_fit.add_argument("--K", type=int, help="number of components")
    p_fit.add_argument("--s", type=float, help="structure weight in [0,1]")
    p_fit.add_argument("--l", type=float, help="locality exponent >= 1")

    p_pred = sub.add_parser("predict", help="predict new rows from a fitted model")
    add_common(p_pred)
    p_pred.add_argument("--model", help="model JSON produced by fit/cv")
    p_pred.add_argument(
        "--marginal", action="store_true",
        help="ignore group labels and predict with random effects at zero",
    )

    p_sim = sub.add_parser("simulate", help="run the synthetic estimation study")
    add_common(p_sim, with_data=False)
    p_sim.add_argument("--tau", type=_float_list, help="comma list of redundancy levels")
    p_sim.add_argument("--replicates", type=int, help="replicates per redundancy level")
    p_sim.add_argument("--K", type=int, help="components for the component estimator")
    p_sim.add_argument("--s", type=float, help="structure weight")
    p_sim.add_argument("--l", type=float, help="locality exponent")

    p_cv = sub.add_parser("cv", help="cross-validate hyperparameters and refit the best")
    add_common(p_cv)
    p_cv.add_argument("--k-grid", type=_int_list, help="comma list of component counts")
    p_cv.add_argument("--s-grid", type=_float_list, help="comma list of structure weights")
    p_cv.add_argument("--l-grid", type=_float_list, help="comma list of locality exponents")
    p_cv.add_argument("--folds", type=int, help="number of folds (default 5)")
    p_cv.add_argument(
        "--marginal", action="store_true",
        help="predict held-out folds with random effects at zero",
    )

    p_plot = sub.add_parser("plotdata", help="export correlation scatterplot data")
    add_common(p_plot)
    p_plot.add_argument("--model", help="model JSON produced by fit/cv")
    p_plot.add_argument("--plane", type=_int_list, help="component plane, e.g. 1,2")
    p_plot.add_argument("--threshold", type=float, help="plane-cosine filter (default 0.8)")

    return parser


def _merge_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> dict:
    merged = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            parser.error(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            parser.error("config file must hold a JSON object")
        merged.update(file_cfg)
    for key, value in vars(args).items():
        if key == "config" or value is None or value is False:
            continue
        merged[key] = value
    return merged


def _require(parser, cfg: dict, *fields):
    for name in fields:
        if cfg.get(name) is None:
            parser.error(f"missing required option --{name.replace('_', '-')}")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: dict) -> tuple[list[str], dict]:
    seed = cfg.get("seed")
    # hash the analytical configuration: where output lands and how many
    # workers ran cannot change any number
    hashed = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    chash = config_hash(hashed)
    lines = meta_lines(__version__, chash, seed)
    return lines, {"version": __version__, "config_hash": chash, "seed": seed}


def _threads(cfg) -> int:
    return int(cfg.get("threads") or os.cpu_count() or 1)


def _fit_options(cfg) -> FitOptions:
    # max_outer_iterations / tolerance have no flags but may come from --config
    kwargs = {"seed": int(cfg.get("seed", 0) or 0)}
    if cfg.get("max_outer_iterations") is not None:
        kwargs["max_outer_iterations"] = int(cfg["max_outer_iterations"])
    if cfg.get("fit_tolerance") is not None:
        kwargs["tolerance"] = float(cfg["fit_tolerance"])
    return FitOptions(**kwargs)


def _criterion_config(cfg) -> CriterionConfig:
    return CriterionConfig(
        structure_weight=float(cfg.get("s", 0.5)),
        locality=float(cfg.get("l", 4.0)),
    )


def _write_coefficients(result: FitResult, path: Path, meta: list[str]) -> None:
    x_names = result.x_names or [f"x{j + 1}" for j in range(result.loadings.shape[0])]
    r_names = result.response_names or [f"y{k + 1}" for k in range(len(result.families))]
    beta_std = result.beta_standardized
    beta_orig = result.beta_original
    rows = []
    for k, rname in enumerate(r_names):
        for j, xname in enumerate(x_names):
            rows.append([rname, xname, float(beta_std[k, j]), float(beta_orig[k, j])])
        rows.append([rname, "(intercept-adjustment)", 0.0, float(result.intercept_adjustment[k])])
    write_csv(path, ["response", "variable", "beta_standardized", "beta_original"], rows, meta)


def cmd_fit(parser, cfg: dict) -> int:
    _require(parser, cfg, "data", "roles", "out")
    dataset = load_dataset(cfg["data"], cfg["roles"])
    n_components = int(cfg.get("K", 2))
    result = fit(dataset, n_components, _criterion_config(cfg), _fit_options(cfg))
    meta_l, meta_d = _meta(cfg)
    out = _out_dir(cfg)
    result.save(out / "model.json", meta=meta_d)
    _write_coefficients(result, out / "coefficients.csv", meta_l)
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump({"diagnostics": result.diagnostics, "converged": result.converged,
                   "meta": meta_d}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    achieved = result.diagnostics["achieved_components"]
    print(f"fit: {achieved} component(s), converged={result.converged}")
    if not result.converged:
        log.warning("fit did not converge: %s", result.diagnostics.get("stopped_early"))
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(parser, cfg: dict) -> int:
    _require(parser, cfg, "model", "data", "roles", "out")
    result = FitResult.load(cfg["model"])
    dataset = load_dataset(cfg["data"], cfg["roles"])
    groups = None if cfg.get("marginal") else np.asarray(dataset.group_labels)[
        np.asarray(dataset.groups) - 1
    ]
    eta, mu = predict(result, dataset.X, dataset.T if dataset.r else None, groups=groups)
    meta_l, _ = _meta(cfg)
    out = _out_dir(cfg)
    r_names = result.response_names or [f"y{k + 1}" for k in range(len(result.families))]
    header = ["row"] + [f"eta_{n}" for n in r_names] + [f"mu_{n}" for n in r_names]
    rows = [
        [i] + [float(v) for v in eta[i]] + [float(v) for v in mu[i]]
        for i in range(eta.shape[0])
    ]
    write_csv(out / "predictions.csv", header, rows, meta_l)
    print(f"predict: wrote {eta.shape[0]} rows")
    return EXIT_OK


def cmd_simulate(parser, cfg: dict) -> int:
    _require(parser, cfg, "tau", "replicates", "seed", "out")
    taus = cfg["tau"]
    seed = int(cfg["seed"])
    designs = [SimDesign(tau=t, seed=seed) for t in taus]
    opts = _fit_options(cfg)
    estimators = {
        "lmm": lmm_estimator(),
        "mixed_scglr": mixed_scglr_estimator(
            n_components=int(cfg.get("K", 2)),
            structure_weight=float(cfg.get("s", 0.5)),
            locality=float(cfg.get("l", 4.0)),
            opts=opts,
        ),
    }
    study = run_study(designs, int(cfg["replicates"]), estimators, threads=_threads(cfg))
    meta_l, _ = _meta(cfg)
    out = _out_dir(cfg)
    write_csv(
        out / "replicates.csv",
        ["tau", "replicate", "estimator", "rel_error_1", "rel_error_2",
         "lower_rel_error", "failed"],
        [
            [r.tau, r.replicate, r.estimator, r.rel_error_1, r.rel_error_2,
             r.lower_rel_error, int(r.failed)]
            for r in study.rows
        ],
        meta_l,
    )
    names = sorted(estimators)
    by_tau = {}
    for row in study.summary:
        by_tau.setdefault(row["tau"], {})[row["estimator"]] = row["mlre"]
    write_csv(
        out / "summary.csv",
        ["tau"] + [f"mlre_{n}" for n in names],
        [[t] + [by_tau[t][n] for n in names] for t in sorted(by_tau)],
        meta_l,
    )
    for t in sorted(by_tau):
        parts = ", ".join(f"{n}={by_tau[t][n]:.4f}" for n in names)
        print(f"simulate: tau={t}: {parts}")
    return EXIT_OK


def cmd_cv(parser, cfg: dict) -> int:
    _require(parser, cfg, "data", "roles", "k_grid", "seed", "out")
    if not cfg["k_grid"]:
        parser.error("option --k-grid must list at least one component count")
    dataset = load_dataset(cfg["data"], cfg["roles"])
    plan = CvPlan(
        k_grid=tuple(cfg["k_grid"]),
        s_grid=tuple(cfg.get("s_grid") or (0.5,)),
        locality_grid=tuple(cfg.get("l_grid") or (4.0,)),
        n_folds=int(cfg.get("folds") or 5),
        conditional=not cfg.get("marginal", False),
        seed=int(cfg["seed"]),
    )
    opts = _fit_options(cfg)
    cv = cross_validate(dataset, plan, opts, threads=_threads(cfg))
    meta_l, meta_d = _meta(cfg)
    out = _out_dir(cfg)
    write_csv(
        out / "cv_table.csv",
        ["n_components", "structure_weight", "locality", "metric", "failed_folds"],
        [
            [r["n_components"], r["structure_weight"], r["locality"],
             r["metric"], r["failed_folds"]]
            for r in cv.table
        ],
        meta_l,
    )
    with open(out / "selection.json", "w", encoding="utf-8") as fh:
        json.dump({"best": cv.best, "meta": meta_d}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    best_cfg = CriterionConfig(
        structure_weight=cv.best["structure_weight"], locality=cv.best["locality"]
    )
    result = fit(dataset, cv.best["n_components"], best_cfg, opts)
    result.save(out / "model.json", meta=meta_d)
    print(
        f"cv: best K={cv.best['n_components']} s={cv.best['structure_weight']} "
        f"l={cv.best['locality']} metric={cv.best['metric']:.6f}"
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_plotdata(parser, cfg: dict) -> int:
    _require(parser, cfg, "model", "data", "roles", "out")
    result = FitResult.load(cfg["model"])
    dataset = load_dataset(cfg["data"], cfg["roles"])
    plane = tuple(cfg.get("plane") or (1, 2))
    if len(plane) != 2:
        parser.error("option --plane must name exactly two components, e.g. 1,2")
    threshold = float(cfg.get("threshold", 0.8))
    rows = correlation_scatterplot_data(result, dataset, plane, threshold)
    meta_l, _ = _meta(cfg)
    out = _out_dir(cfg)
    write_csv(
        out / "scatterplot.csv",
        ["name", "cor_a", "cor_b", "cosine", "supplementary"],
        [[r["name"], r["cor_a"], r["cor_b"], r["cosine"], int(r["supplementary"])] for r in rows],
        meta_l,
    )
    print(f"plotdata: wrote {len(rows)} rows for plane {plane[0]},{plane[1]}")
    return EXIT_OK


_HANDLERS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "cv": cmd_cv,
    "plotdata": cmd_plotdata,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _merge_config(parser, args)
    try:
        return _HANDLERS[args.command](parser, cfg)
    except (ValueError, RuntimeError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
