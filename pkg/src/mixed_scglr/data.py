"""Data containers and design-matrix construction for grouped multivariate data.

Holds the observed blocks (responses Y, redundant explanatory block X,
clean covariate block T, group labels), the per-response family choices,
and the weighting/metric pair used throughout the component criteria.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

GAUSSIAN = "gaussian"
POISSON = "poisson"

# exp(eta) above this is treated as an overflow of the log link
_ETA_OVERFLOW = 700.0


@dataclass(frozen=True)
class FamilySpec:
    """Exponential-family choice for one response.

    ``gaussian`` uses the identity link with an estimated dispersion;
    ``poisson`` uses the log link with dispersion fixed at 1.
    """

    kind: str
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, POISSON):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if not (self.dispersion > 0):
            raise ValueError("dispersion must be positive")
        if self.kind == POISSON and self.dispersion != 1.0:
            raise ValueError("poisson dispersion is fixed at 1")

    @property
    def estimates_dispersion(self) -> bool:
        return self.kind == GAUSSIAN

    def inverse_link(self, eta: np.ndarray) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return np.asarray(eta, dtype=float)
        high = np.flatnonzero(eta > _ETA_OVERFLOW)
        if high.size:
            raise FloatingPointError(
                f"log-link overflow at row {int(high[0])} (eta={eta[high[0]]:.3g})"
            )
        return np.exp(eta)

    def link_derivative(self, mu: np.ndarray) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return np.ones_like(mu)
        return 1.0 / mu

    def conditional_variance(self, mu: np.ndarray, dispersion: float) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return np.full_like(mu, dispersion)
        return mu


def gaussian_family(dispersion: float = 1.0) -> FamilySpec:
    return FamilySpec(GAUSSIAN, dispersion)


def poisson_family() -> FamilySpec:
    return FamilySpec(POISSON, 1.0)


def build_indicator(groups: np.ndarray, n_groups: int | None = None) -> np.ndarray:
    """Binary group-membership matrix U with U[i, g-1] = 1 for row i in group g.

    Labels must take every value 1..N at least once; an empty group is an error.
    """
    groups = np.asarray(groups)
    if groups.ndim != 1:
        raise ValueError("groups must be a 1-d label array")
    if not np.issubdtype(groups.dtype, np.integer):
        if not np.all(groups == np.round(groups)):
            raise ValueError("group labels must be integers")
        groups = groups.astype(int)
    if n_groups is None:
        n_groups = int(groups.max()) if groups.size else 0
    if groups.size and (groups.min() < 1 or groups.max() > n_groups):
        raise ValueError(f"group labels must lie in 1..{n_groups}")
    counts = np.bincount(groups, minlength=n_groups + 1)[1:]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"group {int(empty[0]) + 1} has no observations")
    U = np.zeros((groups.size, n_groups))
    U[np.arange(groups.size), groups - 1] = 1.0
    return U


def standardize(
    X: np.ndarray, w: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale each column of X to weighted mean 0 and variance 1.

    Weights default to 1/n per row. Returns the transformed matrix and the
    centers/scales needed to map coefficients back to the original column
    scale. Columns with zero weighted variance are rejected.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if w is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(w, dtype=float)
        w = w / w.sum()
    centers = w @ X
    Xc = X - centers
    variances = w @ (Xc**2)
    dead = np.flatnonzero(variances <= 0)
    if dead.size:
        raise ValueError(f"column {int(dead[0])} of X is constant under the weights")
    scales = np.sqrt(variances)
    return Xc / scales, centers, scales


@dataclass(frozen=True)
class Weighting:
    """Unit-weight diagonal w (normalised to sum 1) and SPD loading metric A.

    ``A=None`` stands for the identity metric on standardized columns, which
    turns the loading normalisation into a plain unit-norm constraint.
    """

    w: np.ndarray
    A: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be a nonnegative 1-d array with positive sum")
        object.__setattr__(self, "w", w / w.sum())
        if self.A is not None:
            A = np.asarray(self.A, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError("metric A must be square")
            if not np.allclose(A, A.T):
                raise ValueError("metric A must be symmetric")
            try:
                scipy.linalg.cholesky(A, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise ValueError("metric A is not positive definite") from exc
            object.__setattr__(self, "A", A)

    @classmethod
    def default(cls, n: int) -> "Weighting":
        return cls(np.full(n, 1.0 / n))


@dataclass
class Dataset:
    """Grouped observations: responses, redundant block, clean block, labels.

    All blocks share the row dimension; group labels take every value in
    1..N at least once. Missing values are rejected outright.
    """

    Y: np.ndarray
    X: np.ndarray
    T: np.ndarray
    groups: np.ndarray
    families: list[FamilySpec]
    response_names: list[str] | None = None
    x_names: list[str] | None = None
    t_names: list[str] | None = None
    group_labels: list | None = None

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.Y.shape[0] == 1 and self.Y.shape[1] > 1 and len(self.families) == 1:
            self.Y = self.Y.T
        self.X = np.asarray(self.X, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        if self.T.size == 0:
            self.T = np.zeros((self.Y.shape[0], 0))
        self.groups = np.asarray(self.groups)
        n = self.Y.shape[0]
        if self.X.shape[0] != n or self.T.shape[0] != n or self.groups.shape[0] != n:
            raise ValueError("Y, X, T and groups must have the same number of rows")
        if self.q < 1 or self.p < 1:
            raise ValueError("need at least one response and one X column")
        if len(self.families) != self.q:
            raise ValueError("one family per response required")
        for block, name in ((self.Y, "Y"), (self.X, "X"), (self.T, "T")):
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} contains missing or non-finite values")
        for k, fam in enumerate(self.families):
            if fam.kind == POISSON and np.any(self.Y[:, k] < 0):
                raise ValueError(f"response {k} is poisson but has negative values")
        # raises on empty groups or labels outside 1..N
        U = build_indicator(self.groups)
        if U.shape[1] < 2:
            raise ValueError("need at least two groups")
        variances = self.X.var(axis=0)
        dead = np.flatnonzero(variances <= 0)
        if dead.size:
            raise ValueError(f"column {int(dead[0])} of X is constant")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return self.T.shape[1]

    @property
    def n_groups(self) -> int:
        return int(np.asarray(self.groups).max())

    def indicator(self) -> np.ndarray:
        return build_indicator(self.groups, self.n_groups)

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row subset keeping the full group coding (labels stay 1..N)."""
        return Dataset(
            Y=self.Y[rows],
            X=self.X[rows],
            T=self.T[rows],
            groups=np.asarray(self.groups)[rows],
            families=list(self.families),
            response_names=self.response_names,
            x_names=self.x_names,
            t_names=self.t_names,
            group_labels=self.group_labels,
        )


def load_roles(path: str | Path) -> dict:
    """Read and validate a column-role config (JSON).

    Expected keys: ``responses`` (name -> family), ``x`` (list of column
    names), optional ``t`` (list), ``group`` (single column name). Roles are
    explicit; unlisted CSV columns are ignored.
    """
    with open(path, encoding="utf-8") as fh:
        roles = json.load(fh)
    if not isinstance(roles, dict):
        raise ValueError("roles config must be a JSON object")
    for key in ("responses", "x", "group"):
        if key not in roles:
            raise ValueError(f"roles config is missing the {key!r} field")
    if not isinstance(roles["responses"], dict) or not roles["responses"]:
        raise ValueError("field 'responses' must map column names to families")
    for name, fam in roles["responses"].items():
        if fam not in (GAUSSIAN, POISSON):
            raise ValueError(f"response {name!r} has unknown family {fam!r}")
    if not isinstance(roles["x"], list) or not roles["x"]:
        raise ValueError("field 'x' must be a nonempty list of column names")
    roles.setdefault("t", [])
    if not isinstance(roles["t"], list):
        raise ValueError("field 't' must be a list of column names")
    if not isinstance(roles["group"], str):
        raise ValueError("field 'group' must be a single column name")
    return roles


def load_dataset(data_path: str | Path, roles_path: str | Path) -> Dataset:
    """Build a Dataset from a headed CSV file plus a column-role config."""
    roles = load_roles(roles_path)
    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and not row[0].startswith("#")]
    if len(rows) < 2:
        raise ValueError("data file needs a header row and at least one data row")
    header = rows[0]
    columns = {name: idx for idx, name in enumerate(header)}
    used = list(roles["responses"]) + roles["x"] + roles["t"] + [roles["group"]]
    missing = [name for name in used if name not in columns]
    if missing:
        raise ValueError(f"columns not found in data file: {missing}")

    body = rows[1:]

    def pull(name: str) -> list[str]:
        idx = columns[name]
        return [row[idx] for row in body]

    def numeric(name: str) -> np.ndarray:
        raw = pull(name)
        try:
            return np.array([float(v) for v in raw])
        except ValueError as exc:
            raise ValueError(f"column {name!r} has a non-numeric entry") from exc

    response_names = list(roles["responses"])
    Y = np.column_stack([numeric(name) for name in response_names])
    X = np.column_stack([numeric(name) for name in roles["x"]])
    T = (
        np.column_stack([numeric(name) for name in roles["t"]])
        if roles["t"]
        else np.zeros((len(body), 0))
    )
    raw_groups = pull(roles["group"])
    labels = sorted(set(raw_groups))
    label_to_code = {lab: i + 1 for i, lab in enumerate(labels)}
    groups = np.array([label_to_code[g] for g in raw_groups])
    families = [FamilySpec(roles["responses"][name]) for name in response_names]
    return Dataset(
        Y=Y,
        X=X,
        T=T,
        groups=groups,
        families=families,
        response_names=response_names,
        x_names=list(roles["x"]),
        t_names=list(roles["t"]),
        group_labels=labels,
    )
