"""Datasets and polynomial dictionaries.

A :class:`BasisExpansion` maps a covariate row ``x`` to
``(1, x_1, ..., x_p, x_1^2, ..., x_p^2, x_1^3, ..., x_p^3)`` with every
power term divided by its sample standard deviation. Terms are not centered,
so the derivative with respect to the treatment coordinate stays analytic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBasisError, DimensionError, EmptyDataError, SchemaError

MISSING_TOKENS = frozenset({"", "NA"})


@dataclass(frozen=True)
class Dataset:
    """Outcome vector, covariate matrix and the position of the treatment."""

    outcome: np.ndarray
    covariates: np.ndarray
    treatment_index: int = 0
    column_names: tuple[str, ...] | None = None
    n_dropped: int = 0

    def __post_init__(self):
        y = np.ascontiguousarray(self.outcome, dtype=float).reshape(-1)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != y.shape[0]:
            raise DimensionError(
                f"outcome has {y.shape[0]} rows but covariates have {x.shape[0]}", stage="ingest"
            )
        if y.shape[0] < 2 or x.shape[1] < 1:
            raise EmptyDataError(f"need N >= 2 and p >= 1, got N={y.shape[0]}, p={x.shape[1]}")
        if not (0 <= self.treatment_index < x.shape[1]):
            raise DimensionError(
                f"treatment_index {self.treatment_index} out of range for p={x.shape[1]}", stage="ingest"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise EmptyDataError("dataset contains missing or non-finite values")
        if self.column_names is not None and len(self.column_names) != x.shape[1]:
            raise SchemaError("column_names length does not match covariate count")
        y.setflags(write=False)
        x = np.array(x, order="C")
        x.setflags(write=False)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", x)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def treatment(self) -> np.ndarray:
        return self.covariates[:, self.treatment_index]


def _to_float(cell):
    if cell is None:
        return math.nan
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def ingest_csv(path, outcome_col, treatment_col, control_cols=None) -> Dataset:
    """Read a CSV file into a :class:`Dataset` with listwise deletion.

    The covariate matrix has the treatment in column 0 followed by the
    controls in the order given. When ``control_cols`` is None every other
    column except the outcome is used. A control equal to the treatment
    column is ignored. The number of rows removed because of an empty,
    ``NA`` or non-numeric cell is stored in ``Dataset.n_dropped``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = list(reader)

    if control_cols is None:
        control_cols = [c for c in header if c not in (outcome_col, treatment_col)]
    controls = [c for c in control_cols if c != treatment_col]
    wanted = [outcome_col, treatment_col, *controls]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"columns not found in {path.name}: {', '.join(missing)}")
    if len(set(wanted)) != len(wanted):
        raise SchemaError("outcome, treatment and control columns must be distinct")

    pos = [header.index(c) for c in wanted]
    values = np.array(
        [[_to_float(r[k]) if k < len(r) else math.nan for k in pos] for r in rows if r],
        dtype=float,
    ).reshape(-1, len(pos))
    keep = np.all(np.isfinite(values), axis=1)
    n_dropped = int(values.shape[0] - keep.sum())
    values = values[keep]
    if values.shape[0] == 0:
        raise EmptyDataError(f"no complete rows in {path.name} ({n_dropped} dropped)")
    return Dataset(
        outcome=values[:, 0],
        covariates=values[:, 1:],
        treatment_index=0,
        column_names=tuple([treatment_col, *controls]),
        n_dropped=n_dropped,
    )


@dataclass(frozen=True)
class BasisExpansion:
    """Marginal power dictionary with per-term scale factors.

    ``variables[k]`` and ``powers[k]`` describe term ``k``; the intercept is
    encoded as variable ``-1`` with power ``0`` and scale ``1``.
    """

    variables: np.ndarray
    powers: np.ndarray
    scale_factors: np.ndarray
    n_covariates: int
    treatment_index: int = 0
    labels: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("variables", "powers", "scale_factors"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dimension(self) -> int:
        return self.variables.shape[0]

    @property
    def terms(self) -> list[tuple[int, int]]:
        return list(zip(self.variables.tolist(), self.powers.tolist()))

    @property
    def treatment_terms(self) -> np.ndarray:
        """Indices of the terms that depend on the treatment coordinate."""
        return np.flatnonzero(self.variables == self.treatment_index)

    def matrix(self, X) -> np.ndarray:
        """Evaluate the dictionary on every row of ``X`` (N x p_b)."""
        X = self._check(X)
        out = np.empty((X.shape[0], self.dimension))
        for k, (j, d) in enumerate(zip(self.variables, self.powers)):
            if j < 0:
                out[:, k] = 1.0
            else:
                out[:, k] = X[:, j] ** d / self.scale_factors[k]
        return out

    def derivative_matrix(self, X) -> np.ndarray:
        """Derivative of every dictionary term with respect to the treatment."""
        X = self._check(X)
        out = np.zeros((X.shape[0], self.dimension))
        for k in self.treatment_terms:
            d = self.powers[k]
            x1 = X[:, self.treatment_index]
            out[:, k] = d * x1 ** (d - 1) / self.scale_factors[k]
        return out

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_covariates:
            raise DimensionError(f"expected {self.n_covariates} covariates, got {X.shape[1]}")
        return X

    def to_dict(self) -> dict:
        return {
            "variables": self.variables.tolist(),
            "powers": self.powers.tolist(),
            "scale_factors": self.scale_factors.tolist(),
            "n_covariates": self.n_covariates,
            "treatment_index": self.treatment_index,
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> BasisExpansion:
        return cls(
            variables=np.asarray(d["variables"], dtype=np.int64),
            powers=np.asarray(d["powers"], dtype=np.int64),
            scale_factors=np.asarray(d["scale_factors"], dtype=float),
            n_covariates=int(d["n_covariates"]),
            treatment_index=int(d["treatment_index"]),
            labels=tuple(d.get("labels", ())),
        )


def build_basis(dataset: Dataset, degree: int = 3) -> BasisExpansion:
    """Build the standardized power dictionary of ``dataset``.

    Terms are ordered as the intercept followed by all first powers, all
    second powers and so on. Each power term is divided by its sample
    standard deviation (ddof=1) so that its scaled sample variance is one.
    Degrees other than 3 are accepted but have not been studied.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    X = dataset.covariates
    names = dataset.column_names or tuple(f"x{j + 1}" for j in range(dataset.p))
    variables, powers, scales, labels = [-1], [0], [1.0], ["(intercept)"]
    for d in range(1, degree + 1):
        for j in range(dataset.p):
            sd = float(np.std(X[:, j] ** d, ddof=1))
            if not sd > 0.0 or not np.isfinite(sd):
                raise DegenerateBasisError(
                    f"column {names[j]!r} raised to power {d} has zero variance"
                )
            variables.append(j)
            powers.append(d)
            scales.append(sd)
            labels.append(names[j] if d == 1 else f"{names[j]}^{d}")
    return BasisExpansion(
        variables=np.asarray(variables, dtype=np.int64),
        powers=np.asarray(powers, dtype=np.int64),
        scale_factors=np.asarray(scales, dtype=float),
        n_covariates=dataset.p,
        treatment_index=dataset.treatment_index,
        labels=tuple(labels),
    )


def evaluate_basis(basis: BasisExpansion, x) -> np.ndarray:
    """Evaluate the dictionary at a single covariate vector."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != basis.n_covariates:
        raise DimensionError(f"expected {basis.n_covariates} covariates, got {x.shape[0]}")
    return basis.matrix(x.reshape(1, -1))[0]


def evaluate_basis_derivative(basis: BasisExpansion, x, treatment_index=None) -> np.ndarray:
    """Derivative of the dictionary at ``x`` along the treatment coordinate."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != basis.n_covariates:
        raise DimensionError(f"expected {basis.n_covariates} covariates, got {x.shape[0]}")
    if treatment_index is not None and treatment_index != basis.treatment_index:
        basis = BasisExpansion(
            basis.variables, basis.powers, basis.scale_factors, basis.n_covariates, treatment_index
        )
    return basis.derivative_matrix(x.reshape(1, -1))[0]
