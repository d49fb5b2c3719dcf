"""Dummy-coded design matrices for categorical calendar covariates."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class CategoricalDesign:
    """Reference-coded design for a set of categorical columns.

    Levels are fixed when the design is fitted: only levels present in the
    fitting rows get a column, and the first (smallest) present level of each
    covariate is the reference.  When ``intercept`` is false the first
    covariate is fully dummy-coded instead.  Levels unseen at fit time map to
    the reference when the design is applied to new rows.
    """

    def __init__(self, covariates: Sequence[str], levels: Mapping[str, Sequence[int]],
                 intercept: bool = True):
        self.covariates = tuple(covariates)
        self.levels = {c: np.asarray(levels[c], dtype=np.int64) for c in self.covariates}
        self.intercept = bool(intercept)
        self._columns = []  # (covariate, level) per non-intercept column
        for i, cov in enumerate(self.covariates):
            lv = self.levels[cov]
            keep = lv if (not self.intercept and i == 0) else lv[1:]
            self._columns.extend((cov, int(v)) for v in keep)

    @classmethod
    def fit(cls, table: Mapping[str, np.ndarray], covariates: Sequence[str],
            intercept: bool = True, rows: np.ndarray | None = None) -> "CategoricalDesign":
        levels = {}
        for cov in covariates:
            col = np.asarray(table[cov])
            if rows is not None:
                col = col[rows]
            levels[cov] = np.unique(col)
        return cls(covariates, levels, intercept)

    @property
    def names(self) -> list[str]:
        head = ["intercept"] if self.intercept else []
        return head + [f"{c}[{v}]" for c, v in self._columns]

    @property
    def n_columns(self) -> int:
        return len(self._columns) + int(self.intercept)

    def _column_index(self, table: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        # one int array per covariate: column index or -1 for the reference
        out = []
        offset = int(self.intercept)
        for i, cov in enumerate(self.covariates):
            lv = self.levels[cov]
            coded = lv if (not self.intercept and i == 0) else lv[1:]
            values = np.asarray(table[cov])
            pos = np.searchsorted(coded, values)
            pos_c = np.minimum(pos, max(len(coded) - 1, 0))
            hit = (len(coded) > 0) & (coded[pos_c] == values) if len(coded) else np.zeros(values.shape, bool)
            out.append(np.where(hit, offset + pos_c, -1))
            offset += len(coded)
        return out

    def matrix(self, table: Mapping[str, np.ndarray], sparse: bool = False):
        """Design matrix for the rows of ``table`` (a dict of equal-length arrays)."""
        idx = self._column_index(table)
        n = len(idx[0]) if idx else len(next(iter(table.values())))
        rows, cols = [], []
        if self.intercept:
            rows.append(np.arange(n))
            cols.append(np.zeros(n, dtype=np.int64))
        for ci in idx:
            hit = ci >= 0
            rows.append(np.nonzero(hit)[0])
            cols.append(ci[hit])
        r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        if sparse:
            return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, self.n_columns))
        X = np.zeros((n, self.n_columns))
        X[r, c] = 1.0
        return X

    def coef_from_dict(self, values: Mapping[str, float]) -> np.ndarray:
        """Coefficient vector from a name -> value map; missing names are zero."""
        names = self.names
        unknown = set(values) - set(names)
        if unknown:
            raise KeyError(f"unknown coefficient names: {sorted(unknown)}")
        return np.array([float(values.get(n, 0.0)) for n in names])

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "levels": {c: self.levels[c].tolist() for c in self.covariates},
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CategoricalDesign":
        return cls(d["covariates"], d["levels"], d.get("intercept", True))

    def __repr__(self):
        return f"CategoricalDesign({list(self.covariates)}, n_columns={self.n_columns})"


STANDARD_LEVELS = {
    "dow": range(1, 8),
    "dom": range(1, 32),
    "month": range(1, 13),
    "jan1": range(0, 2),
    "dec31": range(0, 2),
    "holiday": range(0, 3),
    "workdays": range(0, 6),
}


def reference_coded(effects: Mapping[str, Mapping[int, float]], intercept: float = 0.0) -> dict[str, float]:
    """Turn raw per-level effects into intercept + reference-coded coefficients.

    ``effects`` maps covariate -> {level: raw effect}; unlisted levels have raw
    effect zero.  The reference is the first standard level of each
    covariate, and its raw effect moves into the intercept, so the implied
    linear predictor is unchanged.
    """
    out = {"intercept": float(intercept)}
    for cov, raw in effects.items():
        levels = list(STANDARD_LEVELS[cov])
        base = float(raw.get(levels[0], 0.0))
        out["intercept"] += base
        for lv in levels[1:]:
            val = float(raw.get(lv, 0.0)) - base
            if val != 0.0:
                out[f"{cov}[{lv}]"] = val
    return out
