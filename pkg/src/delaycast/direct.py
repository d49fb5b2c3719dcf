"""Direct Poisson regression of cell counts on occurrence, delay and reporting-day covariates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .calendar import calendar_table
from .design import CategoricalDesign
from .glm import DesignMatrix, FitResult, fit_weighted_poisson
from .inference import NowcastResult, nowcast_from_means
from .reporting import OCCURRENCE_COVARIATES
from .triangle import RunoffTriangle

log = logging.getLogger(__name__)

VARIANTS = ("structured", "per_day_alpha")


@dataclass(frozen=True)
class DirectSpec:
    """Covariates of the direct cell-count regression.

    ``log E N_td = log e_t + a_t + b_delay(d) + b_dow(t+d) + b_hol(t+d) + b_holnext(t+d+1)``

    where ``a_t`` is a calendar regression on the occurrence day
    (``structured``) or a free effect per day (``per_day_alpha``).  Delays up
    to ``individual_max`` get one level each; longer delays are pooled in
    blocks of ``pool_width`` days.
    """

    variant: str = "structured"
    occurrence_covariates: tuple = OCCURRENCE_COVARIATES
    report_dow: bool = True
    report_holiday: bool = True
    next_day_holiday: bool = True
    delay: bool = True
    individual_max: int = 28
    pool_width: int = 7

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.individual_max < 0 or self.pool_width < 1:
            raise ValueError("individual_max must be >= 0 and pool_width >= 1")


def delay_level(d, individual_max: int = 28, pool_width: int = 7):
    """Level index of delay ``d``: the delay itself up to ``individual_max``, then weekly blocks."""
    d = np.asarray(d, np.int64)
    pooled = individual_max + 1 + (d - individual_max - 1) // pool_width
    return np.where(d <= individual_max, d, pooled)


def _cell_table(tri: RunoffTriangle, spec: DirectSpec, t: np.ndarray, d: np.ndarray) -> dict:
    tab = calendar_table(tri.calendar, int((t + d).max(initial=1)) + 2)
    occ = tab.columns(t)
    rep = tab.columns(t + d)
    nxt = tab.columns(t + d + 1)
    table = {"day": t, "delay": delay_level(d, spec.individual_max, spec.pool_width),
             "report_dow": rep["dow"], "report_holiday": rep["holiday"],
             "next_holiday": nxt["holiday"]}
    for c in spec.occurrence_covariates:
        table[c] = occ[c]
    return table


def _covariates(spec: DirectSpec) -> list:
    cov = ["day"] if spec.variant == "per_day_alpha" else list(spec.occurrence_covariates)
    if spec.delay:
        cov.append("delay")
    if spec.report_dow:
        cov.append("report_dow")
    if spec.report_holiday:
        cov.append("report_holiday")
    if spec.next_day_holiday:
        cov.append("next_holiday")
    return cov


@dataclass
class DirectDesign:
    design: DesignMatrix
    response: np.ndarray
    t: np.ndarray
    d: np.ndarray
    coding: CategoricalDesign
    dropped_delay_levels: list = field(default_factory=list)


def observed_cells(tau: int) -> tuple[np.ndarray, np.ndarray]:
    """``(t, d)`` for every cell with ``t + d <= tau``, row by row."""
    t = np.repeat(np.arange(1, tau + 1), np.arange(tau, 0, -1))
    starts = np.repeat(np.cumsum(np.arange(tau, 0, -1)) - np.arange(tau, 0, -1), np.arange(tau, 0, -1))
    d = np.arange(len(t)) - starts
    return t, d


def build_direct_design(tri: RunoffTriangle, spec: DirectSpec = DirectSpec()) -> DirectDesign:
    """Sparse design over all observed cells, zero cells included.

    Delay levels without any reported event cannot be estimated (their MLE
    is at minus infinity); their cells are left out and the levels listed in
    ``dropped_delay_levels``.
    """
    t, d = observed_cells(tri.tau)
    y = tri.counts[t - 1, d].astype(float)
    table = _cell_table(tri, spec, t, d)
    dropped = []
    if spec.delay:
        lv = table["delay"]
        totals = np.bincount(lv, weights=y)
        keep_levels = totals > 0
        dropped = np.nonzero(~keep_levels)[0].tolist()
        keep = keep_levels[lv]
        if not keep.all():
            t, d, y = t[keep], d[keep], y[keep]
            table = {k: v[keep] for k, v in table.items()}
    intercept = spec.variant == "structured"
    coding = CategoricalDesign.fit(table, _covariates(spec), intercept=intercept)
    X = coding.matrix(table, sparse=True)
    offset = tri.log_exposure[t - 1]
    return DirectDesign(DesignMatrix(X, coding.names, offset), y, t, d, coding, dropped)


@dataclass
class DirectFit:
    spec: DirectSpec
    coding: CategoricalDesign
    result: FitResult
    dropped_delay_levels: list
    volatile_days: list
    n_cells: int

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.coding.names, self.result.coefficients.tolist()))

    def to_dict(self) -> dict:
        return {
            "kind": "direct", "variant": self.spec.variant,
            "design": self.coding.to_dict(), "coefficients": self.result.coefficients.tolist(),
            "loglik": self.result.loglik, "converged": self.result.converged,
            "dropped_delay_levels": self.dropped_delay_levels, "volatile_days": self.volatile_days,
        }


def _volatile_days(tri: RunoffTriangle) -> list:
    # a day whose occurrence effect rests on a single nonzero cell
    nonzero = np.sum((tri.counts > 0) & tri.observed_mask, axis=1)
    return (np.nonzero(nonzero == 1)[0] + 1).tolist()


def fit_direct(tri: RunoffTriangle, spec: DirectSpec = DirectSpec()) -> DirectFit:
    """Poisson MLE of the direct cell-count model.

    Coefficients driven to minus infinity (e.g. a day with no reports under
    ``per_day_alpha``) are tolerated and flagged on the result.  For
    ``per_day_alpha`` the days whose effect is identified by one nonzero
    cell are listed in ``volatile_days``; their forecasts can be extreme.
    """
    dd = build_direct_design(tri, spec)
    res = fit_weighted_poisson(dd.design, dd.response, allow_separation=True)
    if res.separated:
        log.info("direct fit: some coefficients diverge to -inf (no events for a level)")
    volatile = _volatile_days(tri) if spec.variant == "per_day_alpha" else []
    if volatile:
        log.info("direct fit: %d day(s) identified by a single nonzero cell", len(volatile))
    return DirectFit(spec, dd.coding, res, dd.dropped_delay_levels, volatile, len(dd.response))


def lower_cells(tau: int) -> tuple[np.ndarray, np.ndarray]:
    """``(t, d)`` for cells with ``t + d > tau`` and ``d <= tau - 1``."""
    t, d = np.nonzero(~RunoffTriangle.observed_mask_for(tau))
    return t + 1, d


def direct_cell_means(fit: DirectFit, tri: RunoffTriangle) -> tuple[np.ndarray, list]:
    """Lower-triangle grid of ``e_t exp(x_td' beta)`` and the skipped cells.

    Cells whose delay level was not estimated are skipped (mean 0) and
    returned as ``[(t, d), ...]``.
    """
    tau = tri.tau
    t, d = lower_cells(tau)
    grid = np.zeros((tau, tau))
    skipped = []
    if len(t) == 0:
        return grid, skipped
    table = _cell_table(tri, fit.spec, t, d)
    if fit.spec.delay:
        est = np.isin(table["delay"], fit.coding.levels["delay"])
        skipped = list(zip(t[~est].tolist(), d[~est].tolist()))
        t, d = t[est], d[est]
        table = {k: v[est] for k, v in table.items()}
    X = fit.coding.matrix(table, sparse=True)
    eta = np.asarray(X @ fit.result.coefficients).ravel() + tri.log_exposure[t - 1]
    grid[t - 1, d] = np.exp(eta)
    if skipped:
        log.info("direct nowcast: %d cell(s) skipped, delay level never observed", len(skipped))
    return grid, skipped


def nowcast_direct(fit: DirectFit, tri: RunoffTriangle) -> NowcastResult:
    """Nowcast from the fitted cell surface; covers delays up to ``tau - 1``."""
    grid, skipped = direct_cell_means(fit, tri)
    res = nowcast_from_means(np.ones(tri.tau), grid, tri, bounded_horizon=True)
    res.meta["skipped_cells"] = len(skipped)
    res.meta["volatile_days"] = fit.volatile_days
    return res
