"""Named model specifications shared by the CLI and the backtest harness."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .chain_ladder import fit_cl_em, fit_yearly_cl
from .direct import DirectSpec, fit_direct, nowcast_direct
from .em import EMOptions, EMResult, OccurrenceSpec, fit_em
from .inference import NowcastResult, nowcast
from .reporting import MatrixReportingSpec, ReverseTimeReportingSpec, WeekModelSpec
from .triangle import RunoffTriangle

SPEC_NAMES = ("em_matrix", "em_reverse_time", "chain_ladder", "yearly_cl", "direct_structured", "direct_per_day")
EM_SPECS = ("em_matrix", "em_reverse_time", "chain_ladder")


@dataclass(frozen=True)
class FitOptions:
    censoring: bool = False
    w_max: int = 104
    max_iter: int = 500
    period_days: int = 365


@dataclass
class FittedSpec:
    """A fitted named specification with its nowcast."""

    name: str
    model: object
    nowcast: NowcastResult
    seconds: float
    em: EMResult | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"spec": self.name, **self.info}
        if hasattr(self.model, "to_dict"):
            doc["model"] = self.model.to_dict()
        return doc


def check_spec_name(name: str) -> str:
    if name not in SPEC_NAMES:
        raise ValueError(f"unknown spec {name!r}; choose from {', '.join(SPEC_NAMES)}")
    return name


def resolve_specs(names) -> list:
    """Expand ``"all"`` and validate a list or comma-separated string of spec names."""
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    if list(names) == ["all"]:
        return list(SPEC_NAMES)
    return [check_spec_name(n) for n in names]


def reporting_spec(name: str, options: FitOptions):
    week = WeekModelSpec(w_max=options.w_max)
    if name == "em_matrix":
        return MatrixReportingSpec(week)
    if name == "em_reverse_time":
        return ReverseTimeReportingSpec(week)
    raise ValueError(f"{name} has no weekly reporting model")


def _yearly_nowcast(model, tri: RunoffTriangle) -> NowcastResult:
    by_occ = model.daily_by_occurrence()
    horizon = tri.tau + (model.n_periods - 1) * model.period_len
    by_rep = model.daily_by_reporting(horizon)
    beyond = max(float(by_occ.sum() - by_rep.sum()), 0.0)
    return NowcastResult(tri.tau, tri.calendar, np.zeros((tri.tau, 0)), by_occ, by_rep, beyond,
                         bounded_horizon=True, meta={"short_period": model.short_period})


def fit_spec(name: str, tri: RunoffTriangle, options: FitOptions = FitOptions()) -> FittedSpec:
    """Fit one named specification on ``tri`` and nowcast from it."""
    check_spec_name(name)
    t0 = time.perf_counter()
    em = None
    info: dict = {}
    if name in ("em_matrix", "em_reverse_time"):
        em = fit_em(tri, OccurrenceSpec(), reporting_spec(name, options),
                    EMOptions(max_iter=options.max_iter, include_censoring=options.censoring))
        model = em.model
        result = nowcast(model, tri)
    elif name == "chain_ladder":
        _, _, em = fit_cl_em(tri, max_iter=options.max_iter)
        model = em.model
        result = nowcast(model, tri)
    elif name == "yearly_cl":
        model = fit_yearly_cl(tri, options.period_days)
        result = _yearly_nowcast(model, tri)
        info["short_period"] = model.short_period
    else:
        variant = "structured" if name == "direct_structured" else "per_day_alpha"
        model = fit_direct(tri, DirectSpec(variant))
        result = nowcast_direct(model, tri)
        info.update(converged=model.result.converged, loglik=model.result.loglik,
                    volatile_days=len(model.volatile_days))
    if em is not None:
        info.update(converged=em.converged, iterations=em.iterations, loglik=em.loglik)
    seconds = time.perf_counter() - t0
    result.meta["spec"] = name
    return FittedSpec(name, model, result, seconds, em, info)
