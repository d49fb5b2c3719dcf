"""Nowcasting of event counts from daily reporting triangles.

Occurrence intensities are log-linear in calendar covariates; reporting
delays factor into a negative-binomial week and an intra-week day.  Models
are fitted by EM on the censored triangle, with chain-ladder and direct
Poisson regression as alternatives.
"""
from .calendar import CalendarConfig, calendar_table, read_holidays, workdays_between, wday_level
from .chain_ladder import cl_forecast, development_factors, fit_cl_em, fit_yearly_cl
from .direct import DirectSpec, fit_direct, nowcast_direct
from .em import EMOptions, JointModel, OccurrenceModel, OccurrenceSpec, fit_em, observed_loglik
from .evaluation import actual_ibnr, moving_window
from .inference import aiccd, cooks_distance, nowcast, observed_information, prediction_intervals
from .reporting import (
    IntraWeekMatrix,
    MatrixReportingSpec,
    ReverseTimeModel,
    ReverseTimeReportingSpec,
    StationaryReportingSpec,
    WeekDelayModel,
    WeeklyReportingModel,
    WeekModelSpec,
)
from .simulate import SimulationConfig, default_scenario, simulate_portfolio
from .specs import SPEC_NAMES, fit_spec
from .triangle import RunoffTriangle, aggregate_events

__all__ = [
    "CalendarConfig", "calendar_table", "read_holidays", "workdays_between", "wday_level",
    "cl_forecast", "development_factors", "fit_cl_em", "fit_yearly_cl",
    "DirectSpec", "fit_direct", "nowcast_direct",
    "EMOptions", "JointModel", "OccurrenceModel", "OccurrenceSpec", "fit_em", "observed_loglik",
    "actual_ibnr", "moving_window",
    "aiccd", "cooks_distance", "nowcast", "observed_information", "prediction_intervals",
    "IntraWeekMatrix", "MatrixReportingSpec", "ReverseTimeModel", "ReverseTimeReportingSpec",
    "StationaryReportingSpec", "WeekDelayModel", "WeeklyReportingModel", "WeekModelSpec",
    "SimulationConfig", "default_scenario", "simulate_portfolio",
    "SPEC_NAMES", "fit_spec",
    "RunoffTriangle", "aggregate_events",
]
