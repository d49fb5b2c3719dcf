"""Synthetic event data drawn from a known occurrence/reporting model.

Each occurrence day ``t`` gets its own counter-based random stream keyed by
``(seed, t)``, so days can be generated in any order or in parallel and the
result is identical.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .calendar import CalendarConfig, example_holidays
from .design import STANDARD_LEVELS, CategoricalDesign, reference_coded
from .em import JointModel, OccurrenceModel
from .reporting import (
    OCCURRENCE_COVARIATES,
    REVERSE_TIME_COVARIATES,
    IntraWeekMatrix,
    ReverseTimeModel,
    StationaryDelayModel,
    WeekDelayModel,
    WeeklyReportingModel,
)
from .triangle import RunoffTriangle, aggregate_events

# day probabilities by occurrence weekday (rows) and within-week level; the
# Sunday column is lifted to a small positive value
DEFAULT_P = np.array([
    [0.271, 0.331, 0.171, 0.119, 0.100, 0.008, 0.005],
    [0.282, 0.342, 0.158, 0.118, 0.090, 0.011, 0.005],
    [0.286, 0.316, 0.180, 0.112, 0.095, 0.011, 0.005],
    [0.278, 0.337, 0.156, 0.114, 0.097, 0.019, 0.005],
    [0.303, 0.264, 0.160, 0.120, 0.096, 0.057, 0.005],
    [0.389, 0.211, 0.148, 0.109, 0.097, 0.046, 0.005],
    [0.407, 0.222, 0.157, 0.109, 0.096, 0.009, 0.005],
])
DEFAULT_P = DEFAULT_P / DEFAULT_P.sum(axis=1, keepdims=True)


def full_design(covariates, intercept=True) -> CategoricalDesign:
    """Design with every standard level of each covariate."""
    return CategoricalDesign(covariates, {c: list(STANDARD_LEVELS[c]) for c in covariates}, intercept)


@dataclass
class SimulationConfig:
    """Generative model for a synthetic portfolio.

    Parameters
    ----------
    tau_full : int
        Last occurrence day simulated.
    model : JointModel
        True occurrence intensities and reporting probabilities.
    exposure : array, optional
        Exposure per day (default 1).
    seed : int
    max_delay : int
        Delays are drawn on ``0 .. max_delay - 1``; mass beyond is assigned
        to ``max_delay`` and such events are flagged.
    """

    tau_full: int
    model: JointModel
    calendar: CalendarConfig = field(default_factory=CalendarConfig)
    exposure: np.ndarray | None = None
    seed: int = 0
    max_delay: int | None = None

    def __post_init__(self):
        if self.tau_full < 1:
            raise ValueError("tau_full must be >= 1")
        self.exposure = np.ones(self.tau_full) if self.exposure is None else np.asarray(self.exposure, float)
        if self.exposure.shape != (self.tau_full,) or np.any(self.exposure <= 0):
            raise ValueError("exposure must be positive with one value per day")
        if self.max_delay is None:
            self.max_delay = max(self.tau_full, 7 * 104)


@dataclass
class Portfolio:
    events: np.ndarray  # (n, 2) of (t, d), sorted
    beyond_horizon: np.ndarray  # flag t + d > tau_full
    lam: np.ndarray
    probs: np.ndarray  # (tau_full, max_delay) true p_td
    config: SimulationConfig

    def triangle(self, tau: int | None = None) -> RunoffTriangle:
        tau = tau or self.config.tau_full
        ev = self.events[self.events[:, 0] <= tau]
        return aggregate_events(ev, tau, self.config.exposure[:tau], self.config.calendar)

    def truth(self) -> dict:
        return {
            "tau_full": self.config.tau_full,
            "seed": self.config.seed,
            "epoch_date": self.config.calendar.epoch_date.isoformat(),
            "model": self.config.model.to_dict(),
            "lambda": self.lam.tolist(),
            "n_events": int(len(self.events)),
            "n_beyond_horizon": int(self.beyond_horizon.sum()),
        }

    def write_truth(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.truth(), fh, indent=1)


def day_stream(seed: int, t: int) -> np.random.Generator:
    """Independent counter-based generator for occurrence day ``t``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(t,))))


def simulate_portfolio(cfg: SimulationConfig) -> Portfolio:
    """Draw ``N_t ~ Poisson(lambda_t)`` and multinomial delays for each day."""
    tau = cfg.tau_full
    tri_stub = RunoffTriangle(np.zeros((tau, tau), np.int64), cfg.exposure, cfg.calendar)
    lam = cfg.model.occurrence.intensity(tri_stub)
    D = cfg.max_delay
    probs = cfg.model.reporting.prob_matrix(cfg.calendar, tau, D)
    tail = np.clip(1.0 - probs.sum(axis=1), 0.0, None)
    ts, ds = [], []
    support = np.arange(D + 1)
    for t in range(1, tau + 1):
        rng = day_stream(cfg.seed, t)
        n = rng.poisson(lam[t - 1])
        if n == 0:
            continue
        pvec = np.append(probs[t - 1], tail[t - 1])
        pvec = pvec / pvec.sum()
        cells = rng.multinomial(n, pvec)
        nz = np.nonzero(cells)[0]
        ds.append(np.repeat(support[nz], cells[nz]))
        ts.append(np.full(n, t))
    if ts:
        events = np.column_stack([np.concatenate(ts), np.concatenate(ds)]).astype(np.int64)
    else:
        events = np.zeros((0, 2), np.int64)
    return Portfolio(events, events[:, 0] + events[:, 1] > tau, lam, probs, cfg)


# --------------------------------------------------------------------------
# default scenario


def _years(epoch: dt.date, n_days: int):
    end = epoch + dt.timedelta(days=n_days + 800)
    return range(epoch.year, end.year + 1)


def default_calendar(epoch=dt.date(2000, 1, 1), n_days=2000) -> CalendarConfig:
    national, unofficial = example_holidays(_years(epoch, n_days))
    return CalendarConfig(epoch, national, unofficial)


def default_occurrence(level: float = 50.0, covariates=OCCURRENCE_COVARIATES) -> OccurrenceModel:
    """Mid-year peak, weekend dip, spikes on the 1st/15th and at the turn of the year."""
    raw = {
        "month": {m: 0.15 * np.cos(2 * np.pi * (m - 7) / 12) for m in range(1, 13)},
        "dow": {1: 0.10, 2: 0.05, 3: 0.0, 4: 0.0, 5: 0.05, 6: -0.20, 7: -0.30},
        "dom": {1: 0.40, 15: 0.20},
        "jan1": {1: 0.50},
        "dec31": {1: 0.30},
    }
    raw = {k: v for k, v in raw.items() if k in covariates}
    design = full_design(covariates)
    coef = design.coef_from_dict(reference_coded(raw, np.log(level)))
    return OccurrenceModel(design, coef)


def default_week_model(mean_weeks: float = 1.2, phi: float = 1.5, covariates=OCCURRENCE_COVARIATES,
                       w_max: int = 104) -> WeekDelayModel:
    raw = {
        "month": {12: 0.25, 1: 0.10, 8: 0.15},
        "dow": {5: 0.10, 6: 0.15, 7: 0.05},
        "dom": {},
        "jan1": {1: 0.30},
        "dec31": {1: 0.30},
    }
    raw = {k: v for k, v in raw.items() if k in covariates}
    design = full_design(covariates)
    theta = design.coef_from_dict(reference_coded(raw, np.log(mean_weeks)))
    return WeekDelayModel(design, theta, phi, w_max)


def default_reverse_time(covariates=REVERSE_TIME_COVARIATES) -> ReverseTimeModel:
    """q effects that mimic the day matrix: low weekend and holiday reporting."""
    raw = {
        "workdays": {0: 0.0, 1: 0.0, 2: -1.4, 3: -1.8, 4: -2.2, 5: -2.4},
        "dow": {6: -3.0, 7: -5.0},
        "holiday": {1: -4.0, 2: -2.0},
    }
    raw = {k: v for k, v in raw.items() if k in covariates}
    design = full_design(covariates)
    gamma = design.coef_from_dict(reference_coded(raw, 0.0))
    return ReverseTimeModel(design, gamma)


def default_model(kind: str = "matrix", level: float = 50.0, tau: int = 730) -> JointModel:
    occ = default_occurrence(level)
    if kind == "stationary":
        d = np.arange(tau)
        p = np.exp(-d / 6.0)
        return JointModel(occ, StationaryDelayModel(p / p.sum()), tau)
    week = default_week_model()
    intra = IntraWeekMatrix(DEFAULT_P) if kind == "matrix" else default_reverse_time()
    return JointModel(occ, WeeklyReportingModel(week, intra), tau)


def default_scenario(tau_full: int = 730, seed: int = 0, kind: str = "matrix", level: float = 50.0,
                     epoch=dt.date(2000, 1, 1)) -> SimulationConfig:
    cal = default_calendar(epoch, tau_full)
    return SimulationConfig(tau_full, default_model(kind, level, tau_full), cal, seed=seed)
