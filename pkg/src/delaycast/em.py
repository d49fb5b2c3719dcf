"""Joint EM estimation of occurrence intensities and reporting delays.

The complete data are the counts ``N_td`` for all delays; delays ``>= tau``
are pooled into one remainder bucket per occurrence day.  Each iteration
replaces unobserved cells by their expectation under the current model and
refits the occurrence (Poisson) and reporting parts separately.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .chain_ladder import cl_forecast, development_factors
from .design import CategoricalDesign
from .glm import fit_weighted_poisson
from .io import atomic_open
from .reporting import (
    OCCURRENCE_COVARIATES,
    occurrence_columns,
    reporting_from_dict,
    reporting_m_step,
    tail_mass,
)
from .triangle import RunoffTriangle

log = logging.getLogger(__name__)


class LikelihoodError(ValueError):
    """The observed data have zero probability under the model."""


@dataclass(frozen=True)
class OccurrenceSpec:
    covariates: tuple = OCCURRENCE_COVARIATES
    saturated: bool = False  # one free intensity per day (chain ladder)


class OccurrenceModel:
    """``lambda_t = e_t * exp(x_t' alpha)``, or free ``lambda_t`` when saturated."""

    def __init__(self, design: CategoricalDesign | None, alpha, saturated: bool = False):
        self.design = design
        self.alpha = np.asarray(alpha, float)
        self.saturated = saturated
        if not saturated and len(self.alpha) != design.n_columns:
            raise ValueError("alpha length does not match the design")

    def intensity(self, tri: RunoffTriangle) -> np.ndarray:
        if self.saturated:
            return np.exp(self.alpha[: tri.tau])
        X = self.design.matrix(occurrence_columns(tri.calendar, tri.tau))
        return tri.exposure * np.exp(X @ self.alpha)

    def x(self, tri: RunoffTriangle) -> np.ndarray:
        if self.saturated:
            return np.eye(tri.tau)
        return self.design.matrix(occurrence_columns(tri.calendar, tri.tau))

    @property
    def param_names(self) -> list:
        if self.saturated:
            return [f"log_lambda:{t}" for t in range(1, len(self.alpha) + 1)]
        return [f"alpha:{n}" for n in self.design.names]

    def params(self) -> np.ndarray:
        return self.alpha.copy()

    def with_params(self, vec) -> "OccurrenceModel":
        return OccurrenceModel(self.design, np.asarray(vec, float), self.saturated)

    def to_dict(self) -> dict:
        if self.saturated:
            return {"saturated": True, "log_lambda": self.alpha.tolist()}
        return {"saturated": False, "design": self.design.to_dict(),
                "alpha": dict(zip(self.design.names, map(float, self.alpha)))}

    @classmethod
    def from_dict(cls, d) -> "OccurrenceModel":
        if d.get("saturated"):
            return cls(None, d["log_lambda"], True)
        design = CategoricalDesign.from_dict(d["design"])
        return cls(design, design.coef_from_dict(d["alpha"]))


@dataclass
class JointModel:
    occurrence: OccurrenceModel
    reporting: object
    tau: int

    def intensity(self, tri) -> np.ndarray:
        return self.occurrence.intensity(tri)

    def probs(self, tri, n_delays: int | None = None) -> np.ndarray:
        return self.reporting.prob_matrix(tri.calendar, tri.tau, n_delays or tri.tau)

    @property
    def param_names(self) -> list:
        return self.occurrence.param_names + self.reporting.param_names

    def params(self) -> np.ndarray:
        return np.concatenate([self.occurrence.params(), self.reporting.params()])

    def with_params(self, vec) -> "JointModel":
        k = len(self.occurrence.params())
        return JointModel(self.occurrence.with_params(vec[:k]), self.reporting.with_params(vec[k:]), self.tau)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "occurrence": self.occurrence.to_dict(), "reporting": self.reporting.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "JointModel":
        return cls(OccurrenceModel.from_dict(d["occurrence"]), reporting_from_dict(d["reporting"]), d["tau"])


@dataclass
class CompleteCounts:
    """Expected complete data: cells for d < tau plus a remainder per row."""

    expected: np.ndarray  # (tau, tau)
    remainder: np.ndarray  # (tau,)

    @property
    def row_totals(self) -> np.ndarray:
        return self.expected.sum(axis=1) + self.remainder


@dataclass
class EMOptions:
    max_iter: int = 500
    tol: float = 1e-8
    abs_tol: float = 1e-10
    include_censoring: bool = False


@dataclass
class EMResult:
    model: JointModel
    loglik_trace: list
    param_change: list
    iterations: int
    converged: bool
    counts: CompleteCounts
    seconds: float = 0.0
    initial_counts: CompleteCounts | None = field(default=None, repr=False)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def write_trace(self, path) -> None:
        with atomic_open(path) as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iteration", "observed_loglik", "max_param_change"])
            for k, (ll, dp) in enumerate(zip(self.loglik_trace, self.param_change)):
                out.writerow([k, repr(float(ll)), repr(float(dp))])


# --------------------------------------------------------------------------
# likelihoods


def observed_loglik(model: JointModel, tri: RunoffTriangle, lam=None, grid=None) -> float:
    """Observed-data log-likelihood (without log N_td! terms).

    ``sum_t [-lambda_t p_t^r + N_t^r log lambda_t + sum_{d <= tau-t} N_td log p_td]``
    """
    lam = model.intensity(tri) if lam is None else lam
    grid = model.probs(tri) if grid is None else grid
    mask = tri.observed_mask
    N = tri.counts
    reported_mass = np.sum(grid * mask, axis=1)
    pos = N > 0
    if np.any(grid[pos] <= 0):
        t, d = np.argwhere(pos & (grid <= 0))[0]
        raise LikelihoodError(f"cell (t={t + 1}, d={d}) has count {N[t, d]} but probability 0")
    Nr = N.sum(axis=1)
    if np.any((lam <= 0) & (Nr > 0)):
        raise LikelihoodError("zero intensity on a day with reported events")
    with np.errstate(divide="ignore"):
        loglam = np.where(Nr > 0, np.log(np.where(lam > 0, lam, 1.0)), 0.0)
    return float(-np.sum(lam * reported_mass) + np.sum(Nr * loglam) + np.sum(N[pos] * np.log(grid[pos])))


def cellwise_poisson_loglik(model: JointModel, tri: RunoffTriangle) -> float:
    """Sum of independent Poisson log pmfs (without log N!) over observed cells."""
    lam = model.intensity(tri)
    mean = lam[:, None] * model.probs(tri)
    mask = tri.observed_mask
    N = tri.counts
    pos = N > 0
    return float(-np.sum(mean[mask]) + np.sum(N[pos] * np.log(mean[pos])))


def q_function(model: JointModel, counts: CompleteCounts, tri: RunoffTriangle,
               include_censoring: bool = False) -> float:
    """Expected complete-data log-likelihood (constants dropped)."""
    lam = model.intensity(tri)
    grid = model.probs(tri)
    Nt = counts.row_totals
    with np.errstate(divide="ignore"):
        occ = float(-np.sum(lam) + np.sum(np.where(Nt > 0, Nt * np.log(np.where(lam > 0, lam, 1.0)), 0.0)))
    E = counts.expected
    pos = E > 0
    if np.any(grid[pos] <= 0):
        return -np.inf
    rep = float(np.sum(E[pos] * np.log(grid[pos])))
    if include_censoring:
        tail = tail_mass(grid)
        r = counts.remainder > 0
        if np.any(tail[r] <= 0):
            return -np.inf
        rep += float(np.sum(counts.remainder[r] * np.log(tail[r])))
    return occ + rep


# --------------------------------------------------------------------------
# EM steps


def e_step(model: JointModel, tri: RunoffTriangle, lam=None, grid=None) -> CompleteCounts:
    lam = model.intensity(tri) if lam is None else lam
    grid = model.probs(tri) if grid is None else grid
    mask = tri.observed_mask
    expected = np.where(mask, tri.counts, lam[:, None] * grid)
    remainder = lam * tail_mass(grid)
    return CompleteCounts(expected, remainder)


def fit_occurrence(row_totals, spec: OccurrenceSpec, tri: RunoffTriangle,
                   previous: OccurrenceModel | None = None) -> OccurrenceModel:
    """Poisson regression of expected daily totals with log-exposure offset."""
    Nt = np.asarray(row_totals, float)
    if spec.saturated:
        with np.errstate(divide="ignore"):
            return OccurrenceModel(None, np.log(Nt), saturated=True)
    cols = occurrence_columns(tri.calendar, tri.tau)
    design = previous.design if previous is not None else CategoricalDesign.fit(cols, spec.covariates)
    X = design.matrix(cols)
    start = previous.alpha if previous is not None else None
    fit = fit_weighted_poisson(X, Nt, offset=tri.log_exposure, start=start, allow_separation=True)
    if not fit.converged:
        log.warning("occurrence regression did not converge")
    return OccurrenceModel(design, fit.coefficients)


def m_step(counts: CompleteCounts, occ_spec: OccurrenceSpec, rep_spec, tri: RunoffTriangle,
           include_censoring: bool = False, previous: JointModel | None = None) -> JointModel:
    occ = fit_occurrence(counts.row_totals, occ_spec, tri, previous.occurrence if previous else None)
    rep = reporting_m_step(counts.expected, counts.remainder, rep_spec, tri.calendar, tri.tau,
                           include_censoring, previous.reporting if previous else None)
    return JointModel(occ, rep, tri.tau)


def chain_ladder_counts(tri: RunoffTriangle) -> CompleteCounts:
    """Observed cells plus development-factor forecasts for the lower triangle."""
    f = development_factors(tri)
    lower = cl_forecast(tri, f)
    expected = np.where(tri.observed_mask, tri.counts, lower)
    return CompleteCounts(expected, np.zeros(tri.tau))


def initialize_from_chain_ladder(tri: RunoffTriangle, occ_spec: OccurrenceSpec, rep_spec,
                                 include_censoring: bool = False):
    """Chain-ladder completed counts and the model from one M-step on them."""
    counts = chain_ladder_counts(tri)
    return counts, m_step(counts, occ_spec, rep_spec, tri, include_censoring)


def has_converged(current: float, previous: float, tol: float = 1e-8, abs_tol: float = 1e-10) -> bool:
    """``|l_k - l_{k-1}| / |0.1 + l_k| < tol``, or an absolute change below ``abs_tol``."""
    change = abs(current - previous)
    denom = abs(0.1 + current)
    if change < abs_tol:
        return True
    return denom > 0 and change / denom < tol


def _max_change(old: JointModel, new: JointModel) -> float:
    # matched by name: free intra-week entries can enter or leave the vector
    before = dict(zip(old.param_names, old.params()))
    diffs = [abs(v - before[n]) for n, v in zip(new.param_names, new.params())
             if n in before and np.isfinite(v) and np.isfinite(before[n])]
    return float(max(diffs)) if diffs else 0.0


def fit_em(tri: RunoffTriangle, occ_spec: OccurrenceSpec, rep_spec, options: EMOptions | None = None,
           start: JointModel | None = None) -> EMResult:
    """EM from the chain-ladder start (or ``start``) until the likelihood settles."""
    opts = options or EMOptions()
    t0 = time.perf_counter()
    if tri.total == 0:
        raise ValueError("triangle contains no reported events")
    init_counts = None
    if start is None:
        init_counts, model = initialize_from_chain_ladder(tri, occ_spec, rep_spec, opts.include_censoring)
    else:
        model = start
    lam, grid = model.intensity(tri), model.probs(tri)
    ll = observed_loglik(model, tri, lam, grid)
    trace, changes = [ll], [0.0]
    converged = False
    counts = init_counts
    k = 0
    for k in range(1, opts.max_iter + 1):
        counts = e_step(model, tri, lam, grid)
        new = m_step(counts, occ_spec, rep_spec, tri, opts.include_censoring, model)
        lam, grid = new.intensity(tri), new.probs(tri)
        new_ll = observed_loglik(new, tri, lam, grid)
        changes.append(_max_change(model, new))
        trace.append(new_ll)
        if new_ll < ll - 1e-8 * abs(ll):
            log.warning("observed log-likelihood decreased at iteration %d: %.10g -> %.10g", k, ll, new_ll)
        model, prev_ll, ll = new, ll, new_ll
        if has_converged(ll, prev_ll, opts.tol, opts.abs_tol):
            converged = True
            break
    if not converged:
        log.warning("EM stopped after %d iterations without meeting the convergence rule", k)
    counts = e_step(model, tri, lam, grid)
    return EMResult(model, trace, changes, k, converged, counts, time.perf_counter() - t0, init_counts)
