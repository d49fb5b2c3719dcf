"""Command-line entry point: simulate, fit, nowcast, diagnose, backtest.

Runs are driven by a YAML config; command-line flags override config keys.

Config schema (all keys optional unless noted)::

    data:                       # either data or simulation, not both
      events: events.csv        # occurrence_date, report_date
      exposure: exposure.csv    # month, earned_exposure
      holidays: holidays.csv    # date, class
      epoch: 2000-01-01         # day 1; default is the earliest occurrence date
    simulation:
      tau_full: 730
      kind: matrix              # matrix | reverse_time | stationary
      level: 50                 # mean daily events
      seed: 0
      epoch: 2000-01-01
    eval_date: 2001-06-30       # ISO date or day index; default is the last day
    spec: em_matrix
    options: {censoring: false, w_max: 104, level: 0.95, group: occurrence,
              simultaneous: true, top: 10, workers: 1}
    backtest: {from: ..., to: ..., step: 1, specs: all, horizon: ...}
    out: results
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import logging
import os
import sys
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import evaluation
from .calendar import CalendarConfig, read_holidays, write_holidays
from .em import LikelihoodError
from .glm import GLMError
from .inference import GROUPINGS, InferenceError, aiccd, cooks_distances, observed_information, top_cooks
from .io import atomic_open, read_event_dates, read_events, read_exposure, stable_hash, write_events, \
    write_exposure, write_json
from .simulate import default_scenario, simulate_portfolio
from .specs import EM_SPECS, SPEC_NAMES, FitOptions, check_spec_name, fit_spec, resolve_specs
from .triangle import aggregate_events

log = logging.getLogger("delaycast")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FIT = 0, 1, 2, 3
TOP_KEYS = {"data", "simulation", "eval_date", "spec", "options", "backtest", "out", "seed"}
OPTION_KEYS = {"censoring", "w_max", "level", "group", "simultaneous", "top", "workers", "max_iter"}
SIM_KEYS = {"tau_full", "kind", "level", "seed", "epoch"}
DATA_KEYS = {"events", "exposure", "holidays", "epoch"}
BACKTEST_KEYS = {"from", "to", "step", "specs", "horizon"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class FitFailure(RuntimeError):
    pass


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# --------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "must be a mapping")
    return doc


def _check_keys(block, allowed, where):
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(where, "must be a mapping")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}" if where else sorted(unknown)[0], "unknown key")
    return block


def merge_args(cfg: dict, args) -> dict:
    """Apply command-line overrides to a copy of the config and validate it."""
    cfg = copy.deepcopy(cfg)
    _check_keys(cfg, TOP_KEYS, "")
    opts = dict(_check_keys(cfg.get("options"), OPTION_KEYS, "options"))
    bt = dict(_check_keys(cfg.get("backtest"), BACKTEST_KEYS, "backtest"))
    sim = cfg.get("simulation")
    if sim is not None:
        sim = dict(_check_keys(sim, SIM_KEYS, "simulation"))
    data = cfg.get("data")
    if data is not None:
        data = dict(_check_keys(data, DATA_KEYS, "data"))
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("eval_date") is not None:
        cfg["eval_date"] = get("eval_date")
    if get("spec") is not None:
        cfg["spec"] = get("spec")
    if get("out") is not None:
        cfg["out"] = get("out")
    for key in ("level", "group", "censoring", "workers", "top"):
        if get(key) is not None:
            opts[key] = get(key)
    if get("pointwise"):
        opts["simultaneous"] = False
    if get("seed") is not None:
        if sim is not None or data is None:
            sim = dict(sim or {})
            sim["seed"] = get("seed")
        cfg["seed"] = get("seed")
    for flag, key in (("date_from", "from"), ("date_to", "to"), ("step", "step"), ("specs", "specs"),
                      ("horizon", "horizon")):
        if get(flag) is not None:
            bt[key] = get(flag)
    if data is not None and sim is not None:
        raise ConfigError("data", "give either 'data' or 'simulation', not both")
    if data is None and sim is None:
        sim = {}
    if data is not None and "events" not in data:
        raise ConfigError("data.events", "required")
    cfg["data"], cfg["simulation"] = data, sim
    cfg["options"], cfg["backtest"] = opts, bt
    cfg.setdefault("out", "results")
    # validation of option values
    if "spec" in cfg:
        try:
            check_spec_name(cfg["spec"])
        except ValueError as exc:
            raise ConfigError("spec", str(exc)) from None
    level = opts.get("level", 0.95)
    if not isinstance(level, (int, float)) or not 0 < level < 1:
        raise ConfigError("options.level", "must lie strictly between 0 and 1")
    if opts.get("group", "occurrence") not in GROUPINGS:
        raise ConfigError("options.group", f"must be one of {', '.join(GROUPINGS)}")
    for key, lo in (("w_max", 1), ("workers", 1), ("top", 1), ("max_iter", 1)):
        if key in opts and (not isinstance(opts[key], int) or opts[key] < lo):
            raise ConfigError(f"options.{key}", f"must be an integer >= {lo}")
    if sim is not None:
        kind = sim.get("kind", "matrix")
        if kind not in ("matrix", "reverse_time", "stationary"):
            raise ConfigError("simulation.kind", "must be matrix, reverse_time or stationary")
        tf = sim.get("tau_full", 730)
        if not isinstance(tf, int) or tf < 2:
            raise ConfigError("simulation.tau_full", "must be an integer >= 2")
    return cfg


def _parse_date(value, key) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(key, f"not an ISO date: {value!r}") from None


def day_index(value, calendar: CalendarConfig, key: str) -> int:
    """Day index from an integer or an ISO date."""
    if isinstance(value, bool):
        raise ConfigError(key, "must be a date or day index")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    return calendar.day_of(_parse_date(value, key))


# --------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    events: np.ndarray
    exposure: np.ndarray | None
    calendar: CalendarConfig
    last_day: int  # last reporting day of the data window
    source: str
    portfolio: object = None


def load_dataset(cfg: dict) -> Dataset:
    sim = cfg["simulation"]
    if sim is not None:
        epoch = _parse_date(sim.get("epoch", "2000-01-01"), "simulation.epoch")
        scen = default_scenario(sim.get("tau_full", 730), int(sim.get("seed", cfg.get("seed", 0))),
                                sim.get("kind", "matrix"), float(sim.get("level", 50.0)), epoch)
        port = simulate_portfolio(scen)
        within = ~port.beyond_horizon
        return Dataset(port.events[within], scen.exposure, scen.calendar, scen.tau_full, "simulation", port)
    data = cfg["data"]
    try:
        if "epoch" in data:
            epoch = _parse_date(data["epoch"], "data.epoch")
        else:
            rows = read_event_dates(data["events"])
            if not rows:
                raise ConfigError("data.events", "no events in file")
            epoch = min(o for o, _ in rows)
        cal = read_holidays(data["holidays"], epoch) if "holidays" in data else CalendarConfig(epoch)
        events = read_events(data["events"], cal)
    except OSError as exc:
        raise ConfigError("data", str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("data.events", str(exc)) from None
    last = int((events[:, 0] + events[:, 1]).max(initial=1))
    exposure = None
    if "exposure" in data:
        try:
            exposure = read_exposure(data["exposure"], cal, _exposure_days(data["exposure"], cal, last))
        except (OSError, ValueError) as exc:
            raise ConfigError("data.exposure", str(exc)) from None
        if len(exposure) < int(events[:, 0].max(initial=1)):
            raise ConfigError("data.exposure", "does not cover every occurrence date")
    return Dataset(events, exposure, cal, last, "data")


def _exposure_days(path, calendar: CalendarConfig, last: int) -> int:
    """Days covered by a monthly exposure file, capped at ``last``."""
    with open(path, newline="") as fh:
        months = [row["month"].strip() for row in csv.DictReader(fh) if row.get("month")]
    if not months:
        return last
    y, m = map(int, max(months).split("-"))
    month_end = dt.date(y + m // 12, m % 12 + 1, 1) - dt.timedelta(days=1)
    return max(1, min(last, calendar.day_of(month_end)))


def eval_day(cfg: dict, ds: Dataset) -> int:
    tau = day_index(cfg["eval_date"], ds.calendar, "eval_date") if "eval_date" in cfg else ds.last_day
    if tau < 1 or tau > ds.last_day:
        raise ConfigError("eval_date", f"must lie within days 1..{ds.last_day}")
    if ds.exposure is not None and tau > len(ds.exposure):
        raise ConfigError("eval_date", "lies beyond the exposure data")
    return tau


def triangle_at(ds: Dataset, tau: int):
    ev = ds.events[ds.events[:, 0] <= tau]
    exp = None if ds.exposure is None else ds.exposure[:tau]
    return aggregate_events(ev, tau, exp, ds.calendar)


def fit_options(cfg) -> FitOptions:
    o = cfg["options"]
    return FitOptions(censoring=bool(o.get("censoring", False)), w_max=int(o.get("w_max", 104)),
                      max_iter=int(o.get("max_iter", 500)))


# --------------------------------------------------------------------------
# commands


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list, extra=None) -> None:
    doc = {
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "config_hash": stable_hash(cfg),
        "seed": (cfg.get("simulation") or {}).get("seed", cfg.get("seed")),
        "version": version(),
        "outputs": sorted(outputs),
        **(extra or {}),
    }
    write_json(out / "manifest.json", doc)


def _fit(name, tri, cfg):
    try:
        fitted = fit_spec(name, tri, fit_options(cfg))
    except (GLMError, LikelihoodError, InferenceError, np.linalg.LinAlgError, FloatingPointError,
            ValueError) as exc:
        raise FitFailure(f"{name}: {type(exc).__name__}: {exc}") from exc
    if fitted.em is not None and not fitted.em.converged:
        log.warning("%s: EM did not converge in %d iterations", name, fitted.em.iterations)
    return fitted


def cmd_simulate(cfg) -> str:
    if cfg["simulation"] is None:
        raise ConfigError("simulation", "the simulate command needs a simulation block")
    ds = load_dataset(cfg)
    out = _out_dir(cfg)
    port = ds.portfolio
    write_events(out / "events.csv", port.events, ds.calendar)
    write_exposure(out / "exposure.csv", ds.exposure, ds.calendar)
    with atomic_open(out / "holidays.csv") as fh:
        write_holidays(ds.calendar, fh)
    write_json(out / "truth.json", port.truth())
    _write_manifest(out, "simulate", cfg, ["events.csv", "exposure.csv", "holidays.csv", "truth.json"])
    n_late = int(port.beyond_horizon.sum())
    return f"simulated {len(port.events)} events over {ds.last_day} days ({n_late} reported after the horizon) -> {out}"


def cmd_fit(cfg) -> str:
    ds = load_dataset(cfg)
    tau = eval_day(cfg, ds)
    name = cfg.get("spec", "em_matrix")
    tri = triangle_at(ds, tau)
    fitted = _fit(name, tri, cfg)
    out = _out_dir(cfg)
    outputs = ["model.json"]
    doc = fitted.to_dict()
    doc["tau"] = tau
    doc["eval_date"] = ds.calendar.date_of(tau).isoformat()
    write_json(out / "model.json", doc)
    if fitted.em is not None:
        fitted.em.write_trace(out / "trace.csv")
        outputs.append("trace.csv")
    _write_manifest(out, "fit", cfg, outputs, {"spec": name, "tau": tau})
    extra = f", {fitted.em.iterations} EM iterations" if fitted.em is not None else ""
    return f"fit {name} at {doc['eval_date']} (tau={tau}){extra}, IBNR {fitted.nowcast.total:.1f} -> {out}"


def cmd_nowcast(cfg) -> str:
    ds = load_dataset(cfg)
    tau = eval_day(cfg, ds)
    name = cfg.get("spec", "em_matrix")
    fitted = _fit(name, triangle_at(ds, tau), cfg)
    opts = cfg["options"]
    level = float(opts.get("level", 0.95))
    group = opts.get("group", "occurrence")
    simultaneous = bool(opts.get("simultaneous", True))
    out = _out_dir(cfg)
    res = fitted.nowcast
    res.meta.update(spec_hash=stable_hash(fitted.to_dict()), eval_date=ds.calendar.date_of(tau).isoformat())
    csv_path, json_path = out / f"nowcast_{group}.csv", out / f"nowcast_{group}.json"
    res.write_csv(csv_path, group, level, simultaneous)
    res.write_json(json_path, group, level, simultaneous)
    n_groups = len(res.groups(group)[0])
    lo_t, hi_t = res.total_interval(level)
    _write_manifest(out, "nowcast", cfg, [csv_path.name, json_path.name], {"spec": name, "tau": tau})
    return (f"nowcast {name} at {ds.calendar.date_of(tau)}: IBNR {res.total:.1f} "
            f"[{lo_t}, {hi_t}] at level {level}; {n_groups} {group} groups -> {csv_path}")


def cmd_diagnose(cfg) -> str:
    ds = load_dataset(cfg)
    tau = eval_day(cfg, ds)
    tri = triangle_at(ds, tau)
    names = [cfg["spec"]] if "spec" in cfg else ["em_matrix", "em_reverse_time"]
    for n in names:
        if n not in EM_SPECS:
            raise ConfigError("spec", f"diagnostics need an EM-fitted spec ({', '.join(EM_SPECS)})")
    censoring = bool(cfg["options"].get("censoring", False))
    top = int(cfg["options"].get("top", 10))
    table, cooks = [], []
    for n in names:
        fitted = _fit(n, tri, cfg)
        try:
            info = observed_information(fitted.model, tri, censoring)
            a = aiccd(fitted.model, tri, censoring, info)
            gd = cooks_distances(fitted.model, tri, info, censoring)
        except (InferenceError, np.linalg.LinAlgError) as exc:
            raise FitFailure(f"{n}: {exc}") from exc
        table.append((n, a))
        cooks.extend((n, t, d, g) for t, d, g in top_cooks(gd, top))
    out = _out_dir(cfg)
    with atomic_open(out / "aiccd.csv") as fh:
        fh.write("spec,n_params,q,penalty,aiccd\n")
        for n, a in table:
            fh.write(f"{n},{a.dim},{a.q:.6f},{a.penalty:.6f},{a.value:.6f}\n")
    with atomic_open(out / "cooks.csv") as fh:
        fh.write("spec,occurrence_date,delay,report_date,gd\n")
        for n, t, d, g in cooks:
            fh.write(f"{n},{ds.calendar.date_of(t)},{d},{ds.calendar.date_of(t + d)},{g:.6g}\n")
    _write_manifest(out, "diagnose", cfg, ["aiccd.csv", "cooks.csv"], {"tau": tau})
    best = min(table, key=lambda x: x[1].value)
    return f"diagnose at tau={tau}: lowest AICcd {best[0]} ({best[1].value:.2f}); top Cook's distances -> {out}"


def cmd_backtest(cfg) -> str:
    ds = load_dataset(cfg)
    bt = cfg["backtest"]
    for key in ("from", "to"):
        if key not in bt:
            raise ConfigError(f"backtest.{key}", "required (or pass --from/--to)")
    start = day_index(bt["from"], ds.calendar, "backtest.from")
    end = day_index(bt["to"], ds.calendar, "backtest.to")
    last = ds.last_day if ds.exposure is None else min(ds.last_day, len(ds.exposure))
    if not 1 <= start <= end <= last:
        raise ConfigError("backtest.to", f"need 1 <= from <= to <= {last}")
    horizon = day_index(bt["horizon"], ds.calendar, "backtest.horizon") if "horizon" in bt else ds.last_day
    step = bt.get("step", 1)
    if not isinstance(step, int) or step < 1:
        raise ConfigError("backtest.step", "must be an integer >= 1")
    try:
        specs = resolve_specs(bt.get("specs", cfg.get("spec", "all")))
    except ValueError as exc:
        raise ConfigError("backtest.specs", str(exc)) from None
    opts = cfg["options"]
    rows = evaluation.moving_window(ds.events, ds.exposure, ds.calendar, specs, start, end, step, horizon,
                                    float(opts.get("level", 0.95)), fit_options(cfg),
                                    int(opts.get("workers", 1)))
    out = _out_dir(cfg)
    with atomic_open(out / "backtest.csv") as fh:
        fh.write(evaluation.rows_to_csv(rows))
    summary = evaluation.summarize(rows)
    write_json(out / "backtest_summary.json", {"horizon": horizon, "specs": summary})
    _write_manifest(out, "backtest", cfg, ["backtest.csv", "backtest_summary.json"])
    parts = [f"{n} MAPE {s['mape']:.3f}" if s["mape"] is not None else f"{n} MAPE n/a" for n, s in summary.items()]
    n_dates = len(range(start, end + 1, step))
    return f"backtest over {n_dates} dates: " + "; ".join(parts) + f" -> {out}"


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "nowcast": cmd_nowcast,
            "diagnose": cmd_diagnose, "backtest": cmd_backtest}


# --------------------------------------------------------------------------
# argument parsing


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaycast", description="Nowcasting of reported event counts "
                                     "from daily reporting triangles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="simulation seed")
    common.add_argument("--eval-date", dest="eval_date", help="evaluation date (ISO date or day index)")
    common.add_argument("--spec", choices=SPEC_NAMES, help="model specification")
    common.add_argument("--censoring", type=_bool, nargs="?", const=True, default=None,
                        help="model delays beyond the grid as censored")
    common.add_argument("--level", type=float, help="prediction interval level")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic portfolio")
    sub.add_parser("fit", parents=[common], help="fit a model at the evaluation date")
    p = sub.add_parser("nowcast", parents=[common], help="nowcast IBNR counts with intervals")
    p.add_argument("--group", choices=GROUPINGS, help="grouping of the nowcast")
    p.add_argument("--pointwise", action="store_true", help="per-group intervals without Bonferroni adjustment")
    p = sub.add_parser("diagnose", parents=[common], help="AICcd table and top Cook's distances")
    p.add_argument("--top", type=int, help="number of Cook's distances to report")
    p = sub.add_parser("backtest", parents=[common], help="moving-window out-of-time evaluation")
    p.add_argument("--from", dest="date_from", help="first evaluation date")
    p.add_argument("--to", dest="date_to", help="last evaluation date")
    p.add_argument("--step", type=int, help="days between evaluation dates")
    p.add_argument("--specs", help="comma-separated spec names or 'all'")
    p.add_argument("--horizon", help="last reporting day counted as ground truth")
    p.add_argument("--workers", type=int, help="worker processes")
    return parser


def setup_logging() -> None:
    name = os.environ.get("DELAYCAST_LOG", "warn").strip().lower()
    level = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    try:
        cfg = merge_args(load_config(args.config), args)
        t0 = time.perf_counter()
        summary = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailure as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    print(summary)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
