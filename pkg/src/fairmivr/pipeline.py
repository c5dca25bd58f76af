"""End-to-end scenario runs: graph, weights, forecaster, controller, simulation."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ScenarioConfig
from .fairmetrics import MetricsReport, evaluate
from .forecaster import SECONDS_PER_DAY, DemandSeries, Forecaster, LossParams, TrainOptions, fit_graph_linear, \
    fit_historical_average
from .ingest import DataError, aggregate_trips, load_demographics, load_zones, read_trips
from .rebalancer import METERS_PER_MILE, FleetState, MivrParams, solve_mivr
from .simulator import SimConfig, SimReport, init_sim, run
from .socio_graph import GraphError, ZoneGraph, ZoneSet, build_zone_graph

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(self.cause, (DataError, GraphError)):
            return EXIT_DATA
        return EXIT_RUNTIME


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class Inputs:
    zones: ZoneSet
    demographics: np.ndarray
    trips: list
    series: DemandSeries


def load_inputs(cfg: ScenarioConfig) -> Inputs:
    cfg.check_files()
    zones = load_zones(cfg.path("zones"))
    demo = load_demographics(cfg.path("demographics"), zones)
    trips = read_trips(cfg.path("trips"), zones)
    if not trips:
        raise DataError("trip file holds no requests")
    first = min(t for _, t, _, _ in trips)
    last = max(t for _, t, _, _ in trips)
    start = int(first // SECONDS_PER_DAY * SECONDS_PER_DAY)
    end = int(last // SECONDS_PER_DAY + 1) * SECONDS_PER_DAY
    series = aggregate_trips(trips, zones, cfg.delta, start, end)
    return Inputs(zones, demo, trips, series)


def train_forecaster(cfg: ScenarioConfig, inputs: Inputs, graph: ZoneGraph, kind: str | None = None):
    """Fit on the first 70% of the series; returns ``(model, (train, val, test))``."""
    splits = inputs.series.split((0.7, 0.15, 0.15))
    kind = kind or cfg.forecaster
    if kind == "historical_average":
        model = fit_historical_average(splits[0])
    elif kind == "graph_linear":
        opts = TrainOptions(lags=cfg.lags, max_iter=cfg.max_iter)
        model = fit_graph_linear(splits[0], graph.normalized, LossParams(cfg.lam, cfg.gamma), opts)
    else:
        model = None
    return model, splits


def evaluate_forecaster(model: Forecaster, splits) -> MetricsReport:
    _, val, test = splits
    pred = model.predict_series(test, history=val)
    ok = ~np.isnan(pred).any(axis=1)
    return evaluate(test.values[ok], pred[ok])


def mivr_params(cfg: ScenarioConfig, graph: ZoneGraph) -> MivrParams:
    weights = graph.weights if cfg.use_weights else np.ones(graph.zones.n)
    return MivrParams(graph.zones.distances() / METERS_PER_MILE, weights, cfg.alpha, cfg.beta, cfg.horizon,
                      cfg.match_distance_miles())


def make_controller(cfg: ScenarioConfig, inputs: Inputs, graph: ZoneGraph, model: Forecaster | None):
    """Rolling-horizon MIVR controller fed by observed counts (or the truth)."""
    if cfg.forecaster == "none":
        return None
    params = mivr_params(cfg, graph)
    series = inputs.series
    K = cfg.horizon

    def controller(state: FleetState):
        row = state.interval_index - series.first_index
        if cfg.forecaster == "true_demand":
            forecast = np.zeros((K, series.n_zones))
            chunk = series.values[row : row + K]
            forecast[: len(chunk)] = chunk
        else:
            lags = max(model.lags, 0)
            if row < lags:
                raise DataError(f"not enough history before interval {state.interval_index}")
            window = series.values[row - lags : row].astype(float) if lags else None
            forecast = model.forecast(window, state.interval_index, K)
        return solve_mivr(state, forecast, params)

    return controller


def sim_window(cfg: ScenarioConfig, inputs: Inputs, train_end_epoch: int) -> tuple[float, float]:
    series = inputs.series
    n_days = series.n_intervals * series.delta // SECONDS_PER_DAY
    day = cfg.sim_day if cfg.sim_day >= 0 else n_days + cfg.sim_day
    if not 0 <= day < n_days:
        raise ConfigError(f"sim_day {cfg.sim_day} outside the {n_days} days of trip data")
    start = series.start_epoch + day * SECONDS_PER_DAY + cfg.sim_start
    if start < train_end_epoch:
        raise ConfigError("the simulated period overlaps the forecaster's training data")
    return start, start + cfg.sim_duration


def simulate(cfg: ScenarioConfig, inputs: Inputs, controller, start: float, end: float) -> SimReport:
    sim_cfg = SimConfig(cfg.fleet_size, cfg.match_epoch, cfg.rebalance_epoch, cfg.speed, cfg.max_wait,
                        cfg.zone_radius, cfg.seed)
    trips = [t for t in inputs.trips if start <= t[1] < end]
    state = init_sim(sim_cfg, inputs.zones, trips, start=start, delta=cfg.delta)
    return run(state, controller, end - start)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(cfg: ScenarioConfig) -> dict:
    return {
        "config": cfg.public_dict(),
        "config_sha256": cfg.digest(),
        "inputs_sha256": {k: _sha256(cfg.path(k)) for k in ("zones", "demographics", "trips")},
        "seed": cfg.seed,
        "versions": {"fairmivr": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def run_scenario(cfg: ScenarioConfig) -> dict:
    """Run every stage and return a JSON-serializable report."""
    with _stage("config"):
        cfg.validate()
    with _stage("ingest"):
        inputs = load_inputs(cfg)
    with _stage("graph"):
        graph = build_zone_graph(inputs.zones, inputs.demographics)
    with _stage("forecaster"):
        model, splits = train_forecaster(cfg, inputs, graph)
        prediction = evaluate_forecaster(model, splits).to_dict() if model is not None else None
    with _stage("simulate"):
        start, end = sim_window(cfg, inputs, splits[1].start_epoch)
        controller = make_controller(cfg, inputs, graph, model)
        service = simulate(cfg, inputs, controller, start, end)
    with _stage("report"):
        return {
            "prediction": prediction,
            "service": service.to_json(),
            "graph": {"zone_ids": list(inputs.zones.zone_ids), "weights": graph.weights.tolist(),
                      "rank_one_value": graph.rank_one.value},
            "forecaster": None if model is None else {"kind": model.kind, **model.info},
            "simulation": {"start_epoch_s": start, "end_epoch_s": end},
            "provenance": provenance(cfg),
        }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


def run_sweep(configs: list[ScenarioConfig], workers: int = 1) -> list[dict]:
    """Independent scenario runs, optionally in worker processes; order is preserved."""
    if workers <= 1:
        return [run_scenario(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_scenario, configs))
