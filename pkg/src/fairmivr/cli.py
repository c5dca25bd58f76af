"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .fairmetrics import evaluate
from .forecaster import ForecastError
from .ingest import DataError, load_predictions, write_predictions
from .lp import LPError
from .pipeline import (EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME, StageError, dumps_report, evaluate_forecaster,
                       load_inputs, mivr_params, run_scenario, train_forecaster)
from .rebalancer import FleetState, PlanError, build_mivr_lp, solve_mivr
from .socio_graph import GraphError, build_zone_graph
from .synth import SynthSpec, generate

logger = logging.getLogger("fairmivr")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario file; flags below override its values")
    g = p.add_argument_group("scenario overrides")
    for f in fields(ScenarioConfig):
        if f.metadata.get("internal"):
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", metavar=f.name.upper())


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig(base_dir=".")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfg.with_overrides(**overrides)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    spec = SynthSpec(n_core=args.n_core, n_periphery=args.n_periphery, days=args.days, seed=args.seed)
    scenario = generate(spec)
    out = Path(args.out)
    scenario.write(out)
    cfg = ScenarioConfig(fleet_size=args.fleet_size, sim_start=7 * 3600.0, sim_duration=7200.0)
    (out / "scenario.ini").write_text(cfg.dumps())
    print(f"wrote {len(scenario.trips)} trips for {len(scenario.zone_ids)} zones to {out}")
    return 0


def cmd_graph(args) -> int:
    cfg = _config(args)
    inputs = load_inputs(cfg)
    g = build_zone_graph(inputs.zones, inputs.demographics)
    doc = {
        "zone_ids": list(g.zones.zone_ids),
        "W": g.distance_adjacency.tolist(),
        "W_star": g.enriched.tolist(),
        "rank_one": {"lambda": g.rank_one.value, "a": g.rank_one.left.tolist(), "b": g.rank_one.right.tolist()},
        "weights": g.weights.tolist(),
    }
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.forecaster not in ("graph_linear", "historical_average"):
        raise ConfigError("train needs forecaster = graph_linear or historical_average")
    inputs = load_inputs(cfg)
    g = build_zone_graph(inputs.zones, inputs.demographics)
    model, splits = train_forecaster(cfg, inputs, g)
    metrics = evaluate_forecaster(model, splits)
    _emit(json.dumps(model.to_json(), indent=1, sort_keys=True) + "\n", args.out)
    if args.predictions:
        write_predictions(args.predictions, splits[2], model.predict_series(splits[2], history=splits[1]))
    print(json.dumps(metrics.to_dict(), sort_keys=True), file=sys.stderr)
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args)
    try:
        state_doc = json.loads(Path(args.state).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read state file: {exc}") from None
    inputs = load_inputs(cfg)
    g = build_zone_graph(inputs.zones, inputs.demographics)
    params = mivr_params(cfg, g)
    state = FleetState(np.asarray(state_doc["idle"], dtype=float), int(state_doc.get("interval_index", 0)),
                       state_doc.get("incoming"))
    forecast = np.asarray(state_doc["forecast"], dtype=float)
    if args.dump_lp:
        problem, _ = build_mivr_lp(state, forecast, params)
        problem.dump(args.dump_lp)
    plan = solve_mivr(state, forecast, params)
    _emit(plan.dumps(inputs.zones.zone_ids) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    report = run_scenario(cfg)
    out = args.out or str(cfg.path("output_dir") / "report.json")
    _emit(dumps_report(report), out)
    svc = report["service"]
    print(f"unsatisfaction {svc['unsatisfaction_rate']:.4f}  wait avg {svc['wait_avg_s']:.1f}s  "
          f"wait std {svc['wait_std_across_zones_s']:.1f}s  -> {out}", file=sys.stderr)
    return 0


def cmd_metrics(args) -> int:
    actual, pred, _ = load_predictions(args.predictions)
    report = evaluate(actual, pred, literal_mape=args.literal_mape)
    _emit(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairmivr", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-cluster scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--n-core", type=int, default=4)
    p.add_argument("--n-periphery", type=int, default=4)
    p.add_argument("--days", type=int, default=26)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--fleet-size", type=int, default=70)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="build and dump W, W*, and fairness weights")
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="fit the forecaster and dump the model JSON")
    _add_config_flags(p)
    p.add_argument("--out")
    p.add_argument("--predictions", help="also write test-split predictions (CSV)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="one-shot MIVR solve from a state JSON")
    _add_config_flags(p)
    p.add_argument("--state", required=True, help='JSON with "idle", "forecast" and optional "interval_index"')
    p.add_argument("--out")
    p.add_argument("--dump-lp", help="write the LP in plain text")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run the full pipeline and write the report")
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="score a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--literal-mape", action="store_true", help="use min(r, 0.1) as the MAPE denominator")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, GraphError, ForecastError, PlanError, KeyError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except (LPError, RuntimeError, ValueError) as exc:
        logger.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
