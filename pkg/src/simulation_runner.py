# src/simulation_runner.py

"""
Simulation Runner

Command-line entry point for Monte-Carlo experiments: builds channels per
realization, runs every configured strategy, re-evaluates the allocations and
writes per-terminal rate tables, per-strategy rate CDFs and a JSON summary.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.channels import ChannelError, channels_from_config, dbm_to_linear, phase_perturb, proportional_fair_weights
from src.model import (
    ClusterConfig,
    Dimensions,
    ModelValidationError,
    PowerConstraintSet,
    Scenario,
)
from src.oracle import OracleSizeError, grid_search_p1
from src.param import ParametrizationError
from src.scheduling import SchedulingError
from src.sinr import QualityFunction, SinrError, consumed_power
from src.strategies import (
    StrategyError,
    coordinated_zf,
    cvsinr,
    dvsinr,
    evaluate_allocation,
    single_cell,
    strongest_transmitter,
)
from src.utils.config_check import ConfigValidationError, load_config
from src.waterfilling import WaterfillingError

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

# each terminal is served by one transmitter, so interference from different transmitters adds in power
INCOHERENT_STRATEGIES = ("dvsinr", "coordinated_zf", "single_cell", "oracle_incoherent")

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.json"
RESULT_COLUMNS = ("strategy", "variable", "value", "realization", "terminal", "subcarrier", "rate", "power")

STRATEGY_FAILURES = (
    StrategyError,
    ParametrizationError,
    SchedulingError,
    WaterfillingError,
    SinrError,
    OracleSizeError,
    ModelValidationError,
    np.linalg.LinAlgError,
)


class SimulationError(Exception):
    """Raised when an experiment cannot produce any result."""


def compute_cdf(samples: Sequence[float]) -> List[Tuple[float, float]]:
    """
    Empirical CDF at the distinct sorted sample values, right-continuous.

    Raises:
        SimulationError: on empty input.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise SimulationError("CDF of an empty sample")
    values, counts = np.unique(x, return_counts=True)
    probabilities = np.cumsum(counts) / x.size
    return [(float(v), float(p)) for v, p in zip(values, probabilities)]


# --- Scenario construction --------------------------------------------------

def build_dimensions(section: Dict[str, Any], num_rx: Optional[int] = None) -> Dimensions:
    antennas = section["antennas"]
    if isinstance(antennas, int):
        antennas = [antennas] * section["num_tx"]
    return Dimensions(section["num_tx"], tuple(antennas), num_rx or section["num_rx"], section["num_sc"])


def build_constraints(section: Dict[str, Any], dims: Dimensions,
                      power_dbm: Optional[float] = None) -> PowerConstraintSet:
    """Power limits in milliwatts; power_dbm overrides the configured limits."""
    if power_dbm is not None:
        limits = dbm_to_linear(power_dbm)
    elif "power_dbm" in section:
        limits = dbm_to_linear(section["power_dbm"])
    else:
        limits = np.asarray(section["power"], dtype=float)
    kind = section["kind"]
    if kind == "total":
        return PowerConstraintSet.total(dims, float(np.reshape(limits, -1)[0]))
    if kind == "per_antenna":
        return PowerConstraintSet.per_antenna(dims, limits)
    return PowerConstraintSet.per_transmitter(dims, limits)


def build_clusters(section: Dict[str, Any], dims: Dimensions, chans) -> ClusterConfig:
    kind = section["kind"]
    if kind == "network_mimo":
        return ClusterConfig.network_mimo(dims.num_tx, dims.num_rx)
    if kind == "interference_channel":
        return ClusterConfig.interference_channel(dims.num_tx)
    if kind == "strongest":
        return ClusterConfig.from_serving(strongest_transmitter(chans), dims.num_tx,
                                          coordinate_all=section.get("coordinate_all", True))
    return ClusterConfig(tuple(section["data_sets"]), tuple(section["coord_sets"]), dims.num_rx)


@dataclass(frozen=True)
class SweepPoint:
    variable: str
    value: float
    num_rx: Optional[int] = None
    power_dbm: Optional[float] = None
    phase_rad: float = 0.0


def sweep_points(config: Dict[str, Any]) -> List[SweepPoint]:
    sweep = config.get("sweep")
    if sweep is None:
        return [SweepPoint("none", 0.0)]
    variable = sweep["variable"]
    points = []
    for value in sweep["values"]:
        if variable == "num_rx":
            points.append(SweepPoint(variable, value, num_rx=int(value)))
        elif variable == "power_dbm":
            points.append(SweepPoint(variable, value, power_dbm=float(value)))
        else:
            points.append(SweepPoint(variable, value, phase_rad=math.radians(value)))
    return points


def build_scenario(config: Dict[str, Any], point: SweepPoint, seed: int, realization: int,
                   base_dir: Optional[Path] = None) -> Scenario:
    dims = build_dimensions(config["dimensions"], point.num_rx)
    chans = channels_from_config(config["channel_model"], dims, seed, realization, base_dir)
    clusters = build_clusters(config["clusters"], dims, chans)
    constraints = build_constraints(config["constraints"], dims, point.power_dbm)
    return Scenario.create(dims, chans, clusters, constraints)


def resolve_weights(config: Dict[str, Any], point: SweepPoint, seed: int,
                    base_dir: Optional[Path] = None) -> np.ndarray:
    """Equal, explicit, or proportional-fair weights estimated over the run's realizations."""
    weights = config.get("weights", "equal")
    dims = build_dimensions(config["dimensions"], point.num_rx)
    if isinstance(weights, list):
        return np.asarray(weights, dtype=float)
    if weights == "equal":
        return np.ones(dims.num_rx)
    ensemble = [
        channels_from_config(config["channel_model"], dims, seed, r, base_dir)
        for r in range(config["seeds"]["realizations"])
    ]
    constraints = build_constraints(config["constraints"], dims, point.power_dbm)
    return proportional_fair_weights(ensemble, constraints, dims)


# --- Realizations -------------------------------------------------------------

def run_strategy(name: str, scenario: Scenario, weights: np.ndarray, qf: QualityFunction,
                 utility_kind: str, grid: int = 11, debug: bool = False):
    if name == "cvsinr":
        return cvsinr(scenario, weights, qf, utility_kind=utility_kind, debug=debug)
    if name == "dvsinr":
        return dvsinr(scenario, weights, qf, utility_kind=utility_kind, debug=debug)
    if name == "coordinated_zf":
        return coordinated_zf(scenario, weights, qf, utility_kind=utility_kind, debug=debug)
    if name == "single_cell":
        return single_cell(scenario, weights, qf, utility_kind=utility_kind, debug=debug)
    if name in ("oracle", "oracle_incoherent"):
        return grid_search_p1(scenario, weights, qf, grid=grid, utility_kind=utility_kind,
                              incoherent=name == "oracle_incoherent", debug=debug)
    raise StrategyError(f"Unknown strategy '{name}'")


@dataclass
class RealizationResult:
    rows: List[Tuple] = field(default_factory=list)
    summaries: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(frozen=True)
class _Task:
    config: Dict[str, Any]
    point: SweepPoint
    realization: int
    weights: Tuple[float, ...]
    seed: int
    base_dir: Optional[Path]
    debug: bool


def _run_task(task: _Task) -> RealizationResult:
    config, point, r = task.config, task.point, task.realization
    result = RealizationResult()
    scenario = build_scenario(config, point, task.seed, r, task.base_dir)
    actual = phase_perturb(scenario.channels, point.phase_rad, task.seed, r)
    weights = np.asarray(task.weights)
    qf = QualityFunction(**config.get("quality", {}))
    utility_kind = config.get("utility", "weighted_sum")
    force_incoherent = config.get("evaluation", {}).get("incoherent", False)
    grid = config.get("oracle", {}).get("grid", 11)

    for name in config["strategies"]:
        try:
            out = run_strategy(name, scenario, weights, qf, utility_kind, grid, task.debug)
            # allocations are computed on nominal channels and evaluated on the perturbed ones
            evaluation = Scenario.create(scenario.dims, actual, out.clusters, scenario.constraints, strict=False)
            incoherent = force_incoherent or name in INCOHERENT_STRATEGIES
            sinr, rate, utility = evaluate_allocation(out.allocation, evaluation, weights, qf,
                                                      utility_kind, incoherent)
        except STRATEGY_FAILURES as e:
            print(f"[WARN] {name} failed at {point.variable}={point.value}, realization {r}: {e}")
            result.failures.append({
                "strategy": name, "value": point.value, "realization": r, "error": str(e),
            })
            continue

        consumed = consumed_power(out.allocation, scenario.constraints)
        active = int(np.sum(consumed >= scenario.constraints.q * (1 - 1e-6)))
        for k in range(scenario.dims.num_rx):
            for c in range(scenario.dims.num_sc):
                result.rows.append((name, point.variable, point.value, r, k, c,
                                    float(np.log2(1.0 + sinr[k, c])), float(out.allocation.p[k, c])))
        result.summaries.append({
            "strategy": name,
            "value": point.value,
            "realization": r,
            "utility": float(utility),
            "weighted_sum_rate": float(np.dot(weights, rate)),
            "terminal_rates": [float(x) for x in rate],
            "active_constraints": active,
            "streams": int(out.schedule.stream_count()),
        })
    if task.debug:
        print(f"[DEBUG] {point.variable}={point.value}, realization {r}: "
              f"{len(result.summaries)} strategies evaluated, {len(result.failures)} failed")
    return result


# --- Aggregation --------------------------------------------------------------

def _aggregate(config: Dict[str, Any], points: List[SweepPoint],
               results: List[RealizationResult]) -> Dict[str, Any]:
    summaries = [s for res in results for s in res.summaries]
    failures = [f for res in results for f in res.failures]
    table: Dict[str, Dict[str, Any]] = {}
    for name in config["strategies"]:
        per_point = {}
        for point in points:
            mine = [s for s in summaries if s["strategy"] == name and s["value"] == point.value]
            failed = sum(1 for f in failures if f["strategy"] == name and f["value"] == point.value)
            entry = {"realizations": len(mine), "failures": failed}
            if mine:
                entry.update({
                    "mean_utility": float(np.mean([s["utility"] for s in mine])),
                    "mean_weighted_sum_rate": float(np.mean([s["weighted_sum_rate"] for s in mine])),
                    "mean_streams": float(np.mean([s["streams"] for s in mine])),
                    "mean_active_constraints": float(np.mean([s["active_constraints"] for s in mine])),
                })
            per_point[repr(point.value)] = entry
        table[name] = per_point
    return {
        "variable": points[0].variable,
        "values": [p.value for p in points],
        "realizations": config["seeds"]["realizations"],
        "seed": config["seeds"]["base"],
        "strategies": table,
        "failures": failures,
    }


def _write_outputs(output_dir: Path, config: Dict[str, Any], points: List[SweepPoint],
                   results: List[RealizationResult], summary: Dict[str, Any]) -> List[Path]:
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = output_dir / RESULTS_FILE
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_COLUMNS)
        for res in results:
            writer.writerows(res.rows)
    written.append(path)

    summaries = [s for res in results for s in res.summaries]
    for name in config["strategies"]:
        path = output_dir / f"cdf_{name}.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("variable", "value", "rate", "probability"))
            for point in points:
                rates = [x for s in summaries if s["strategy"] == name and s["value"] == point.value
                         for x in s["terminal_rates"]]
                if rates:
                    writer.writerows((point.variable, point.value, v, p) for v, p in compute_cdf(rates))
        written.append(path)

    path = output_dir / SUMMARY_FILE
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    written.append(path)
    return written


def run_experiment(config: Dict[str, Any], output_dir, workers: int = 1, seed: Optional[int] = None,
                   base_dir: Optional[Path] = None, debug: bool = False) -> Dict[str, Any]:
    """
    Runs every (sweep point, realization) task and writes the result files.

    Args:
        config: validated experiment configuration.
        output_dir: directory for results.csv, cdf_<strategy>.csv and summary.json.
        workers: processes used for the realizations.
        seed: overrides seeds.base.
        base_dir: directory relative channel dumps are resolved against.
        debug: per-realization trace.

    Returns:
        dict: the summary written to summary.json.

    Raises:
        SimulationError: if no strategy produced a result in any realization.
    """
    if not config.get("strategies"):
        raise SimulationError("No strategies configured")
    if seed is not None:
        config = dict(config, seeds=dict(config["seeds"], base=seed))
    seed = config["seeds"]["base"]
    points = sweep_points(config)

    tasks = []
    for point in points:
        weights = resolve_weights(config, point, seed, base_dir)
        if debug:
            print(f"[DEBUG] {point.variable}={point.value}: weights {np.round(weights, 6).tolist()}")
        tasks.extend(
            _Task(config, point, r, tuple(float(w) for w in weights), seed, base_dir, debug)
            for r in range(config["seeds"]["realizations"])
        )

    if workers > 1:
        with Pool(workers) as pool:
            results = pool.map(_run_task, tasks)
    else:
        results = [_run_task(t) for t in tasks]

    if not any(res.summaries for res in results):
        raise SimulationError("Every strategy failed in every realization")
    summary = _aggregate(config, points, results)
    for path in _write_outputs(Path(output_dir), config, points, results, summary):
        print(f"[INFO] Written: {path}")
    return summary


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Coordinated multicell downlink resource allocation experiments")
    parser.add_argument("--config", type=str, required=True, help="Path to the YAML experiment file")
    parser.add_argument("--output", type=str, required=True, help="Directory for result tables and summary")
    parser.add_argument("--workers", type=int, default=1, help="Worker processes for the realizations (default: 1)")
    parser.add_argument("--seed", type=int, help="Override seeds.base from the experiment file")
    parser.add_argument("--debug", action="store_true", help="Print per-realization diagnostics")
    args = parser.parse_args(argv)

    print(f"[INFO] Running experiment with:")
    print(f"       Config file     : {args.config}")
    print(f"       Output directory: {args.output}")
    print(f"       Workers         : {args.workers}")
    print(f"       Seed override   : {args.seed}")
    print(f"       Debug mode      : {args.debug}")

    try:
        config = load_config(args.config, debug=args.debug)
        if args.workers < 1:
            raise ConfigValidationError([f"--workers must be at least 1, got {args.workers}"])
        summary = run_experiment(config, args.output, workers=args.workers, seed=args.seed,
                                 base_dir=Path(args.config).resolve().parent, debug=args.debug)
    except (FileNotFoundError, ConfigValidationError, ChannelError, ModelValidationError) as e:
        print(f"[ERROR] Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except (SimulationError, *STRATEGY_FAILURES, FloatingPointError) as e:
        print(f"[ERROR] Numerical failure: {e}")
        return EXIT_NUMERICAL_ERROR

    print(f"[INFO] Strategies : {sorted(summary['strategies'])}")
    print(f"[INFO] Failures   : {len(summary['failures'])}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
