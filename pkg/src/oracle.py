# src/oracle.py

"""
Oracle Module

Brute-force references for small networks: a grid search over the dual
parameters (omega, lambda) and an exhaustive search over schedules.
"""

import itertools
from functools import partial
from multiprocessing import Pool
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .model import ClusterConfig, Scenario
from .param import DualParams, ParametrizationError, realize_allocation, rescale_full_power
from .scheduling import exchange_sets, schedule_from_streams
from .sinr import Allocation, QualityFunction
from .strategies import (
    StrategyError,
    StrategyOutput,
    coordinated_zf,
    cvsinr,
    dvsinr,
    evaluate_allocation,
)

MAX_GRID_PARAMS = 8
MAX_GRID_POINTS = 2_000_000
MAX_EXHAUSTIVE_TERMINALS = 6
MAX_EXHAUSTIVE_SUBCARRIERS = 2


class OracleSizeError(Exception):
    """Raised when a brute-force search exceeds its size cap."""


def grid_points(num_params: int, grid: int) -> np.ndarray:
    """
    Points of the uniform grid on [0, 1]^d whose largest coordinate is 1.

    Common scaling of the multipliers leaves the allocation unchanged, so the
    remaining points carry no new information.
    """
    axis = np.linspace(0.0, 1.0, grid)
    points = [p for p in itertools.product(axis, repeat=num_params) if max(p) == 1.0]
    return np.array(points, dtype=float).reshape(-1, num_params)


def restrict_to_strongest(scenario: Scenario) -> Scenario:
    """Serves every terminal from its strongest serving transmitter only; C_j is kept."""
    clusters = scenario.clusters
    data = [set() for _ in range(clusters.num_tx)]
    for k in range(clusters.num_rx):
        serving = clusters.serving(k)
        best = max(serving, key=lambda j: (scenario.channels.link_gain(j, k), -j))
        data[best].add(k)
    restricted = ClusterConfig(tuple(data), clusters.coord_sets, clusters.num_rx)
    return Scenario.create(scenario.dims, scenario.channels, restricted, scenario.constraints,
                           strict=False)


def _evaluate_point(point: np.ndarray, scenario: Scenario, weights, qf: QualityFunction,
                    utility_kind: str, incoherent: bool) -> Optional[float]:
    L = scenario.constraints.num_constraints
    omega, lam = point[:L], point[L:].reshape(scenario.dims.num_rx, scenario.dims.num_sc)
    if not np.any(omega > 0) or not np.any(lam > 0):
        return None
    try:
        ra = realize_allocation(DualParams(omega, lam), scenario)
        if ra.infeasibility == "negative_power":
            return None
        ra = rescale_full_power(ra, scenario.constraints)
    except ParametrizationError:
        return None
    _, _, utility = evaluate_allocation(ra.alloc, scenario, weights, qf, utility_kind, incoherent)
    return utility


def _evaluate_chunk(points: np.ndarray, scenario: Scenario, weights, qf, utility_kind, incoherent):
    return [_evaluate_point(p, scenario, weights, qf, utility_kind, incoherent) for p in points]


def grid_search_p1(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
                   grid: int = 21, utility_kind: str = "weighted_sum", incoherent: bool = False,
                   workers: int = 1, debug: bool = False) -> StrategyOutput:
    """
    Best allocation over the dual-parameter grid.

    Every grid point is realized and rescaled to full power; points that need
    negative powers or cannot serve a terminal are skipped. The result is a
    lower bound on the optimal utility that tightens as the grid is refined.

    Args:
        scenario: network with K_r K_c + L <= 8 parameters.
        weights: mu_k per terminal.
        qf: quality function of the utility.
        grid: points per axis.
        utility_kind: "weighted_sum" or "weighted_max_min".
        incoherent: restrict every terminal to its strongest transmitter and
            evaluate with incoherent interference.
        workers: processes used to evaluate grid points.
        debug: print search statistics.

    Raises:
        OracleSizeError: if the parameter count exceeds the cap.
    """
    dims = scenario.dims
    num_params = dims.num_rx * dims.num_sc + scenario.constraints.num_constraints
    if num_params > MAX_GRID_PARAMS:
        raise OracleSizeError(f"Grid search over {num_params} parameters exceeds the cap of {MAX_GRID_PARAMS}")
    if grid < 2:
        raise OracleSizeError(f"Grid needs at least 2 points per axis, got {grid}")
    if grid ** num_params > MAX_GRID_POINTS:
        raise OracleSizeError(f"{grid}^{num_params} grid points exceed the cap of {MAX_GRID_POINTS}")
    if incoherent:
        scenario = restrict_to_strongest(scenario)
    weights = np.asarray(weights, dtype=float)

    points = grid_points(num_params, grid)
    evaluate = partial(_evaluate_chunk, scenario=scenario, weights=weights, qf=qf,
                       utility_kind=utility_kind, incoherent=incoherent)
    if workers > 1:
        chunks = np.array_split(points, workers * 4)
        with Pool(workers) as pool:
            utilities = [u for part in pool.map(evaluate, chunks) for u in part]
    else:
        utilities = evaluate(points)

    best_index, best_utility = None, -np.inf
    for index, utility in enumerate(utilities):
        if utility is not None and utility > best_utility:
            best_index, best_utility = index, utility
    if debug:
        evaluated = sum(u is not None for u in utilities)
        print(f"[DEBUG] Grid search: {len(points)} points, {evaluated} realizable, best utility {best_utility}")

    L = scenario.constraints.num_constraints
    if best_index is None:
        alloc = Allocation.zeros(dims)
        duals = None
    else:
        point = points[best_index]
        duals = DualParams(point[:L], point[L:].reshape(dims.num_rx, dims.num_sc))
        alloc = rescale_full_power(realize_allocation(duals, scenario), scenario.constraints).alloc
    sinr, rate, utility = evaluate_allocation(alloc, scenario, weights, qf, utility_kind, incoherent)
    streams = [{k for k in range(dims.num_rx) if alloc.p[k, c] > 0} for c in range(dims.num_sc)]
    return StrategyOutput(alloc, schedule_from_streams(streams, scenario.clusters), sinr, rate, utility,
                          scenario.clusters, {
                              "strategy": "oracle_incoherent" if incoherent else "oracle",
                              "grid": grid,
                              "points": len(points),
                              "duals": None if duals is None else point.tolist(),
                          })


def _subsets(items: Sequence[int]):
    for size in range(len(items) + 1):
        yield from itertools.combinations(items, size)


def _joint_schedules(scenario: Scenario, candidates: List[int]):
    dims, clusters = scenario.dims, scenario.clusters
    per_carrier = [
        [frozenset(s) for s in _subsets(candidates)
         if all(len(set(s) & clusters.coord_sets[j]) <= dims.antennas[j] for j in range(dims.num_tx))]
        for _ in range(dims.num_sc)
    ]
    for streams in itertools.product(*per_carrier):
        yield schedule_from_streams(streams, clusters)


def _distributed_schedules(scenario: Scenario, candidates: List[int]):
    dims, clusters = scenario.dims, scenario.clusters
    # each terminal is unscheduled (None) or served by one of its transmitters
    options = [[None] + clusters.serving(k) for k in candidates]
    per_carrier = list(itertools.product(*options))
    for assignment in itertools.product(per_carrier, repeat=dims.num_sc):
        choices = [[set() for _ in range(dims.num_sc)] for _ in range(dims.num_tx)]
        for c, per_terminal in enumerate(assignment):
            for k, j in zip(candidates, per_terminal):
                if j is not None:
                    choices[j][c].add(k)
        if any(len(choices[j][c]) > dims.antennas[j]
               for j in range(dims.num_tx) for c in range(dims.num_sc)):
            continue
        yield exchange_sets(choices, scenario)


INNER_STRATEGIES: Dict[str, Callable] = {
    "cvsinr": cvsinr,
    "dvsinr": dvsinr,
    "coordinated_zf": coordinated_zf,
}


def exhaustive_schedule(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
                        inner: str = "dvsinr", utility_kind: str = "weighted_sum",
                        debug: bool = False) -> StrategyOutput:
    """
    Runs the inner strategy under every admissible schedule and keeps the best.

    cvsinr enumerates stream sets S_c with |S_c & C_j| <= N_j; the distributed
    strategies enumerate one serving transmitter (or none) per terminal and
    subcarrier, followed by the usual coordination-set repair.

    Raises:
        OracleSizeError: beyond 6 terminals or 2 subcarriers.
        StrategyError: for an unknown inner strategy.
    """
    dims = scenario.dims
    if dims.num_rx > MAX_EXHAUSTIVE_TERMINALS or dims.num_sc > MAX_EXHAUSTIVE_SUBCARRIERS:
        raise OracleSizeError(
            f"Exhaustive scheduling is limited to {MAX_EXHAUSTIVE_TERMINALS} terminals and "
            f"{MAX_EXHAUSTIVE_SUBCARRIERS} subcarriers"
        )
    if inner not in INNER_STRATEGIES:
        raise StrategyError(f"Unknown inner strategy '{inner}'")
    weights = np.asarray(weights, dtype=float)
    candidates = [k for k in range(dims.num_rx) if weights[k] > 0]
    schedules = (_joint_schedules if inner == "cvsinr" else _distributed_schedules)(scenario, candidates)

    strategy = INNER_STRATEGIES[inner]
    best: Optional[StrategyOutput] = None
    tried = 0
    for schedule in schedules:
        tried += 1
        try:
            out = strategy(scenario, weights, qf, schedule=schedule, utility_kind=utility_kind)
        except (StrategyError, ParametrizationError):
            continue
        if best is None or out.utility > best.utility:
            best = out
    if best is None:
        raise StrategyError("No admissible schedule could be evaluated")
    if debug:
        print(f"[DEBUG] Exhaustive {inner}: {tried} schedules, best utility {best.utility}")
    metadata = dict(best.metadata, strategy=f"exhaustive_{inner}", schedules=tried)
    return StrategyOutput(best.allocation, best.schedule, best.sinr, best.per_terminal_rate,
                          best.utility, best.clusters, metadata)
