# src/scheduling.py

"""
Scheduling Module

Projection-based greedy scheduling with inter-cell coordination sets.

Each transmitter j picks its served set S(j,c) per subcarrier by a local
add/remove search over a sum metric. A central exchange then resolves
terminals claimed by several transmitters, recomputes the coordination sets
A(j,c) = union over i != j of S(i,c) & C_j, and repairs every transmitter to
|S(j,c) | A(j,c)| <= N_j.
"""

from dataclasses import dataclass
from typing import Callable, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from .model import ClusterConfig, Scenario, per_transmitter_budgets
from .sinr import QualityFunction, quality_value

SetGrid = Tuple[Tuple[FrozenSet[int], ...], ...]


class SchedulingError(Exception):
    """Raised when a schedule is inconsistent with the scenario."""


@dataclass(frozen=True)
class ScheduleState:
    """Served sets S(j,c) and coordination sets A(j,c), indexed [j][c], at slot n."""

    serve_sets: SetGrid
    coord_sets: SetGrid
    slot: int = 0

    def __post_init__(self):
        freeze = lambda grid: tuple(tuple(frozenset(s) for s in row) for row in grid)
        object.__setattr__(self, "serve_sets", freeze(self.serve_sets))
        object.__setattr__(self, "coord_sets", freeze(self.coord_sets))

    @classmethod
    def empty(cls, num_tx: int, num_sc: int) -> "ScheduleState":
        grid = tuple(tuple(frozenset() for _ in range(num_sc)) for _ in range(num_tx))
        return cls(grid, grid, 0)

    @classmethod
    def from_serve_sets(cls, serve_sets, clusters: ClusterConfig, slot: int = 0) -> "ScheduleState":
        """Builds the state and computes every coordination set from the served sets."""
        serve = tuple(tuple(frozenset(s) for s in row) for row in serve_sets)
        num_tx = len(serve)
        num_sc = len(serve[0]) if serve else 0
        coord = []
        for j in range(num_tx):
            row = []
            for c in range(num_sc):
                others = set()
                for i in range(num_tx):
                    if i != j:
                        others |= serve[i][c]
                row.append(frozenset(others & clusters.coord_sets[j]))
            coord.append(tuple(row))
        return cls(serve, tuple(coord), slot)

    @property
    def num_tx(self) -> int:
        return len(self.serve_sets)

    @property
    def num_sc(self) -> int:
        return len(self.serve_sets[0]) if self.serve_sets else 0

    def scheduled(self, c: int) -> FrozenSet[int]:
        out = set()
        for row in self.serve_sets:
            out |= row[c]
        return frozenset(out)

    def stream_count(self) -> int:
        """sum_c |S_c|, the number of simultaneously scheduled streams."""
        return sum(len(self.scheduled(c)) for c in range(self.num_sc))

    def serving(self, k: int, c: int) -> List[int]:
        return [j for j in range(self.num_tx) if k in self.serve_sets[j][c]]

    def members(self, j: int, c: int) -> FrozenSet[int]:
        """SA(j,c) = S(j,c) | A(j,c)."""
        return self.serve_sets[j][c] | self.coord_sets[j][c]

    def without(self, k: int, c: int) -> "ScheduleState":
        """Removes terminal k from every S(j,c) and A(j,c) on subcarrier c."""
        def strip(grid):
            return tuple(
                tuple(s - {k} if cc == c else s for cc, s in enumerate(row)) for row in grid
            )
        return ScheduleState(strip(self.serve_sets), strip(self.coord_sets), self.slot)

    def check(self, scenario: Scenario) -> None:
        dims, clusters = scenario.dims, scenario.clusters
        if self.num_tx != dims.num_tx or self.num_sc != dims.num_sc:
            raise SchedulingError(
                f"Schedule covers {self.num_tx} transmitters x {self.num_sc} subcarriers, "
                f"scenario has {dims.num_tx} x {dims.num_sc}"
            )
        for j in range(dims.num_tx):
            for c in range(dims.num_sc):
                if not self.serve_sets[j][c] <= clusters.data_sets[j]:
                    raise SchedulingError(f"S({j},{c}) is not within D_{j}")


def projected_gain(signal: np.ndarray, others: Sequence[np.ndarray]) -> float:
    """||P h||^2 where P projects onto the orthogonal complement of the other channels."""
    others = [o for o in others if np.any(o)]
    if not others:
        return float(np.sum(np.abs(signal) ** 2))
    basis = null_space(np.conj(np.stack(others)))
    if basis.size == 0:
        return 0.0
    return float(np.sum(np.abs(basis.conj().T @ signal) ** 2))


def local_search(candidates: Iterable[int], start: Iterable[int],
                 metric: Callable[[FrozenSet[int]], float],
                 admissible: Callable[[FrozenSet[int]], bool]) -> FrozenSet[int]:
    """
    Greedy add/remove search.

    Each round applies the single add or remove with the largest metric gain;
    ties go to the lowest terminal index. Stops when no move improves the metric.
    """
    candidates = sorted(set(candidates))
    current = frozenset(k for k in start if k in candidates)
    if not admissible(current):
        current = frozenset()
    value = metric(current)
    for _ in range(4 * len(candidates) + 4):
        best_move, best_gain = None, 1e-12 * max(abs(value), 1e-300)
        for k in candidates:
            trial = current ^ {k}
            if not admissible(trial):
                continue
            gain = metric(trial) - value
            if gain > best_gain:
                best_move, best_gain = trial, gain
        if best_move is None:
            break
        current, value = best_move, value + best_gain
    return current


def _strongest_singleton(candidates: Sequence[int],
                         metric: Callable[[FrozenSet[int]], float]) -> FrozenSet[int]:
    best, best_value = frozenset(), 0.0
    for k in sorted(candidates):
        value = metric(frozenset({k}))
        if value > best_value:
            best, best_value = frozenset({k}), value
    return best


def local_metric(scenario: Scenario, j: int, c: int, serve: FrozenSet[int], coord: FrozenSet[int],
                 weights: Sequence[float], qf: QualityFunction, budget: float) -> float:
    """
    Sum metric sum_{k in S} mu_k (g~(x_k) - g~(0)) of transmitter j on subcarrier c.

    x_k = q_j ||P h_jkc||^2 / (sigma_kc^2 K_c |S|) with P the projection onto the
    null space of the local channels of (S | A) minus k.
    """
    if not serve:
        return 0.0
    chans = scenario.channels
    num_sc = scenario.dims.num_sc
    everyone = serve | coord
    base = quality_value(qf, 0.0)
    total = 0.0
    for k in serve:
        others = [chans.link(j, kb, c) for kb in sorted(everyone) if kb != k]
        gain = projected_gain(chans.link(j, k, c), others)
        x = budget * gain / (chans.noise[k, c] * num_sc * len(serve))
        total += weights[k] * (quality_value(qf, x) - base)
    return total


def repair(serve: FrozenSet[int], coord: FrozenSet[int], scenario: Scenario, j: int, c: int
           ) -> FrozenSet[int]:
    """
    Drops coordinated, unserved terminals in increasing ||h_jkc||^2 until |S | A| <= N_j.

    Returns the repaired coordination set.
    """
    limit = scenario.dims.antennas[j]
    coord = set(coord)
    ordered = sorted(coord - serve, key=lambda k: (scenario.channels.link_gain(j, k, c), k))
    for k in ordered:
        if len(serve | coord) <= limit:
            break
        coord.discard(k)
    return frozenset(coord)


def exchange_sets(choices, scenario: Scenario, slot: int = 0, debug: bool = False) -> ScheduleState:
    """Central exchange: one serving transmitter per terminal, then coordination sets and repair."""
    dims = scenario.dims
    serve = [[set(choices[j][c]) for c in range(dims.num_sc)] for j in range(dims.num_tx)]
    for c in range(dims.num_sc):
        for k in range(dims.num_rx):
            claims = [j for j in range(dims.num_tx) if k in serve[j][c]]
            if len(claims) > 1:
                keep = max(claims, key=lambda j: (scenario.channels.link_gain(j, k, c), -j))
                for j in claims:
                    if j != keep:
                        serve[j][c].discard(k)
                if debug:
                    print(f"[DEBUG] Terminal {k} on subcarrier {c} claimed by {claims}, kept {keep}")
    state = ScheduleState.from_serve_sets(serve, scenario.clusters, slot)
    coord = []
    for j in range(dims.num_tx):
        coord.append(tuple(
            repair(state.serve_sets[j][c], state.coord_sets[j][c], scenario, j, c)
            for c in range(dims.num_sc)
        ))
    return ScheduleState(state.serve_sets, tuple(coord), slot)


def prosched_schedule(prev: Optional[ScheduleState], scenario: Scenario, weights: Sequence[float],
                      qf: QualityFunction, debug: bool = False) -> ScheduleState:
    """
    One distributed scheduling round.

    Every transmitter runs the local search on its own channels, starting from
    its previous served set (or the strongest single terminal when that set is
    empty) and treating the previous coordination set as fixed. The central
    exchange then resolves duplicate claims, recomputes coordination sets and
    repairs antenna overloads.

    Args:
        prev: schedule of the previous slot; None starts from an empty schedule.
        scenario: needs per-transmitter power constraints.
        weights: mu_k per terminal.
        qf: quality function used in the metric.
        debug: print per-transmitter decisions.

    Returns:
        ScheduleState: the schedule of slot prev.slot + 1 (or 0).
    """
    dims = scenario.dims
    budgets = per_transmitter_budgets(scenario.constraints, dims)
    if prev is None:
        prev, slot = ScheduleState.empty(dims.num_tx, dims.num_sc), 0
    else:
        prev.check(scenario)
        slot = prev.slot + 1
    weights = np.asarray(weights, dtype=float)

    choices = []
    for j in range(dims.num_tx):
        row = []
        for c in range(dims.num_sc):
            coord = prev.coord_sets[j][c]
            candidates = [k for k in sorted(scenario.clusters.data_sets[j] - coord) if weights[k] > 0]

            def metric(s, j=j, c=c, coord=coord):
                return local_metric(scenario, j, c, s, coord, weights, qf, budgets[j])

            def admissible(s, j=j, coord=coord):
                return len(s | coord) <= dims.antennas[j]

            start = prev.serve_sets[j][c] & frozenset(candidates)
            if not start:
                start = _strongest_singleton(candidates, metric)
            chosen = local_search(candidates, start, metric, admissible)
            if debug:
                print(f"[DEBUG] Transmitter {j}, subcarrier {c}: S={sorted(chosen)}, "
                      f"A_prev={sorted(coord)}")
            row.append(chosen)
        choices.append(row)
    return exchange_sets(choices, scenario, slot, debug)


def centralized_metric(scenario: Scenario, c: int, serve: FrozenSet[int], weights: Sequence[float],
                       qf: QualityFunction, budgets: np.ndarray) -> float:
    """
    Sum metric on stacked channels: signal D_k h_kc, interference directions D_k C_kb h_kb,c.

    The power of stream k is the sum of its serving transmitters' budgets,
    split over K_c |S| streams.
    """
    if not serve:
        return 0.0
    chans, masks, clusters = scenario.channels, scenario.masks, scenario.clusters
    base = quality_value(qf, 0.0)
    total = 0.0
    for k in serve:
        signal = masks.D[k] * chans.h[k, c]
        others = [masks.D[k] * masks.C[kb] * chans.h[kb, c] for kb in sorted(serve) if kb != k]
        gain = projected_gain(signal, others)
        q_eff = sum(budgets[j] for j in clusters.serving(k))
        x = q_eff * gain / (chans.noise[k, c] * scenario.dims.num_sc * len(serve))
        total += weights[k] * (quality_value(qf, x) - base)
    return total


def centralized_schedule(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
                         prev: Optional[ScheduleState] = None, debug: bool = False) -> ScheduleState:
    """
    Greedy scheduling over the whole network with global channel knowledge.

    A set S_c is admissible when |S_c & C_j| <= N_j for every transmitter.
    Every terminal in S_c is served jointly by all transmitters with it in D_j.
    """
    dims, clusters = scenario.dims, scenario.clusters
    budgets = per_transmitter_budgets(scenario.constraints, dims)
    weights = np.asarray(weights, dtype=float)
    candidates = [k for k in range(dims.num_rx) if weights[k] > 0]

    def admissible(s):
        return all(len(s & clusters.coord_sets[j]) <= dims.antennas[j] for j in range(dims.num_tx))

    chosen = []
    for c in range(dims.num_sc):
        def metric(s, c=c):
            return centralized_metric(scenario, c, s, weights, qf, budgets)

        start = prev.scheduled(c) if prev is not None else frozenset()
        if not start:
            start = _strongest_singleton(candidates, metric)
        s_c = local_search(candidates, start, metric, admissible)
        if debug:
            print(f"[DEBUG] Subcarrier {c}: centrally scheduled {sorted(s_c)}")
        chosen.append(s_c)
    return schedule_from_streams(chosen, clusters, slot=0 if prev is None else prev.slot + 1)


def schedule_from_streams(streams: Sequence[Iterable[int]], clusters: ClusterConfig,
                          slot: int = 0) -> ScheduleState:
    """Joint-transmission schedule: S(j,c) = S_c & D_j and A(j,c) = (S_c & C_j) - D_j."""
    streams = [frozenset(s) for s in streams]
    serve = tuple(tuple(s & clusters.data_sets[j] for s in streams) for j in range(clusters.num_tx))
    coord = tuple(
        tuple((s & clusters.coord_sets[j]) - clusters.data_sets[j] for s in streams)
        for j in range(clusters.num_tx)
    )
    return ScheduleState(serve, coord, slot)
