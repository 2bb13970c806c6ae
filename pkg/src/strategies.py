# src/strategies.py

"""
Strategies Module

Resource allocation strategies built on the dual parametrization:

- cvsinr: centralized scheduling, joint transmission, heuristic duals realized
  on the stacked channels and rescaled to full power.
- dvsinr: distributed scheduling, per-transmitter waterfilling and
  virtual-SINR beamforming from local channels only.
- coordinated_zf: the distributed pipeline with exact zero-forcing directions.
- single_cell: every cell runs dvsinr alone, treating other cells as noise.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space, pinv

from .model import (
    ChannelSet,
    ClusterConfig,
    Dimensions,
    ModelValidationError,
    PowerConstraintSet,
    Scenario,
    per_transmitter_budgets,
)
from .param import (
    DualParams,
    ParametrizationError,
    UnservableTerminalError,
    realize_allocation,
    rescale_full_power,
)
from .scheduling import (
    ScheduleState,
    centralized_schedule,
    projected_gain,
    prosched_schedule,
    schedule_from_streams,
)
from .sinr import (
    Allocation,
    QualityFunction,
    UtilityConfig,
    downlink_sinr_matrix,
    system_utility,
    terminal_qualities,
)
from .waterfilling import waterfill

RATE = QualityFunction("rate")


class StrategyError(Exception):
    """Raised when a strategy cannot run on the given scenario."""


@dataclass(frozen=True)
class StrategyOutput:
    """
    Allocation with its schedule and evaluated performance.

    clusters is the cluster configuration the allocation is evaluated under.
    """

    allocation: Allocation
    schedule: ScheduleState
    sinr: np.ndarray
    per_terminal_rate: np.ndarray
    utility: float
    clusters: ClusterConfig
    metadata: Dict = field(default_factory=dict)


def evaluate_allocation(alloc: Allocation, scenario: Scenario, weights: Sequence[float],
                        qf: QualityFunction, utility_kind: str = "weighted_sum",
                        incoherent: bool = False) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Returns (SINR matrix, per-terminal rate in bit/s/Hz, system utility).

    The utility applies qf to every subcarrier SINR; the rate always uses log2(1 + SINR).
    """
    sinr = downlink_sinr_matrix(alloc, scenario.channels, scenario.masks, incoherent=incoherent)
    rate = terminal_qualities(RATE, sinr)
    utility = system_utility(UtilityConfig(utility_kind, tuple(weights)), terminal_qualities(qf, sinr))
    return sinr, rate, utility


def _output(alloc: Allocation, schedule: ScheduleState, scenario: Scenario, weights, qf,
            utility_kind: str, metadata: Dict) -> StrategyOutput:
    sinr, rate, utility = evaluate_allocation(alloc, scenario, weights, qf, utility_kind)
    return StrategyOutput(alloc, schedule, sinr, rate, utility, scenario.clusters, metadata)


def _budgets(scenario: Scenario) -> np.ndarray:
    try:
        return per_transmitter_budgets(scenario.constraints, scenario.dims)
    except ModelValidationError as e:
        raise StrategyError(f"Strategy requires per-transmitter power constraints: {e}") from e


def _check_weights(weights, dims: Dimensions) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (dims.num_rx,):
        raise StrategyError(f"Expected {dims.num_rx} weights, got {weights.size}")
    if np.any(weights < 0):
        raise StrategyError("Weights must be nonnegative")
    return weights


# --- Distributed building blocks -----------------------------------------------


def heuristic_params(schedule: ScheduleState, weights: Sequence[float], noise: np.ndarray,
                     budgets: Sequence[float], num_sc: int) -> Tuple[DualParams, ...]:
    """
    Local multipliers of every transmitter.

    omega_j = K_c / q_j and lambda_kc = mu_k / (sigma_kc^2 mean_{SA(j,c)} mu) for
    k in SA(j,c) = S(j,c) | A(j,c), zero elsewhere. Entry j of the result holds
    transmitter j's omega (a single value) and its K_r x K_c lambda.
    """
    weights = np.asarray(weights, dtype=float)
    noise = np.asarray(noise, dtype=float)
    out = []
    for j in range(schedule.num_tx):
        lam = np.zeros((weights.size, num_sc))
        for c in range(num_sc):
            members = sorted(schedule.members(j, c))
            if not members:
                continue
            mean_mu = float(np.mean(weights[members]))
            if mean_mu == 0:
                continue
            for k in members:
                lam[k, c] = weights[k] / (noise[k, c] * mean_mu)
        out.append(DualParams([num_sc / budgets[j]], lam))
    return tuple(out)


def dvsinr_beamformer(j: int, k: int, c: int, schedule: ScheduleState, chans: ChannelSet,
                      heur: DualParams) -> np.ndarray:
    """
    Unit direction (omega_j I + sum_kb lambda_kb,c h_jkb,c h_jkb,c^H)^+ h_jkc over kb in SA(j,c) - k.

    Uses only transmitter j's channels; the result has length N_j.

    Raises:
        UnservableTerminalError: if the direction vanishes.
    """
    n_j = chans.dims.antennas[j]
    A = heur.omega[0] * np.eye(n_j, dtype=complex)
    for kb in sorted(schedule.members(j, c) - {k}):
        if heur.lam[kb, c] > 0:
            g = chans.link(j, kb, c)
            A += heur.lam[kb, c] * np.outer(g, g.conj())
    h = chans.link(j, k, c)
    x = pinv(A, atol=0.0, rtol=1e-12) @ h
    gain = np.vdot(h, x)
    norm = np.linalg.norm(x)
    if norm == 0 or abs(gain) <= 1e-14 * norm * max(np.linalg.norm(h), 1e-300):
        raise UnservableTerminalError(k, c)
    return x * np.exp(-1j * np.angle(gain)) / norm


def zero_forcing_direction(j: int, k: int, c: int, schedule: ScheduleState,
                           chans: ChannelSet) -> Tuple[np.ndarray, float]:
    """Unit ZF direction of stream k over SA(j,c) - k and its gain ||P h_jkc||^2."""
    h = chans.link(j, k, c)
    others = [chans.link(j, kb, c) for kb in sorted(schedule.members(j, c) - {k})]
    others = [o for o in others if np.any(o)]
    if not others:
        x = h.copy()
    else:
        basis = null_space(np.conj(np.stack(others)))
        x = basis @ (basis.conj().T @ h) if basis.size else np.zeros_like(h)
    norm = np.linalg.norm(x)
    if norm <= 1e-12 * max(np.linalg.norm(h), 1e-300):
        return np.zeros_like(h), 0.0
    x = x / norm
    return x * np.exp(-1j * np.angle(np.vdot(h, x))), float(abs(np.vdot(h, x)) ** 2)


def zf_gains(j: int, schedule: ScheduleState, chans: ChannelSet) -> Dict[Tuple[int, int], float]:
    """rho_jkc = ||P h_jkc||^2 / sigma_kc^2 for every stream k in S(j,c)."""
    out = {}
    for c in range(schedule.num_sc):
        for k in sorted(schedule.serve_sets[j][c]):
            out[(k, c)] = projected_gain(
                chans.link(j, k, c),
                [chans.link(j, kb, c) for kb in sorted(schedule.members(j, c) - {k})],
            ) / chans.noise[k, c]
    return out


def _waterfill_transmitter(j: int, schedule: ScheduleState, chans: ChannelSet, weights, qf,
                           budget: float) -> Dict[Tuple[int, int], float]:
    rho = zf_gains(j, schedule, chans)
    keys = sorted(rho)
    if not keys:
        return {}
    result = waterfill([rho[key] for key in keys], [weights[k] for k, _ in keys], qf, budget)
    return dict(zip(keys, result.powers))


def _distributed(scenario: Scenario, weights, qf: QualityFunction, schedule: ScheduleState,
                 tau: Optional[float], beamforming: str, debug: bool):
    """Waterfilling, threshold pruning and beamforming for a given schedule."""
    dims, chans = scenario.dims, scenario.channels
    budgets = _budgets(scenario)

    powers = {}
    for j in range(dims.num_tx):
        for (k, c), p in _waterfill_transmitter(j, schedule, chans, weights, qf, budgets[j]).items():
            powers[(j, k, c)] = p

    for (j, k, c), p in sorted(powers.items()):
        threshold = tau if tau is not None else 1e-4 * budgets[j] / dims.num_sc
        if p < threshold:
            if debug:
                print(f"[DEBUG] Transmitter {j}: stream ({k}, {c}) power {p:.3e} below threshold, removed")
            schedule = schedule.without(k, c)

    heur = heuristic_params(schedule, weights, chans.noise, budgets, dims.num_sc)
    v = np.zeros(chans.h.shape, dtype=complex)
    p_out = np.zeros((dims.num_rx, dims.num_sc))
    for j in range(dims.num_tx):
        block = dims.block(j)
        for c in range(dims.num_sc):
            for k in sorted(schedule.serve_sets[j][c]):
                if beamforming == "zf":
                    direction, gain = zero_forcing_direction(j, k, c, schedule, chans)
                    if gain == 0:
                        raise UnservableTerminalError(k, c)
                else:
                    direction = dvsinr_beamformer(j, k, c, schedule, chans, heur[j])
                v[k, c, block] = direction
                p_out[k, c] = powers[(j, k, c)]
    return Allocation(v, p_out), schedule, heur


def dvsinr(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
           prev: Optional[ScheduleState] = None, tau: Optional[float] = None,
           utility_kind: str = "weighted_sum", schedule: Optional[ScheduleState] = None,
           debug: bool = False) -> StrategyOutput:
    """
    Distributed virtual-SINR allocation, one scheduling slot.

    Each transmitter schedules, waterfills its budget over the zero-forcing
    gains of its streams, drops streams below tau, builds heuristic multipliers
    and computes virtual-SINR beamformers from the channels towards its
    coordination set C_j only.

    Args:
        scenario: per-transmitter constraints required.
        weights: mu_k per terminal.
        qf: quality function for scheduling, waterfilling and the utility.
        prev: schedule of the previous slot.
        tau: power threshold; defaults to 1e-4 q_j / K_c.
        schedule: fixed schedule replacing the scheduling step.
        debug: print per-step diagnostics.

    Raises:
        StrategyError: if the constraints are not per-transmitter.
    """
    weights = _check_weights(weights, scenario.dims)
    _budgets(scenario)
    if schedule is None:
        schedule = prosched_schedule(prev, scenario, weights, qf, debug=debug)
    else:
        schedule.check(scenario)
    alloc, schedule, heur = _distributed(scenario, weights, qf, schedule, tau, "virtual_sinr", debug)
    return _output(alloc, schedule, scenario, weights, qf, utility_kind, {
        "strategy": "dvsinr",
        "tau": tau,
        "streams": schedule.stream_count(),
        "omega": [float(h.omega[0]) for h in heur],
    })


def coordinated_zf(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
                   schedule: Optional[ScheduleState] = None, utility_kind: str = "weighted_sum",
                   debug: bool = False) -> StrategyOutput:
    """
    Zero-forcing towards every other member of SA(j,c), waterfilled powers.

    Streams whose zero-forcing direction vanishes are dropped, weakest first,
    until every remaining stream has a nonzero gain.
    """
    weights = _check_weights(weights, scenario.dims)
    _budgets(scenario)
    chans = scenario.channels
    if schedule is None:
        schedule = prosched_schedule(None, scenario, weights, qf, debug=debug)
    else:
        schedule.check(scenario)

    dropped = []
    while True:
        degenerate = []
        for j in range(schedule.num_tx):
            for (k, c), rho in zf_gains(j, schedule, chans).items():
                if rho <= 1e-12 * chans.link_gain(j, k, c) / chans.noise[k, c]:
                    degenerate.append((chans.link_gain(j, k, c), k, c))
        if not degenerate:
            break
        _, k, c = min(degenerate)
        print(f"[WARN] Zero-forcing infeasible for terminal {k} on subcarrier {c}; dropping it")
        schedule = schedule.without(k, c)
        dropped.append((k, c))

    alloc, schedule, _ = _distributed(scenario, weights, qf, schedule, None, "zf", debug)
    return _output(alloc, schedule, scenario, weights, qf, utility_kind, {
        "strategy": "coordinated_zf",
        "streams": schedule.stream_count(),
        "dropped": dropped,
    })


# --- Centralized -------------------------------------------------------------------


def _cvsinr_duals(streams: List[set], weights: np.ndarray, scenario: Scenario) -> DualParams:
    dims, noise = scenario.dims, scenario.channels.noise
    lam = np.zeros((dims.num_rx, dims.num_sc))
    for c, s_c in enumerate(streams):
        members = sorted(s_c)
        total_mu = float(np.sum(weights[members])) if members else 0.0
        if total_mu == 0:
            continue
        for k in members:
            lam[k, c] = weights[k] * len(members) / (noise[k, c] * total_mu)
    omega = np.zeros(scenario.constraints.num_constraints)
    for l in range(omega.size):
        omega[l] = dims.num_sc / scenario.constraints.q[l]
    return DualParams(omega, lam)


def cvsinr(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
           schedule: Optional[ScheduleState] = None, utility_kind: str = "weighted_sum",
           debug: bool = False) -> StrategyOutput:
    """
    Centralized virtual-SINR allocation.

    Schedules with global channel knowledge, sets
    lambda_kc = mu_k |S_c| / (sigma_kc^2 sum_{S_c} mu) and omega_l = K_c / q_l,
    realizes the beamformers and powers on the stacked channels and rescales
    the result so that at least one power constraint is tight.

    Raises:
        StrategyError: if the constraints are not per-transmitter or the
            realized powers are negative.
    """
    dims = scenario.dims
    weights = _check_weights(weights, dims)
    _budgets(scenario)
    if schedule is None:
        schedule = centralized_schedule(scenario, weights, qf, debug=debug)
    else:
        schedule.check(scenario)
    streams = [set(schedule.scheduled(c)) for c in range(dims.num_sc)]

    dropped = []
    while True:
        duals = _cvsinr_duals(streams, weights, scenario)
        try:
            ra = realize_allocation(duals, scenario, debug=debug)
            break
        except UnservableTerminalError as e:
            print(f"[WARN] Terminal {e.terminal} cannot be served on subcarrier {e.subcarrier}; "
                  f"removing it from the schedule")
            streams[e.subcarrier].discard(e.terminal)
            dropped.append((e.terminal, e.subcarrier))

    if ra.infeasibility == "negative_power":
        raise StrategyError("Heuristic multipliers produced negative powers")
    try:
        ra = rescale_full_power(ra, scenario.constraints)
    except ParametrizationError as e:
        raise StrategyError(str(e)) from e
    final = schedule_from_streams(streams, scenario.clusters, schedule.slot)
    return _output(ra.alloc, final, scenario, weights, qf, utility_kind, {
        "strategy": "cvsinr",
        "streams": final.stream_count(),
        "scale": ra.scale,
        "active_constraints": sorted(ra.active_constraints),
        "dropped": dropped,
    })


# --- Single-cell baseline ----------------------------------------------------------


def strongest_transmitter(chans: ChannelSet) -> List[int]:
    """max_j ||h_jk||^2 over all subcarriers, per terminal; ties go to the lowest j."""
    dims = chans.dims
    return [
        int(np.argmax([chans.link_gain(j, k) for j in range(dims.num_tx)]))
        for k in range(dims.num_rx)
    ]


def default_intercell_noise(chans: ChannelSet, serving: Sequence[int], budgets: np.ndarray) -> np.ndarray:
    """Average out-of-cell interference sum_{i != j} (q_i / K_c) ||h_ikc||^2 / N_i."""
    dims = chans.dims
    out = np.zeros((dims.num_rx, dims.num_sc))
    for k in range(dims.num_rx):
        for c in range(dims.num_sc):
            for i in range(dims.num_tx):
                if i != serving[k]:
                    out[k, c] += budgets[i] / dims.num_sc * chans.link_gain(i, k, c) / dims.antennas[i]
    return out


def single_cell(scenario: Scenario, weights: Sequence[float], qf: QualityFunction,
                intercell_noise: Optional[np.ndarray] = None, tau: Optional[float] = None,
                utility_kind: str = "weighted_sum", debug: bool = False) -> StrategyOutput:
    """
    Every transmitter serves the terminals attached to it as if it were alone.

    Terminals attach to their strongest transmitter. Out-of-cell interference
    is folded into the noise while allocating; the result is evaluated with
    every transmitter's interference counted.
    """
    dims, chans = scenario.dims, scenario.channels
    weights = _check_weights(weights, dims)
    budgets = _budgets(scenario)
    serving = strongest_transmitter(chans)
    if intercell_noise is None:
        intercell_noise = default_intercell_noise(chans, serving, budgets)
    intercell_noise = np.broadcast_to(np.asarray(intercell_noise, dtype=float), (dims.num_rx, dims.num_sc))

    v = np.zeros(chans.h.shape, dtype=complex)
    p = np.zeros((dims.num_rx, dims.num_sc))
    serve = [[set() for _ in range(dims.num_sc)] for _ in range(dims.num_tx)]
    for j in range(dims.num_tx):
        members = [k for k in range(dims.num_rx) if serving[k] == j]
        if not np.any(weights[members] > 0):
            continue
        cell_dims = Dimensions(1, (dims.antennas[j],), len(members), dims.num_sc)
        cell_h = chans.h[members][:, :, dims.block(j)]
        cell_noise = chans.noise[members] + intercell_noise[members]
        cell = Scenario.create(
            cell_dims,
            ChannelSet(cell_dims, cell_h, cell_noise),
            ClusterConfig.network_mimo(1, len(members)),
            PowerConstraintSet.per_transmitter(cell_dims, [budgets[j]]),
        )
        out = dvsinr(cell, weights[members], qf, tau=tau, utility_kind=utility_kind, debug=debug)
        for local, k in enumerate(members):
            v[k, :, dims.block(j)] = out.allocation.v[local]
            p[k] = out.allocation.p[local]
        for c in range(dims.num_sc):
            serve[j][c] = {members[local] for local in out.schedule.serve_sets[0][c]}

    clusters = ClusterConfig.from_serving(serving, dims.num_tx, coordinate_all=True)
    evaluation = Scenario.create(dims, chans, clusters, scenario.constraints, strict=False)
    schedule = ScheduleState.from_serve_sets(serve, clusters)
    sinr, rate, utility = evaluate_allocation(Allocation(v, p), evaluation, weights, qf, utility_kind)
    return StrategyOutput(Allocation(v, p), schedule, sinr, rate, utility, clusters, {
        "strategy": "single_cell",
        "serving": serving,
        "streams": schedule.stream_count(),
    })
