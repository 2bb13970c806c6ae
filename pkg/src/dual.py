# src/dual.py

"""
QoS Feasibility Module

Decides whether per-(terminal, subcarrier) SINR targets can be met under the
linear power constraints, and returns a power-minimal allocation when they
can. The Lagrange dual is solved over the constraint multipliers omega: for
fixed omega the SINR multipliers lambda follow from a monotone fixed point,
and omega is searched on the simplex {omega_l q_l >= 0, sum = 1}.

On that simplex the dual value G(omega) = sum lambda sigma^2 is concave, its
gradient is consumed_l / q_l of the recovered downlink allocation, and
G <= (smallest common budget fraction meeting the targets) <= max_l consumed_l / q_l.
The targets are feasible iff the middle quantity is at most one.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Set, Tuple

import numpy as np
from scipy.optimize import minimize

from .model import Scenario
from .param import (
    DualParams,
    ParametrizationError,
    RealizedAllocation,
    UnservableTerminalError,
    beamformer_from_params,
    realize_allocation,
    uplink_gain,
)
from .sinr import Allocation, consumed_power, downlink_sinr

OMEGA_FLOOR = 1e-12


@dataclass(frozen=True)
class QosTargets:
    """SINR floors gamma_kc >= 0 (K_r x K_c); zero means not scheduled."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float, copy=True)
        if gamma.ndim != 2:
            raise ParametrizationError(f"Targets must be a K_r x K_c array, got shape {gamma.shape}")
        if not np.all(np.isfinite(gamma)) or np.any(gamma < 0):
            raise ParametrizationError("Targets must be finite and nonnegative")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)

    def scaled(self, factor: float) -> "QosTargets":
        return QosTargets(self.gamma * factor)


@dataclass(frozen=True)
class SolverOptions:
    inner_max_iter: int = 500
    outer_max_iter: int = 200
    inner_tol: float = 1e-10
    feasibility_tol: float = 1e-9
    gap_tol: float = 1e-7
    refine_steps: int = 100


@dataclass(frozen=True)
class P2Result:
    """
    status is "feasible", "infeasible" or "max_iter".

    dual_gap is sum lambda sigma^2 - power_fraction * sum omega q in the units
    of the returned (normalized) duals; power_fraction is max_l consumed_l / q_l
    of the returned allocation.
    """

    status: str
    allocation: RealizedAllocation
    duals: DualParams
    dual_gap: float
    iterations: int
    power_fraction: float
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


class _Infeasible(Exception):
    pass


class _NotConverged(Exception):
    pass


@dataclass
class _Evaluation:
    weights: np.ndarray
    duals: DualParams
    allocation: RealizedAllocation
    value: float
    gradient: np.ndarray

    @property
    def upper(self) -> float:
        return float(np.max(self.gradient))


class _DualEvaluator:
    """Caches G(omega), its gradient and the recovered primal per simplex point."""

    def __init__(self, targets: QosTargets, scenario: Scenario, opts: SolverOptions, debug: bool):
        self.targets = targets
        self.scenario = scenario
        self.opts = opts
        self.debug = debug
        self.cache: Dict[bytes, _Evaluation] = {}
        self.stalled: Set[bytes] = set()
        self.evaluations = 0

    def omega(self, weights: np.ndarray) -> np.ndarray:
        return np.maximum(weights, OMEGA_FLOOR) / self.scenario.constraints.q

    def _step(self, omega: np.ndarray, lam: np.ndarray, targeted) -> np.ndarray:
        """One application of lambda_kc <- gamma_kc / (h^H A^+ h)."""
        sc = self.scenario
        duals = DualParams(omega, lam)
        new = np.zeros_like(lam)
        for k, c in targeted:
            gain = uplink_gain(duals, sc.channels, sc.masks, sc.constraints, k, c)
            if gain <= 0:
                raise _Infeasible(f"terminal {k} has no usable channel on subcarrier {c}")
            new[k, c] = self.targets.gamma[k, c] / gain
        return new

    def _filter_solve(self, omega: np.ndarray, lam: np.ndarray, targeted) -> Optional[np.ndarray]:
        """
        Exact lambda for the targets when the receive filters are frozen at lam.

        Frozen filters are suboptimal, so the solution is never below the fixed
        point. Returns None when the linear system has no positive solution.
        """
        sc = self.scenario
        chans, masks = sc.channels, sc.masks
        gamma = self.targets.gamma
        duals = DualParams(omega, lam)
        base = np.tensordot(omega, sc.constraints.Q, axes=1)
        n = len(targeted)
        coupling = np.zeros((n, n))
        rhs = np.zeros(n)
        for a, (k, c) in enumerate(targeted):
            try:
                u = beamformer_from_params(duals, chans, masks, sc.constraints, k, c)
            except UnservableTerminalError:
                return None
            signal = abs(np.vdot(chans.h[k, c], u)) ** 2
            if signal <= 0:
                return None
            scale = gamma[k, c] / signal
            rhs[a] = scale * float(np.real(np.vdot(u, base @ u)))
            for b, (kb, cb) in enumerate(targeted):
                if b != a and cb == c:
                    coupling[a, b] = scale * abs(np.vdot(masks.C[kb] * chans.h[kb, c], u)) ** 2
        try:
            solution = np.linalg.solve(np.eye(n) - coupling, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(solution)) or np.any(solution <= 0):
            return None
        out = np.zeros_like(gamma)
        for (k, c), value in zip(targeted, solution):
            out[k, c] = value
        return out

    def fixed_point(self, omega: np.ndarray) -> np.ndarray:
        """
        Smallest lambda with lambda_kc h^H A^+ h = gamma_kc.

        Plain iterates from zero increase towards the fixed point and lower-bound
        G, which certifies infeasibility. Frozen-filter solves approach it from
        above and converge in a few steps even when A is badly conditioned.
        """
        noise = self.scenario.channels.noise
        tol = self.opts.inner_tol
        targeted = list(zip(*np.nonzero(self.targets.gamma > 0)))
        lower = np.zeros_like(self.targets.gamma)
        upper = None
        for _ in range(self.opts.inner_max_iter):
            new = self._step(omega, lower, targeted)
            if np.sum(new * noise) > 1 + self.opts.feasibility_tol:
                raise _Infeasible(f"dual value {np.sum(new * noise):.6g} exceeds the budget")
            change = np.max(np.abs(new - lower))
            lower = new
            if change <= tol * max(np.max(lower), 1e-300):
                return lower

            candidate = self._filter_solve(omega, lower if upper is None else upper, targeted)
            if candidate is not None:
                upper = candidate if upper is None else np.minimum(upper, candidate)
            if upper is None:
                continue
            stepped = self._step(omega, upper, targeted)
            settled = np.max(np.abs(stepped - upper)) <= tol * np.max(upper)
            upper = np.minimum(stepped, upper)
            if settled or np.max(np.abs(upper - lower)) <= tol * np.max(upper):
                if np.sum(upper * noise) > 1 + self.opts.feasibility_tol:
                    raise _Infeasible(f"dual value {np.sum(upper * noise):.6g} exceeds the budget")
                return upper
        raise _NotConverged("lambda fixed point did not converge")

    def attempt(self, weights: np.ndarray) -> Optional[_Evaluation]:
        """Like calling the evaluator, but a point whose fixed point stalls returns None."""
        key = np.asarray(weights, dtype=float).tobytes()
        if key in self.stalled:
            return None
        try:
            return self(weights)
        except _NotConverged:
            self.stalled.add(key)
            if self.debug:
                print(f"[DEBUG] omega-simplex point {np.round(weights, 6)}: fixed point stalled, rejected")
            return None

    def __call__(self, weights: np.ndarray) -> _Evaluation:
        weights = np.asarray(weights, dtype=float)
        key = weights.tobytes()
        if key in self.cache:
            return self.cache[key]
        self.evaluations += 1
        omega = self.omega(weights)
        lam = self.fixed_point(omega)
        duals = DualParams(omega, lam)
        ra = realize_allocation(duals, self.scenario, targets=self.targets.gamma)
        if ra.infeasibility == "negative_power":
            raise _Infeasible("recovered downlink powers are negative")
        value = float(np.sum(lam * self.scenario.channels.noise))
        gradient = ra.consumed / self.scenario.constraints.q
        result = _Evaluation(weights, duals, ra, value, gradient)
        self.cache[key] = result
        if self.debug:
            print(f"[DEBUG] omega-simplex point {np.round(weights, 6)}: G={value:.9g}, "
                  f"max fraction={result.upper:.9g}")
        return result


def _zero_result(scenario: Scenario) -> P2Result:
    duals = DualParams(np.zeros(scenario.constraints.num_constraints),
                       np.zeros((scenario.dims.num_rx, scenario.dims.num_sc)))
    return P2Result("feasible", realize_allocation(duals, scenario), duals, 0.0, 0, 0.0,
                    "no targets")


def _search(evaluate: _DualEvaluator, num_constraints: int, opts: SolverOptions) -> _Evaluation:
    """Maximizes G over the simplex, then tightens with multiplicative KKT steps."""
    x0 = np.full(num_constraints, 1.0 / num_constraints)
    best = evaluate(x0)

    # a stalled point scores G = 0, the dual's worst value
    def objective(w):
        trial = evaluate.attempt(w)
        return 0.0 if trial is None else -trial.value

    def gradient(w):
        trial = evaluate.attempt(w)
        return np.zeros_like(w) if trial is None else -trial.gradient

    if num_constraints > 1 and best.upper - best.value > opts.gap_tol * best.value:
        res = minimize(
            objective,
            x0,
            jac=gradient,
            method="SLSQP",
            bounds=[(OMEGA_FLOOR, 1.0)] * num_constraints,
            constraints=[{"type": "eq", "fun": lambda w: np.sum(w) - 1.0,
                          "jac": lambda w: np.ones_like(w)}],
            options={"maxiter": opts.outer_max_iter, "ftol": 1e-14},
        )
        clipped = np.clip(res.x, OMEGA_FLOOR, 1.0)
        candidate = evaluate.attempt(clipped / np.sum(clipped))
        if candidate is not None and candidate.upper < best.upper:
            best = candidate

    current = best
    for _ in range(opts.refine_steps):
        if current.upper - current.value <= opts.gap_tol * current.value:
            break
        # KKT at the maximum: consumed_l / q_l = G wherever omega_l > 0
        step = np.maximum(current.weights * current.gradient / current.value, OMEGA_FLOOR)
        trial = evaluate.attempt(step / np.sum(step))
        if trial is None:
            break
        current = trial
        if current.upper < best.upper:
            best = current
    return best


def solve_p2(targets: QosTargets, scenario: Scenario, opts: Optional[SolverOptions] = None,
             debug: bool = False) -> P2Result:
    """
    Finds a power-minimal allocation meeting the SINR targets, or proves there is none.

    Args:
        targets: SINR floors per (terminal, subcarrier).
        scenario: channels, clusters and power constraints.
        opts: iteration budgets and tolerances.
        debug: print the dual search trace.

    Returns:
        P2Result: on "feasible" the allocation meets every target with equality
        and every power constraint; the duals are normalized into [0, 1].

    Raises:
        ParametrizationError: if the targets do not match the scenario dimensions.
    """
    opts = opts or SolverOptions()
    dims = scenario.dims
    if targets.gamma.shape != (dims.num_rx, dims.num_sc):
        raise ParametrizationError(
            f"Targets have shape {targets.gamma.shape}, expected {(dims.num_rx, dims.num_sc)}"
        )
    if not np.any(targets.gamma > 0):
        return _zero_result(scenario)

    evaluate = _DualEvaluator(targets, scenario, opts, debug)
    L = scenario.constraints.num_constraints
    try:
        best = _search(evaluate, L, opts)
    except _Infeasible as e:
        if debug:
            print(f"[DEBUG] Targets infeasible: {e}")
        return _failed("infeasible", scenario, evaluate.evaluations, str(e))
    except _NotConverged as e:
        return _failed("max_iter", scenario, evaluate.evaluations, str(e))

    fraction = best.upper
    if fraction <= 1 + opts.feasibility_tol:
        status, message = "feasible", ""
    elif fraction - best.value <= opts.gap_tol * best.value:
        status, message = "infeasible", f"targets need {fraction:.6g} times the power budget"
    else:
        status, message = "max_iter", f"dual bounds [{best.value:.6g}, {fraction:.6g}] did not meet"

    d = best.duals.largest
    duals = best.duals.normalized()
    gap = (best.value - fraction * float(np.dot(best.duals.omega, scenario.constraints.q))) / d
    if debug:
        print(f"[DEBUG] solve_p2: status={status}, power fraction={fraction:.9g}, "
              f"evaluations={evaluate.evaluations}")
    return P2Result(status, best.allocation, duals, gap, evaluate.evaluations, fraction, message)


def _failed(status: str, scenario: Scenario, iterations: int, message: str) -> P2Result:
    base = _zero_result(scenario)
    return P2Result(status, base.allocation, base.duals, float("nan"), iterations,
                    float("inf"), message)


@dataclass
class QosReport:
    """SINR margins per targeted (k, c) and power slack per constraint."""

    margins: Dict[Tuple[int, int], float] = field(default_factory=dict)
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    limits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    targets: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def satisfied(self, rel_tol: float = 1e-6, power_tol: float = 1e-9) -> bool:
        sinr_ok = all(m >= -rel_tol * self.targets[key] for key, m in self.margins.items())
        return sinr_ok and bool(np.all(self.slacks >= -power_tol * self.limits))


def verify_qos(alloc: Allocation, targets: QosTargets, scenario: Scenario) -> QosReport:
    """Returns SINR_kc - gamma_kc for every targeted pair and q_l - consumed_l."""
    report = QosReport()
    for k, c in zip(*np.nonzero(targets.gamma > 0)):
        key = (int(k), int(c))
        sinr = downlink_sinr(alloc, scenario.channels, scenario.masks, key[0], key[1])
        report.margins[key] = sinr - targets.gamma[key]
        report.targets[key] = float(targets.gamma[key])
    report.limits = scenario.constraints.q.copy()
    report.slacks = report.limits - consumed_power(alloc, scenario.constraints)
    return report
