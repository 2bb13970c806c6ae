# src/param.py

"""
Parametrization Module

Maps dual parameters (omega, lambda) to beamforming directions, SINR levels
gamma, the coupling matrices M_c and downlink powers, and rescales realized
allocations to full power.
"""

from dataclasses import dataclass, replace
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import pinv

from .model import ChannelSet, PowerConstraintSet, Scenario, SelectionMasks
from .sinr import Allocation, consumed_power, virtual_uplink_covariance

PINV_RTOL = 1e-12
NEGATIVE_POWER_TOL = 1e-9
CONSTRAINT_TOL = 1e-9
ACTIVE_TOL = 1e-6
RESIDUAL_TOL = 1e-6


class ParametrizationError(Exception):
    """Raised when dual parameters cannot be mapped to an allocation."""


class UnservableTerminalError(ParametrizationError):
    """The terminal's masked channel lies in the null space of its covariance."""

    def __init__(self, terminal: int, subcarrier: int):
        super().__init__(f"Terminal {terminal} cannot be served on subcarrier {subcarrier}")
        self.terminal = terminal
        self.subcarrier = subcarrier


class InfeasibleTargetError(ParametrizationError):
    """The SINR levels require a negative power for some terminal."""


@dataclass(frozen=True)
class DualParams:
    """
    Multipliers omega_l (one per power constraint) and lambda_kc (K_r x K_c).

    Any nonnegative values are accepted; normalized() maps them into [0, 1]
    without changing the realized allocation.
    """

    omega: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float, copy=True).reshape(-1)
        lam = np.array(self.lam, dtype=float, copy=True)
        if lam.ndim != 2:
            raise ParametrizationError(f"lambda must be a K_r x K_c array, got shape {lam.shape}")
        for name, arr in (("omega", omega), ("lambda", lam)):
            if not np.all(np.isfinite(arr)):
                raise ParametrizationError(f"{name} contains non-finite entries")
            if np.any(arr < 0):
                raise ParametrizationError(f"{name} must be nonnegative")
        omega.flags.writeable = False
        lam.flags.writeable = False
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "lam", lam)

    @property
    def largest(self) -> float:
        return float(max(np.max(self.omega, initial=0.0), np.max(self.lam, initial=0.0)))

    def scaled(self, factor: float) -> "DualParams":
        return DualParams(self.omega * factor, self.lam * factor)

    def normalized(self) -> "DualParams":
        """Divides every multiplier by the largest one."""
        d = self.largest
        return self if d == 0 else self.scaled(1.0 / d)


def _masked_solution(duals: DualParams, chans: ChannelSet, masks: SelectionMasks,
                     pcs: PowerConstraintSet, k: int, c: int):
    """
    Returns (A^+ D_k h_kc, h_kc) restricted to the D_k support.

    Q_l - D_k Q_l D_k is diagonal, so A is block diagonal with respect to the
    D_k support and the pseudoinverse can be taken on that block alone.
    """
    idx = np.flatnonzero(masks.D[k])
    h_in = chans.h[k, c, idx]
    A = virtual_uplink_covariance(duals, chans, masks, pcs, k, c)
    A_in = A[np.ix_(idx, idx)]
    A_in = (A_in + A_in.conj().T) / 2
    x = pinv(A_in, atol=0.0, rtol=PINV_RTOL) @ h_in
    return idx, x, h_in


def beamformer_from_params(duals: DualParams, chans: ChannelSet, masks: SelectionMasks,
                           pcs: PowerConstraintSet, k: int, c: int) -> np.ndarray:
    """
    Unit-norm direction v_kc = A^+ D_k h_kc / ||A^+ D_k h_kc||.

    The phase is chosen so that h_kc^H D_k v_kc is real and positive.

    Raises:
        UnservableTerminalError: if A^+ D_k h_kc vanishes.
    """
    idx, x, h_in = _masked_solution(duals, chans, masks, pcs, k, c)
    norm = np.linalg.norm(x)
    gain = np.vdot(h_in, x)
    if norm == 0 or abs(gain) <= 1e-14 * norm * max(np.linalg.norm(h_in), 1e-300):
        raise UnservableTerminalError(k, c)
    x = x * np.exp(-1j * np.angle(gain)) / norm
    v = np.zeros(chans.h.shape[-1], dtype=complex)
    v[idx] = x
    return v


def uplink_gain(duals: DualParams, chans: ChannelSet, masks: SelectionMasks,
                pcs: PowerConstraintSet, k: int, c: int) -> float:
    """h_kc^H D_k A^+ D_k h_kc, the virtual uplink SINR per unit lambda_kc."""
    _, x, h_in = _masked_solution(duals, chans, masks, pcs, k, c)
    return float(max(np.real(np.vdot(h_in, x)), 0.0))


def gamma_from_params(duals: DualParams, chans: ChannelSet, masks: SelectionMasks,
                      pcs: PowerConstraintSet, k: int, c: int) -> float:
    """gamma_kc = lambda_kc h_kc^H D_k A^+ D_k h_kc; zero when lambda_kc is zero."""
    if duals.lam[k, c] == 0:
        return 0.0
    return duals.lam[k, c] * uplink_gain(duals, chans, masks, pcs, k, c)


def build_M(gammas: Sequence[float], directions: np.ndarray, chans: ChannelSet,
            masks: SelectionMasks, c: int, active: Sequence[int]) -> np.ndarray:
    """
    Coupling matrix M_c over the active terminals.

    M[m][m] = |h_mc^H D_m v_mc|^2 and M[m][n] = -gamma_nc |h_nc^H C_n D_m v_mc|^2.

    Args:
        gammas: SINR level per terminal on subcarrier c (length K_r).
        directions: unit directions per terminal on subcarrier c (K_r x N).
        active: terminal indices the rows and columns refer to, in order.
    """
    active = list(active)
    M = np.zeros((len(active), len(active)))
    for a, m in enumerate(active):
        beam = masks.D[m] * directions[m]
        for b, n in enumerate(active):
            if a == b:
                M[a, b] = abs(np.vdot(chans.h[m, c], beam)) ** 2
            else:
                M[a, b] = -gammas[n] * abs(np.vdot(chans.h[n, c], masks.C[n] * beam)) ** 2
    return M


def power_allocation(M: np.ndarray, gammas: Sequence[float], noise: Sequence[float]) -> np.ndarray:
    """
    Solves the row-vector system p M = (gamma_k sigma_k^2) with a pseudoinverse.

    Entries with |p_k| <= tol * max|p| are clamped to zero.

    Raises:
        InfeasibleTargetError: on a genuinely negative power or an inconsistent system.
    """
    b = np.asarray(gammas, dtype=float) * np.asarray(noise, dtype=float)
    if b.size == 0:
        return np.zeros(0)
    p = b @ pinv(np.asarray(M, dtype=float), atol=0.0, rtol=PINV_RTOL)
    residual = np.linalg.norm(p @ M - b)
    if residual > RESIDUAL_TOL * max(np.linalg.norm(b), 1e-300):
        raise InfeasibleTargetError(f"SINR levels are not attainable (residual {residual:.3e})")
    tol = NEGATIVE_POWER_TOL * max(np.max(np.abs(p)), 1e-300)
    if np.any(p < -tol):
        raise InfeasibleTargetError(f"SINR levels require negative power: {p}")
    p[np.abs(p) <= tol] = 0.0
    return np.maximum(p, 0.0)


@dataclass(frozen=True)
class RealizedAllocation:
    """
    Allocation realized from dual parameters.

    infeasibility is None, "negative_power" or "power_constraint".
    """

    alloc: Allocation
    gamma: np.ndarray
    M: Tuple[np.ndarray, ...]
    active_terminals: Tuple[Tuple[int, ...], ...]
    consumed: np.ndarray
    active_constraints: FrozenSet[int]
    infeasibility: Optional[str] = None
    scale: float = 1.0
    idle: bool = False

    @property
    def feasible(self) -> bool:
        return self.infeasibility is None


def _constraint_status(consumed: np.ndarray, q: np.ndarray):
    violated = bool(np.any(consumed > q * (1 + CONSTRAINT_TOL)))
    active = frozenset(int(l) for l in np.flatnonzero(consumed >= q * (1 - ACTIVE_TOL)))
    return violated, active


def realize_allocation(duals: DualParams, scenario: Scenario, targets: Optional[np.ndarray] = None,
                       debug: bool = False) -> RealizedAllocation:
    """
    Computes directions, SINR levels, coupling matrices and powers for every subcarrier.

    Args:
        duals: multipliers; omega must have one entry per power constraint.
        scenario: channels, masks and constraints to realize against.
        targets: optional K_r x K_c SINR levels used in place of the
            closed-form gamma; the active set is then {targets > 0}.
        debug: print per-subcarrier diagnostics.

    Returns:
        RealizedAllocation: feasibility is reported, not raised.

    Raises:
        ParametrizationError: if lambda has the wrong shape or every omega is zero
            while some lambda is positive.
        UnservableTerminalError: if a terminal with positive lambda has no usable direction.
    """
    dims, chans, masks, pcs = scenario.dims, scenario.channels, scenario.masks, scenario.constraints
    if duals.omega.size != pcs.num_constraints:
        raise ParametrizationError(
            f"{duals.omega.size} omega values for {pcs.num_constraints} power constraints"
        )
    if duals.lam.shape != (dims.num_rx, dims.num_sc):
        raise ParametrizationError(
            f"lambda has shape {duals.lam.shape}, expected {(dims.num_rx, dims.num_sc)}"
        )
    if np.any(duals.lam > 0) and not np.any(duals.omega > 0):
        raise ParametrizationError("At least one omega must be positive")
    if targets is not None:
        targets = np.asarray(targets, dtype=float)
        if targets.shape != duals.lam.shape:
            raise ParametrizationError(f"targets have shape {targets.shape}, expected {duals.lam.shape}")

    v = np.zeros(chans.h.shape, dtype=complex)
    p = np.zeros((dims.num_rx, dims.num_sc))
    gamma = np.zeros_like(p)
    M_list, active_list = [], []
    infeasibility = None

    for c in range(dims.num_sc):
        selector = duals.lam[:, c] if targets is None else targets[:, c]
        active = [k for k in range(dims.num_rx) if selector[k] > 0]
        for k in active:
            v[k, c] = beamformer_from_params(duals, chans, masks, pcs, k, c)
            if targets is None:
                gamma[k, c] = gamma_from_params(duals, chans, masks, pcs, k, c)
            else:
                gamma[k, c] = targets[k, c]
        M = build_M(gamma[:, c], v[:, c], chans, masks, c, active)
        M_list.append(M)
        active_list.append(tuple(active))
        if not active:
            continue
        try:
            p[active, c] = power_allocation(M, gamma[active, c], chans.noise[active, c])
        except InfeasibleTargetError as e:
            infeasibility = "negative_power"
            if debug:
                print(f"[DEBUG] Subcarrier {c}: {e}")

    alloc = Allocation(v, p)
    consumed = consumed_power(alloc, pcs)
    violated, active_constraints = _constraint_status(consumed, pcs.q)
    if infeasibility is None and violated:
        infeasibility = "power_constraint"
    if debug:
        print(f"[DEBUG] Realized allocation: consumed={consumed}, limits={pcs.q}, "
              f"infeasibility={infeasibility}")
    return RealizedAllocation(
        alloc=alloc,
        gamma=gamma,
        M=tuple(M_list),
        active_terminals=tuple(active_list),
        consumed=consumed,
        active_constraints=active_constraints,
        infeasibility=infeasibility,
    )


def _scaled_levels(ra: RealizedAllocation, eps: float) -> np.ndarray:
    """
    SINR levels after every power is multiplied by eps.

    With r the interference-to-signal ratio read off M and the powers, the new
    level is eps gamma / (1 + (eps - 1) r); the noise never enters.
    """
    gamma = np.array(ra.gamma, dtype=float, copy=True)
    for c, (M, active) in enumerate(zip(ra.M, ra.active_terminals)):
        if not active:
            continue
        p = ra.alloc.p[list(active), c]
        for b, n in enumerate(active):
            signal = p[b] * M[b, b]
            if signal <= 0:
                gamma[n, c] = 0.0
                continue
            r = float(-(p @ M[:, b] - signal)) / signal
            gamma[n, c] = eps * gamma[n, c] / (1 + (eps - 1) * r)
    return gamma


def rescale_full_power(ra: RealizedAllocation, pcs: PowerConstraintSet) -> RealizedAllocation:
    """
    Scales every power by eps = min_l q_l / consumed_l so at least one constraint is tight.

    Allocations that exceed a power constraint are scaled down (eps < 1).
    gamma is replaced by the SINRs the scaled allocation attains.
    Nothing consumed returns the input unchanged with idle set.

    Raises:
        ParametrizationError: if the allocation needed negative powers.
    """
    if ra.infeasibility == "negative_power":
        raise ParametrizationError("Cannot rescale an allocation with negative powers")
    used = ra.consumed > 0
    if not np.any(used):
        return replace(ra, idle=True)
    eps = float(np.min(pcs.q[used] / ra.consumed[used]))
    alloc = ra.alloc.scaled(eps)
    consumed = consumed_power(alloc, pcs)
    _, active_constraints = _constraint_status(consumed, pcs.q)
    # the minimizing constraint is tight by construction
    tight = int(np.flatnonzero(used)[np.argmin(pcs.q[used] / ra.consumed[used])])
    return replace(
        ra,
        alloc=alloc,
        gamma=_scaled_levels(ra, eps),
        consumed=consumed,
        active_constraints=active_constraints | {tight},
        infeasibility=None,
        scale=ra.scale * eps,
    )
