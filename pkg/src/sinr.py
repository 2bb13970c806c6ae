# src/sinr.py

"""
SINR Module

Coherent and incoherent downlink SINRs, the virtual uplink SINR of the dual
problem, terminal quality functions and system utilities.

Quality derivatives use natural-log scaling (the rate derivative is
1/(1+x)); the ln 2 factor only rescales the waterfilling level.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import pinv

from .model import ChannelSet, Dimensions, PowerConstraintSet, SelectionMasks


class SinrError(Exception):
    """Raised on invalid quality-function, utility or SINR inputs."""


@dataclass(frozen=True)
class Allocation:
    """
    Single-stream allocation: unit direction v_kc (K_r x K_c x N) and power p_kc (K_r x K_c).

    The signal correlation matrix is S_kc = p_kc (D_k v_kc)(D_k v_kc)^H.
    """

    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=complex, copy=True)
        p = np.array(self.p, dtype=float, copy=True)
        if v.shape[:2] != p.shape:
            raise SinrError(f"Direction array {v.shape} does not match power array {p.shape}")
        if np.any(p < 0):
            raise SinrError("Powers must be nonnegative")
        v.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "p", p)

    @classmethod
    def zeros(cls, dims: Dimensions) -> "Allocation":
        return cls(
            np.zeros((dims.num_rx, dims.num_sc, dims.total_antennas), dtype=complex),
            np.zeros((dims.num_rx, dims.num_sc)),
        )

    def beams(self) -> np.ndarray:
        """w_kc = sqrt(p_kc) v_kc for every (k, c)."""
        return np.sqrt(self.p)[..., np.newaxis] * self.v

    def scaled(self, factor: float) -> "Allocation":
        return Allocation(self.v, self.p * factor)

    def correlation(self, k: int, c: int, masks: SelectionMasks) -> np.ndarray:
        w = masks.D[k] * self.v[k, c] * math.sqrt(self.p[k, c])
        return np.outer(w, w.conj())


def consumed_power(alloc: Allocation, pcs: PowerConstraintSet) -> np.ndarray:
    """sum_kc tr(Q_l S_kc) for each constraint l."""
    w = alloc.beams().reshape(-1, alloc.v.shape[-1])
    return np.real(np.einsum("sn,lnm,sm->l", w.conj(), pcs.Q, w))


def _check_indices(alloc: Allocation, chans: ChannelSet, k: int, c: int) -> None:
    if alloc.v.shape != chans.h.shape:
        raise SinrError(f"Allocation shape {alloc.v.shape} does not match channels {chans.h.shape}")
    if not (0 <= k < chans.h.shape[0] and 0 <= c < chans.h.shape[1]):
        raise SinrError(f"Index (k={k}, c={c}) out of range")


def _signal_power(w: np.ndarray, chans: ChannelSet, masks: SelectionMasks, k: int, c: int) -> float:
    # one inner product over the stacked masked vector keeps the serving
    # transmitters' phases in a single place
    return abs(np.vdot(chans.h[k, c], masks.D[k] * w[k, c])) ** 2


def downlink_sinr(alloc: Allocation, chans: ChannelSet, masks: SelectionMasks,
                  k: int, c: int) -> float:
    """
    SINR of MS_k on subcarrier c under coherent joint transmission.

    Returns exactly 0.0 for a zero-power stream.
    """
    _check_indices(alloc, chans, k, c)
    if alloc.p[k, c] == 0:
        return 0.0
    w = alloc.beams()
    h = chans.h[k, c]
    signal = _signal_power(w, chans, masks, k, c)
    interference = 0.0
    for kb in range(w.shape[0]):
        if kb == k or alloc.p[kb, c] == 0:
            continue
        interference += abs(np.vdot(h, masks.C[k] * masks.D[kb] * w[kb, c])) ** 2
    return float(signal / (chans.noise[k, c] + interference))


def incoherent_sinr(alloc: Allocation, chans: ChannelSet, masks: SelectionMasks,
                    k: int, c: int) -> float:
    """
    SINR when interference from different transmitters adds in power.

    The numerator stays coherent over the serving transmitters.
    """
    _check_indices(alloc, chans, k, c)
    if alloc.p[k, c] == 0:
        return 0.0
    dims = chans.dims
    w = alloc.beams()
    h = chans.h[k, c]
    signal = _signal_power(w, chans, masks, k, c)
    interference = 0.0
    for kb in range(w.shape[0]):
        if kb == k or alloc.p[kb, c] == 0:
            continue
        terms = h.conj() * masks.C[k] * masks.D[kb] * w[kb, c]
        per_tx = np.add.reduceat(terms, dims.offsets)
        interference += float(np.sum(np.abs(per_tx) ** 2))
    return float(signal / (chans.noise[k, c] + interference))


def downlink_sinr_matrix(alloc: Allocation, chans: ChannelSet, masks: SelectionMasks,
                         incoherent: bool = False) -> np.ndarray:
    """SINR for every (k, c), shape K_r x K_c."""
    fn = incoherent_sinr if incoherent else downlink_sinr
    K_r, K_c = alloc.p.shape
    return np.array([[fn(alloc, chans, masks, k, c) for c in range(K_c)] for k in range(K_r)])


def virtual_uplink_covariance(duals, chans: ChannelSet, masks: SelectionMasks,
                              pcs: PowerConstraintSet, k: int, c: int) -> np.ndarray:
    """
    sum_l omega_l Q_l + sum_{kb in I~_k} lambda_kb,c D_k C_kb h_kb,c h_kb,c^H C_kb D_k.

    Terminals outside I~_k contribute a zero vector, so the sum runs over all kb != k.
    """
    A = np.tensordot(np.asarray(duals.omega, dtype=float), pcs.Q, axes=1).astype(complex)
    for kb in range(chans.h.shape[0]):
        lam = duals.lam[kb, c]
        if kb == k or lam == 0:
            continue
        g = masks.D[k] * masks.C[kb] * chans.h[kb, c]
        if np.any(g):
            A += lam * np.outer(g, g.conj())
    return A


def virtual_uplink_sinr(wbar: np.ndarray, duals, chans: ChannelSet, masks: SelectionMasks,
                        pcs: PowerConstraintSet, k: int, c: int) -> float:
    """
    Virtual uplink SINR of MS_k for receive filter wbar.

    Raises:
        SinrError: if the denominator vanishes while the numerator does not.
    """
    wbar = np.asarray(wbar, dtype=complex)
    numerator = duals.lam[k, c] * abs(np.vdot(wbar, masks.D[k] * chans.h[k, c])) ** 2
    if numerator == 0:
        return 0.0
    A = virtual_uplink_covariance(duals, chans, masks, pcs, k, c)
    denominator = float(np.real(np.vdot(wbar, A @ wbar)))
    if denominator <= 0:
        raise SinrError(f"Singular virtual uplink denominator for terminal {k}, subcarrier {c}")
    return float(numerator / denominator)


# --- Quality functions -----------------------------------------------------

QUALITY_KINDS = ("rate", "mse", "chernoff_ser")
CONSTELLATIONS = ("pam", "psk", "qam")


@dataclass(frozen=True)
class QualityFunction:
    """Per-subcarrier terminal quality g~(SINR): rate, MSE or Chernoff SER bound."""

    kind: str = "rate"
    M: int = 4
    constellation: str = "qam"

    def __post_init__(self):
        if self.kind not in QUALITY_KINDS:
            raise SinrError(f"Unknown quality function '{self.kind}'")
        if self.kind == "chernoff_ser":
            if self.M < 2:
                raise SinrError(f"Modulation order M must be >= 2, got {self.M}")
            if self.constellation not in CONSTELLATIONS:
                raise SinrError(f"Unknown constellation '{self.constellation}'")

    @property
    def z(self) -> float:
        M = self.M
        if self.constellation == "pam":
            return 3.0 / (M ** 2 - 1)
        if self.constellation == "psk":
            return math.sin(math.pi / M) ** 2
        return 3.0 / (2 * M - 2)


def quality_value(qf: QualityFunction, sinr):
    """g~(x): log2(1+x), -1/(1+x) or -((M-1)/M) exp(-x z)."""
    x = np.asarray(sinr, dtype=float)
    if np.any(x < 0):
        raise SinrError("SINR must be nonnegative")
    if qf.kind == "rate":
        out = np.log2(1.0 + x)
    elif qf.kind == "mse":
        out = -1.0 / (1.0 + x)
    else:
        out = -((qf.M - 1) / qf.M) * np.exp(-x * qf.z)
    return float(out) if out.ndim == 0 else out


def quality_derivative(qf: QualityFunction, sinr):
    """g~'(x) under the natural-log convention."""
    x = np.asarray(sinr, dtype=float)
    if qf.kind == "rate":
        out = 1.0 / (1.0 + x)
    elif qf.kind == "mse":
        out = 1.0 / (1.0 + x) ** 2
    else:
        out = ((qf.M - 1) / qf.M) * qf.z * np.exp(-x * qf.z)
    return float(out) if out.ndim == 0 else out


def quality_inv_derivative(qf: QualityFunction, y):
    """
    Inverse of the derivative, g~'^-1(y), in closed form.

    The result may be negative; waterfilling clamps it at zero.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise SinrError("Inverse derivative is defined for y > 0 only")
    if qf.kind == "rate":
        out = 1.0 / y - 1.0
    elif qf.kind == "mse":
        out = 1.0 / np.sqrt(y) - 1.0
    else:
        z = qf.z
        out = np.log((qf.M - 1) * z / (qf.M * y)) / z
    return float(out) if out.ndim == 0 else out


def terminal_qualities(qf: QualityFunction, sinrs: np.ndarray) -> np.ndarray:
    """g_k = sum_c g~(SINR_kc), one value per terminal."""
    return np.sum(quality_value(qf, np.asarray(sinrs, dtype=float).reshape(len(sinrs), -1)), axis=1)


UTILITY_KINDS = ("weighted_sum", "weighted_max_min")


@dataclass(frozen=True)
class UtilityConfig:
    kind: str
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.kind not in UTILITY_KINDS:
            raise SinrError(f"Unknown utility '{self.kind}'")
        if any(w < 0 for w in self.weights):
            raise SinrError("Utility weights must be nonnegative")
        if not any(w > 0 for w in self.weights):
            raise SinrError("At least one utility weight must be positive")


def system_utility(cfg: UtilityConfig, per_terminal) -> float:
    """Weighted sum or weighted max-min of per-terminal qualities."""
    g = np.asarray(per_terminal, dtype=float)
    mu = np.asarray(cfg.weights)
    if g.shape != mu.shape:
        raise SinrError(f"{g.size} terminal qualities for {mu.size} weights")
    if cfg.kind == "weighted_sum":
        return float(np.dot(mu, g))
    active = mu > 0
    return float(np.min(g[active] / mu[active]))


def mmse_receiver(duals, chans: ChannelSet, masks: SelectionMasks, pcs: PowerConstraintSet,
                  k: int, c: int, rcond: Optional[float] = 1e-12) -> np.ndarray:
    """Linear MMSE virtual-uplink filter lambda_kc A^+ D_k h_kc of the dual derivation."""
    A = virtual_uplink_covariance(duals, chans, masks, pcs, k, c)
    return duals.lam[k, c] * (pinv(A, atol=0.0, rtol=rcond) @ (masks.D[k] * chans.h[k, c]))
