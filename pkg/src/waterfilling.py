# src/waterfilling.py

"""
Waterfilling Module

Per-transmitter power allocation over the streams it serves, maximizing
sum_i mu_i g~(p_i rho_i) subject to sum_i p_i = q with zero-forcing gains rho_i.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .sinr import QualityFunction, quality_derivative, quality_inv_derivative


class WaterfillingError(Exception):
    """Raised on inconsistent waterfilling inputs."""


@dataclass(frozen=True)
class WaterfillResult:
    powers: np.ndarray
    level: float
    empty: bool = False


def _powers_at(log_level: float, rho: np.ndarray, mu: np.ndarray, qf: QualityFunction,
               usable: np.ndarray) -> np.ndarray:
    p = np.zeros_like(rho)
    log_y = log_level - np.log(mu[usable] * rho[usable])
    if qf.kind == "chernoff_ser":
        # closed form in log y; the level itself underflows at high SNR
        x = (np.log((qf.M - 1) * qf.z / qf.M) - log_y) / qf.z
    else:
        x = quality_inv_derivative(qf, np.exp(log_y))
    p[usable] = np.maximum(x / rho[usable], 0.0)
    return p


def waterfill(rho, mu, qf: QualityFunction, budget: float) -> WaterfillResult:
    """
    Solves the weighted waterfilling problem with p_i = max(g~'^-1(nu / (mu_i rho_i)) / rho_i, 0).

    The level nu is found by bracketing root search on log(nu) and the powers
    are then scaled so that they sum to the budget exactly.

    Args:
        rho: zero-forcing gains per stream (nonnegative).
        mu: weights per stream (nonnegative).
        qf: terminal quality function.
        budget: transmitter power q_j > 0.

    Returns:
        WaterfillResult: empty is set when no stream has positive mu * rho.

    Raises:
        WaterfillingError: on mismatched lengths, negative inputs or a nonpositive budget.
    """
    rho = np.asarray(rho, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if rho.shape != mu.shape:
        raise WaterfillingError(f"{rho.size} gains for {mu.size} weights")
    if np.any(rho < 0) or np.any(mu < 0):
        raise WaterfillingError("Gains and weights must be nonnegative")
    if budget <= 0:
        raise WaterfillingError(f"Power budget must be positive, got {budget}")

    usable = (rho > 0) & (mu > 0)
    if not np.any(usable):
        return WaterfillResult(np.zeros_like(rho), 0.0, empty=True)

    def excess(t: float) -> float:
        return float(np.sum(_powers_at(t, rho, mu, qf, usable))) - budget

    # at log_hi every stream is switched off
    log_hi = float(np.log(np.max(mu[usable] * rho[usable] * quality_derivative(qf, 0.0))))
    step = 1.0
    while excess(log_hi - step) <= 0:
        step *= 2
        if step > 1e7:
            raise WaterfillingError("Could not bracket the water level")

    t = brentq(excess, log_hi - step, log_hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    powers = _powers_at(t, rho, mu, qf, usable)
    powers *= budget / np.sum(powers)
    return WaterfillResult(powers, float(np.exp(t)))
