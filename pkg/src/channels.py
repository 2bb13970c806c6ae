# src/channels.py

"""
Channels Module

Synthetic channel generation: i.i.d. Rayleigh fading with per-link path loss,
an optional correlation between the blocks a terminal sees from different
transmitters, per-link phase errors, proportional-fair weights and import of
external channel dumps.

Every random draw comes from a counter-based stream keyed by
(seed, realization, link), so a realization can be regenerated on any worker
in any order.
"""

import csv
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .model import ChannelSet, Dimensions, ModelValidationError, PowerConstraintSet, per_transmitter_budgets

# stream tags; transmitter-indexed keys use 0..K_t-1
_COMMON_TAG = -1
_PHASE_TAG = 1
_PATH_LOSS_TAG = 2


class ChannelError(Exception):
    """Raised on invalid channel-generation inputs or malformed channel dumps."""


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_linear(value_dbm):
    """dBm to milliwatts."""
    return db_to_linear(value_dbm)


def _stream(seed: int, *key: int) -> np.random.Generator:
    # SeedSequence entropy must be nonnegative; negative tags are shifted into their own range
    spawn_key = tuple(int(x) if x >= 0 else 2**31 - int(x) for x in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _path_loss_matrix(path_loss, dims: Dimensions) -> np.ndarray:
    try:
        gains = np.broadcast_to(np.asarray(path_loss, dtype=float), (dims.num_tx, dims.num_rx))
    except ValueError as e:
        raise ChannelError(
            f"Path loss must be a scalar or a {dims.num_tx} x {dims.num_rx} array"
        ) from e
    if not np.all(np.isfinite(gains)) or np.any(gains < 0):
        raise ChannelError("Path-loss gains must be finite and nonnegative")
    return gains


def random_path_loss(dims: Dimensions, low_db: float, high_db: float, seed: int,
                     realization: int = 0) -> np.ndarray:
    """
    Draws per-(transmitter, terminal) path-loss gains uniformly in dB.

    Returns:
        np.ndarray: linear gains of shape (K_t, K_r).
    """
    if low_db > high_db:
        raise ChannelError(f"Path-loss range [{low_db}, {high_db}] dB is empty")
    rng = _stream(seed, realization, _PATH_LOSS_TAG)
    return db_to_linear(rng.uniform(low_db, high_db, size=(dims.num_tx, dims.num_rx)))


def rayleigh(dims: Dimensions, path_loss, seed: int, noise=1.0, correlation: float = 0.0,
             realization: int = 0) -> ChannelSet:
    """
    Generates Rayleigh-fading channels.

    Each antenna coefficient of h_jkc is circularly-symmetric complex Gaussian
    with variance path_loss[j, k]. With correlation rho > 0 the block of
    terminal k at transmitter j mixes a private draw with a draw shared by all
    transmitters, h = sqrt(pl) (sqrt(1 - rho) w_jk + sqrt(rho) z_k), which keeps
    the per-antenna variance.

    Args:
        dims: network dimensions.
        path_loss: linear gain, scalar or shape (K_t, K_r).
        seed: base seed of the experiment.
        noise: sigma_kc^2, scalar or shape (K_r, K_c).
        correlation: rho in [0, 1].
        realization: Monte-Carlo index.

    Returns:
        ChannelSet

    Raises:
        ChannelError: on negative gains or a correlation outside [0, 1].
    """
    gains = _path_loss_matrix(path_loss, dims)
    if not 0.0 <= correlation <= 1.0:
        raise ChannelError(f"Correlation must lie in [0, 1], got {correlation}")

    largest = max(dims.antennas)
    h = np.zeros((dims.num_rx, dims.num_sc, dims.total_antennas), dtype=complex)
    for k in range(dims.num_rx):
        common = None
        if correlation > 0:
            common = _complex_gaussian(_stream(seed, realization, _COMMON_TAG, k), (dims.num_sc, largest))
        for j in range(dims.num_tx):
            n = dims.antennas[j]
            block = _complex_gaussian(_stream(seed, realization, j, k), (dims.num_sc, n))
            if common is not None:
                block = np.sqrt(1.0 - correlation) * block + np.sqrt(correlation) * common[:, :n]
            h[k, :, dims.block(j)] = np.sqrt(gains[j, k]) * block
    try:
        return ChannelSet(dims, h, noise)
    except ModelValidationError as e:
        raise ChannelError(str(e)) from e


def phase_perturb(chans: ChannelSet, sigma_phi: float, seed: int, realization: int = 0) -> ChannelSet:
    """
    Rotates every (j, k, c) block by a common phase phi_jkc ~ N(0, sigma_phi^2).

    Block norms are preserved; sigma_phi = 0 returns the input unchanged.
    """
    if sigma_phi < 0:
        raise ChannelError(f"Phase standard deviation must be nonnegative, got {sigma_phi}")
    if sigma_phi == 0:
        return chans
    dims = chans.dims
    h = np.array(chans.h, copy=True)
    for k in range(dims.num_rx):
        for j in range(dims.num_tx):
            phi = sigma_phi * _stream(seed, realization, j, k, _PHASE_TAG).standard_normal(dims.num_sc)
            h[k, :, dims.block(j)] *= np.exp(1j * phi)[:, None]
    return ChannelSet(dims, h, chans.noise)


def proportional_fair_weights(ensemble: Sequence[ChannelSet], pcs: PowerConstraintSet,
                              dims: Dimensions) -> np.ndarray:
    """
    Weights mu_k proportional to 1 / E{log2(1 + K_t/(K_r sigma^2) max_j P_j ||h_jkc||^2)}.

    P_j is transmitter j's budget spread evenly over the subcarriers, the
    expectation is the sample mean over the ensemble and the subcarriers, and
    the weights are scaled to sum to K_r.

    Raises:
        ChannelError: on an empty ensemble, a constraint set that is not
            per-transmitter, or a terminal whose expected rate is zero.
    """
    if len(ensemble) == 0:
        raise ChannelError("Proportional-fair weights need a nonempty channel ensemble")
    try:
        per_carrier = per_transmitter_budgets(pcs, dims) / dims.num_sc
    except ModelValidationError as e:
        raise ChannelError(str(e)) from e

    rates = np.zeros(dims.num_rx)
    for chans in ensemble:
        # |h_jkc|^2 per (j, k, c)
        gains = np.stack([
            np.sum(np.abs(chans.h[:, :, dims.block(j)]) ** 2, axis=2) for j in range(dims.num_tx)
        ])
        strongest = np.max(per_carrier[:, None, None] * gains, axis=0)
        snr = dims.num_tx / (dims.num_rx * chans.noise) * strongest
        rates += np.mean(np.log2(1.0 + snr), axis=1)
    rates /= len(ensemble)

    if np.any(rates <= 0):
        silent = [k for k in range(dims.num_rx) if rates[k] <= 0]
        raise ChannelError(f"Terminals {silent} have zero expected rate")
    weights = 1.0 / rates
    return weights * dims.num_rx / np.sum(weights)


def load_channel_csv(path: Union[str, Path], dims: Dimensions, noise=1.0,
                     debug: bool = False) -> ChannelSet:
    """
    Reads an external channel dump.

    One link per row: j, k, c followed by the real and imaginary parts of the
    N_j antenna coefficients (re_0, im_0, re_1, im_1, ...). Blank rows and rows
    starting with '#' are skipped; links that never appear are zero.

    Raises:
        ChannelError: with the offending line number on malformed rows.
    """
    path = Path(path)
    if not path.exists():
        raise ChannelError(f"Channel file not found: {path}")

    h = np.zeros((dims.num_rx, dims.num_sc, dims.total_antennas), dtype=complex)
    seen = set()
    with open(path, newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                j, k, c = (int(x) for x in row[:3])
                values = np.array([float(x) for x in row[3:]], dtype=float)
            except ValueError as e:
                raise ChannelError(f"{path}:{line_no}: {e}") from e
            if not (0 <= j < dims.num_tx and 0 <= k < dims.num_rx and 0 <= c < dims.num_sc):
                raise ChannelError(f"{path}:{line_no}: link {(j, k, c)} is outside the network")
            if values.size != 2 * dims.antennas[j]:
                raise ChannelError(
                    f"{path}:{line_no}: expected {2 * dims.antennas[j]} values for transmitter {j}, "
                    f"got {values.size}"
                )
            if (j, k, c) in seen:
                raise ChannelError(f"{path}:{line_no}: link {(j, k, c)} appears twice")
            seen.add((j, k, c))
            h[k, c, dims.block(j)] = values[0::2] + 1j * values[1::2]

    if debug:
        print(f"[DEBUG] Loaded {len(seen)} links from {path}")
    try:
        return ChannelSet(dims, h, noise)
    except ModelValidationError as e:
        raise ChannelError(str(e)) from e


def channels_from_config(model: dict, dims: Dimensions, seed: int, realization: int,
                         data_dir: Optional[Path] = None) -> ChannelSet:
    """
    Builds one realization from the channel_model section of an experiment file.

    Supported kinds are "rayleigh" (fixed path_loss_db, or gains drawn from
    path_loss_range_db once per seed or once per realization) and "csv"
    (a fixed channel dump).
    """
    noise = dbm_to_linear(model.get("noise_dbm", -131.0))
    kind = model.get("kind", "rayleigh")
    if kind == "csv":
        path = Path(model["path"])
        if data_dir is not None and not path.is_absolute():
            path = data_dir / path
        return load_channel_csv(path, dims, noise)
    if kind != "rayleigh":
        raise ChannelError(f"Unknown channel model '{kind}'")
    if "path_loss_db" in model:
        gains = db_to_linear(model["path_loss_db"])
    else:
        low, high = model.get("path_loss_range_db", [-85.0, -37.0])
        # large-scale fading is fixed across realizations unless asked otherwise
        drop = realization if model.get("path_loss_per_realization", False) else 0
        gains = random_path_loss(dims, low, high, seed, drop)
    return rayleigh(dims, gains, seed, noise=noise, correlation=model.get("correlation", 0.0),
                    realization=realization)
