# src/model.py

"""
System Model Module

Channels, dynamic cooperation clusters, selection masks, linear power
constraints and the scenario bundle shared by every other module.

Selection matrices D_k and C_k are diagonal 0/1 matrices; they are stored
as boolean vectors of length N (one entry per antenna in the network) and
applied by elementwise masking.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np


PSD_TOLERANCE = 1e-9


class ModelValidationError(Exception):
    """Raised when dimensions, clusters, channels or constraints are inconsistent."""


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dimensions:
    """K_t transmitters with N_j antennas each, K_r terminals, K_c subcarriers."""

    num_tx: int
    antennas: Tuple[int, ...]
    num_rx: int
    num_sc: int

    def __post_init__(self):
        object.__setattr__(self, "antennas", tuple(int(n) for n in self.antennas))
        for name in ("num_tx", "num_rx", "num_sc"):
            if int(getattr(self, name)) < 1:
                raise ModelValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.antennas) != self.num_tx:
            raise ModelValidationError(
                f"Expected {self.num_tx} antenna counts, got {len(self.antennas)}"
            )
        if any(n < 1 for n in self.antennas):
            raise ModelValidationError(f"Every transmitter needs >= 1 antenna: {self.antennas}")

    @property
    def total_antennas(self) -> int:
        return sum(self.antennas)

    @property
    def offsets(self) -> Tuple[int, ...]:
        """Start index of each transmitter block in the stacked antenna vector."""
        starts = [0]
        for n in self.antennas[:-1]:
            starts.append(starts[-1] + n)
        return tuple(starts)

    def block(self, j: int) -> slice:
        start = self.offsets[j]
        return slice(start, start + self.antennas[j])

    def block_mask(self, j: int) -> np.ndarray:
        mask = np.zeros(self.total_antennas, dtype=bool)
        mask[self.block(j)] = True
        return mask


@dataclass(frozen=True)
class ChannelSet:
    """
    Stacked channels h_kc (shape K_r x K_c x N) and noise powers sigma_kc^2
    (shape K_r x K_c, linear scale).

    The per-transmitter channel h_jkc is the j-th block of h_kc.
    """

    dims: Dimensions
    h: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        d = self.dims
        h = _frozen(self.h, complex)
        noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (d.num_rx, d.num_sc))
        noise = _frozen(noise, float)
        if h.shape != (d.num_rx, d.num_sc, d.total_antennas):
            raise ModelValidationError(
                f"Channel array has shape {h.shape}, expected "
                f"{(d.num_rx, d.num_sc, d.total_antennas)}"
            )
        if not np.all(np.isfinite(h)):
            raise ModelValidationError("Channel array contains non-finite entries")
        if np.any(noise <= 0) or not np.all(np.isfinite(noise)):
            raise ModelValidationError("Noise powers must be finite and strictly positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "noise", noise)

    @classmethod
    def from_blocks(cls, dims: Dimensions, blocks: Dict[Tuple[int, int, int], Sequence[complex]],
                    noise=1.0) -> "ChannelSet":
        """Builds a channel set from per-link vectors keyed by (j, k, c); missing links are zero."""
        h = np.zeros((dims.num_rx, dims.num_sc, dims.total_antennas), dtype=complex)
        for (j, k, c), vector in blocks.items():
            vector = np.asarray(vector, dtype=complex).reshape(-1)
            if vector.size != dims.antennas[j]:
                raise ModelValidationError(
                    f"Link {(j, k, c)} has {vector.size} entries, transmitter {j} has "
                    f"{dims.antennas[j]} antennas"
                )
            h[k, c, dims.block(j)] = vector
        return cls(dims, h, noise)

    def link(self, j: int, k: int, c: int) -> np.ndarray:
        """Per-transmitter channel h_jkc (length N_j)."""
        return self.h[k, c, self.dims.block(j)]

    def link_gain(self, j: int, k: int, c: Optional[int] = None) -> float:
        """||h_jkc||^2, or the sum over subcarriers when c is None."""
        block = self.h[k, :, self.dims.block(j)] if c is None else self.link(j, k, c)
        return float(np.sum(np.abs(block) ** 2))


@dataclass(frozen=True)
class ClusterConfig:
    """Serve sets D_j and coordination sets C_j for each transmitter."""

    data_sets: Tuple[FrozenSet[int], ...]
    coord_sets: Tuple[FrozenSet[int], ...]
    num_rx: int

    def __post_init__(self):
        object.__setattr__(self, "data_sets", tuple(frozenset(s) for s in self.data_sets))
        object.__setattr__(self, "coord_sets", tuple(frozenset(s) for s in self.coord_sets))

    @property
    def num_tx(self) -> int:
        return len(self.data_sets)

    @classmethod
    def network_mimo(cls, num_tx: int, num_rx: int) -> "ClusterConfig":
        """Every transmitter serves and coordinates towards every terminal."""
        everyone = frozenset(range(num_rx))
        return cls((everyone,) * num_tx, (everyone,) * num_tx, num_rx)

    @classmethod
    def interference_channel(cls, num_pairs: int) -> "ClusterConfig":
        """Transmitter j serves terminal j and coordinates towards all terminals."""
        everyone = frozenset(range(num_pairs))
        return cls(
            tuple(frozenset({j}) for j in range(num_pairs)),
            (everyone,) * num_pairs,
            num_pairs,
        )

    @classmethod
    def from_serving(cls, serving: Sequence[int], num_tx: int,
                     coordinate_all: bool = True) -> "ClusterConfig":
        """Each terminal k is served by transmitter serving[k]."""
        data = [set() for _ in range(num_tx)]
        for k, j in enumerate(serving):
            data[j].add(k)
        everyone = frozenset(range(len(serving)))
        coord = [everyone if coordinate_all else frozenset(d) for d in data]
        return cls(tuple(data), tuple(coord), len(serving))

    def validate(self, dims: Dimensions) -> None:
        if self.num_tx != dims.num_tx or len(self.coord_sets) != dims.num_tx:
            raise ModelValidationError(
                f"Cluster config lists {self.num_tx} serve sets and {len(self.coord_sets)} "
                f"coordination sets for {dims.num_tx} transmitters"
            )
        if self.num_rx != dims.num_rx:
            raise ModelValidationError(
                f"Cluster config covers {self.num_rx} terminals, dimensions have {dims.num_rx}"
            )
        for j, (d_set, c_set) in enumerate(zip(self.data_sets, self.coord_sets)):
            for k in d_set | c_set:
                if not 0 <= k < dims.num_rx:
                    raise ModelValidationError(
                        f"Terminal index {k} in cluster of transmitter {j} out of range"
                    )
            if not d_set <= c_set:
                raise ModelValidationError(
                    f"D_{j} = {sorted(d_set)} is not a subset of C_{j} = {sorted(c_set)}"
                )
        served = set().union(*self.data_sets) if self.data_sets else set()
        missing = sorted(set(range(dims.num_rx)) - served)
        if missing:
            raise ModelValidationError(f"Terminals {missing} are not served by any transmitter")

    def serving(self, k: int) -> List[int]:
        return [j for j, d_set in enumerate(self.data_sets) if k in d_set]


@dataclass(frozen=True)
class SelectionMasks:
    """Boolean diagonals of D_k and C_k, each of shape K_r x N."""

    D: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "D", _frozen(self.D, bool))
        object.__setattr__(self, "C", _frozen(self.C, bool))

    def interferers(self, k: int) -> List[int]:
        """Terminals whose streams reach MS_k through C_k (the set I_k)."""
        return [kb for kb in range(self.D.shape[0]) if kb != k and np.any(self.C[k] & self.D[kb])]

    def coordinated(self, k: int) -> List[int]:
        """Terminals the transmitters serving MS_k must protect (the set I~_k)."""
        return [kb for kb in range(self.D.shape[0]) if kb != k and np.any(self.D[k] & self.C[kb])]


def _check_terminal(k: int, clusters: ClusterConfig) -> None:
    if not 0 <= k < clusters.num_rx:
        raise ModelValidationError(f"Terminal index {k} out of range [0, {clusters.num_rx})")


def build_selection_masks(clusters: ClusterConfig, dims: Dimensions) -> SelectionMasks:
    """
    Builds the block-diagonal selection masks D_k and C_k.

    Block j of D_k (resp. C_k) is the identity iff k is in D_j (resp. C_j).

    Raises:
        ModelValidationError: on out-of-range indices, D_j not within C_j,
            or terminals without a serving transmitter.
    """
    clusters.validate(dims)
    D = np.zeros((dims.num_rx, dims.total_antennas), dtype=bool)
    C = np.zeros_like(D)
    for j in range(dims.num_tx):
        block = dims.block(j)
        for k in clusters.data_sets[j]:
            D[k, block] = True
        for k in clusters.coord_sets[j]:
            C[k, block] = True
    return SelectionMasks(D, C)


def interferer_set(k: int, clusters: ClusterConfig) -> FrozenSet[int]:
    """I_k: union of D_j over transmitters with k in C_j, without k."""
    _check_terminal(k, clusters)
    out = set()
    for d_set, c_set in zip(clusters.data_sets, clusters.coord_sets):
        if k in c_set:
            out |= d_set
    out.discard(k)
    return frozenset(out)


def coordinated_set(k: int, clusters: ClusterConfig) -> FrozenSet[int]:
    """I~_k: union of C_j over transmitters with k in D_j, without k."""
    _check_terminal(k, clusters)
    out = set()
    for d_set, c_set in zip(clusters.data_sets, clusters.coord_sets):
        if k in d_set:
            out |= c_set
    out.discard(k)
    return frozenset(out)


@dataclass(frozen=True)
class PowerConstraintSet:
    """Linear power constraints sum_kc tr(Q_l S_kc) <= q_l."""

    Q: np.ndarray
    q: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=complex)
        if Q.ndim == 2:
            Q = Q[np.newaxis]
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise ModelValidationError(f"Constraint matrices must be square, got shape {Q.shape}")
        if q.shape != (Q.shape[0],):
            raise ModelValidationError(f"{Q.shape[0]} constraint matrices but {q.size} limits")
        object.__setattr__(self, "Q", _frozen(Q, complex))
        object.__setattr__(self, "q", _frozen(q, float))

    @property
    def num_constraints(self) -> int:
        return self.q.size

    @classmethod
    def total(cls, dims: Dimensions, q: float) -> "PowerConstraintSet":
        return cls(np.eye(dims.total_antennas), [q], kind="total")

    @classmethod
    def per_transmitter(cls, dims: Dimensions, q) -> "PowerConstraintSet":
        limits = np.broadcast_to(np.asarray(q, dtype=float), (dims.num_tx,))
        Q = np.stack([np.diag(dims.block_mask(j).astype(float)) for j in range(dims.num_tx)])
        return cls(Q, limits, kind="per_transmitter")

    @classmethod
    def per_antenna(cls, dims: Dimensions, q) -> "PowerConstraintSet":
        n = dims.total_antennas
        limits = np.broadcast_to(np.asarray(q, dtype=float), (n,))
        Q = np.zeros((n, n, n))
        for l in range(n):
            Q[l, l, l] = 1.0
        return cls(Q, limits, kind="per_antenna")


@dataclass
class PowerConstraintReport:
    """Outcome of validate_power_constraints; empty violations means valid."""

    violations: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def _psd_ok(matrix: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(matrix)
    return eig[0] >= -PSD_TOLERANCE * max(abs(eig[-1]), 1e-300)


def validate_power_constraints(pcs: PowerConstraintSet,
                               masks: SelectionMasks) -> PowerConstraintReport:
    """
    Checks the structural conditions on Q_l and basic well-formedness.

    (a) Q_l - D_k Q_l D_k must be diagonal for every l and k.
    (b) sum_l Q_l must be positive definite.

    Returns:
        PowerConstraintReport: every violation found, never raises.
    """
    report = PowerConstraintReport()
    n = masks.D.shape[1]
    if pcs.Q.shape[1] != n:
        report.violations.append(f"Constraint matrices are {pcs.Q.shape[1]}x{pcs.Q.shape[1]}, network has {n} antennas")
        return report

    for l in range(pcs.num_constraints):
        Q_l = pcs.Q[l]
        if pcs.q[l] <= 0:
            report.violations.append(f"Limit q_{l} = {pcs.q[l]} must be positive")
        if not np.allclose(Q_l, Q_l.conj().T, atol=1e-12):
            report.violations.append(f"Q_{l} is not Hermitian")
            continue
        if not _psd_ok(Q_l):
            report.violations.append(f"Q_{l} is not positive semidefinite")
        scale = max(np.max(np.abs(Q_l)), 1e-300)
        for k in range(masks.D.shape[0]):
            d = masks.D[k].astype(float)
            residual = Q_l - d[:, None] * Q_l * d[None, :]
            off_diag = residual - np.diag(np.diag(residual))
            if np.max(np.abs(off_diag)) > 1e-12 * scale:
                report.violations.append(
                    f"Condition (a) violated: Q_{l} - D_{k} Q_{l} D_{k} is not diagonal"
                )

    total = pcs.Q.sum(axis=0)
    eig = np.linalg.eigvalsh((total + total.conj().T) / 2)
    if eig[0] <= PSD_TOLERANCE * max(abs(eig[-1]), 1e-300):
        report.violations.append("Condition (b) violated: sum of Q_l is not positive definite")
    return report


def per_transmitter_budgets(pcs: PowerConstraintSet, dims: Dimensions) -> np.ndarray:
    """
    Returns q_j for each transmitter when every Q_l is a transmitter's block identity.

    Raises:
        ModelValidationError: if the constraint set is not per-transmitter.
    """
    budgets = np.full(dims.num_tx, np.nan)
    for l in range(pcs.num_constraints):
        for j in range(dims.num_tx):
            if np.allclose(pcs.Q[l], np.diag(dims.block_mask(j).astype(float)), atol=1e-12):
                budgets[j] = pcs.q[l]
                break
        else:
            raise ModelValidationError(f"Constraint {l} is not a per-transmitter constraint")
    if np.any(np.isnan(budgets)):
        missing = [j for j in range(dims.num_tx) if np.isnan(budgets[j])]
        raise ModelValidationError(f"Transmitters {missing} have no power constraint")
    return budgets


@dataclass(frozen=True)
class Scenario:
    """Everything a strategy needs: dimensions, channels, clusters, masks, constraints."""

    dims: Dimensions
    channels: ChannelSet
    clusters: ClusterConfig
    masks: SelectionMasks
    constraints: PowerConstraintSet

    @classmethod
    def create(cls, dims: Dimensions, channels: ChannelSet, clusters: ClusterConfig,
               constraints: PowerConstraintSet, strict: bool = True) -> "Scenario":
        if channels.dims != dims:
            raise ModelValidationError("Channel set was built for different dimensions")
        masks = build_selection_masks(clusters, dims)
        if strict:
            report = validate_power_constraints(constraints, masks)
            if not report.valid:
                raise ModelValidationError("; ".join(report.violations))
        return cls(dims, channels, clusters, masks, constraints)

    def with_channels(self, channels: ChannelSet) -> "Scenario":
        if channels.dims != self.dims:
            raise ModelValidationError("Replacement channels have different dimensions")
        return replace(self, channels=channels)
