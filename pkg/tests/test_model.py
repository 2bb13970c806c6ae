# tests/test_model.py

import numpy as np
import pytest

from src.model import (
    ChannelSet,
    ClusterConfig,
    Dimensions,
    ModelValidationError,
    PowerConstraintSet,
    Scenario,
    build_selection_masks,
    coordinated_set,
    interferer_set,
    per_transmitter_budgets,
    validate_power_constraints,
)


def test_dimensions_offsets_and_blocks():
    """Transmitter blocks should tile the stacked antenna vector in order."""
    dims = Dimensions(3, (2, 1, 3), 4, 2)
    assert dims.total_antennas == 6
    assert dims.offsets == (0, 2, 3)
    assert dims.block(2) == slice(3, 6)
    assert dims.block_mask(1).tolist() == [False, False, True, False, False, False]


@pytest.mark.parametrize("args", [
    (0, (), 1, 1),
    (1, (2,), 0, 1),
    (1, (2,), 1, 0),
    (2, (2,), 1, 1),
    (1, (0,), 1, 1),
])
def test_dimensions_rejects_invalid_sizes(args):
    """Should raise ModelValidationError on empty or inconsistent dimensions."""
    with pytest.raises(ModelValidationError):
        Dimensions(*args)


def test_channel_set_validates_shape_and_noise():
    """Channel arrays must match the dimensions and noise must be positive."""
    dims = Dimensions(1, (2,), 1, 1)
    with pytest.raises(ModelValidationError, match="shape"):
        ChannelSet(dims, np.zeros((1, 1, 3)), 1.0)
    with pytest.raises(ModelValidationError, match="Noise"):
        ChannelSet(dims, np.zeros((1, 1, 2)), 0.0)


def test_channel_set_is_read_only():
    """Stored arrays should not be writable."""
    dims = Dimensions(1, (1,), 1, 1)
    chans = ChannelSet(dims, np.ones((1, 1, 1)), 1.0)
    with pytest.raises(ValueError):
        chans.h[0, 0, 0] = 2.0


def test_from_blocks_and_link_gain():
    """Per-link vectors land in their transmitter block; missing links are zero."""
    dims = Dimensions(2, (2, 1), 1, 2)
    chans = ChannelSet.from_blocks(dims, {(0, 0, 0): [1, 1j], (1, 0, 1): [2]})
    assert np.allclose(chans.link(0, 0, 0), [1, 1j])
    assert chans.link_gain(0, 0, 0) == pytest.approx(2.0)
    assert chans.link_gain(1, 0) == pytest.approx(4.0)
    assert chans.link_gain(1, 0, 0) == 0.0


def test_network_mimo_masks_are_all_ones():
    """Every transmitter serving every terminal gives full D_k and C_k."""
    dims = Dimensions(2, (2, 2), 3, 1)
    masks = build_selection_masks(ClusterConfig.network_mimo(2, 3), dims)
    assert masks.D.all() and masks.C.all()


def test_masks_follow_cluster_membership():
    """Block j of D_k is set iff k in D_j; block j of C_k iff k in C_j."""
    dims = Dimensions(2, (1, 2), 2, 1)
    clusters = ClusterConfig(({0}, {1}), ({0, 1}, {1}), 2)
    masks = build_selection_masks(clusters, dims)
    assert masks.D[0].tolist() == [True, False, False]
    assert masks.D[1].tolist() == [False, True, True]
    assert masks.C[0].tolist() == [True, False, False]
    assert masks.C[1].tolist() == [True, True, True]


def test_masks_reject_serve_set_outside_coordination_set():
    """D_j must be a subset of C_j."""
    dims = Dimensions(1, (1,), 2, 1)
    clusters = ClusterConfig(({0, 1},), ({0},), 2)
    with pytest.raises(ModelValidationError, match="not a subset"):
        build_selection_masks(clusters, dims)


def test_masks_reject_unserved_terminal():
    """Every terminal needs a serving transmitter."""
    dims = Dimensions(2, (1, 1), 3, 1)
    clusters = ClusterConfig(({0}, {1}), ({0, 1, 2}, {0, 1, 2}), 3)
    with pytest.raises(ModelValidationError, match=r"\[2\]"):
        build_selection_masks(clusters, dims)


def test_masks_reject_out_of_range_index():
    dims = Dimensions(1, (1,), 1, 1)
    with pytest.raises(ModelValidationError, match="out of range"):
        build_selection_masks(ClusterConfig(({0, 3},), ({0, 3},), 1), dims)


def test_interference_sets_in_interference_channel():
    """In a two-pair interference channel each terminal interferes with the other."""
    clusters = ClusterConfig.interference_channel(2)
    assert interferer_set(0, clusters) == frozenset({1})
    assert coordinated_set(0, clusters) == frozenset({1})


def test_interference_sets_without_coordination():
    """Isolated cells: no terminal is coordinated towards or interferes through C."""
    clusters = ClusterConfig.from_serving([0, 1], 2, coordinate_all=False)
    assert interferer_set(0, clusters) == frozenset()
    assert coordinated_set(1, clusters) == frozenset()


def test_interference_sets_are_asymmetric():
    """Transmitter 1 coordinates towards terminal 0 but transmitter 0 ignores terminal 1."""
    clusters = ClusterConfig(({0}, {1}), ({0}, {0, 1}), 2)
    assert interferer_set(0, clusters) == frozenset({1})
    assert coordinated_set(0, clusters) == frozenset()
    assert coordinated_set(1, clusters) == frozenset({0})
    assert interferer_set(1, clusters) == frozenset()


def test_interference_sets_reject_bad_terminal():
    with pytest.raises(ModelValidationError):
        interferer_set(5, ClusterConfig.network_mimo(1, 2))


@pytest.mark.parametrize("factory", ["total", "per_transmitter", "per_antenna"])
def test_standard_constraints_are_valid(factory):
    """Total, per-transmitter and per-antenna constraints satisfy both structural conditions."""
    dims = Dimensions(2, (2, 1), 2, 1)
    masks = build_selection_masks(ClusterConfig.from_serving([0, 1], 2), dims)
    pcs = getattr(PowerConstraintSet, factory)(dims, 1.0)
    assert validate_power_constraints(pcs, masks).valid


def test_coupling_constraint_violates_diagonal_condition():
    """A constraint coupling antennas of two transmitters breaks the block condition."""
    dims = Dimensions(2, (1, 1), 2, 1)
    masks = build_selection_masks(ClusterConfig.from_serving([0, 1], 2), dims)
    Q = np.array([[1.0, 0.5], [0.5, 1.0]])
    report = validate_power_constraints(PowerConstraintSet(Q, [1.0]), masks)
    assert not report.valid
    assert any("Condition (a)" in v for v in report.violations)


def test_singular_constraint_sum_is_reported():
    """Constraints that leave an antenna unconstrained fail the definiteness condition."""
    dims = Dimensions(1, (2,), 1, 1)
    masks = build_selection_masks(ClusterConfig.network_mimo(1, 1), dims)
    report = validate_power_constraints(PowerConstraintSet(np.diag([1.0, 0.0]), [1.0]), masks)
    assert any("Condition (b)" in v for v in report.violations)


def test_per_transmitter_budgets_recovers_limits():
    dims = Dimensions(2, (2, 1), 1, 1)
    pcs = PowerConstraintSet.per_transmitter(dims, [3.0, 5.0])
    assert per_transmitter_budgets(pcs, dims).tolist() == [3.0, 5.0]


def test_per_transmitter_budgets_rejects_total_constraint():
    dims = Dimensions(2, (1, 1), 1, 1)
    with pytest.raises(ModelValidationError):
        per_transmitter_budgets(PowerConstraintSet.total(dims, 1.0), dims)


def test_scenario_with_channels_replaces_channels(example2):
    """with_channels keeps clusters and constraints."""
    dims = example2.dims
    other = ChannelSet(dims, np.ones((2, 1, 2)), 1.0)
    swapped = example2.with_channels(other)
    assert swapped.channels is other
    assert swapped.clusters == example2.clusters
    with pytest.raises(ModelValidationError):
        example2.with_channels(ChannelSet(Dimensions(1, (1,), 1, 1), np.ones((1, 1, 1)), 1.0))


def test_scenario_create_rejects_invalid_constraints():
    dims = Dimensions(1, (2,), 1, 1)
    chans = ChannelSet(dims, np.ones((1, 1, 2)), 1.0)
    with pytest.raises(ModelValidationError):
        Scenario.create(dims, chans, ClusterConfig.network_mimo(1, 1),
                        PowerConstraintSet(np.diag([1.0, 0.0]), [1.0]))
