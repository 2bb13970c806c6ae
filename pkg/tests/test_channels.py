# tests/test_channels.py

import numpy as np
import pytest

from src.channels import (
    ChannelError,
    channels_from_config,
    db_to_linear,
    dbm_to_linear,
    load_channel_csv,
    phase_perturb,
    proportional_fair_weights,
    random_path_loss,
    rayleigh,
)
from src.model import ChannelSet, Dimensions, PowerConstraintSet

DIMS = Dimensions(2, (2, 3), 3, 2)


def test_decibel_conversion():
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert db_to_linear(-30.0) == pytest.approx(1e-3)
    assert dbm_to_linear(0.0) == pytest.approx(1.0)


def test_same_seed_gives_identical_channels():
    a = rayleigh(DIMS, 1.0, seed=7, realization=4)
    b = rayleigh(DIMS, 1.0, seed=7, realization=4)
    assert np.array_equal(a.h, b.h)


def test_realizations_and_seeds_differ():
    base = rayleigh(DIMS, 1.0, seed=7, realization=0)
    assert not np.array_equal(base.h, rayleigh(DIMS, 1.0, seed=7, realization=1).h)
    assert not np.array_equal(base.h, rayleigh(DIMS, 1.0, seed=8, realization=0).h)


def test_zero_path_loss_gives_zero_channels():
    chans = rayleigh(DIMS, 0.0, seed=1)
    assert np.all(chans.h == 0)


def test_path_loss_table_scales_each_link():
    gains = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    chans = rayleigh(DIMS, gains, seed=2)
    assert np.all(chans.link(1, 0, 0) == 0)
    assert np.all(chans.link(0, 1, 1) == 0)
    assert np.any(chans.link(0, 0, 0) != 0)


def test_unit_variance_on_average():
    """The mean of |h|^2 over 40000 coefficients is within 2 % of the path-loss gain."""
    dims = Dimensions(1, (16,), 50, 50)
    chans = rayleigh(dims, 1.0, seed=11)
    assert 0.98 <= np.mean(np.abs(chans.h) ** 2) <= 1.02


def test_correlation_keeps_variance_and_couples_transmitters():
    dims = Dimensions(2, (8, 8), 50, 50)
    chans = rayleigh(dims, 1.0, seed=12, correlation=0.5)
    assert 0.97 <= np.mean(np.abs(chans.h) ** 2) <= 1.03
    cross = np.mean(chans.h[:, :, dims.block(0)] * np.conj(chans.h[:, :, dims.block(1)]))
    assert abs(cross - 0.5) < 0.05


@pytest.mark.parametrize("kwargs", [
    {"path_loss": -1.0},
    {"path_loss": np.ones((3, 3))},
    {"path_loss": 1.0, "correlation": 1.5},
])
def test_invalid_rayleigh_inputs(kwargs):
    with pytest.raises(ChannelError):
        rayleigh(DIMS, seed=0, **kwargs)


def test_random_path_loss_range():
    gains = random_path_loss(DIMS, -80.0, -40.0, seed=3)
    assert gains.shape == (2, 3)
    assert np.all(gains >= db_to_linear(-80.0)) and np.all(gains <= db_to_linear(-40.0))
    with pytest.raises(ChannelError):
        random_path_loss(DIMS, -40.0, -80.0, seed=3)


def test_phase_perturbation_preserves_block_norms():
    chans = rayleigh(DIMS, 1.0, seed=4)
    rotated = phase_perturb(chans, 0.3, seed=4)
    assert not np.allclose(rotated.h, chans.h)
    for j in range(2):
        for k in range(3):
            for c in range(2):
                assert np.linalg.norm(rotated.link(j, k, c)) == pytest.approx(np.linalg.norm(chans.link(j, k, c)))


def test_phase_perturbation_is_one_rotation_per_block():
    chans = rayleigh(DIMS, 1.0, seed=5)
    rotated = phase_perturb(chans, 0.3, seed=5)
    ratio = rotated.link(1, 2, 0) / chans.link(1, 2, 0)
    assert np.allclose(ratio, ratio[0])
    assert abs(ratio[0]) == pytest.approx(1.0)


def test_zero_phase_error_is_identity():
    chans = rayleigh(DIMS, 1.0, seed=6)
    assert phase_perturb(chans, 0.0, seed=6) is chans
    with pytest.raises(ChannelError):
        phase_perturb(chans, -0.1, seed=6)


def test_proportional_fair_weights_for_equal_terminals():
    dims = Dimensions(1, (2,), 3, 1)
    chans = ChannelSet(dims, np.ones((3, 1, 2)), 1.0)
    weights = proportional_fair_weights([chans], PowerConstraintSet.per_transmitter(dims, 1.0), dims)
    assert weights == pytest.approx([1.0, 1.0, 1.0])


def test_proportional_fair_weights_hand_computed():
    """SNR = K_t / (K_r sigma^2) q |h|^2 with q = 3, averaged over two samples."""
    dims = Dimensions(1, (1,), 2, 1)
    pcs = PowerConstraintSet.per_transmitter(dims, 3.0)
    first = ChannelSet(dims, np.array([[[1.0]], [[np.sqrt(2.0)]]]), 1.0)
    second = ChannelSet(dims, np.array([[[np.sqrt(2.0)]], [[np.sqrt(2.0)]]]), 1.0)
    weights = proportional_fair_weights([first, second], pcs, dims)

    r0 = (np.log2(2.5) + np.log2(4.0)) / 2
    r1 = 2.0
    expected = np.array([1 / r0, 1 / r1])
    expected *= 2 / expected.sum()
    assert weights == pytest.approx(expected)
    assert weights[0] > weights[1]


def test_proportional_fair_weights_errors():
    dims = Dimensions(1, (1,), 2, 1)
    pcs = PowerConstraintSet.per_transmitter(dims, 1.0)
    with pytest.raises(ChannelError):
        proportional_fair_weights([], pcs, dims)
    silent = ChannelSet(dims, np.array([[[1.0]], [[0.0]]]), 1.0)
    with pytest.raises(ChannelError, match="zero expected rate"):
        proportional_fair_weights([silent], pcs, dims)
    two = Dimensions(2, (1, 1), 2, 1)
    with pytest.raises(ChannelError):
        proportional_fair_weights([ChannelSet(two, np.ones((2, 1, 2)), 1.0)],
                                  PowerConstraintSet.total(two, 1.0), two)


def test_load_channel_csv(tmp_path):
    dims = Dimensions(2, (1, 2), 1, 1)
    path = tmp_path / "channels.csv"
    path.write_text(
        "# j,k,c,re0,im0,...\n"
        "0,0,0,1.0,2.0\n"
        "\n"
        "1,0,0,0.5,0.0,0.0,-1.0\n"
    )
    chans = load_channel_csv(path, dims, noise=2.0)
    assert chans.link(0, 0, 0) == pytest.approx([1.0 + 2.0j])
    assert chans.link(1, 0, 0) == pytest.approx([0.5, -1.0j])
    assert chans.noise[0, 0] == 2.0


@pytest.mark.parametrize("body,message", [
    ("0,0,0,1.0,2.0\n0,0,0,1.0,2.0\n", ":2: link (0, 0, 0) appears twice"),
    ("0,0,0,1.0\n", ":1: expected 2 values"),
    ("# header\n3,0,0,1.0,2.0\n", ":2: link (3, 0, 0) is outside the network"),
    ("0,0,0,x,2.0\n", ":1:"),
])
def test_load_channel_csv_errors(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ChannelError) as info:
        load_channel_csv(path, Dimensions(1, (1,), 1, 1))
    assert message in str(info.value)


def test_missing_channel_file(tmp_path):
    with pytest.raises(ChannelError, match="not found"):
        load_channel_csv(tmp_path / "none.csv", DIMS)


def test_config_path_loss_is_fixed_per_seed():
    """Without path_loss_per_realization every realization shares the drop of realization 0."""
    model = {"kind": "rayleigh", "path_loss_range_db": [-60.0, -40.0], "noise_dbm": -100.0}
    chans = channels_from_config(model, DIMS, seed=9, realization=2)
    gains = random_path_loss(DIMS, -60.0, -40.0, seed=9, realization=0)
    expected = rayleigh(DIMS, gains, seed=9, noise=dbm_to_linear(-100.0), realization=2)
    assert np.array_equal(chans.h, expected.h)
    assert chans.noise[0, 0] == pytest.approx(1e-10)


def test_config_path_loss_per_realization():
    model = {"kind": "rayleigh", "path_loss_range_db": [-60.0, -40.0], "path_loss_per_realization": True}
    chans = channels_from_config(model, DIMS, seed=9, realization=2)
    gains = random_path_loss(DIMS, -60.0, -40.0, seed=9, realization=2)
    expected = rayleigh(DIMS, gains, seed=9, noise=dbm_to_linear(-131.0), realization=2)
    assert np.array_equal(chans.h, expected.h)


def test_config_csv_relative_to_data_dir(tmp_path):
    dims = Dimensions(1, (1,), 1, 1)
    (tmp_path / "link.csv").write_text("0,0,0,0.0,1.0\n")
    chans = channels_from_config({"kind": "csv", "path": "link.csv"}, dims, seed=0, realization=0,
                                 data_dir=tmp_path)
    assert chans.link(0, 0, 0) == pytest.approx([1.0j])


def test_config_unknown_kind():
    with pytest.raises(ChannelError):
        channels_from_config({"kind": "ricean"}, DIMS, seed=0, realization=0)
