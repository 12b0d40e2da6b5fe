import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgqp_sched import channel as chan
from lgqp_sched.channel import Allocation, ChannelRealization, TopologyConfig


def scalar_topology(num_bs=1, ues_per_bs=1, noise_watts=1.0, power=1.0, F=1):
    # noise_dbm chosen so that noise_power is the requested value in watts
    return TopologyConfig(num_bs=num_bs, ues_per_bs=ues_per_bs, num_subcarriers=F,
                          num_antennas=1, noise_dbm=10 * math.log10(noise_watts) + 30,
                          max_power=power * F)


def test_large_scale_gain_values():
    cfg = TopologyConfig()
    assert chan.large_scale_gain(0.0, cfg) == 1.0
    assert chan.large_scale_gain(1.0, cfg) == pytest.approx(0.25)
    assert chan.large_scale_gain(39.0, cfg) == pytest.approx(6.25e-4)


def test_topology_rejects_bad_values():
    with pytest.raises(ValueError):
        TopologyConfig(num_subcarriers=0)
    with pytest.raises(ValueError):
        TopologyConfig(block_error_rate=0.7)
    with pytest.raises(ValueError):
        TopologyConfig(ref_distance=0.0)
    with pytest.raises(ValueError):
        TopologyConfig(ue_distances=[[1.0, 2.0]])


def test_noise_power_conversion():
    assert chan.dbm_to_watts(30.0) == pytest.approx(1.0)
    assert TopologyConfig().noise_power == pytest.approx(10 ** (-15.9))


def test_channel_unit_variance_and_determinism():
    cfg = TopologyConfig(num_subcarriers=32, num_antennas=16)
    dist = np.zeros((cfg.num_bs, cfg.num_ues))
    ch = chan.draw_channel(cfg, np.random.default_rng(7), dist)
    power = np.mean(np.abs(ch.gains) ** 2)  # 9216 draws per link set, 110592 in total
    assert 0.98 <= power <= 1.02
    again = chan.draw_channel(cfg, np.random.default_rng(7), dist)
    assert np.array_equal(ch.gains, again.gains)


def test_zero_large_scale_gain_gives_zero_link():
    cfg = TopologyConfig(num_bs=1, ues_per_bs=2, path_loss_exp=2.0)
    dist = np.array([[0.0, np.inf]])
    ch = chan.draw_channel(cfg, np.random.default_rng(0), dist)
    assert np.all(ch.gains[..., 1] == 0)
    assert np.all(ch.gains[..., 0] != 0)


def test_mrt_examples():
    assert np.allclose(chan.mrt_beamformer([1, 0], 4.0), [2, 0])
    assert np.allclose(chan.mrt_beamformer([3, 4], 1.0), [0.6, 0.8])
    assert np.allclose(chan.mrt_beamformer([1 + 1j, 2], 0.0), [0, 0])
    with pytest.raises(chan.DegenerateChannelError, match="degenerate channel"):
        chan.mrt_beamformer([0, 0], 1.0)


def test_sinr_single_link_equals_power_over_noise():
    cfg = scalar_topology(power=5.0)
    ch = ChannelRealization(np.ones((1, 1, 1, 1), dtype=complex))
    alloc = Allocation.empty(1, 1, 1)
    alloc.zeta[0, 0] = 1
    alloc.w[0, 0] = chan.mrt_beamformer([1.0], cfg.subcarrier_power)
    assert chan.compute_sinr(alloc, ch, cfg)[0, 0] == pytest.approx(5.0)
    alloc.zeta[0, 0] = 0
    assert chan.compute_sinr(alloc, ch, cfg)[0, 0] == 0.0


def test_sinr_two_cells_hand_evaluated():
    # two single-UE cells sharing one subcarrier, scalar channels
    cfg = scalar_topology(num_bs=2, noise_watts=0.5, power=2.0)
    g = np.zeros((1, 2, 1, 2), dtype=complex)
    g[0, 0, 0, 0], g[0, 1, 0, 0] = 1.0, 0.5   # to UE 0 from BS 0 / BS 1
    g[0, 0, 0, 1], g[0, 1, 0, 1] = 0.25j, 2.0  # to UE 1 from BS 0 / BS 1
    ch = ChannelRealization(g)
    alloc = Allocation.empty(2, 1, 1)
    alloc.zeta[:, 0] = 1
    alloc.w[0, 0] = chan.mrt_beamformer(g[0, 0, :, 0], 2.0)
    alloc.w[1, 0] = chan.mrt_beamformer(g[0, 1, :, 1], 2.0)
    gamma = chan.compute_sinr(alloc, ch, cfg)
    # UE 0: signal 1*2, interference 0.25*2; UE 1: signal 4*2, interference 0.0625*2
    assert gamma[0, 0] == pytest.approx(2.0 / (0.5 + 0.5))
    assert gamma[1, 0] == pytest.approx(8.0 / (0.125 + 0.5))


def test_adding_interferer_never_raises_sinr():
    cfg = TopologyConfig(num_bs=2, ues_per_bs=1, num_subcarriers=4, num_antennas=4)
    rng = np.random.default_rng(3)
    ch = chan.draw_channel(cfg, rng, np.full((2, 2), 10.0))
    serving = cfg.serving_bs()
    alloc = Allocation.empty(2, 4, 4)
    alloc.zeta[0, :] = 1
    for f in range(4):
        alloc.w[0, f] = chan.mrt_beamformer(ch.gains[f, serving[0], :, 0], cfg.subcarrier_power)
    alone = chan.compute_sinr(alloc, ch, cfg)[0]
    alloc.zeta[1, :] = 1
    for f in range(4):
        alloc.w[1, f] = chan.mrt_beamformer(ch.gains[f, serving[1], :, 1], cfg.subcarrier_power)
    assert np.all(chan.compute_sinr(alloc, ch, cfg)[0] <= alone)


def test_q_inverse_examples():
    assert chan.q_inverse(0.5) == pytest.approx(0.0, abs=1e-10)
    assert chan.q_inverse(1e-9) == pytest.approx(5.9978, abs=1e-4)
    assert chan.q_inverse(0.158655) == pytest.approx(1.0, abs=1e-5)
    for e in (1e-2, 1e-5, 1e-9):
        assert abs(chan.gaussian_q(chan.q_inverse(e)) - e) / e < 1e-6
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            chan.q_inverse(bad)


def test_achievable_rate_examples():
    assert chan.achievable_rate([0.0, 0.0], 1e-9) == 0.0
    assert chan.achievable_rate([3.0], 0.5) == pytest.approx(2.0)
    expected = 2.0 - chan.q_inverse(1e-9) * math.sqrt(chan.LOG2E_SQ * (1 - 1 / 16))
    assert expected < 0  # the formula goes negative here, so the rate clamps
    assert chan.achievable_rate([3.0], 1e-9) == 0.0
    big = chan.achievable_rate([1e6], 1e-9)
    assert big == pytest.approx(math.log2(1 + 1e6) - chan.q_inverse(1e-9) * math.sqrt(
        chan.LOG2E_SQ * (1 - (1 + 1e6) ** -2)))


def test_vectorised_rates_match_scalar():
    gamma = np.random.default_rng(0).exponential(50.0, size=(4, 8))
    rows = chan.achievable_rates(gamma, 1e-5)
    assert np.allclose(rows, [chan.achievable_rate(g, 1e-5) for g in gamma])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1e4), min_size=1, max_size=8))
def test_rate_penalty_property(gamma):
    g = np.asarray(gamma)
    shannon = float(np.log2(1 + g).sum())
    assert chan.achievable_rate(g, 0.5) == pytest.approx(shannon)
    penalised = chan.achievable_rate(g, 1e-3)
    assert penalised <= shannon
    if penalised > 0:
        assert penalised < shannon


def test_ue_placement_inside_cells():
    cfg = TopologyConfig()
    pos = chan.place_ues(cfg, np.random.default_rng(1))
    sites = chan.bs_positions(cfg)[cfg.serving_bs()]
    assert np.all(np.linalg.norm(pos - sites, axis=1) <= cfg.cell_radius)
    d = chan.distances(cfg, pos)
    assert d.shape == (cfg.num_bs, cfg.num_ues)
