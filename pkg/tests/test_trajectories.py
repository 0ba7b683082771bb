import numpy as np
import pytest

from mixcorr.correlators import DetectorRole, MixConfig, intensity
from mixcorr.dynamics import (
    SystemParams,
    build_liouvillian,
    evolve_state,
    steady_state,
)
from mixcorr.trajectories import (
    DetectorChannelSpec,
    TagStream,
    average_conditional_state,
    build_jump_model,
    derive_lo_amplitude,
    simulate_stream,
)

CROSS = DetectorRole.CROSS
CO = DetectorRole.CO
GROUND_RHO = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)


def cross_pair():
    return (
        DetectorChannelSpec(0, CROSS, 0.25),
        DetectorChannelSpec(1, CROSS, 0.25),
    )


def mixed_setup(params, mix, w_co=0.25):
    alpha = derive_lo_amplitude(params, mix, w_co)
    return cross_pair() + (
        DetectorChannelSpec(2, CO, w_co, lo_amplitude=alpha),
    )


def test_channel_spec_validation():
    with pytest.raises(ValueError, match="byte"):
        DetectorChannelSpec(300, CROSS, 0.2)
    with pytest.raises(ValueError, match="0, 1"):
        DetectorChannelSpec(0, CROSS, 1.2)
    with pytest.raises(ValueError, match="reject the laser"):
        DetectorChannelSpec(0, CROSS, 0.2, lo_amplitude=0.1j)
    with pytest.raises(ValueError, match="non-negative"):
        DetectorChannelSpec(0, CROSS, 0.2, jitter_ps=-1.0)
    # laser-only monitor port is legal: zero weight, nonzero amplitude
    DetectorChannelSpec(3, CO, 0.0, lo_amplitude=0.5)


def test_build_jump_model_validation(params_weak):
    with pytest.raises(ValueError, match="duplicate"):
        build_jump_model(
            params_weak,
            (DetectorChannelSpec(0, CROSS, 0.2), DetectorChannelSpec(0, CROSS, 0.2)),
        )
    with pytest.raises(ValueError, match="> 1"):
        build_jump_model(
            params_weak,
            (DetectorChannelSpec(0, CROSS, 0.7), DetectorChannelSpec(1, CROSS, 0.6)),
        )


def test_jump_model_without_mixing_is_plain(params_weak):
    model = build_jump_model(params_weak, cross_pair())
    # no laser: no compensating Hamiltonian term
    np.testing.assert_array_equal(model.hamiltonian, params_weak.hamiltonian())
    # two click channels + silent remainder (0.5 of the emission undetected)
    assert model.jump_ops.shape == (3, 2, 2)
    assert list(model.click_channels) == [0, 1, -1]
    gamma = params_weak.decay_rate
    np.testing.assert_allclose(
        model.jump_ops[2],
        np.sqrt(0.5 * gamma) * np.array([[0, 1], [0, 0]]),
        atol=1e-15,
    )


def test_jump_model_full_collection_has_no_remainder(params_weak):
    channels = (
        DetectorChannelSpec(0, CROSS, 0.5),
        DetectorChannelSpec(1, CROSS, 0.5),
    )
    model = build_jump_model(params_weak, channels)
    assert model.jump_ops.shape == (2, 2, 2)


def test_assembled_liouvillian_matches_master_equation():
    # the displaced jump operators plus compensating Hamiltonian must leave
    # the unconditional dynamics untouched — this fixes the compensation sign
    mix = MixConfig(1.0, np.pi)
    for params in (
        SystemParams(rabi_frequency=0.56 * np.pi, lifetime=0.45),
        SystemParams(
            rabi_frequency=0.3 * np.pi,
            lifetime=0.45,
            pure_dephasing_rate=0.7,
            detuning=0.9,
        ),
    ):
        channels = mixed_setup(params, mix)
        model = build_jump_model(params, channels)
        assembled = model.assemble_liouvillian().matrix
        reference = build_liouvillian(params).matrix
        assert np.abs(assembled - reference).max() < 1e-12


def test_zero_drive_gives_zero_clicks():
    params = SystemParams(rabi_frequency=0.0, lifetime=0.45)
    stream = simulate_stream(params, cross_pair(), duration_ns=5000.0, seed=3)
    assert stream.n_records == 0
    assert stream.counts() == {0: 0, 1: 0}


def test_laser_only_channel_is_poissonian():
    params = SystemParams(rabi_frequency=0.0, lifetime=0.45)
    rate = 0.04  # per ns
    channels = (
        DetectorChannelSpec(0, CO, 0.0, lo_amplitude=np.sqrt(rate) * 1j),
    )
    duration = 2.0e5
    stream = simulate_stream(params, channels, duration_ns=duration, seed=21)
    n = stream.n_records
    expected = rate * duration
    assert abs(n - expected) < 4 * np.sqrt(expected)
    # Poisson: counts in disjoint windows have variance ~ mean (Fano ~ 1)
    window = 1000.0  # ns
    edges = np.arange(0, duration * 1000 + 1, window * 1000)
    counts, _ = np.histogram(stream.timestamps_ps, bins=edges)
    fano = counts.var() / counts.mean()
    assert 0.85 < fano < 1.15
    # inter-arrival times look exponential: mean ~ std
    gaps = np.diff(stream.timestamps_ps) / 1000.0
    assert gaps.std() == pytest.approx(gaps.mean(), rel=0.05)


def test_click_rates_match_steady_state(params_weak):
    mix = MixConfig(1.0, np.pi)
    channels = mixed_setup(params_weak, mix)
    duration = 1.5e5
    stream = simulate_stream(params_weak, channels, duration_ns=duration, seed=7)
    rho = steady_state(build_liouvillian(params_weak))
    gamma = params_weak.decay_rate
    expected_cross = 0.25 * gamma * rho.population_x * duration
    expected_co = 0.25 * gamma * intensity(params_weak, mix, CO) * duration
    counts = stream.counts()
    for cid in (0, 1):
        assert abs(counts[cid] - expected_cross) < 3.5 * np.sqrt(expected_cross)
    assert abs(counts[2] - expected_co) < 3.5 * np.sqrt(expected_co)


def test_seed_determinism_and_worker_invariance(params_weak):
    channels = cross_pair()
    a = simulate_stream(params_weak, channels, duration_ns=30000.0, seed=42)
    b = simulate_stream(params_weak, channels, duration_ns=30000.0, seed=42)
    np.testing.assert_array_equal(a.timestamps_ps, b.timestamps_ps)
    np.testing.assert_array_equal(a.channels, b.channels)
    c = simulate_stream(
        params_weak, channels, duration_ns=30000.0, seed=42, workers=4
    )
    np.testing.assert_array_equal(a.timestamps_ps, c.timestamps_ps)
    np.testing.assert_array_equal(a.channels, c.channels)
    d = simulate_stream(params_weak, channels, duration_ns=30000.0, seed=43)
    assert (
        d.n_records != a.n_records
        or not np.array_equal(d.timestamps_ps, a.timestamps_ps)
    )


def test_stream_is_sorted_and_bounded(params_weak):
    stream = simulate_stream(
        params_weak, cross_pair(), duration_ns=20000.0, seed=5, batch_ns=700.0
    )
    t = stream.timestamps_ps
    assert np.all(np.diff(t) >= 0)
    assert t[0] >= 0 and t[-1] < stream.duration_ps
    # rate constant across many short batches (no boundary artifacts beyond
    # the ground-state reset transient, ~T1/batch = 6e-4 relative)
    single = simulate_stream(
        params_weak, cross_pair(), duration_ns=20000.0, seed=5
    )
    assert stream.n_records == pytest.approx(single.n_records, rel=0.05)


def test_unconditional_evolution_consistency(params_weak):
    lv = build_liouvillian(params_weak)
    channels = mixed_setup(params_weak, MixConfig(1.0, np.pi))
    n = 10_000
    for t in (0.2, 0.7, 2.0):
        mean = average_conditional_state(params_weak, channels, t, n, seed=17)
        exact = evolve_state(lv, GROUND_RHO, t)
        # single-trajectory matrix entries are bounded by 1 -> SE <= 0.5/sqrt(n)
        tol = 3 * 0.5 / np.sqrt(n)
        assert np.abs(mean.elements - exact).max() < tol
        assert np.trace(mean.elements).real == pytest.approx(1.0, abs=1e-12)


def test_dead_time_enforced(params_strong):
    channels = (
        DetectorChannelSpec(0, CROSS, 0.5, dead_time_ps=5000.0),
        DetectorChannelSpec(1, CROSS, 0.5),
    )
    stream = simulate_stream(params_strong, channels, duration_ns=30000.0, seed=9)
    gaps0 = np.diff(stream.select(0))
    assert gaps0.size and gaps0.min() >= 5000
    # the unfiltered channel keeps sub-dead-time gaps
    gaps1 = np.diff(stream.select(1))
    assert gaps1.min() < 5000


def test_jitter_perturbs_timestamps(params_weak):
    base = simulate_stream(params_weak, cross_pair(), duration_ns=20000.0, seed=4)
    jittery_channels = (
        DetectorChannelSpec(0, CROSS, 0.25, jitter_ps=100.0),
        DetectorChannelSpec(1, CROSS, 0.25),
    )
    jit = simulate_stream(
        params_weak, jittery_channels, duration_ns=20000.0, seed=4
    )
    assert jit.n_records == base.n_records  # jitter moves, never drops
    assert not np.array_equal(jit.timestamps_ps, base.timestamps_ps)
    assert np.all(np.diff(jit.timestamps_ps) >= 0)
    # channel 1 untouched: same multiset of stamps
    np.testing.assert_array_equal(np.sort(jit.select(1)), np.sort(base.select(1)))


def test_dark_counts_add_rate():
    params = SystemParams(rabi_frequency=0.0, lifetime=0.45)
    channels = (DetectorChannelSpec(0, CROSS, 0.25, dark_rate_per_ns=0.02),)
    duration = 1.0e5
    stream = simulate_stream(params, channels, duration_ns=duration, seed=31)
    expected = 0.02 * duration
    assert abs(stream.n_records - expected) < 4 * np.sqrt(expected)


def test_tag_stream_validation():
    with pytest.raises(ValueError, match="non-decreasing"):
        TagStream(
            channels=np.array([0, 0], dtype=np.uint8),
            timestamps_ps=np.array([10, 5]),
            duration_ps=100,
        )
    with pytest.raises(ValueError, match="duration"):
        TagStream(
            channels=np.array([0], dtype=np.uint8),
            timestamps_ps=np.array([100]),
            duration_ps=100,
        )
    with pytest.raises(ValueError, match="align"):
        TagStream(
            channels=np.array([0, 1], dtype=np.uint8),
            timestamps_ps=np.array([5]),
            duration_ps=100,
        )


def test_stream_helpers(params_weak):
    stream = simulate_stream(params_weak, cross_pair(), duration_ns=10000.0, seed=2)
    counts = stream.counts()
    assert set(counts) == {0, 1}
    assert counts[0] + counts[1] == stream.n_records
    assert stream.rates_per_ns()[0] == pytest.approx(
        counts[0] / 10000.0, rel=1e-12
    )
    np.testing.assert_array_equal(
        stream.select(0), stream.timestamps_ps[stream.channels == 0]
    )
    assert stream.duration_ns == pytest.approx(10000.0)
