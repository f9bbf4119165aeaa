import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memhots.device import (TABLE_ROWS, DeviceParams, DeviceStream, Memristor, MemristorState,
                            NoiseMode, ParamDistributions, PulseOrderError, ResampleWarning,
                            get_preset, load_presets, read_config, read_conductance,
                            sample_params, simulate, write_config, write_pulse)
from oracles import device_oracle

MS = 1000.0


@pytest.fixture
def dist():
    return get_preset("1V_200us")


@pytest.fixture
def ideal():
    return NoiseMode.ideal()


def pulsed(times, dist, mode=None, stream=None):
    mode = mode or NoiseMode.ideal()
    state = MemristorState()
    for t in times:
        state = write_pulse(state, t, dist, mode, stream)
    return state


class TestPresets:
    def test_table_row_values(self, dist):
        m = dist.mean
        assert (m.a1, m.a2, m.tau1, m.tau2, m.width, m.eta_sigma) == (0.57, 0.5, 5 * MS, 92 * MS,
                                                                      200.0, 0.11)
        assert (dist.a1_std, dist.a2_std, dist.tau1_std, dist.tau2_std) == (0.27, 0.05, 2 * MS,
                                                                            18 * MS)

    def test_all_table_rows_resolve(self):
        presets = load_presets()
        assert len(TABLE_ROWS) == 8
        for _, amp, width, name in TABLE_ROWS:
            assert name == f"{amp}_{width}"
            assert name in presets

    @pytest.mark.parametrize("name, a1, tau2_ms, eta", [
        ("1V_500us", 0.74, 588, 0.12), ("1V_750us", 0.78, 513, 0.04), ("1V_1ms", 0.75, 390, 0.02),
        ("2V_200us", 0.54, 122, 0.06), ("3V_200us", 0.77, 373, 0.07), ("4V_200us", 0.75, 501, 0.05),
    ])
    def test_other_rows(self, name, a1, tau2_ms, eta):
        m = get_preset(name).mean
        assert (m.a1, m.tau2, m.eta_sigma) == (a1, tau2_ms * MS, eta)

    def test_config_round_trip(self, tmp_path):
        presets = load_presets()
        path = tmp_path / "devices.ini"
        write_config(presets, path)
        assert read_config(path) == presets
        assert "tau1_ms" in path.read_text()

    def test_single_section_file_as_preset(self, tmp_path, dist):
        path = tmp_path / "one.ini"
        write_config({"mine": dist}, path)
        assert get_preset(str(path)) == dist

    def test_unknown_preset(self):
        with pytest.raises(KeyError, match="unknown preset"):
            get_preset("9V_1s")


class TestParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            DeviceParams(0.5, 0.5, 100.0, 50.0, 200.0).validate()
        with pytest.raises(ValueError):
            DeviceParams(-0.5, 0.2, 10.0, 50.0, 200.0).validate()
        with pytest.raises(ValueError):
            ParamDistributions(DeviceParams(0.5, 0.5, 10.0, 50.0, 200.0), a1_std=-1)

    def test_scaled(self, dist):
        s = dist.scaled(2)
        assert s.a1_std == 2 * dist.a1_std and s.tau2_std == 2 * dist.tau2_std
        assert s.eta_sigma == 2 * dist.eta_sigma
        assert s.mean.a1 == dist.mean.a1
        z = dist.scaled(0)
        assert z.a1_std == 0 and z.eta_sigma == 0


class TestSampleParams:
    def test_ideal_returns_mean(self, dist, ideal):
        p = sample_params(dist, ideal)
        assert (p.a1, p.a2, p.tau1, p.tau2) == (0.57, 0.5, 5 * MS, 92 * MS)

    def test_zero_variance_stochastic(self, dist):
        z = ParamDistributions(dist.mean)
        mode = NoiseMode.noisy(3)
        for k in range(20):
            assert sample_params(z, mode, DeviceStream.for_device(3, k), k) == z.mean

    def test_monte_carlo_mean(self, dist):
        mode = NoiseMode.noisy(11)
        stream = DeviceStream.for_device(11)
        a1 = np.array([sample_params(dist, mode, stream, k).a1 for k in range(100_000)])
        assert abs(a1.mean() - 0.57) < 0.01
        assert abs(a1.std() - 0.27) < 0.01
        assert (a1 < 0).any()          # amplitudes are not truncated

    def test_tau_ordering_always_holds(self, dist):
        wide = ParamDistributions(dist.mean, tau1_std=60 * MS, tau2_std=60 * MS)
        mode = NoiseMode.noisy(5)
        stream = DeviceStream.for_device(5)
        for k in range(2000):
            p = sample_params(wide, mode, stream, k)
            assert 0 < p.tau1 < p.tau2

    def test_pathological_spread_clamps_with_warning(self):
        mean = DeviceParams(0.5, 0.5, 10.0, 11.0, 200.0)
        bad = ParamDistributions(mean, tau1_std=1e9, tau2_std=1e-9)
        with pytest.warns(ResampleWarning):
            got = [sample_params(bad, NoiseMode.noisy(1), DeviceStream.for_device(1), k)
                   for k in range(30)]
        clamped = [p for p in got if (p.tau1, p.tau2) == (10.0, 11.0)]
        assert clamped

    def test_deterministic_under_seed(self, dist):
        a = sample_params(dist, NoiseMode.noisy(42), DeviceStream.for_device(42, 7), 3)
        b = sample_params(dist, NoiseMode.noisy(42), DeviceStream.for_device(42, 7), 3)
        c = sample_params(dist, NoiseMode.noisy(42), DeviceStream.for_device(42, 8), 3)
        assert a == b and a != c


class TestWriteRead:
    def test_fresh_pulse(self, dist, ideal):
        s = write_pulse(MemristorState(), 0.0, dist, ideal)
        assert (s.b1, s.b2, s.last_onset) == (0.0, 0.0, 0.0)

    def test_second_pulse_after_decay(self, dist, ideal):
        w = dist.mean.width
        s = pulsed([0.0, w + 92 * MS], dist)
        expected = 0.57 * math.exp(-92 / 5) + 0.5 * math.exp(-1)
        assert s.b1 + s.b2 == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.1839, abs=1e-4)

    def test_second_pulse_mid_rise(self, dist, ideal):
        s = pulsed([0.0, dist.mean.width / 2], dist)
        assert s.b1 + s.b2 == pytest.approx(0.535, rel=1e-12)

    def test_out_of_order_pulse(self, dist, ideal):
        s = pulsed([100.0], dist)
        with pytest.raises(PulseOrderError):
            write_pulse(s, 50.0, dist, ideal)

    def test_reads(self, dist, ideal):
        w = dist.mean.width
        assert read_conductance(MemristorState(), 123.0, dist, ideal) == 0.0
        s = pulsed([0.0], dist)
        assert read_conductance(s, w, dist, ideal) == pytest.approx(1.07, rel=1e-12)
        assert read_conductance(s, w / 2, dist, ideal) == pytest.approx(0.535, rel=1e-12)
        assert read_conductance(s, w + 92 * MS, dist, ideal) == pytest.approx(0.1839, abs=1e-4)

    def test_reads_do_not_mutate(self, dist):
        mode = NoiseMode.noisy(1)
        s = pulsed([0.0], dist, mode, DeviceStream.for_device(1))
        before = (s.b1, s.b2, s.last_onset, s.params, s.n_pulses)
        for k in range(5):
            read_conductance(s, 1000.0 * k, dist, mode, DeviceStream.for_device(1), k)
        assert (s.b1, s.b2, s.last_onset, s.params, s.n_pulses) == before

    def test_ideal_baselines_nonnegative(self, dist):
        rng = np.random.default_rng(0)
        s = pulsed(np.cumsum(rng.exponential(3 * MS, 40)), dist)
        assert s.b1 >= 0 and s.b2 >= 0

    def test_read_noise_on_unpulsed_device_unclipped(self, dist):
        mode = NoiseMode.noisy(9)
        stream = DeviceStream.for_device(9)
        vals = np.array([read_conductance(MemristorState(), 0.0, dist, mode, stream, k)
                         for k in range(4000)])
        assert (vals < 0).any()
        assert abs(vals.std() - 0.11) < 0.01
        assert abs(vals.mean()) < 0.01

    def test_per_pulse_and_per_device_sampling(self, dist):
        stream = DeviceStream.for_device(2)
        per_pulse = pulsed([0.0, 10 * MS, 20 * MS], dist, NoiseMode.noisy(2), stream)
        per_dev = pulsed([0.0, 10 * MS, 20 * MS], dist, NoiseMode.noisy(2, per_device=True), stream)
        first = pulsed([0.0], dist, NoiseMode.noisy(2), stream)
        assert per_dev.params == first.params
        assert per_pulse.params != first.params

    def test_memristor_wrapper(self, dist):
        dev = Memristor(dist)
        dev.pulse(0.0)
        assert dev.read(dist.mean.width) == pytest.approx(1.07)
        dev.reset()
        assert dev.read(1e6) == 0.0


def _random_train(rng, n_max=50):
    n = rng.integers(1, n_max + 1)
    # mix of overlapping (< w), short and long gaps
    gaps = np.where(rng.random(n) < 0.15, rng.uniform(1, 199, n),
                    np.where(rng.random(n) < 0.5, rng.exponential(5 * MS, n),
                             rng.exponential(100 * MS, n)))
    return np.cumsum(gaps)


class TestOracleEquivalence:
    def test_random_trains_match_summation(self, dist):
        rng = np.random.default_rng(123)
        m = dist.mean
        worst = 0.0
        for _ in range(200):
            pulses = _random_train(rng)
            s = pulsed(pulses, dist)
            for t in pulses[-1] + rng.uniform(0, 3 * m.tau2, 5):
                got = read_conductance(s, t, dist, NoiseMode.ideal())
                want = device_oracle(pulses, t, m.a1, m.a2, m.tau1, m.tau2, m.width)
                worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
        assert worst <= 1e-9

    def test_simulate_matches_oracle_mid_train(self, dist):
        m = dist.mean
        pulses = np.array([0.0, 150.0, 3 * MS, 3.1 * MS, 40 * MS])
        times = np.linspace(0, 200 * MS, 997)
        got = simulate(pulses, times, dist)
        want = [device_oracle(pulses, t, m.a1, m.a2, m.tau1, m.tau2, m.width) for t in times]
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-300)


class TestProperties:
    @given(st.floats(0.0, 1e7), st.floats(1e-3, 0.999))
    def test_monotone_rise(self, t0, frac):
        dist = get_preset("1V_200us")
        s = pulsed([t0], dist)
        w = dist.mean.width
        a = read_conductance(s, t0 + frac * w * 0.5, dist, NoiseMode.ideal())
        b = read_conductance(s, t0 + frac * w, dist, NoiseMode.ideal())
        assert b > a

    @given(st.lists(st.floats(0, 5e5), min_size=1, max_size=20))
    def test_decay_limit(self, times):
        dist = get_preset("1V_200us")
        s = pulsed(sorted(times), dist)
        t = s.last_onset + dist.mean.width + 20 * dist.mean.tau2
        assert read_conductance(s, t, dist, NoiseMode.ideal()) < 1e-6

    @given(st.floats(1.0, 91_000.0))
    def test_facilitation(self, gap):
        dist = get_preset("1V_200us")
        w = dist.mean.width
        gap = max(gap, w)
        single = read_conductance(pulsed([0.0], dist), w, dist, NoiseMode.ideal())
        double = read_conductance(pulsed([0.0, gap], dist), gap + w, dist, NoiseMode.ideal())
        assert double > single

    @given(st.integers(0, 2**63), st.lists(st.floats(0, 1e6), min_size=1, max_size=10))
    def test_stochastic_determinism(self, seed, times):
        dist = get_preset("1V_200us")
        times = sorted(times)
        mode = NoiseMode.noisy(seed)
        g1 = simulate(times, [times[-1] + 500.0], dist, mode)
        g2 = simulate(times, [times[-1] + 500.0], dist, mode)
        assert g1.tobytes() == g2.tobytes()

    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30), st.floats(0, 1e6))
    def test_oracle_property(self, times, extra):
        dist = get_preset("2V_200us")
        m = dist.mean
        times = sorted(times)
        s = pulsed(times, dist)
        t = times[-1] + extra
        got = read_conductance(s, t, dist, NoiseMode.ideal())
        want = device_oracle(times, t, m.a1, m.a2, m.tau1, m.tau2, m.width)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-300)
