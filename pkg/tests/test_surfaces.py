import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memhots.device import DeviceParams, NoiseMode, ParamDistributions, get_preset
from memhots.events import make_events
from memhots.surfaces import KernelMode, MemristorGrid, encode_stream, surface_dim

DIST = get_preset("1V_200us")


def grid_surfaces(events, radius, kernel=None, noise=None, size=(12, 12), n_pol=2,
                  normalization="max", dist=DIST):
    g = MemristorGrid(size[0], size[1], n_pol, dist, kernel=kernel, noise=noise)
    out = []
    for ev in events:
        ev = tuple(int(v) for v in ev)
        g.drive(ev)
        out.append(g.sample_surface(ev, radius, normalization))
    return out


def random_events(rng, n, size=12, n_pol=2, span=300_000):
    t = np.sort(rng.integers(0, span, n))
    return make_events(rng.integers(0, size, n), rng.integers(0, size, n),
                       rng.integers(0, n_pol, n), t)


class TestDrive:
    def test_one_event_sets_one_device(self):
        g = MemristorGrid(5, 5, 2, DIST)
        g.drive((1, 2, 1, 100))
        pulsed = [idx for idx in np.ndindex(g.states.shape) if g.states[idx].pulsed]
        assert pulsed == [(2, 1, 1)]

    def test_same_device_gets_baseline(self):
        g = MemristorGrid(5, 5, 2, DIST)
        g.drive((1, 1, 0, 0))
        g.drive((1, 1, 0, 10_000))
        st_ = g.states[1, 1, 0]
        assert st_.b1 + st_.b2 > 0

    def test_polarities_are_independent(self):
        g = MemristorGrid(5, 5, 2, DIST)
        g.drive((1, 1, 0, 0))
        g.drive((1, 1, 1, 10_000))
        assert g.states[1, 1, 0].b1 == 0 and g.states[1, 1, 1].b1 == 0
        assert g.states[1, 1, 1].b2 == 0

    @pytest.mark.parametrize("ev", [(5, 0, 0, 0), (0, 5, 0, 0), (0, 0, 2, 0), (-1, 0, 0, 0)])
    def test_out_of_range(self, ev):
        with pytest.raises(IndexError):
            MemristorGrid(5, 5, 2, DIST).drive(ev)


class TestSurfaceExamples:
    def test_single_event(self):
        (s,) = grid_surfaces(make_events([4], [4], [1], [0]), radius=1)
        blocks = s.blocks(2)
        assert blocks[1, 1, 1] == 1.0
        assert np.count_nonzero(s.values) == 1

    def test_neighbor_value(self):
        ev = make_events([5, 6], [5, 5], [0, 0], [0, 50_000])
        s = grid_surfaces(ev, radius=1)[1].blocks(2)[0]
        a = DIST.mean
        want = (a.a1 * math.exp(-49_800 / a.tau1) + a.a2 * math.exp(-49_800 / a.tau2)) / a.peak
        assert s[1, 1] == 1.0
        assert s[1, 0] == pytest.approx(want, rel=1e-12)
        assert s[1, 0] == pytest.approx(0.272, abs=5e-4)

    def test_neighbor_value_single_exp(self):
        ev = make_events([5, 6], [5, 5], [0, 0], [0, 50_000])
        s = grid_surfaces(ev, 1, KernelMode.single_exp(5000))[1].blocks(2)[0]
        assert s[1, 0] == pytest.approx(math.exp(-49.8 / 5), rel=1e-12)
        assert s[1, 0] == pytest.approx(4.7e-5, rel=0.02)

    def test_zero_padding_at_border(self):
        (s,) = grid_surfaces(make_events([0], [0], [0], [0]), radius=2)
        b = s.blocks(2)[0]
        assert b[2, 2] == 1.0 and b[:2].sum() == 0 and b[:, :2].sum() == 0


class TestCompiledKernel:
    @pytest.mark.parametrize("kernel", [KernelMode.memristor(), KernelMode.single_exp(5000)])
    @pytest.mark.parametrize("noise", [NoiseMode.ideal(), NoiseMode.noisy(3),
                                       NoiseMode.noisy(3, per_device=True)])
    def test_matches_reference_grid(self, kernel, noise):
        ev = random_events(np.random.default_rng(1), 150)
        ref = grid_surfaces(ev, 2, kernel, noise)
        out = encode_stream(ev, 12, 12, 2, 2, DIST, kernel, noise, want=np.arange(len(ev)))
        for k, s in enumerate(ref):
            if s.empty:
                assert out.assign[k] == -1
            else:
                np.testing.assert_array_equal(out.surfaces[k], s.values)

    def test_l2_normalization(self):
        ev = random_events(np.random.default_rng(2), 50)
        ref = grid_surfaces(ev, 1, normalization="l2")
        out = encode_stream(ev, 12, 12, 2, 1, DIST, want=np.arange(50), normalization="l2")
        np.testing.assert_allclose(out.surfaces, [s.values for s in ref], rtol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(out.surfaces, axis=1), 1.0)

    def test_assignment_is_nearest_centroid(self):
        rng = np.random.default_rng(4)
        ev = random_events(rng, 80)
        cents = rng.random((5, surface_dim(1, 2)))
        out = encode_stream(ev, 12, 12, 2, 1, DIST, centroids=cents, want=np.arange(80))
        d = ((out.surfaces[:, None, :] - cents[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(out.assign, d.argmin(1))

    def test_noisy_empty_surfaces_flagged(self):
        # heavy read noise can push every value negative
        noisy = ParamDistributions(DeviceParams(0.01, 0.01, 5000, 92000, 200, eta_sigma=5.0))
        ev = random_events(np.random.default_rng(5), 200)
        out = encode_stream(ev, 12, 12, 2, 0, noisy, noise=NoiseMode.noisy(1),
                            want=np.arange(200))
        empty = out.assign == -1
        assert empty.any()
        assert np.isnan(out.surfaces[empty]).all()

    def test_rejects_unsorted_and_out_of_range(self):
        with pytest.raises(ValueError):
            encode_stream(make_events([0, 0], [0, 0], [0, 0], [5, 1]), 4, 4, 2, 1, DIST)
        with pytest.raises(IndexError):
            encode_stream(make_events([4], [0], [0], [0]), 4, 4, 2, 1, DIST)

    def test_centroid_dimension_checked(self):
        with pytest.raises(ValueError, match="dimension"):
            encode_stream(make_events([0], [0], [0], [0]), 4, 4, 2, 1, DIST,
                          centroids=np.zeros((2, 5)))


event_lists = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 1),
                                 st.integers(0, 200_000)), min_size=1, max_size=30)


def _sorted(events):
    x, y, p, t = zip(*sorted(events, key=lambda e: e[3]))
    return make_events(x, y, p, t)


class TestProperties:
    @given(event_lists, st.integers(0, 6), st.integers(0, 6))
    def test_translation_equivariance(self, events, dx, dy):
        # offset by the radius so no neighborhood touches the border
        ev = _shift(_sorted(events), 2, 2)
        moved = _shift(ev, dx, dy)
        a = encode_stream(ev, 20, 20, 2, 2, DIST, want=np.arange(len(ev)))
        b = encode_stream(moved, 20, 20, 2, 2, DIST, want=np.arange(len(ev)))
        np.testing.assert_array_equal(a.surfaces, b.surfaces)

    @given(event_lists, st.integers(1, 5_000_000))
    def test_time_shift_invariance(self, events, dt):
        ev = _sorted(events)
        later = ev.copy()
        later["t"] += dt
        a = encode_stream(ev, 6, 6, 2, 1, DIST, want=np.arange(len(ev)))
        b = encode_stream(later, 6, 6, 2, 1, DIST, want=np.arange(len(ev)))
        np.testing.assert_allclose(a.surfaces, b.surfaces, rtol=1e-9, atol=1e-12)

    @given(event_lists)
    def test_ideal_values_in_unit_interval(self, events):
        ev = _sorted(events)
        s = encode_stream(ev, 6, 6, 2, 2, DIST, want=np.arange(len(ev))).surfaces
        assert np.all((s >= 0) & (s <= 1))
        assert np.all(s.max(axis=1) == 1.0)

    @given(event_lists, st.integers(0, 2**31))
    def test_noisy_values_bounded_by_one(self, events, seed):
        ev = _sorted(events)
        out = encode_stream(ev, 6, 6, 2, 1, DIST, noise=NoiseMode.noisy(seed),
                            want=np.arange(len(ev)))
        s = out.surfaces[out.assign >= 0]
        assert np.all(s <= 1.0)

    @pytest.mark.parametrize("tau", [5000.0, 92000.0])
    def test_single_exp_is_fast_pulse_limit(self, tau):
        w = tau * 1e-4
        dist = ParamDistributions(DeviceParams(1.0, 0.0, tau, 10 * tau, w))
        mem = MemristorGrid(1, 1, 1, dist)
        hots = MemristorGrid(1, 1, 1, dist, kernel=KernelMode.single_exp(tau))
        for g in (mem, hots):
            g.drive((0, 0, 0, 0))
        for t in np.linspace(w, 10 * tau, 50):
            assert abs(mem.read(0, 0, 0, t, 0) - hots.read(0, 0, 0, t, 0)) <= 1e-6


def _shift(ev, dx, dy):
    out = ev.copy()
    out["x"] += dx
    out["y"] += dy
    return out
