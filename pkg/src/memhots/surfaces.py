"""Memristor grids and time surfaces.

Every (pixel, polarity) pair owns one simulated device. An incoming event
sends a WRITE pulse to its own device, then the surface around it is read
out: all devices in the ``(2l+1) x (2l+1)`` window of every polarity are
sampled at the event time and the block of each polarity is concatenated.
The reference device is read at the end of its current pulse, so the
surface always includes the event that produced it.

Two implementations live here. :class:`MemristorGrid` works event by event
on :class:`~memhots.device.MemristorState` values and is the readable
reference. :func:`encode_stream` runs a whole recording in compiled code,
optionally assigning each surface to its nearest centroid on the fly, and
must agree with the reference bit for bit.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .device import (
    MemristorState,
    NoiseMode,
    DeviceStream,
    conductance,
    draw_params,
    onset_baselines,
    read_conductance,
    read_noise,
    write_pulse,
)
from .rng import child_key, fold, stream_key

EMPTY_EPS = 1e-9

MEMRISTOR = 0
SINGLE_EXP = 1

NORM_MAX = 0
NORM_L2 = 1
_NORMS = {"max": NORM_MAX, "l2": NORM_L2}


@dataclass(frozen=True)
class KernelMode:
    """Temporal kernel of a layer.

    ``memristor`` uses the device model (with short-term plasticity);
    ``single_exp`` is the memoryless HOTS kernel: value 1 while the pulse
    lasts, then ``exp(-(t - t_last - w) / tau)``.
    """

    kind: str = "memristor"
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("memristor", "single_exp"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "single_exp" and not (self.tau and self.tau > 0):
            raise ValueError("single_exp needs a positive tau")

    @classmethod
    def memristor(cls):
        return cls("memristor")

    @classmethod
    def single_exp(cls, tau):
        return cls("single_exp", float(tau))

    @property
    def code(self):
        return MEMRISTOR if self.kind == "memristor" else SINGLE_EXP


@dataclass
class TimeSurface:
    values: np.ndarray
    center_event: tuple
    radius: int
    empty: bool = False

    def blocks(self, n_polarities):
        side = 2 * self.radius + 1
        return self.values.reshape(n_polarities, side, side)


def surface_dim(radius, n_polarities):
    return (2 * radius + 1) ** 2 * n_polarities


def _normalize(values, normalization):
    if normalization == "max":
        scale = values.max() if len(values) else 0.0
    elif normalization == "l2":
        scale = math.sqrt(float(np.dot(values, values)))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if scale <= EMPTY_EPS:
        return values, True
    return values / scale, False


class MemristorGrid:
    """One device per (row, column, polarity), driven event by event."""

    def __init__(self, height, width, n_polarities, dist, kernel=None, noise=None,
                 stream_words=()):
        self.height, self.width, self.n_polarities = height, width, n_polarities
        self.dist = dist
        self.kernel = kernel or KernelMode.memristor()
        self.noise = noise or NoiseMode.ideal()
        self.key = stream_key(self.noise.seed, *stream_words)
        self.reset()

    def reset(self):
        self.states = np.empty((self.height, self.width, self.n_polarities), dtype=object)
        for idx in np.ndindex(self.states.shape):
            self.states[idx] = MemristorState()
        self.n_events = 0

    def _stream(self, y, x, p):
        flat = (y * self.width + x) * self.n_polarities + p
        return DeviceStream(child_key(self.key, flat))

    def _check(self, ev):
        x, y, p, _ = ev
        if not (0 <= x < self.width and 0 <= y < self.height and 0 <= p < self.n_polarities):
            raise IndexError(f"event {tuple(ev)} outside grid "
                             f"{self.width}x{self.height}x{self.n_polarities}")

    @property
    def _stochastic(self):
        return self.noise.stochastic and self.kernel.kind == "memristor"

    def drive(self, ev):
        """Send the WRITE pulse of ``ev`` to its device."""
        self._check(ev)
        x, y, p, t = ev
        st = self.states[y, x, p]
        if self.kernel.kind == "single_exp":
            if st.pulsed and t < st.last_onset:
                write_pulse(st, t, self.dist, self.noise)  # raises the ordering error
            self.states[y, x, p] = MemristorState(last_onset=float(t), n_pulses=st.n_pulses + 1)
        else:
            noise = self.noise if self._stochastic else NoiseMode.ideal()
            self.states[y, x, p] = write_pulse(st, t, self.dist, noise, self._stream(y, x, p))
        self.n_events += 1

    def read(self, y, x, p, t, read_index):
        st = self.states[y, x, p]
        if self.kernel.kind == "single_exp":
            if not st.pulsed:
                return 0.0
            dt = t - st.last_onset
            w = self.dist.mean.width
            return 1.0 if dt < w else math.exp(-(dt - w) / self.kernel.tau)
        noise = self.noise if self._stochastic else NoiseMode.ideal()
        return read_conductance(st, t, self.dist, noise, self._stream(y, x, p), read_index)

    def sample_surface(self, ev, radius, normalization="max"):
        """Normalized surface around ``ev``; call after :meth:`drive`."""
        self._check(ev)
        x0, y0, p0, t = ev
        side = 2 * radius + 1
        values = np.zeros((self.n_polarities, side, side))
        read_index = self.n_events - 1
        w = self.dist.mean.width
        for p in range(self.n_polarities):
            for dy in range(-radius, radius + 1):
                y = y0 + dy
                if not 0 <= y < self.height:
                    continue
                for dx in range(-radius, radius + 1):
                    x = x0 + dx
                    if not 0 <= x < self.width:
                        continue
                    t_read = t + w if (x, y, p) == (x0, y0, p0) else t
                    values[p, dy + radius, dx + radius] = self.read(y, x, p, t_read, read_index)
        flat, empty = _normalize(values.ravel(), normalization)
        return TimeSurface(flat, (x0, y0, p0, t), radius, empty)


# -- compiled whole-recording kernel -------------------------------------------

@njit(cache=True)
def _run_layer(xs, ys, ps, ts, height, width, n_pol, radius, kind, mean, std,
               stochastic, per_device, base_key, norm, want, surfaces,
               centroids, cnorm2, assign):
    n = len(ts)
    n_dev = height * width * n_pol
    pulsed = np.zeros(n_dev, dtype=np.bool_)
    last = np.zeros(n_dev)
    b1 = np.zeros(n_dev)
    b2 = np.zeros(n_dev)
    pa1 = np.empty(n_dev)
    pa2 = np.empty(n_dev)
    pt1 = np.empty(n_dev)
    pt2 = np.empty(n_dev)
    npulse = np.zeros(n_dev, dtype=np.int64)
    side = 2 * radius + 1
    area = side * side
    dim = area * n_pol
    buf = np.zeros(dim)
    idx = np.empty(dim, dtype=np.int64)
    n_clusters = centroids.shape[0]
    w = mean[4]
    eta = mean[5]
    tau_single = mean[2]
    clamps = 0
    row = 0
    for e in range(n):
        x = xs[e]
        y = ys[e]
        t = float(ts[e])
        d = (y * width + x) * n_pol + ps[e]
        # WRITE
        if kind == MEMRISTOR:
            if pulsed[d]:
                nb1, nb2 = onset_baselines(t - last[d], pa1[d], pa2[d], pt1[d], pt2[d],
                                           w, b1[d], b2[d])
            else:
                nb1 = 0.0
                nb2 = 0.0
            b1[d] = nb1
            b2[d] = nb2
            if not stochastic:
                pa1[d] = mean[0]
                pa2[d] = mean[1]
                pt1[d] = mean[2]
                pt2[d] = mean[3]
            elif not (per_device and pulsed[d]):
                pulse = 0 if per_device else npulse[d]
                a1, a2, t1, t2, clamped = draw_params(mean, std, fold(base_key, d), pulse)
                pa1[d] = a1
                pa2[d] = a2
                pt1[d] = t1
                pt2[d] = t2
                if clamped:
                    clamps += 1
        last[d] = t
        pulsed[d] = True
        npulse[d] += 1
        # READ
        m = 0
        vmax = -np.inf
        for q in range(n_pol):
            for dy in range(-radius, radius + 1):
                yy = y + dy
                if yy < 0 or yy >= height:
                    continue
                for dx in range(-radius, radius + 1):
                    xx = x + dx
                    if xx < 0 or xx >= width:
                        continue
                    dev = (yy * width + xx) * n_pol + q
                    t_read = t + w if dev == d else t
                    g = 0.0
                    if pulsed[dev]:
                        dt = t_read - last[dev]
                        if kind == MEMRISTOR:
                            g = conductance(dt, pa1[dev], pa2[dev], pt1[dev], pt2[dev],
                                            w, b1[dev], b2[dev])
                        elif dt < w:
                            g = 1.0
                        else:
                            g = math.exp(-(dt - w) / tau_single)
                    if stochastic and kind == MEMRISTOR:
                        g += read_noise(fold(base_key, dev), e, eta)
                    j = q * area + (dy + radius) * side + (dx + radius)
                    buf[j] = g
                    idx[m] = j
                    m += 1
                    if g > vmax:
                        vmax = g
        if norm == NORM_MAX:
            scale = vmax
        else:
            s2 = 0.0
            for k in range(m):
                s2 += buf[idx[k]] * buf[idx[k]]
            scale = math.sqrt(s2)
        if scale <= EMPTY_EPS:
            assign[e] = -1
            if want[e]:
                surfaces[row, :] = np.nan
                row += 1
        else:
            for k in range(m):
                buf[idx[k]] /= scale
            if want[e]:
                surfaces[row, :] = buf
                row += 1
            if n_clusters > 0:
                best = 0
                best_d = np.inf
                for c in range(n_clusters):
                    acc = cnorm2[c]
                    for k in range(m):
                        v = buf[idx[k]]
                        acc += v * (v - 2.0 * centroids[c, idx[k]])
                    if acc < best_d:
                        best_d = acc
                        best = c
                assign[e] = best
            else:
                assign[e] = 0
        for k in range(m):
            buf[idx[k]] = 0.0
    return clamps


@dataclass
class LayerOutput:
    assign: np.ndarray          # cluster index per input event, -1 if the surface was empty
    surfaces: np.ndarray        # surfaces for the requested events (NaN rows when empty)
    surface_index: np.ndarray   # event indices of ``surfaces`` rows
    clamps: int


def encode_stream(events, height, width, n_polarities, radius, dist, kernel=None,
                  noise=None, stream_words=(), centroids=None, want=None,
                  normalization="max"):
    """Drive a fresh grid with a whole event stream.

    Parameters
    ----------
    events : structured array
        Time-sorted events (see :data:`memhots.events.EVENT_DTYPE`).
    centroids : array, shape (n_clusters, dim), optional
        If given, every surface is assigned to its nearest centroid.
    want : bool array or index array, optional
        Events whose surfaces should be returned.
    """
    kernel = kernel or KernelMode.memristor()
    noise = noise or NoiseMode.ideal()
    ev = np.asarray(events)
    n = len(ev)
    if n:
        if (ev["x"].min() < 0 or ev["x"].max() >= width or ev["y"].min() < 0
                or ev["y"].max() >= height or ev["p"].min() < 0
                or ev["p"].max() >= n_polarities):
            raise IndexError("event outside grid")
        if np.any(np.diff(ev["t"]) < 0):
            raise ValueError("events must be sorted by time")
    mask = np.zeros(n, dtype=np.bool_)
    if want is not None:
        want = np.asarray(want)
        if want.dtype == np.bool_:
            mask[:] = want
        else:
            mask[want] = True
    dim = surface_dim(radius, n_polarities)
    surfaces = np.empty((int(mask.sum()), dim))
    if centroids is None:
        cents = np.zeros((0, dim))
    else:
        cents = np.ascontiguousarray(centroids, dtype=np.float64)
        if cents.shape[1] != dim:
            raise ValueError(f"centroid dimension {cents.shape[1]} != surface dimension {dim}")
    cnorm2 = np.einsum("ij,ij->i", cents, cents)
    mean, std = dist.arrays()
    if kernel.kind == "single_exp":
        mean = mean.copy()
        mean[2] = kernel.tau
    assign = np.empty(n, dtype=np.int64)
    key = stream_key(noise.seed, *stream_words)
    clamps = _run_layer(
        np.ascontiguousarray(ev["x"], dtype=np.int64), np.ascontiguousarray(ev["y"], dtype=np.int64),
        np.ascontiguousarray(ev["p"], dtype=np.int64), np.ascontiguousarray(ev["t"], dtype=np.int64),
        height, width, n_polarities, radius, kernel.code, mean, std,
        bool(noise.stochastic), bool(noise.per_device), key, _NORMS[normalization],
        mask, surfaces, cents, cnorm2, assign,
    )
    if centroids is None:
        assign = np.where(assign < 0, -1, 0)
    return LayerOutput(assign, surfaces, np.flatnonzero(mask), int(clamps))
