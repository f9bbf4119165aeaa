"""Closed-form conductance model of the LixWO3 electrochemical memristor.

A WRITE pulse of width ``w`` raises the channel conductance linearly; once
the pulse ends, two ionic populations relax with time constants ``tau1`` and
``tau2``. Each pulse stores the conductance of both populations at its onset
as baselines ``b1`` and ``b2``, which is what produces short-term
facilitation for closely spaced pulses.

All times are microseconds. Conductance is unitless (normalized so that the
single-pulse peak ``a1 + a2`` is close to one).
"""
import configparser
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .rng import fold, normal_at, stream_key

MAX_RESAMPLE = 1000

_PARAM_STREAM = 1
_READ_STREAM = 2


class PulseOrderError(ValueError):
    """A WRITE pulse arrived before the device's previous pulse."""


class ResampleWarning(RuntimeWarning):
    """Time-constant draws kept failing the ordering constraint."""


@dataclass(frozen=True)
class DeviceParams:
    """One concrete set of model constants (times in microseconds)."""

    a1: float
    a2: float
    tau1: float
    tau2: float
    width: float
    eta_sigma: float = 0.0

    def validate(self):
        if not (self.tau1 > 0 and self.tau2 > 0 and self.width > 0):
            raise ValueError("tau1, tau2 and width must be positive")
        if not self.tau1 < self.tau2:
            raise ValueError("tau1 must be smaller than tau2")
        if not self.a1 + self.a2 > 0:
            raise ValueError("a1 + a2 must be positive")
        if self.eta_sigma < 0:
            raise ValueError("eta_sigma must be non-negative")
        return self

    @property
    def peak(self):
        return self.a1 + self.a2


@dataclass(frozen=True)
class ParamDistributions:
    """Gaussian distributions of the model constants.

    ``mean`` also carries the read-noise standard deviation ``eta_sigma``.
    """

    mean: DeviceParams
    a1_std: float = 0.0
    a2_std: float = 0.0
    tau1_std: float = 0.0
    tau2_std: float = 0.0

    def __post_init__(self):
        self.mean.validate()
        if min(self.a1_std, self.a2_std, self.tau1_std, self.tau2_std) < 0:
            raise ValueError("standard deviations must be non-negative")

    @property
    def eta_sigma(self):
        return self.mean.eta_sigma

    def scaled(self, multiplier):
        """Scale every standard deviation, read noise included."""
        if multiplier < 0:
            raise ValueError("multiplier must be non-negative")
        m = float(multiplier)
        return ParamDistributions(
            replace(self.mean, eta_sigma=self.mean.eta_sigma * m),
            self.a1_std * m, self.a2_std * m, self.tau1_std * m, self.tau2_std * m,
        )

    def arrays(self):
        """``(mean, std)`` packed for the compiled kernels."""
        p = self.mean
        mean = np.array([p.a1, p.a2, p.tau1, p.tau2, p.width, p.eta_sigma])
        std = np.array([self.a1_std, self.a2_std, self.tau1_std, self.tau2_std])
        return mean, std


@dataclass(frozen=True)
class NoiseMode:
    """``Ideal`` (deterministic means, no read noise) or stochastic.

    With ``per_device`` the parameters are drawn once, at a device's first
    pulse, instead of at every pulse.
    """

    stochastic: bool = False
    seed: int = 0
    per_device: bool = False

    @classmethod
    def ideal(cls):
        return cls()

    @classmethod
    def noisy(cls, seed, per_device=False):
        return cls(True, int(seed), per_device)

    @property
    def name(self):
        return "noisy" if self.stochastic else "ideal"


@dataclass(frozen=True)
class MemristorState:
    b1: float = 0.0
    b2: float = 0.0
    last_onset: float | None = None
    params: DeviceParams | None = None
    n_pulses: int = 0

    @property
    def pulsed(self):
        return self.last_onset is not None


@dataclass
class DeviceStream:
    """Random stream owned by one device: parameter draws and read noise."""

    key: np.uint64 = field(default_factory=lambda: stream_key(0))

    @classmethod
    def for_device(cls, seed, *words):
        return cls(stream_key(seed, *words))


# -- compiled primitives shared with the grid kernels -----------------------

@njit(cache=True)
def conductance(dt, a1, a2, tau1, tau2, w, b1, b2):
    """Noise-free conductance ``dt`` after the most recent pulse onset."""
    if dt < w:
        return (a1 + a2) * dt / w + b1 + b2
    s = dt - w
    return (a1 + b1) * math.exp(-s / tau1) + (a2 + b2) * math.exp(-s / tau2)


@njit(cache=True)
def onset_baselines(dt, a1, a2, tau1, tau2, w, b1, b2):
    """Per-population conductance ``dt`` after the previous onset."""
    if dt < w:
        frac = dt / w
        return a1 * frac + b1, a2 * frac + b2
    s = dt - w
    return (a1 + b1) * math.exp(-s / tau1), (a2 + b2) * math.exp(-s / tau2)


@njit(cache=True)
def draw_params(mean, std, dev_key, pulse):
    """Gaussian draw of (a1, a2, tau1, tau2) for one pulse.

    Time constants are redrawn until ``0 < tau1 < tau2``; after
    ``MAX_RESAMPLE`` failures the means are used and ``clamped`` is set.
    """
    key = fold(dev_key, _PARAM_STREAM)
    a1 = mean[0] + std[0] * normal_at(key, pulse, 0, 0)
    a2 = mean[1] + std[1] * normal_at(key, pulse, 1, 0)
    for attempt in range(MAX_RESAMPLE):
        t1 = mean[2] + std[2] * normal_at(key, pulse, 2, attempt)
        t2 = mean[3] + std[3] * normal_at(key, pulse, 3, attempt)
        if t1 > 0.0 and t2 > 0.0 and t1 < t2:
            return a1, a2, t1, t2, False
    return a1, a2, mean[2], mean[3], True


@njit(cache=True)
def read_noise(dev_key, read_index, sigma):
    if sigma == 0.0:
        return 0.0
    return sigma * normal_at(fold(dev_key, _READ_STREAM), read_index, 0, 0)


# -- scalar device API ------------------------------------------------------

def _stream(mode, stream):
    if stream is None:
        return DeviceStream.for_device(mode.seed)
    return stream


def sample_params(dist, mode, stream=None, pulse=0):
    """Parameters for one pulse.

    Ideal mode returns ``dist.mean`` unchanged. Stochastic mode draws each
    amplitude and time constant from its Gaussian at counter ``pulse`` of
    ``stream``.
    """
    if not mode.stochastic:
        return dist.mean
    mean, std = dist.arrays()
    a1, a2, t1, t2, clamped = draw_params(mean, std, _stream(mode, stream).key, pulse)
    if clamped:
        warnings.warn(
            f"tau draws failed {MAX_RESAMPLE} times; using the means", ResampleWarning
        )
    return DeviceParams(a1, a2, t1, t2, dist.mean.width, dist.mean.eta_sigma)


def write_pulse(state, t_i, dist, mode, stream=None):
    """Apply a WRITE pulse with onset ``t_i`` and return the new state."""
    t_i = float(t_i)
    if state.pulsed:
        dt = t_i - state.last_onset
        if dt < 0:
            raise PulseOrderError(
                f"pulse at {t_i} us precedes previous pulse at {state.last_onset} us"
            )
        p = state.params
        b1, b2 = onset_baselines(dt, p.a1, p.a2, p.tau1, p.tau2, p.width,
                                 state.b1, state.b2)
    else:
        b1 = b2 = 0.0
    if mode.per_device and state.params is not None:
        params = state.params
    else:
        index = 0 if mode.per_device else state.n_pulses
        params = sample_params(dist, mode, stream, index)
    return MemristorState(b1, b2, t_i, params, state.n_pulses + 1)


def read_conductance(state, t, dist, mode, stream=None, read_index=0):
    """Conductance at time ``t``; reads never change the state.

    Stochastic mode adds one Gaussian read-noise sample (counter
    ``read_index``), never-pulsed devices included.
    """
    if state.pulsed:
        p = state.params
        g = conductance(float(t) - state.last_onset, p.a1, p.a2, p.tau1, p.tau2,
                        p.width, state.b1, state.b2)
    else:
        g = 0.0
    if mode.stochastic:
        g += read_noise(_stream(mode, stream).key, read_index, dist.eta_sigma)
    return g


class Memristor:
    """Stateful wrapper around the scalar API, convenient for traces."""

    def __init__(self, dist, mode=None, stream=None):
        self.dist = dist
        self.mode = mode or NoiseMode.ideal()
        self.stream = _stream(self.mode, stream)
        self.state = MemristorState()
        self.n_reads = 0

    def pulse(self, t):
        self.state = write_pulse(self.state, t, self.dist, self.mode, self.stream)
        return self

    def read(self, t):
        g = read_conductance(self.state, t, self.dist, self.mode, self.stream, self.n_reads)
        self.n_reads += 1
        return g

    def reset(self):
        self.state = MemristorState()
        self.n_reads = 0


def simulate(pulse_times, sample_times, dist, mode=None, stream=None):
    """Conductance sampled at ``sample_times`` for a WRITE pulse train.

    Pulses and samples are merged in time order; a sample taken at the same
    instant as a pulse onset sees the pulse.
    """
    pulses = np.sort(np.asarray(pulse_times, dtype=float))
    samples = np.asarray(sample_times, dtype=float)
    order = np.argsort(samples, kind="stable")
    dev = Memristor(dist, mode, stream)
    out = np.empty(len(samples))
    k = 0
    for idx in order:
        t = samples[idx]
        while k < len(pulses) and pulses[k] <= t:
            dev.pulse(pulses[k])
            k += 1
        out[idx] = dev.read(t)
    return out


# -- presets and configuration files ----------------------------------------

#: Table rows in publication order: (table, amplitude, width, preset name).
TABLE_ROWS = (
    ("width_sweep", "1V", "200us", "1V_200us"),
    ("width_sweep", "1V", "500us", "1V_500us"),
    ("width_sweep", "1V", "750us", "1V_750us"),
    ("width_sweep", "1V", "1ms", "1V_1ms"),
    ("amplitude_sweep", "1V", "200us", "1V_200us"),
    ("amplitude_sweep", "2V", "200us", "2V_200us"),
    ("amplitude_sweep", "3V", "200us", "3V_200us"),
    ("amplitude_sweep", "4V", "200us", "4V_200us"),
)

DEFAULT_PRESET = "1V_200us"


def _section_to_dist(section):
    ms = 1000.0
    mean = DeviceParams(
        a1=section.getfloat("a1"),
        a2=section.getfloat("a2"),
        tau1=section.getfloat("tau1_ms") * ms,
        tau2=section.getfloat("tau2_ms") * ms,
        width=section.getfloat("width_us"),
        eta_sigma=section.getfloat("eta_sigma", 0.0),
    )
    return ParamDistributions(
        mean,
        a1_std=section.getfloat("a1_std", 0.0),
        a2_std=section.getfloat("a2_std", 0.0),
        tau1_std=section.getfloat("tau1_std_ms", 0.0) * ms,
        tau2_std=section.getfloat("tau2_std_ms", 0.0) * ms,
    )


def read_config(path):
    """Read every section of a key-value device file into distributions."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {name: _section_to_dist(parser[name]) for name in parser.sections()}


def write_config(dists, path):
    """Write ``{name: ParamDistributions}`` in the format ``read_config`` reads."""
    parser = configparser.ConfigParser()
    for name, d in dists.items():
        p = d.mean
        parser[name] = {
            "a1": repr(p.a1), "a1_std": repr(d.a1_std),
            "a2": repr(p.a2), "a2_std": repr(d.a2_std),
            "tau1_ms": repr(p.tau1 / 1000.0), "tau1_std_ms": repr(d.tau1_std / 1000.0),
            "tau2_ms": repr(p.tau2 / 1000.0), "tau2_std_ms": repr(d.tau2_std / 1000.0),
            "width_us": repr(p.width), "eta_sigma": repr(p.eta_sigma),
        }
    with open(path, "w") as fh:
        parser.write(fh)


def load_presets():
    return dict(_load_presets())


@lru_cache(maxsize=1)
def _load_presets():
    with resources.files("memhots").joinpath("data/presets.ini").open() as fh:
        parser = configparser.ConfigParser()
        parser.read_file(fh)
    return {name: _section_to_dist(parser[name]) for name in parser.sections()}


def get_preset(name_or_path):
    """A shipped preset by name, or the single section of a config file."""
    presets = load_presets()
    if name_or_path in presets:
        return presets[name_or_path]
    path = Path(name_or_path)
    if path.is_file():
        dists = read_config(path)
        if len(dists) != 1:
            raise ValueError(f"{path} must hold exactly one section, found {len(dists)}")
        return next(iter(dists.values()))
    raise KeyError(f"unknown preset {name_or_path!r}; known: {', '.join(presets)}")
