"""Memristive time-surface networks for event-based vision."""
__version__ = "0.1.0"

from .device import (DeviceParams, Memristor, MemristorState, NoiseMode, ParamDistributions,
                     get_preset, load_presets, read_conductance, sample_params, simulate,
                     write_pulse)
from .events import Event, Recording, load_bin, make_events, sample_slice, save_bin
from .surfaces import KernelMode, MemristorGrid, TimeSurface, encode_stream
from .clustering import Codebook, MiniBatchKMeans, assign, dislocation
from .svm import PolynomialSVC
from .network import (HistogramClassifier, HOTSNetwork, LayerConfig, NetworkModel,
                      default_layers, histogram)
from .fitting import FitResult, Trace, fit_decay, normalize_trace, peak_reference
from .analysis import MIConfig, MIReport, mi_loss, mutual_information, noise_sweep

__all__ = [
    "DeviceParams", "Memristor", "MemristorState", "NoiseMode", "ParamDistributions",
    "get_preset", "load_presets", "read_conductance", "sample_params", "simulate", "write_pulse",
    "Event", "Recording", "load_bin", "make_events", "sample_slice", "save_bin",
    "KernelMode", "MemristorGrid", "TimeSurface", "encode_stream",
    "Codebook", "MiniBatchKMeans", "assign", "dislocation", "PolynomialSVC",
    "HistogramClassifier", "HOTSNetwork", "LayerConfig", "NetworkModel", "default_layers",
    "histogram", "FitResult", "Trace", "fit_decay", "normalize_trace", "peak_reference",
    "MIConfig", "MIReport", "mi_loss", "mutual_information", "noise_sweep",
]
