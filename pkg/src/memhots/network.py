"""Hierarchical memristive time-surface network.

Each layer drives a memristor grid with its input events, turns every event
into a normalized time surface, and replaces the event's polarity with the
index of the nearest learned centroid. Coordinates may be pooled by integer
division before the events feed the next layer. A recording is summarized
by the normalized histogram of the last layer's output polarities.

Codebooks are always learned from Ideal (deterministic) surfaces; noisy
inference reuses them unchanged.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .clustering import Codebook, MiniBatchKMeans
from .device import DEFAULT_PRESET, NoiseMode, get_preset
from .events import make_events
from .rng import substream_seed
from .surfaces import KernelMode, encode_stream, surface_dim

MODEL_VERSION = 1


class NotTrainedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    radius: int
    n_clusters: int
    pool: int | None = None
    kernel: KernelMode = field(default_factory=KernelMode.memristor)
    preset: str = DEFAULT_PRESET

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be at least 1")
        if self.n_clusters < 2:
            raise ValueError("a layer needs at least 2 clusters")
        if self.pool is not None and self.pool < 1:
            raise ValueError("pool must be at least 1")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = asdict(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel"] = KernelMode(**d["kernel"])
        return cls(**d)


def default_layers(clusters=(32, 64), radii=(7, 3), pool=7, kernel="memristor",
                   preset=DEFAULT_PRESET, taus_ms=(5.0, 92.0)):
    """Layer stack with pooling after the first layer only.

    ``kernel="single_exp"`` gives the memoryless HOTS baseline with one time
    constant per layer (``taus_ms``).
    """
    layers = []
    for k, (radius, n) in enumerate(zip(radii, clusters)):
        if kernel == "memristor":
            kmode = KernelMode.memristor()
        else:
            kmode = KernelMode.single_exp(taus_ms[k] * 1000.0)
        layers.append(LayerConfig(radius, n, pool if k == 0 and len(radii) > 1 else None,
                                  kmode, preset))
    return tuple(layers)


def pooled_size(size, pool):
    """Grid size after integer-dividing coordinates by ``pool``."""
    return size if pool is None else (size - 1) // pool + 1


@dataclass
class LayerTrace:
    events: np.ndarray      # output events of the layer (input of the next one)
    trace: np.ndarray       # cluster per original sensor event, -1 where no output
    clamps: int = 0


@dataclass
class Encoding:
    layers: list
    uid: int = 0
    label: int | None = None

    def output(self, depth=None):
        return self.layers[-1 if depth is None else depth - 1].events


@dataclass
class HistogramFeature:
    values: np.ndarray
    empty: bool
    label: int | None = None


def histogram(polarities, n_clusters):
    """Normalized count of each output polarity."""
    pol = np.asarray(polarities, dtype=np.int64)
    if pol.size == 0:
        return HistogramFeature(np.zeros(n_clusters), True)
    counts = np.bincount(pol, minlength=n_clusters).astype(float)
    return HistogramFeature(counts / counts.sum(), False)


def _survey_indices(n_events, budget, seed, layer, uid):
    if n_events == 0 or budget <= 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(substream_seed(seed, f"surfaces/{layer}/{uid}"))
    k = min(budget, n_events)
    return np.sort(rng.choice(n_events, size=k, replace=False))


def _encode_recording(rec, layers, codebooks, sensor, n_pol, noise, normalization,
                      collect=None, noise_scale=1.0):
    """Run ``rec`` through ``len(codebooks)`` trained layers.

    If ``collect = (layer_index, budget, seed)``, the layer at that index is
    run without a codebook and a random subset of its surfaces is returned
    instead of being assigned.
    """
    height, width = sensor
    ev = rec.events
    origin = np.arange(len(ev))
    n_orig = len(ev)
    traces = []
    n_layers = len(codebooks) + (1 if collect else 0)
    for k in range(n_layers):
        cfg = layers[k]
        dist = get_preset(cfg.preset)
        if noise_scale != 1.0:
            dist = dist.scaled(noise_scale)
        words = (k, rec.uid)
        if collect and k == collect[0]:
            want = _survey_indices(len(ev), collect[1], collect[2], k, rec.uid)
            out = encode_stream(ev, height, width, n_pol, cfg.radius, dist, cfg.kernel,
                                NoiseMode.ideal(), words, want=want,
                                normalization=normalization)
            keep = ~np.isnan(out.surfaces).any(axis=1)
            return out.surfaces[keep].astype(np.float32)
        out = encode_stream(ev, height, width, n_pol, cfg.radius, dist, cfg.kernel, noise,
                            words, centroids=codebooks[k].centroids,
                            normalization=normalization)
        ok = out.assign >= 0
        trace = np.full(n_orig, -1, dtype=np.int64)
        trace[origin[ok]] = out.assign[ok]
        kept = ev[ok]
        pool = cfg.pool
        nxt = make_events(
            kept["x"] // pool if pool else kept["x"],
            kept["y"] // pool if pool else kept["y"],
            out.assign[ok],
            kept["t"],
        )
        traces.append(LayerTrace(nxt, trace, out.clamps))
        ev = nxt
        origin = origin[ok]
        height, width = pooled_size(height, pool), pooled_size(width, pool)
        n_pol = cfg.n_clusters
    return Encoding(traces, rec.uid, rec.label)


class HOTSNetwork(BaseEstimator, TransformerMixin):
    """Stack of memristive time-surface layers.

    ``fit`` learns one codebook per layer from Ideal surfaces of the
    training recordings; ``transform`` returns the output histograms at
    ``depth`` (default: the last layer).

    Parameters
    ----------
    layers : sequence of LayerConfig
    sensor_size : (height, width)
    n_polarities : int
        Polarity count of the sensor events.
    normalization : {"max", "l2"}
    surfaces_per_layer : int
        Total number of training surfaces sampled (evenly across
        recordings) to fit each codebook.
    batch_size, max_iter : int
        Mini-batch k-means settings.
    random_state : int
    n_jobs : int
        Parallel workers across recordings.
    depth : int or None
    noise : NoiseMode or None
        Device mode used by ``transform``; Ideal when None.
    """

    def __init__(self, layers=None, sensor_size=(34, 34), n_polarities=2,
                 normalization="max", surfaces_per_layer=60_000, batch_size=1024,
                 max_iter=300, random_state=0, n_jobs=1, depth=None, noise=None):
        self.layers = layers
        self.sensor_size = sensor_size
        self.n_polarities = n_polarities
        self.normalization = normalization
        self.surfaces_per_layer = surfaces_per_layer
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.depth = depth
        self.noise = noise

    @property
    def layers_(self):
        return tuple(self.layers) if self.layers is not None else default_layers()

    def _map(self, fn, items):
        if self.n_jobs == 1 or len(items) < 2:
            return [fn(it) for it in items]
        return Parallel(n_jobs=self.n_jobs)(delayed(fn)(it) for it in items)

    def _check_recordings(self, recordings):
        h, w = self.sensor_size
        for rec in recordings:
            if (rec.height, rec.width) != (h, w):
                raise ValueError(f"recording is {rec.width}x{rec.height}, network expects {w}x{h}")
            if rec.n_polarities != self.n_polarities:
                raise ValueError("recording polarity count does not match the network")

    def fit(self, recordings, y=None):
        recordings = list(recordings)
        self._check_recordings(recordings)
        if not recordings:
            raise ValueError("no training recordings")
        layers = self.layers_
        codebooks = []
        self.kmeans_ = []
        budget = math.ceil(self.surfaces_per_layer / len(recordings))
        for k, cfg in enumerate(layers):
            collect = (k, budget, self.random_state)
            chunks = self._map(
                lambda rec: _encode_recording(rec, layers, codebooks, self.sensor_size,
                                              self.n_polarities, NoiseMode.ideal(),
                                              self.normalization, collect),
                recordings,
            )
            X = np.concatenate([c for c in chunks if len(c)]) if any(len(c) for c in chunks) \
                else np.zeros((0, 1))
            km = MiniBatchKMeans(cfg.n_clusters, self.batch_size, self.max_iter,
                                 substream_seed(self.random_state, f"kmeans/{k}"))
            km.fit(X)
            self.kmeans_.append(km)
            codebooks.append(km.codebook_)
        self.codebooks_ = codebooks
        return self

    def _require_fit(self):
        if not hasattr(self, "codebooks_"):
            raise NotTrainedError("network has no trained codebooks; call fit first")
        if len(self.codebooks_) != len(self.layers_):
            raise NotTrainedError("codebook count does not match layer count")

    def encode(self, recordings, noise=None, noise_scale=1.0):
        """Per-layer output streams and assignment traces for each recording.

        ``noise_scale`` multiplies every parameter standard deviation and the
        read noise of the device presets (noisy mode only).
        """
        self._require_fit()
        recordings = list(recordings)
        self._check_recordings(recordings)
        noise = noise or NoiseMode.ideal()
        return self._map(
            lambda rec: _encode_recording(rec, self.layers_, self.codebooks_, self.sensor_size,
                                          self.n_polarities, noise, self.normalization,
                                          noise_scale=noise_scale),
            recordings,
        )

    def histograms(self, encodings, depth=None):
        depth = len(self.layers_) if depth is None else depth
        n = self.layers_[depth - 1].n_clusters
        feats = [histogram(enc.output(depth)["p"], n) for enc in encodings]
        for f, enc in zip(feats, encodings):
            f.label = enc.label
        return feats

    def transform(self, recordings):
        feats = self.histograms(self.encode(recordings, self.noise), self.depth)
        return np.array([f.values for f in feats])

    def layer_shapes(self):
        """(height, width, polarities, surface dim) seen by every layer."""
        h, w = self.sensor_size
        npol = self.n_polarities
        out = []
        for cfg in self.layers_:
            out.append((h, w, npol, surface_dim(cfg.radius, npol)))
            h, w = pooled_size(h, cfg.pool), pooled_size(w, cfg.pool)
            npol = cfg.n_clusters
        return out


class HistogramClassifier(BaseEstimator, ClassifierMixin):
    """Nearest training histogram under Euclidean or Bhattacharyya distance.

    All-zero (empty) queries fall back to the most frequent training class.
    Ties go to the lowest label.
    """

    def __init__(self, metric="euclidean"):
        self.metric = metric

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if len(X) == 0:
            raise ValueError("empty training set")
        if self.metric not in ("euclidean", "bhattacharyya"):
            raise ValueError(f"unknown metric {self.metric!r}")
        self.X_ = X
        self.y_ = y
        self.classes_, counts = np.unique(y, return_counts=True)
        self.majority_ = self.classes_[np.argmax(counts)]
        self.n_fallback_ = 0
        return self

    def distances(self, X):
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=np.float64)
        if self.metric == "euclidean":
            diff = X[:, None, :] - self.X_[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        bc = np.sqrt(np.clip(X, 0, None)) @ np.sqrt(np.clip(self.X_, 0, None)).T
        with np.errstate(divide="ignore"):
            return -np.log(bc)

    def predict(self, X):
        X = check_array(X, dtype=np.float64)
        d = self.distances(X)
        best = d.min(axis=1, keepdims=True)
        # lowest label among equally near training histograms
        tied = np.where(d == best, self.y_[None, :], np.iinfo(np.int64).max)
        pred = tied.min(axis=1).astype(self.y_.dtype)
        empty = ~np.any(X != 0, axis=1) | ~np.isfinite(best[:, 0])
        pred[empty] = self.majority_
        self.n_fallback_ = int(empty.sum())
        return pred


@dataclass
class NetworkModel:
    """Trained network plus classifiers keyed by ``(depth, kind)``."""

    network: HOTSNetwork
    classifiers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def save(self, path):
        net = self.network
        net._require_fit()
        config = {
            "format": "memhots-model",
            "version": MODEL_VERSION,
            "layers": [c.to_dict() for c in net.layers_],
            "sensor_size": list(net.sensor_size),
            "n_polarities": net.n_polarities,
            "normalization": net.normalization,
            "surfaces_per_layer": net.surfaces_per_layer,
            "batch_size": net.batch_size,
            "max_iter": net.max_iter,
            "random_state": net.random_state,
            "classifiers": {},
            "meta": self.meta,
        }
        arrays = {f"codebook_{k}": cb.centroids for k, cb in enumerate(net.codebooks_)}
        for (depth, kind), clf in sorted(self.classifiers.items()):
            name = f"clf_{depth}_{kind}"
            if kind == "svc":
                config["classifiers"][name] = {"depth": depth, "kind": kind,
                                               "params": clf.get_params()}
                for key, val in clf.get_state().items():
                    arrays[f"{name}__{key}"] = val
            else:
                config["classifiers"][name] = {"depth": depth, "kind": kind,
                                               "params": clf.get_params()}
                arrays[f"{name}__X"] = clf.X_
                arrays[f"{name}__y"] = clf.y_
        with open(path, "wb") as fh:
            np.savez(fh, config=np.array(json.dumps(config, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path):
        from .svm import PolynomialSVC

        with np.load(path, allow_pickle=False) as z:
            config = json.loads(str(z["config"]))
            if config.get("format") != "memhots-model":
                raise ValueError(f"{path} is not a model file")
            if config["version"] != MODEL_VERSION:
                raise ValueError(f"unsupported model version {config['version']}")
            layers = tuple(LayerConfig.from_dict(d) for d in config["layers"])
            net = HOTSNetwork(layers, tuple(config["sensor_size"]), config["n_polarities"],
                              config["normalization"], config["surfaces_per_layer"],
                              config["batch_size"], config["max_iter"], config["random_state"])
            net.codebooks_ = [Codebook(z[f"codebook_{k}"]) for k in range(len(layers))]
            classifiers = {}
            for name, entry in config["classifiers"].items():
                if entry["kind"] == "svc":
                    state = {key.split("__", 1)[1]: z[key] for key in z.files
                             if key.startswith(name + "__")}
                    clf = PolynomialSVC.from_state(state, **entry["params"])
                else:
                    clf = HistogramClassifier(**entry["params"]).fit(z[f"{name}__X"],
                                                                    z[f"{name}__y"])
                classifiers[(entry["depth"], entry["kind"])] = clf
        return cls(net, classifiers, config.get("meta", {}))
