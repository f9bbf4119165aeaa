"""End-to-end recognition protocol.

One run samples a train and a test slice, learns the codebooks on Ideal
training surfaces, trains both classifiers on Ideal training histograms at
every depth, then evaluates the test slice in Ideal mode and in Noisy mode.
Dislocation and mutual information compare the two test encodings.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import MIConfig, layer_dislocation, mi_loss, mutual_information, noise_sweep
from .device import NoiseMode
from .events import sample_slice
from .network import HistogramClassifier, HOTSNetwork, default_layers
from .rng import substream_seed
from .svm import PolynomialSVC

log = logging.getLogger(__name__)


@dataclass
class ProtocolConfig:
    dataset_root: str
    fraction: float = 0.1
    test_fraction: float | None = None
    seed: int = 0
    crop28: bool = True
    clusters: tuple = (32, 64)
    radii: tuple = (7, 3)
    pool: int = 7
    kernel: str = "memristor"
    preset: str = "1V_200us"
    classifiers: tuple = ("hist", "svc")
    surfaces_per_layer: int = 60_000
    batch_size: int = 1024
    max_iter: int = 300
    n_jobs: int = 1
    noisy: bool = True
    mi: bool = False
    mi_config: MIConfig = field(default_factory=MIConfig)
    sweep: tuple = ()

    @property
    def sensor_size(self):
        return (28, 28) if self.crop28 else (34, 34)


def make_classifier(kind):
    if kind == "hist":
        return HistogramClassifier("euclidean")
    if kind == "bhattacharyya":
        return HistogramClassifier("bhattacharyya")
    if kind == "svc":
        return PolynomialSVC()
    raise ValueError(f"unknown classifier {kind!r}")


def features(network, encodings, depth):
    return np.array([f.values for f in network.histograms(encodings, depth)])


def train_model(cfg, train):
    """Fit the network and one classifier per (depth, kind) on Ideal features."""
    layers = default_layers(cfg.clusters, cfg.radii, cfg.pool, cfg.kernel, cfg.preset)
    net = HOTSNetwork(layers, cfg.sensor_size, 2, surfaces_per_layer=cfg.surfaces_per_layer,
                      batch_size=cfg.batch_size, max_iter=cfg.max_iter,
                      random_state=cfg.seed, n_jobs=cfg.n_jobs)
    log.info("fitting codebooks on %d recordings", len(train))
    net.fit(train)
    enc = net.encode(train)
    y = np.array([r.label for r in train])
    classifiers = {}
    for depth in range(1, len(layers) + 1):
        X = features(net, enc, depth)
        for kind in cfg.classifiers:
            classifiers[(depth, kind)] = make_classifier(kind).fit(X, y)
    return net, classifiers


def evaluate(net, classifiers, encodings, labels):
    y = np.asarray(labels)
    out = {}
    for (depth, kind), clf in sorted(classifiers.items()):
        pred = clf.predict(features(net, encodings, depth))
        out[f"{kind}@{depth}"] = float(np.mean(pred == y))
    return out


def noise_seed(seed):
    return substream_seed(seed, "device")


def run_protocol(cfg):
    """Run one seed of the protocol and return a metrics dictionary."""
    train = sample_slice(cfg.dataset_root, "train", cfg.fraction, cfg.seed, cfg.crop28).recordings
    test_fraction = cfg.test_fraction if cfg.test_fraction is not None else cfg.fraction
    test = sample_slice(cfg.dataset_root, "test", test_fraction, cfg.seed, cfg.crop28).recordings
    net, classifiers = train_model(cfg, train)
    y = [r.label for r in test]
    ideal = net.encode(test)
    metrics = {"n_train": len(train), "n_test": len(test),
               "accuracy": {"ideal": evaluate(net, classifiers, ideal, y)}}
    n_layers = len(net.layers_)
    if cfg.noisy:
        noisy = net.encode(test, NoiseMode.noisy(noise_seed(cfg.seed)))
        metrics["accuracy"]["noisy"] = evaluate(net, classifiers, noisy, y)
        metrics["dislocation"] = {d: layer_dislocation(ideal, noisy, d)
                                  for d in range(1, n_layers + 1)}
        metrics["clamps"] = int(sum(layer.clamps for e in noisy for layer in e.layers))
    if cfg.mi:
        uids = [r.uid for r in test]
        metrics["mi"] = {}
        for d, lcfg in enumerate(net.layers_, start=1):
            rep_i = mutual_information([e.output(d) for e in ideal], y, lcfg.n_clusters,
                                       cfg.mi_config, uids, "ideal")
            entry = {"deltas_us": rep_i.deltas_us.tolist(), "ideal": rep_i.mi.tolist()}
            if cfg.noisy:
                rep_n = mutual_information([e.output(d) for e in noisy], y, lcfg.n_clusters,
                                           cfg.mi_config, uids, "noisy")
                entry["noisy"] = rep_n.mi.tolist()
                entry["loss"] = mi_loss(rep_i, rep_n).tolist()
            metrics["mi"][d] = entry
    if cfg.sweep:
        points = noise_sweep(net, classifiers, test, cfg.sweep, noise_seed(cfg.seed))
        metrics["sweep"] = {repr(p.multiplier): p.accuracy for p in points}
    # empty test histograms are classified by the majority-class fallback
    metrics["empty_features"] = {d: int(sum(f.empty for f in net.histograms(ideal, d)))
                                 for d in range(1, n_layers + 1)}
    return metrics, net, classifiers
