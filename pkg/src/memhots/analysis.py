"""Mutual information between stimulus class and cluster responses.

For a reference event of polarity ``q`` at time ``t`` drawn from one
recording, every other recording gives a binary response: whether it holds
at least one polarity-``q`` event inside the window ``[t - delta/2,
t + delta/2]``. Per class ``s`` the firing fraction estimates ``P(r=1|s)``;
``P(r)`` is the class mixture, and the plug-in information

    I = sum_s P(s) sum_r P(r|s) log2(P(r|s) / P(r))

is computed per reference event, averaged over the events of each polarity,
then over polarities.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .clustering import dislocation
from .rng import substream_seed

DEFAULT_DELTAS_MS = (1, 2, 5, 10, 20, 50, 100, 200)


@dataclass(frozen=True)
class MIConfig:
    deltas_us: tuple = tuple(d * 1000.0 for d in DEFAULT_DELTAS_MS)
    draws: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.deltas_us or min(self.deltas_us) <= 0:
            raise ValueError("window sizes must be positive")
        if self.draws < 1:
            raise ValueError("need at least one draw per recording")


@dataclass
class MIReport:
    deltas_us: np.ndarray
    mi: np.ndarray                  # bits per delta, averaged over polarities
    per_polarity: np.ndarray        # (n_polarities, n_deltas), NaN if never drawn
    n_draws: int
    label: str = ""

    def to_dict(self):
        return {"label": self.label, "deltas_us": self.deltas_us.tolist(),
                "mi_bits": self.mi.tolist(), "n_draws": self.n_draws}


def _index_streams(streams, n_polarities):
    """CSR layout of per-(recording, polarity) sorted timestamps."""
    n = len(streams)
    offsets = np.zeros((n, n_polarities + 1), dtype=np.int64)
    chunks = []
    base = 0
    for i, ev in enumerate(streams):
        order = np.lexsort((ev["t"], ev["p"]))
        p = ev["p"][order]
        chunks.append(ev["t"][order].astype(np.float64))
        counts = np.bincount(p, minlength=n_polarities)[:n_polarities]
        offsets[i, 1:] = base + np.cumsum(counts)
        offsets[i, 0] = base
        base += len(ev)
    times = np.concatenate(chunks) if chunks else np.zeros(0)
    return times, offsets


@njit(cache=True)
def _has_event(times, lo_i, hi_i, a, b):
    """Whether ``times[lo_i:hi_i]`` (sorted) intersects ``[a, b]``."""
    lo, hi = lo_i, hi_i
    while lo < hi:
        mid = (lo + hi) // 2
        if times[mid] < a:
            lo = mid + 1
        else:
            hi = mid
    return lo < hi_i and times[lo] <= b


@njit(cache=True)
def _plugin_mi(p1, ps):
    pr1 = 0.0
    for s in range(len(p1)):
        pr1 += ps[s] * p1[s]
    out = 0.0
    for s in range(len(p1)):
        for r in range(2):
            prs = p1[s] if r == 1 else 1.0 - p1[s]
            pr = pr1 if r == 1 else 1.0 - pr1
            if prs > 0.0:
                out += ps[s] * prs * math.log2(prs / pr)
    return max(out, 0.0)


@njit(cache=True)
def _mi_draws(times, offsets, cls, n_classes, ref_rec, ref_pol, ref_t, deltas):
    n_rec = offsets.shape[0]
    out = np.zeros((len(ref_t), len(deltas)))
    hits = np.zeros(n_classes)
    totals = np.zeros(n_classes)
    p1 = np.zeros(n_classes)
    ps = np.full(n_classes, 1.0 / n_classes)
    for k in range(len(ref_t)):
        q = ref_pol[k]
        for di in range(len(deltas)):
            half = deltas[di] / 2.0
            hits[:] = 0.0
            totals[:] = 0.0
            for j in range(n_rec):
                if j == ref_rec[k]:
                    continue
                c = cls[j]
                totals[c] += 1.0
                if _has_event(times, offsets[j, q], offsets[j, q + 1],
                              ref_t[k] - half, ref_t[k] + half):
                    hits[c] += 1.0
            for c in range(n_classes):
                p1[c] = hits[c] / totals[c]
            out[k, di] = _plugin_mi(p1, ps)
    return out


def draw_references(streams, uids, draws, seed):
    """Uniformly drawn reference events, ``draws`` per recording (fewer if short)."""
    rec, pol, t = [], [], []
    for i, (ev, uid) in enumerate(zip(streams, uids)):
        if len(ev) == 0:
            continue
        rng = np.random.default_rng(substream_seed(seed, f"mi/{uid}"))
        pick = rng.choice(len(ev), size=min(draws, len(ev)), replace=False)
        pick.sort()
        rec.append(np.full(len(pick), i))
        pol.append(ev["p"][pick])
        t.append(ev["t"][pick].astype(np.float64))
    if not rec:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return (np.concatenate(rec).astype(np.int64), np.concatenate(pol).astype(np.int64),
            np.concatenate(t))


def mutual_information(streams, labels, n_polarities, config=None, uids=None, label=""):
    """Mean information (bits) carried by single-cluster responses.

    Parameters
    ----------
    streams : sequence of event arrays
        One stream per recording; polarity is the cluster index.
    labels : sequence of int
        Stimulus class of each recording.
    n_polarities : int
    config : MIConfig, optional
    uids : sequence of int, optional
        Stable per-recording identifiers that seed the reference draws;
        positions are used when omitted.

    Returns
    -------
    MIReport
    """
    config = config or MIConfig()
    labels = np.asarray(labels)
    if len(labels) != len(streams):
        raise ValueError("one label per stream is required")
    classes, cls, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    if counts.min() < 2:
        bad = classes[np.argmin(counts)]
        raise ValueError(f"class {bad} has fewer than 2 recordings")
    uids = range(len(streams)) if uids is None else uids
    times, offsets = _index_streams(streams, n_polarities)
    ref_rec, ref_pol, ref_t = draw_references(streams, uids, config.draws, config.seed)
    deltas = np.asarray(config.deltas_us, dtype=float)
    per_draw = _mi_draws(times, offsets, cls.astype(np.int64), len(classes),
                         ref_rec, ref_pol, ref_t, deltas)
    per_pol = np.full((n_polarities, len(deltas)), np.nan)
    for q in np.unique(ref_pol):
        per_pol[q] = per_draw[ref_pol == q].mean(axis=0)
    drawn = ~np.isnan(per_pol[:, 0])
    mi = per_pol[drawn].mean(axis=0) if drawn.any() else np.zeros(len(deltas))
    return MIReport(deltas, mi, per_pol, len(ref_t), label)


def mi_loss(ideal, noisy):
    """``(ideal - noisy) / ideal`` per window; NaN where the ideal value is 0."""
    if not np.array_equal(ideal.deltas_us, noisy.deltas_us):
        raise ValueError("reports use different window grids")
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = (ideal.mi - noisy.mi) / ideal.mi
    loss[ideal.mi == 0] = np.nan
    return loss


def layer_dislocation(ideal_encodings, noisy_encodings, layer):
    """Pooled fraction of sensor events whose layer assignment changed."""
    a = [e.layers[layer - 1].trace for e in ideal_encodings]
    b = [e.layers[layer - 1].trace for e in noisy_encodings]
    if len(a) != len(b):
        raise ValueError("encodings must cover the same recordings")
    if not a:
        return 0.0
    return dislocation(np.concatenate(a), np.concatenate(b))


@dataclass
class SweepPoint:
    multiplier: float
    accuracy: dict = field(default_factory=dict)    # "hist@2" -> fraction
    mi: dict = field(default_factory=dict)          # layer -> list of bits per delta


def noise_sweep(network, classifiers, test_recordings, multipliers, seed, mi_config=None,
                n_classes=None):
    """Noisy inference with every device spread scaled by each multiplier.

    Parameters
    ----------
    network : fitted HOTSNetwork
        Codebooks learned on Ideal surfaces.
    classifiers : dict
        ``(depth, kind) -> fitted classifier``, trained on Ideal features.
    test_recordings : list of Recording
    multipliers : iterable of float
    seed : int
        Device noise seed.

    Returns
    -------
    list of SweepPoint
    """
    from .device import NoiseMode

    y = np.array([r.label for r in test_recordings])
    points = []
    for m in multipliers:
        enc = network.encode(test_recordings, NoiseMode.noisy(seed), noise_scale=float(m))
        point = SweepPoint(float(m))
        for (depth, kind), clf in sorted(classifiers.items()):
            X = np.array([f.values for f in network.histograms(enc, depth)])
            point.accuracy[f"{kind}@{depth}"] = float(np.mean(clf.predict(X) == y))
        if mi_config is not None:
            for depth, cfg in enumerate(network.layers_, start=1):
                rep = mutual_information([e.output(depth) for e in enc], y, cfg.n_clusters,
                                         mi_config, [r.uid for r in test_recordings])
                point.mi[depth] = rep.mi.tolist()
        points.append(point)
    return points


# -- reports -----------------------------------------------------------------

def write_mi_csv(reports, path):
    """One row per window size, one column per report."""
    reports = list(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_us"] + [r.label or f"report{k}" for k, r in enumerate(reports)])
        for i, d in enumerate(reports[0].deltas_us):
            w.writerow([repr(float(d))] + [repr(float(r.mi[i])) for r in reports])


def write_sweep_csv(points, path):
    keys = sorted({k for p in points for k in p.accuracy})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["multiplier"] + keys)
        for p in points:
            w.writerow([repr(p.multiplier)] + [repr(p.accuracy.get(k, float("nan"))) for k in keys])


def write_json(doc, path):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj
