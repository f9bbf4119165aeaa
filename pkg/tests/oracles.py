"""Independent reference implementations used as test oracles.

Everything here is written directly from the model definitions, in plain
Python with explicit loops, and shares no code with the package.
"""
import itertools
import math

import numpy as np


def device_oracle(pulses, t, a1, a2, tau1, tau2, w):
    """Conductance at ``t`` by explicit summation over the pulse history.

    Each pulse contributes a linear term during its rise phase and an
    exponential term during its decay phase, but only inside its own phase
    window ``t_i <= t < t_{i+1}``. Baselines are carried population by
    population from one onset to the next.
    """
    pulses = sorted(float(p) for p in pulses)
    b1 = [0.0] * len(pulses)
    b2 = [0.0] * len(pulses)

    def lin(k, pop, tt):
        amp, base = (a1, b1[k]) if pop == 1 else (a2, b2[k])
        if tt - pulses[k] < w:
            return amp * (tt - pulses[k]) / w + base
        return 0.0

    def expo(k, pop, tt):
        amp, base, tau = (a1, b1[k], tau1) if pop == 1 else (a2, b2[k], tau2)
        if tt - pulses[k] >= w:
            return (amp + base) * math.exp(-(tt - pulses[k] - w) / tau)
        return 0.0

    for k in range(1, len(pulses)):
        tk = pulses[k]
        b1[k] = lin(k - 1, 1, tk) + expo(k - 1, 1, tk)
        b2[k] = lin(k - 1, 2, tk) + expo(k - 1, 2, tk)

    total = 0.0
    for k, tk in enumerate(pulses):
        nxt = pulses[k + 1] if k + 1 < len(pulses) else math.inf
        if not tk <= t < nxt:
            continue
        for pop in (1, 2):
            total += lin(k, pop, t) + expo(k, pop, t)
    return total


def kmeans_objective(X, labels):
    """Sum of squared distances to the cluster means of a partition."""
    total = 0.0
    for c in set(labels):
        pts = X[np.asarray(labels) == c]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def best_partition_objective(X, n):
    """Exhaustive minimum of the k-means objective over all partitions.

    Every labelling in ``range(n) ** len(X)`` is scored at once through
    per-cluster sums: the within-cluster scatter of a cluster with ``m``
    points is ``sum |x|^2 - |sum x|^2 / m``.
    """
    X = np.asarray(X, dtype=float)
    labels = np.array(list(itertools.product(range(n), repeat=len(X))))
    used = np.stack([(labels == c).any(axis=1) for c in range(n)]).all(axis=0)
    labels = labels[used]
    total = float((X ** 2).sum())
    explained = np.zeros(len(labels))
    for c in range(n):
        member = (labels == c).astype(float)
        sums = member @ X
        explained += (sums ** 2).sum(axis=1) / member.sum(axis=1)
    return float((total - explained).min())


def mi_closed_form(p_fire_given_class):
    """Plug-in information of a binary response with uniform classes."""
    p = np.asarray(p_fire_given_class, dtype=float)
    ps = 1.0 / len(p)
    pr1 = p.mean()
    out = 0.0
    for prs, pr in ((p, pr1), (1 - p, 1 - pr1)):
        for v in prs:
            if v > 0:
                out += ps * v * math.log2(v / pr)
    return out


def decode_record(b):
    """One N-MNIST 5-byte record, straight from the published bit layout."""
    x, y = b[0], b[1]
    p = b[2] >> 7
    t = ((b[2] & 0x7F) << 16) | (b[3] << 8) | b[4]
    return x, y, p, t


def poly_features(X, degree=3):
    """Explicit monomial expansion up to ``degree`` (bias included)."""
    X = np.asarray(X, dtype=float)
    cols = [np.ones(len(X))]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(X.shape[1]), d):
            cols.append(np.prod(X[:, combo], axis=1))
    return np.column_stack(cols)
