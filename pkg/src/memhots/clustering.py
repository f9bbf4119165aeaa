"""Mini-batch k-means codebooks, nearest-centroid assignment, dislocation."""
import io
import json

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

CODEBOOK_VERSION = 1


def _sq_distances(X, centers, chunk=4096):
    """Exact squared Euclidean distances, computed by differences."""
    out = np.empty((len(X), len(centers)))
    for start in range(0, len(X), chunk):
        block = X[start:start + chunk]
        diff = block[:, None, :] - centers[None, :, :]
        out[start:start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def assign(centroids, v):
    """Index of the nearest centroid; ties go to the lowest index.

    ``v`` may be a single vector or a 2-D array of vectors.
    """
    centroids = np.asarray(centroids, dtype=float)
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    if V.shape[1] != centroids.shape[1]:
        raise ValueError(f"vector dimension {V.shape[1]} != codebook dimension "
                         f"{centroids.shape[1]}")
    labels = np.argmin(_sq_distances(V, centroids), axis=1)
    return int(labels[0]) if single else labels


def dislocation(a, b):
    """Fraction of positions where two assignment traces disagree."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"trace lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))


class MiniBatchKMeans(BaseEstimator, ClusterMixin, TransformerMixin):
    """Mini-batch k-means with per-center learning rates.

    Each iteration draws a batch without replacement, assigns it to the
    current centers, then moves every center to the running mean of all
    points it has ever been assigned (learning rate ``1 / count``). Centers
    that still have no points after a batch are moved to the batch points
    farthest from their own centers.

    Parameters
    ----------
    n_clusters : int
        Number of centroids.
    batch_size : int
        Points per iteration.
    max_iter : int
        Number of mini-batch iterations.
    random_state : int, RandomState or None
        Controls k-means++ seeding and batch sampling.
    n_init : int
        Independent seedings; the run with the lowest training inertia is
        kept.

    Attributes
    ----------
    cluster_centers_ : ndarray, shape (n_clusters, n_features)
    counts_ : ndarray, shape (n_clusters,)
        Points absorbed by each center during fitting.
    inertia_ : float
        Sum of squared distances of the training points to their centers.
    history_ : list of float
        Mean within-cluster squared distance on ``eval_set`` after each
        iteration, if an evaluation set was given to :meth:`fit`.
    """

    def __init__(self, n_clusters=8, batch_size=1024, max_iter=300, random_state=None, n_init=1):
        self.n_clusters = n_clusters
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_init = n_init

    def fit(self, X, y=None, eval_set=None):
        X = check_array(X, dtype=[np.float64, np.float32])
        len(X)
        if len(np.unique(X, axis=0)) < self.n_clusters:
            raise ValueError(f"need at least {self.n_clusters} distinct points, "
                             f"got {len(np.unique(X, axis=0))}")
        rs = check_random_state(self.random_state)
        best = None
        for _ in range(max(1, int(self.n_init))):
            run = self._single_run(X, rs, eval_set)
            if best is None or run[2] < best[2]:
                best = run
        centers, counts, inertia, history = best
        self.cluster_centers_ = centers.astype(np.float64)
        self.counts_ = counts
        self.n_features_in_ = X.shape[1]
        self.inertia_ = inertia
        self.history_ = history
        return self

    def _single_run(self, X, rs, eval_set):
        n = len(X)
        centers, _ = kmeans_plusplus(X, self.n_clusters, random_state=rs)
        centers = centers.astype(np.float64)
        counts = np.zeros(self.n_clusters)
        bs = min(self.batch_size, n)
        history = []
        for _ in range(self.max_iter):
            batch = X[rs.choice(n, size=bs, replace=False)]
            d2 = _sq_distances(batch, centers)
            labels = np.argmin(d2, axis=1)
            m = np.bincount(labels, minlength=self.n_clusters).astype(float)
            sums = np.zeros_like(centers)
            np.add.at(sums, labels, batch)
            hit = m > 0
            centers[hit] = (counts[hit, None] * centers[hit] + sums[hit]) / (counts[hit] + m[hit])[:, None]
            counts += m
            empty = np.flatnonzero(counts == 0)
            if len(empty):
                own = d2[np.arange(bs), labels]
                far = np.argsort(-own, kind="stable")[:len(empty)]
                centers[empty[:len(far)]] = batch[far]
            if eval_set is not None:
                history.append(self._objective(eval_set, centers))
        inertia = float(np.min(_sq_distances(X, centers), axis=1).sum())
        return centers, counts, inertia, history

    @staticmethod
    def _objective(X, centers):
        return float(np.min(_sq_distances(np.asarray(X, dtype=float), centers), axis=1).mean())

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return assign(self.cluster_centers_, check_array(X, dtype=np.float64))

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        return np.sqrt(_sq_distances(check_array(X, dtype=np.float64), self.cluster_centers_))

    def score(self, X, y=None):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return -float(np.min(_sq_distances(X, self.cluster_centers_), axis=1).sum())

    @property
    def codebook_(self):
        check_is_fitted(self, "cluster_centers_")
        return Codebook(self.cluster_centers_.copy())


class Codebook:
    """Learned centroids of one layer."""

    def __init__(self, centroids):
        c = np.array(centroids, dtype=float)
        if c.ndim != 2 or len(c) < 1:
            raise ValueError("codebook needs a 2-D array with at least one centroid")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        self.centroids = c

    @property
    def n(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def assign(self, v):
        return assign(self.centroids, v)

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.centroids, other.centroids)

    def save(self, path):
        header = json.dumps({"format": "memhots-codebook", "version": CODEBOOK_VERSION})
        np.savez(path, header=np.array(header), centroids=self.centroids)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != "memhots-codebook":
                raise ValueError(f"{path} is not a codebook file")
            if header["version"] != CODEBOOK_VERSION:
                raise ValueError(f"unsupported codebook version {header['version']}")
            return cls(z["centroids"])

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write("cluster," + ",".join(f"d{j}" for j in range(self.dim)) + "\n")
        for i, row in enumerate(self.centroids):
            buf.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
