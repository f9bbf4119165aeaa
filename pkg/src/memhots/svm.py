"""Polynomial-kernel support vector classifier trained with SMO.

Binary machines solve the soft-margin dual

    min_a  1/2 a^T Q a - e^T a,   0 <= a_i <= C,   y^T a = 0,

with ``Q_ij = y_i y_j K(x_i, x_j)`` by sequential minimal optimization using
second-order working-set selection. Multi-class problems are handled
one-vs-one with majority voting.
"""
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils import check_array, check_X_y
from sklearn.utils.validation import check_is_fitted

TAU = 1e-12


class SMOConvergenceWarning(RuntimeWarning):
    pass


def poly_kernel(X, Y, gamma, coef0, degree):
    return (gamma * (X @ Y.T) + coef0) ** degree


def smo(K, y, C=1.0, tol=1e-3, max_iter=100_000):
    """Solve one binary dual problem.

    Parameters
    ----------
    K : ndarray, shape (n, n)
        Kernel matrix.
    y : ndarray of {-1, +1}

    Returns
    -------
    alpha : ndarray
    rho : float
        Offset; the decision function is ``sum(alpha * y * K[:, x]) - rho``.
    n_iter : int
    converged : bool
    """
    y = y.astype(float)
    n = len(y)
    Q = K * np.outer(y, y)
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pos = y > 0
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        g_max = score[i]
        g_min = score[low].min()
        if g_max - g_min < tol:
            converged = True
            break
        b = g_max - score
        cand = low & (b > 0)
        if not cand.any():
            converged = True
            break
        a = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Q[i] * (alpha[i] - old_i) + Q[j] * (alpha[j] - old_j)

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        pos = y > 0
        at_ub = alpha >= C
        at_lb = alpha <= 0
        ub_mask = (at_ub & ~pos) | (at_lb & pos)
        lb_mask = (at_ub & pos) | (at_lb & ~pos)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else 0.0
    return alpha, rho, it, converged


class PolynomialSVC(BaseEstimator, ClassifierMixin):
    """One-vs-one soft-margin SVM with kernel ``(gamma * u.v + coef0) ** degree``.

    ``gamma="scale"`` uses ``1 / (n_features * X.var())`` and ``"auto"`` uses
    ``1 / n_features``. Vote ties go to the lowest label.
    """

    def __init__(self, C=1.0, degree=3, gamma="scale", coef0=0.0, tol=1e-3, max_iter=100_000):
        self.C = C
        self.degree = degree
        self.gamma = gamma
        self.coef0 = coef0
        self.tol = tol
        self.max_iter = max_iter

    def _gamma(self, X):
        if self.gamma == "auto":
            return 1.0 / X.shape[1]
        if self.gamma == "scale":
            var = X.var()
            return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return float(self.gamma)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to train an SVC")
        self.n_features_in_ = X.shape[1]
        self.gamma_ = self._gamma(X)
        self.machines_ = []
        self.converged_ = True
        for a, b in combinations(range(len(self.classes_)), 2):
            mask = (y == self.classes_[a]) | (y == self.classes_[b])
            Xp = X[mask]
            yp = np.where(y[mask] == self.classes_[a], 1.0, -1.0)
            K = poly_kernel(Xp, Xp, self.gamma_, self.coef0, self.degree)
            alpha, rho, _, ok = smo(K, yp, self.C, self.tol, self.max_iter)
            self.converged_ &= ok
            sv = alpha > 0
            self.machines_.append((a, b, Xp[sv], (alpha * yp)[sv], rho))
        return self

    def decision_function(self, X):
        """Pairwise decision values, shape (n_samples, n_pairs)."""
        check_is_fitted(self, "machines_")
        X = check_array(X, dtype=np.float64)
        out = np.empty((len(X), len(self.machines_)))
        for k, (_, _, sv, coef, rho) in enumerate(self.machines_):
            if len(sv):
                out[:, k] = poly_kernel(X, sv, self.gamma_, self.coef0, self.degree) @ coef - rho
            else:
                out[:, k] = -rho
        return out

    def predict(self, X):
        dec = self.decision_function(X)
        votes = np.zeros((len(dec), len(self.classes_)), dtype=int)
        for k, (a, b, *_) in enumerate(self.machines_):
            win_a = dec[:, k] > 0
            votes[win_a, a] += 1
            votes[~win_a, b] += 1
        return self.classes_[np.argmax(votes, axis=1)]

    def get_state(self):
        """Arrays describing the trained machines, for serialization."""
        check_is_fitted(self, "machines_")
        return {
            "classes": self.classes_,
            "gamma": np.float64(self.gamma_),
            "pairs": np.array([(a, b) for a, b, *_ in self.machines_], dtype=np.int64).reshape(-1, 2),
            "rho": np.array([m[4] for m in self.machines_]),
            "sv_counts": np.array([len(m[2]) for m in self.machines_], dtype=np.int64),
            "sv": np.concatenate([m[2] for m in self.machines_]) if self.machines_ else np.zeros((0, 0)),
            "coef": np.concatenate([m[3] for m in self.machines_]) if self.machines_ else np.zeros(0),
        }

    @classmethod
    def from_state(cls, state, **params):
        clf = cls(**params)
        clf.classes_ = np.asarray(state["classes"])
        clf.gamma_ = float(state["gamma"])
        clf.n_features_in_ = state["sv"].shape[1]
        bounds = np.concatenate([[0], np.cumsum(state["sv_counts"])])
        clf.machines_ = [
            (int(a), int(b), state["sv"][bounds[k]:bounds[k + 1]],
             state["coef"][bounds[k]:bounds[k + 1]], float(state["rho"][k]))
            for k, (a, b) in enumerate(state["pairs"])
        ]
        clf.converged_ = True
        return clf
