"""Single-pulse relaxation fitting.

A recording holds a few pre-pulse samples, one WRITE pulse at ``t0`` of width
``w`` and a sampled relaxation. After baseline removal and normalization the
decay ``a1 exp(-s / tau1) + a2 exp(-s / tau2)``, ``s = t - t0 - w``, is fitted
by Gauss-Newton with an analytic Jacobian and step halving. The rise phase is
never fitted; it follows from the amplitudes and the known pulse width.

Internally the time constants are optimized on a log scale, which keeps them
positive without constraints. Reported standard errors are for the natural
parameters.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .device import DeviceParams

MIN_DECAY_SAMPLES = 8


class RankDeficiencyError(np.linalg.LinAlgError):
    """Normal equations are singular at the current iterate."""


@dataclass
class Trace:
    t: np.ndarray           # µs, strictly increasing
    g: np.ndarray
    t0: float
    width: float
    name: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.t.shape != self.g.shape or self.t.ndim != 1:
            raise ValueError("t and g must be 1-D arrays of equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.width <= 0:
            raise ValueError("pulse width must be positive")

    @property
    def decay_mask(self):
        return self.t >= self.t0 + self.width

    def decay(self):
        """(s, g) of the relaxation samples, ``s`` measured from pulse end."""
        m = self.decay_mask
        if m.sum() < MIN_DECAY_SAMPLES:
            raise ValueError(f"need at least {MIN_DECAY_SAMPLES} samples after the pulse, "
                             f"got {int(m.sum())}")
        return self.t[m] - self.t0 - self.width, self.g[m]


@dataclass
class FitResult:
    params: DeviceParams
    rmse: float
    iterations: int
    converged: bool
    stderr: dict = field(default_factory=dict)
    n_samples: int = 0
    name: str = ""

    def to_dict(self):
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d


def baseline(trace):
    pre = trace.t < trace.t0
    if not pre.any():
        raise ValueError("trace has no samples before the pulse onset")
    return float(trace.g[pre].mean())


def peak_reference(traces):
    """Mean baseline-subtracted maximum over a group of recordings."""
    traces = list(traces)
    if not traces:
        raise ValueError("empty trace group")
    return float(np.mean([np.max(tr.g - baseline(tr)) for tr in traces]))


def normalize_trace(trace, peak_ref):
    if not peak_ref > 0:
        raise ValueError("peak reference must be positive")
    g = (trace.g - baseline(trace)) / peak_ref
    return Trace(trace.t.copy(), g, trace.t0, trace.width, trace.name)


def decay_model(s, a1, a2, tau1, tau2):
    return a1 * np.exp(-s / tau1) + a2 * np.exp(-s / tau2)


def _model_jac(theta, s):
    """Model values and Jacobian for ``theta = (a1, a2, log tau1, log tau2)``."""
    a1, a2, l1, l2 = theta
    e1 = np.exp(-s * np.exp(-l1))
    e2 = np.exp(-s * np.exp(-l2))
    f = a1 * e1 + a2 * e2
    J = np.empty((len(s), 4))
    J[:, 0] = e1
    J[:, 1] = e2
    J[:, 2] = a1 * e1 * s * np.exp(-l1)
    J[:, 3] = a2 * e2 * s * np.exp(-l2)
    return f, J


def _loglinear(s, g):
    """Slope and intercept of ``log g`` against ``s`` over positive samples."""
    ok = g > 0
    if ok.sum() < 2:
        return None
    slope, icpt = np.polyfit(s[ok], np.log(g[ok]), 1)
    return (slope, icpt) if slope < 0 else None


def initial_guess(s, g):
    """Peeling start: tail sets tau2, the head minus the tail component sets tau1."""
    n = len(s)
    third = max(n // 3, 2)
    span = s[-1] - s[0]
    tail = _loglinear(s[-third:], g[-third:])
    if tail is None:
        tau2, c2 = span / 3.0, 0.0
    else:
        tau2, c2 = -1.0 / tail[0], math.exp(tail[1])
    head_g = g[:third] - c2 * np.exp(-s[:third] / tau2)
    head = _loglinear(s[:third], head_g)
    tau1 = -1.0 / head[0] if head is not None else tau2 / 10.0
    if not (0 < tau1 < tau2):
        tau1 = tau2 / 10.0
    tau2 = max(tau2, 1e-3)
    tau1 = min(max(tau1, 1e-3), tau2 / 1.5)
    a = g[0] / 2.0
    return np.array([a, a, math.log(tau1), math.log(tau2)])


def grid_guess(s, g, n_grid=24):
    """Best ``(a1, a2, tau1, tau2)`` over a log grid of time constants.

    Amplitudes are solved linearly for every pair, so only the time
    constants are searched.
    """
    lo = max(s[1] - s[0], 1.0) / 4.0
    hi = max(s[-1] - s[0], 4.0 * lo) * 2.0
    taus = np.geomspace(lo, hi, n_grid)
    E = np.exp(-s[:, None] / taus[None, :])
    best, best_cost = None, np.inf
    for i in range(n_grid):
        for j in range(i + 1, n_grid):
            A = E[:, [i, j]]
            amp, *_ = np.linalg.lstsq(A, g, rcond=None)
            r = g - A @ amp
            cost = r @ r
            if cost < best_cost:
                best, best_cost = (amp[0], amp[1], taus[i], taus[j]), cost
    a1, a2, t1, t2 = best
    return np.array([a1, a2, math.log(t1), math.log(t2)])


def single_guess(s, g):
    """Start for nearly single-exponential data: one log-linear component
    plus a small, slower one that keeps the Jacobian regular."""
    head = g >= 0.2 * g.max()
    fit = _loglinear(s[head], g[head])
    if fit is None:
        return None
    tau, a = -1.0 / fit[0], math.exp(fit[1])
    return np.array([a, 0.01 * a, math.log(tau), math.log(10.0 * tau)])


def _resolvable(theta, s):
    """Whether both time constants lie in the range the sampling can see.

    A component far faster than the sampling interval only touches the
    first sample, and one far slower than the record is a constant; runs
    that end in either corner are not trusted as fits.
    """
    lo = (s[1] - s[0]) / 10.0
    hi = 10.0 * (s[-1] - s[0])
    with np.errstate(over="ignore"):
        taus = np.exp(theta[2:])
    return bool(np.all(np.isfinite(theta)) and np.all((taus >= lo) & (taus <= hi)))


def gauss_newton(s, g, theta0, max_iter=200, xtol=1e-10, max_halvings=30, rcond=1e-12):
    """Minimize the squared residual from ``theta0``.

    Returns ``(theta, n_iter, converged)``. Raises :class:`RankDeficiencyError`
    if the Jacobian is singular at the start; later singular iterates take
    the minimum-norm step.
    """
    theta = np.array(theta0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        return _gauss_newton(s, g, theta, max_iter, xtol, max_halvings, rcond)


def _gauss_newton(s, g, theta, max_iter, xtol, max_halvings, rcond):
    f, J = _model_jac(theta, s)
    r = g - f
    cost = r @ r
    for it in range(1, max_iter + 1):
        if it == 1:
            sv = np.linalg.svd(J, compute_uv=False)
            if not sv[-1] > rcond * sv[0]:
                raise RankDeficiencyError("Jacobian is rank deficient; the data do not "
                                          "determine all four decay parameters")
        if not np.all(np.isfinite(J)):
            return theta, it, False
        # later iterates may approach a non-identifiable set (one amplitude
        # near zero, or tau1 far below the sampling interval); the
        # minimum-norm step is still a descent direction there
        step = np.linalg.lstsq(J, r, rcond=rcond)[0]
        lam = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + lam * step
            fc, Jc = _model_jac(cand, s)
            rc = g - fc
            cc = rc @ rc
            if np.isfinite(cc) and cc < cost:
                break
            lam *= 0.5
        else:
            # no descent along the GN direction: we are at a stationary point
            return theta, it, bool(np.linalg.norm(step) <= xtol * (np.linalg.norm(theta) + xtol)
                                   or np.linalg.norm(J.T @ r) <= 1e-8 * max(1.0, cost))
        # judge convergence by the full Gauss-Newton step; a heavily halved
        # step is small without the iterate being near the optimum
        full = np.linalg.norm(step)
        theta, f, J, r, cost = cand, fc, Jc, rc, cc
        if full <= xtol * (np.linalg.norm(theta) + xtol):
            return theta, it, True
    return theta, max_iter, False


def fit_decay(trace, max_iter=200, xtol=1e-10, theta0=None):
    """Two-exponential fit of a normalized single-pulse recording.

    Parameters
    ----------
    trace : Trace
        Normalized recording; only samples at or after ``t0 + width`` are used.
    theta0 : sequence, optional
        Starting ``(a1, a2, tau1, tau2)``; the peeling guess by default.

    Returns
    -------
    FitResult
        Parameters ordered so that ``tau1 < tau2``; ``eta_sigma`` carries the
        fit RMSE.

    Raises
    ------
    RankDeficiencyError
        If the normal equations become singular.
    """
    s, g = trace.decay()
    if theta0 is None:
        # the peeling start is cheap but fragile in noise, so a grid start
        # and a single-exponential start compete with it; the lowest cost
        # among converged, resolvable runs wins
        starts = [initial_guess(s, g), grid_guess(s, g), single_guess(s, g)]
    else:
        a1, a2, t1, t2 = theta0
        starts = [np.array([a1, a2, math.log(t1), math.log(t2)])]
    best, error = None, None
    for start in starts:
        if start is None:
            continue
        try:
            theta, n_iter, ok = gauss_newton(s, g, start, max_iter, xtol)
        except RankDeficiencyError as exc:
            error = exc
            continue
        cost = float(np.sum((g - _model_jac(theta, s)[0]) ** 2))
        key = (not (ok and _resolvable(theta, s)), cost)
        if best is None or key < best[0]:
            best = (key, theta, n_iter, ok)
    if best is None:
        raise error
    _, theta, n_iter, ok = best
    a1, a2, l1, l2 = theta
    # a run that ended in a degenerate corner can carry absurd log-taus
    tau1, tau2 = (math.exp(min(max(v, -700.0), 700.0)) for v in (l1, l2))
    if tau1 > tau2:
        a1, a2, tau1, tau2 = a2, a1, tau2, tau1
    resid = g - decay_model(s, a1, a2, tau1, tau2)
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    stderr = _stderr(s, resid, a1, a2, tau1, tau2)
    params = DeviceParams(float(a1), float(a2), tau1, tau2, float(trace.width), rmse)
    return FitResult(params, rmse, n_iter, ok, stderr, len(s), trace.name)


def _stderr(s, resid, a1, a2, tau1, tau2):
    dof = len(s) - 4
    if dof <= 0:
        return {}
    tau1, tau2 = np.float64(tau1), np.float64(tau2)
    with np.errstate(all="ignore"):
        e1, e2 = np.exp(-s / tau1), np.exp(-s / tau2)
        J = np.column_stack([e1, e2, a1 * e1 * s / tau1 ** 2, a2 * e2 * s / tau2 ** 2])
    if not np.all(np.isfinite(J)):
        return {}
    s2 = (resid @ resid) / dof
    # a time constant whose amplitude vanished has no information at all;
    # its error is infinite and it is left out of the covariance
    norms = np.linalg.norm(J, axis=0)
    keep = norms > 1e-12 * norms.max()
    se = np.full(4, np.inf)
    try:
        cov = s2 * np.linalg.inv(J[:, keep].T @ J[:, keep])
    except np.linalg.LinAlgError:
        return {}
    se[keep] = np.sqrt(np.clip(np.diag(cov), 0, None))
    return dict(zip(("a1", "a2", "tau1", "tau2"), map(float, se)))


def synthetic_trace(params, t0=30_000.0, pre=5, sample_us=6000.0, duration_us=None,
                    sigma=0.0, rng=None, name=""):
    """Single-pulse recording sampled on a regular grid, rise included.

    The grid starts ``pre`` samples before ``t0`` and is aligned so that one
    sample falls exactly at the end of the pulse.
    """
    w = params.width
    if duration_us is None:
        duration_us = max(1e6, 5.0 * params.tau2)
    n_post = int(duration_us // sample_us) + 1
    t = np.concatenate([t0 + w - sample_us * np.arange(pre + 1, 0, -1),
                        t0 + w + sample_us * np.arange(n_post)])
    s = t - t0
    g = np.where(s < 0, 0.0,
                 np.where(s < w, (params.a1 + params.a2) * s / w,
                          decay_model(s - w, params.a1, params.a2, params.tau1, params.tau2)))
    if sigma:
        rng = np.random.default_rng(rng)
        g = g + rng.normal(0.0, sigma, len(g))
    return Trace(t, g, t0, w, name)


class DecayRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper around :func:`fit_decay`.

    ``X`` holds the sample times (µs) of a single recording, as a column.
    """

    def __init__(self, t0=0.0, width=200.0, max_iter=200, xtol=1e-10):
        self.t0 = t0
        self.width = width
        self.max_iter = max_iter
        self.xtol = xtol

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        self.result_ = fit_decay(Trace(t, y, self.t0, self.width), self.max_iter, self.xtol)
        p = self.result_.params
        self.coef_ = np.array([p.a1, p.a2, p.tau1, p.tau2])
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        t = np.asarray(X, dtype=float).reshape(-1)
        a1, a2, t1, t2 = self.coef_
        s = t - self.t0
        w = self.width
        return np.where(s < 0, 0.0,
                        np.where(s < w, (a1 + a2) * s / w, decay_model(s - w, a1, a2, t1, t2)))


# -- file IO -------------------------------------------------------------------

def read_trace_csv(path, t0, width, name=None):
    t, g = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_us", "g"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected a header with columns t_us,g")
        for row in reader:
            t.append(float(row["t_us"]))
            g.append(float(row["g"]))
    return Trace(np.array(t), np.array(g), float(t0), float(width), name or Path(path).stem)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        fh.write("t_us,g\n")
        for t, g in zip(trace.t, trace.g):
            fh.write(f"{float(t)!r},{float(g)!r}\n")


def read_onset_manifest(path):
    """``file,t0_us,width_us`` rows, keyed by file name."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["file"]] = (float(row["t0_us"]), float(row["width_us"]))
    return out


def summarize(results):
    """Mean and standard deviation of each fitted parameter across a group."""
    results = list(results)
    if not results:
        raise ValueError("no fit results")
    out = {"n": len(results)}
    for key in ("a1", "a2", "tau1", "tau2"):
        v = np.array([getattr(r.params, key) for r in results])
        out[key] = {"mean": float(v.mean()),
                    "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0}
    out["eta"] = float(np.mean([r.rmse for r in results]))
    return out


def format_summary(summary, label="group"):
    """One table row: ``A1 ± sd | tau1 ± sd | A2 ± sd | tau2 ± sd | eta``."""
    def ms(k):
        return f"{summary[k]['mean'] / 1000:.3g}ms±{summary[k]['std'] / 1000:.2g}ms"

    def amp(k):
        return f"{summary[k]['mean']:.3g}±{summary[k]['std']:.2g}"

    return " | ".join([label, amp("a1"), ms("tau1"), amp("a2"), ms("tau2"),
                       f"{summary['eta']:.3g}"])


def _finite_or_none(obj):
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_results_json(results, path, summary=None):
    doc = {"fits": [_finite_or_none(r.to_dict()) for r in results]}
    if summary is not None:
        doc["summary"] = summary
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
