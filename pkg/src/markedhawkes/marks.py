"""Gaussian-mixture mark densities fitted by expectation maximization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import DegenerateFitError, DomainError, PreconditionError

PDF_FLOOR = 1e-300
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GmmDensity:
    """sum_j w_j N(x; mean_j, var_j) with x = m, or x = log m when ``log_space``.

    In log space the density of m itself is the mixture at log m divided
    by m, so it still integrates to one over m > 0.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_space: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=1)
        mu = np.array(self.means, dtype=float, ndmin=1)
        var = np.array(self.variances, dtype=float, ndmin=1)
        if not (w.shape == mu.shape == var.shape) or w.ndim != 1 or len(w) == 0:
            raise PreconditionError("weights, means and variances need one common length k >= 1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise PreconditionError(f"weights must be a probability vector, got {w}")
        if np.any(~(var > 0)) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(var)):
            raise PreconditionError("variances must be positive and parameters finite")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return len(self.weights)

    def _x(self, m):
        m = np.asarray(m, dtype=float)
        if not self.log_space:
            return m, np.zeros_like(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log(m)
        return x, np.where(m > 0, x, np.inf)  # log-Jacobian term

    def _component_logpdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (np.log(self.weights) - 0.5 * (_LOG_2PI + np.log(self.variances))
                - 0.5 * (x - self.means) ** 2 / self.variances)

    def logpdf(self, m):
        x, jac = self._x(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = logsumexp(self._component_logpdf(x), axis=-1) - jac
        if self.log_space:
            out = np.where(np.asarray(m) > 0, out, -np.inf)
        return out

    def pdf(self, m):
        return np.exp(self.logpdf(m))

    def cdf(self, m):
        x, _ = self._x(m)
        z = (np.asarray(x)[..., None] - self.means) / np.sqrt(self.variances)
        out = ndtr(z) @ self.weights
        if self.log_space:
            out = np.where(np.asarray(m) > 0, out, 0.0)
        return out

    def quantile(self, u, tol: float = 1e-10):
        """Inverse CDF by bisection; ``tol`` is the absolute bracket width in x."""
        u = np.asarray(u, dtype=float)
        if np.any(~((u > 0) & (u < 1))):
            raise DomainError("quantile level must lie strictly inside (0, 1)")
        sd = np.sqrt(self.variances)
        lo = np.full(u.shape, float(np.min(self.means - 40 * sd)))
        hi = np.full(u.shape, float(np.max(self.means + 40 * sd)))
        wt = self.weights
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            below = ndtr((mid[..., None] - self.means) / sd) @ wt < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all((hi - lo) <= tol * np.maximum(1.0, np.abs(mid))):
                break
        x = 0.5 * (lo + hi)
        out = np.exp(x) if self.log_space else x
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        if self.log_space:
            return float(self.weights @ np.exp(self.means + 0.5 * self.variances))
        return float(self.weights @ self.means)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "log_space": bool(self.log_space)}

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmDensity":
        return cls(doc["weights"], doc["means"], doc["variances"], bool(doc.get("log_space", False)))


def gmm_pdf(g: GmmDensity, m):
    return g.pdf(m)


def mark_log_likelihood(g: GmmDensity, marks) -> float:
    """sum log f(m); densities below 1e-300 are floored with a warning."""
    marks = np.asarray(marks, dtype=float).ravel()
    if marks.size == 0:
        return 0.0
    lp = g.logpdf(marks)
    floor = math.log(PDF_FLOOR)
    low = lp < floor
    if low.any():
        warnings.warn(f"{int(low.sum())} mark densities below {PDF_FLOOR:g} were floored",
                      RuntimeWarning, stacklevel=2)
        lp = np.where(low, floor, lp)
    return float(lp.sum())


@dataclass
class EmTrace:
    log_likelihood: list
    iterations: int
    reseeds: int
    converged: bool


def _em(x: np.ndarray, k: int, rng, tol: float, max_iter: int):
    n = len(x)
    sample_var = float(np.var(x))
    if not sample_var > 0:
        raise PreconditionError("marks have zero variance")
    var_floor = 1e-8 * sample_var
    means = np.quantile(x, (np.arange(k) + 0.5) / k)
    variances = np.full(k, sample_var)  # pooled start
    weights = np.full(k, 1.0 / k)
    history = []
    reseeds = 0
    prev = -math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        comp = (np.log(weights) - 0.5 * (_LOG_2PI + np.log(variances))
                - 0.5 * (x[:, None] - means) ** 2 / variances)
        norm = logsumexp(comp, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"EM log-likelihood decreased: {prev!r} -> {ll!r}")
        if ll - prev < tol:
            converged = True
            break
        prev = ll
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        weights /= weights.sum()
        safe = np.maximum(nk, 1e-300)
        means = (resp * x[:, None]).sum(axis=0) / safe
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / safe
        bad = ~(variances >= var_floor) | (nk < 1e-12)
        if bad.any():
            reseeds += int(bad.sum())
            if reseeds > 5:
                raise DegenerateFitError(
                    f"mixture components collapsed {reseeds} times (k={k}, n={n})")
            means[bad] = rng.choice(x, size=int(bad.sum()), replace=False)
            variances[bad] = sample_var
            weights[bad] = 1.0 / k
            weights /= weights.sum()
            prev = -math.inf  # the reseed step is not an EM step
    return weights, means, variances, EmTrace(history, it, reseeds, converged)


def fit_gmm(marks, k: int = 3, seed: int = 0, tol: float = 1e-8, max_iter: int = 500,
            log_space: bool = False, return_trace: bool = False):
    """Maximum-likelihood mixture by EM from k-quantile means, pooled variance, equal weights."""
    x = np.asarray(marks, dtype=float).ravel()
    if k < 1:
        raise PreconditionError("k must be >= 1")
    if log_space:
        if np.any(x <= 0):
            raise DomainError("log-space mixtures need positive marks")
        x = np.log(x)
    if not np.all(np.isfinite(x)):
        raise DomainError("marks must be finite")
    if len(np.unique(x)) < k:
        raise PreconditionError(f"need at least {k} distinct marks, got {len(np.unique(x))}")
    rng = np.random.default_rng(seed)
    w, mu, var, trace = _em(x, k, rng, tol, max_iter)
    g = GmmDensity(w / w.sum(), mu, var, log_space)
    return (g, trace) if return_trace else g


def bic(g: GmmDensity, marks) -> float:
    n = len(np.asarray(marks).ravel())
    return (3 * g.k - 1) * math.log(n) - 2.0 * mark_log_likelihood(g, marks)


def fit_gmm_auto(marks, ks=range(1, 7), seed: int = 0, **kwargs) -> tuple[GmmDensity, dict]:
    """Fit each k and keep the minimum-BIC mixture."""
    scores, best = {}, None
    for k in ks:
        try:
            g = fit_gmm(marks, k, seed=seed, **kwargs)
        except (DegenerateFitError, PreconditionError):
            continue
        scores[k] = bic(g, marks)
        if best is None or scores[k] < scores[best.k]:
            best = g
    if best is None:
        raise DegenerateFitError("no mixture size could be fitted")
    return best, scores
