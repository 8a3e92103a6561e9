"""Independent reference implementations used only by the tests.

Nothing here calls the package's compiled routines: intensities are plain
sums, integrals are adaptive Gauss-Legendre quadrature on pieces split at
independently computed kinks.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from markedhawkes.model import EventSequence, HawkesModel, ModelKind

_GL16 = np.polynomial.legendre.leggauss(16)
_GL32 = np.polynomial.legendre.leggauss(32)


def kernel_scalar(a1, a2, b1, a3, b2, t, m, exponential):
    """Straight scalar loop over neurons."""
    acc = b2
    for i in range(len(a1)):
        z = a1[i] * t + a2[i] * m + b1[i]
        if z > 0:
            acc += a3[i] * z
    return math.exp(acc) if exponential else acc


def pre_intensity(model: HawkesModel, d, s, times, dims, marks):
    """mu_d + sum over events strictly before s (model units, window respected).

    ``s`` may be a scalar or an array of query times.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    lam = np.full(s_arr.shape, float(model.mu[d]))
    w = model.window if model.window is not None else math.inf
    exp_link = model.kind is ModelKind.LINEAR_SNH
    for tk, j, mk in zip(times, dims, marks):
        lag = s_arr - tk
        on = (lag > 0) & (lag <= w)
        if not on.any():
            continue
        z = (np.multiply.outer(lag, model.a1[d, j]) + model.a2[d, j] * mk + model.b1[d, j])
        acc = np.where(z > 0, z, 0.0) @ model.a3[d, j] + model.b2[d, j]
        lam += np.where(on, np.exp(acc) if exp_link else acc, 0.0)
    return lam if np.ndim(s) else float(lam[0])


def intensity(model, d, s, times, dims, marks):
    pre = pre_intensity(model, d, s, times, dims, marks)
    return np.maximum(pre, 0.0) if model.kind is ModelKind.NONLINEAR_NNNH else pre


def _gl(f, a, b, nodes):
    x, w = nodes
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * float(np.dot(w, f(mid + half * x)))


def adaptive_gl(f, a, b, tol=1e-13, atol=0.0, depth=0):
    """16- vs 32-point Gauss-Legendre with bisection until both agree; ``f`` is vectorized.

    ``atol`` is an absolute error per unit length, needed where the
    integrand sits at roundoff level.
    """
    if b <= a:
        return 0.0
    lo, hi = _gl(f, a, b, _GL16), _gl(f, a, b, _GL32)
    if abs(hi - lo) <= max(tol * abs(hi), atol * (b - a)) or depth > 40:
        return hi
    m = 0.5 * (a + b)
    return (adaptive_gl(f, a, m, tol, atol, depth + 1)
            + adaptive_gl(f, m, b, tol, atol, depth + 1))


def _kinks(model: HawkesModel, d, times, dims, marks, a, b):
    pts = {a, b}
    w = model.window
    for tk, j, mk in zip(times, dims, marks):
        if a < tk < b:
            pts.add(float(tk))
        if w is not None and a < tk + w < b:
            pts.add(float(tk + w))
        for i in range(model.p):
            a1 = model.a1[d, j, i]
            if a1 != 0:
                y = tk - (model.a2[d, j, i] * mk + model.b1[d, j, i]) / a1
                if a < y < b and y > tk:
                    pts.add(float(y))
    return sorted(pts)


def compensator(model: HawkesModel, d, times, dims, marks, a, b, tol=1e-13):
    """int_a^b lambda_d by quadrature; events after s never contribute at s."""
    times, dims, marks = np.asarray(times), np.asarray(dims), np.asarray(marks)
    f = lambda s: intensity(model, d, s, times, dims, marks)
    pre = lambda s: pre_intensity(model, d, s, times, dims, marks)
    pts = _kinks(model, d, times, dims, marks, a, b)
    total = 0.0
    for lo, hi in zip(pts, pts[1:]):
        if hi - lo <= 0:
            continue
        cuts = [lo]
        if model.kind is ModelKind.NONLINEAR_NNNH:
            eps = 1e-14 * max(1.0, abs(hi))
            grid = np.linspace(lo + eps, hi - eps, 9)
            vals = pre(grid)
            for i in range(8):
                if vals[i] * vals[i + 1] < 0:
                    cuts.append(optimize.brentq(pre, grid[i], grid[i + 1], xtol=1e-15,
                                                rtol=1e-15))
        cuts.append(hi)
        for x, y in zip(cuts, cuts[1:]):
            total += adaptive_gl(f, x, y, tol, atol=1e-15 * max(1.0, float(model.mu[d])))
    return total


def log_likelihood(model: HawkesModel, seq: EventSequence, a=0.0, b=None):
    """Naive O(n^2) ground log-likelihood in model units (floored like the package)."""
    b = seq.horizon if b is None else b
    t, dd, m = seq.times, seq.event_dims, seq.marks
    ll = 0.0
    for n in range(len(seq)):
        if a <= t[n] <= b:
            lam = float(intensity(model, dd[n], t[n], t[:n], dd[:n], m[:n]))
            if model.kind is ModelKind.NONLINEAR_NNNH:
                lam = max(lam, 1e-10)
            ll += math.log(lam)
    for d in range(model.dims):
        ll -= compensator(model, d, t, dd, m, a, b)
    return ll


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------


def random_model(kind: str, rng, dims=None, p=None, window=None) -> HawkesModel:
    dims = dims or int(rng.integers(1, 3))
    p = p or int(rng.integers(1, 9))
    shape = (dims, dims, p)
    if kind == "snh":
        a3 = rng.uniform(-1.0, 0.5, shape)
        b2 = rng.uniform(-1.5, 0.0, (dims, dims))
    else:
        a3 = rng.uniform(-1.0, 1.0, shape)
        b2 = rng.uniform(-0.5, 0.5, (dims, dims))
    return HawkesModel(rng.uniform(0.1, 1.0, dims), rng.uniform(-1.0, 1.0, shape),
                       rng.uniform(-0.5, 0.5, shape), rng.uniform(-0.5, 0.5, shape), a3, b2,
                       kind=kind, window=window)


def random_sequence(rng, dims, n_max=20, horizon=None) -> EventSequence:
    horizon = horizon or float(rng.uniform(3.0, 10.0))
    n = int(rng.integers(1, n_max + 1))
    t = np.sort(rng.uniform(0.0, horizon, n))
    d = rng.integers(0, dims, n)
    m = rng.lognormal(0.0, 0.5, n)
    return EventSequence.from_arrays(t, d, m, horizon=horizon, dims=dims)


def kink_distance(model: HawkesModel, seq: EventSequence, n: int) -> float:
    """Smallest |hidden pre-activation| at event n's lags, plus the clamp margin for NNNH."""
    t, dd, m = seq.times, seq.event_dims, seq.marks
    d = dd[n]
    best = math.inf
    for k in range(n):
        lag = t[n] - t[k]
        if lag <= 0:
            continue
        j = dd[k]
        z = model.a1[d, j] * lag + model.a2[d, j] * m[k] + model.b1[d, j]
        best = min(best, float(np.min(np.abs(z))))
    if model.kind is ModelKind.NONLINEAR_NNNH:
        best = min(best, abs(pre_intensity(model, d, t[n], t[:n], dd[:n], m[:n])))
    return best
