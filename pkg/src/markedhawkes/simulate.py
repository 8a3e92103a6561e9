"""Thinning simulation of marked Hawkes processes.

Candidates are drawn from a piecewise-constant dominating rate.  On each
lookahead segment ``[t, t + delta]`` the bound is ``kappa`` times the largest
total intensity seen on a grid; if a candidate's intensity exceeds it the
bound is doubled and the segment redrawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import ConfigError, DomainError, PreconditionError, SimulationError
from .marks import GmmDensity
from .model import EventSequence, HawkesModel, ModelKind, pre_intensity_scaled

# ---------------------------------------------------------------------------
# mark samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogNormal:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("LogNormal sigma must be positive")

    def dist(self):
        return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * special.ndtri(u))


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("Exponential rate must be positive")

    def dist(self):
        return stats.expon(scale=1.0 / self.rate)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate


MarkDensity = LogNormal | Exponential | GmmDensity


def sample_mark(density: MarkDensity, u):
    """u-quantile of a mark density."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0) & (u_arr < 1))):
        raise DomainError(f"quantile level must lie strictly inside (0, 1), got {u}")
    if isinstance(density, GmmDensity):
        return density.quantile(u_arr)
    out = density.ppf(u_arr)
    return float(out) if np.ndim(out) == 0 else out


def mark_cdf(density: MarkDensity, m):
    if isinstance(density, GmmDensity):
        return density.cdf(m)
    return density.dist().cdf(m)


# ---------------------------------------------------------------------------
# closed-form kernels: phi(t, m) = g(m) * sum_i c_i(m) exp(-r_i(m) t)
# ---------------------------------------------------------------------------

_MARK_FNS = {
    "one": lambda m: np.ones_like(m),
    "m": lambda m: m,
    "log": lambda m: np.log(m),
}


@dataclass(frozen=True)
class ExpTimesMark:
    """scale * m * exp(-t (decay + mark_decay * m))."""

    scale: float = 1.0
    decay: float = 1.0
    mark_decay: float = 0.0

    def terms(self, m):
        m = np.asarray(m, dtype=float)
        return (self.scale * m)[..., None], (self.decay + self.mark_decay * m)[..., None]


@dataclass(frozen=True)
class LogMarkTimesExp:
    """scale * log(m) * exp(-decay t)."""

    scale: float = -0.4
    decay: float = 2.0

    def terms(self, m):
        m = np.asarray(m, dtype=float)
        return (self.scale * np.log(m))[..., None], np.full(m.shape + (1,), self.decay)


@dataclass(frozen=True)
class ExpSum:
    """g(m) * sum_i alpha_i exp(-beta_i t) with g one of 'one', 'm', 'log'."""

    alphas: tuple = (0.0,)
    betas: tuple = (1.0,)
    mark_fn: str = "one"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.alphas) != len(self.betas) or not self.alphas:
            raise ConfigError("ExpSum needs matching, non-empty alphas and betas")
        if self.mark_fn not in _MARK_FNS:
            raise ConfigError(f"unknown mark function {self.mark_fn!r}")

    def terms(self, m):
        m = np.asarray(m, dtype=float)
        g = _MARK_FNS[self.mark_fn](m)[..., None]
        return g * np.asarray(self.alphas), np.broadcast_to(self.betas, m.shape + (len(self.betas),))


ClosedFormKernel = ExpTimesMark | LogMarkTimesExp | ExpSum


def kernel_value(kernel: ClosedFormKernel, t, m):
    t = np.asarray(t, dtype=float)
    c, r = kernel.terms(m)
    return np.sum(c * np.exp(-r * t[..., None]), axis=-1)


def kernel_integral(kernel: ClosedFormKernel, m, a, b):
    """int_a^b phi(s, m) ds for 0 <= a <= b."""
    c, r = kernel.terms(m)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return np.sum(c / r * (np.exp(-r * a) - np.exp(-r * b)), axis=-1)


@dataclass(frozen=True)
class GeneratorSpec:
    """Ground-truth process: base rates, closed-form kernel matrix, mark samplers.

    ``marks`` holds one density per dimension, or a D x D matrix of which
    each event of dimension j uses entry [j][j].
    ``nonlinear`` clamps the total intensity at zero.
    """

    mu: tuple
    kernels: tuple
    marks: tuple
    nonlinear: bool = False
    cutoff: float = 1e-12  # drop history once every term is below this fraction

    def __post_init__(self):
        mu = tuple(float(x) for x in np.atleast_1d(self.mu))
        object.__setattr__(self, "mu", mu)
        dims = len(mu)
        if dims == 0 or any(not (x >= 0) for x in mu):
            raise ConfigError("base intensities must be non-negative")
        kernels = tuple(tuple(row) for row in self.kernels)
        if len(kernels) != dims or any(len(row) != dims for row in kernels):
            raise ConfigError(f"kernel matrix must be {dims} x {dims}")
        object.__setattr__(self, "kernels", kernels)
        marks = tuple(self.marks)
        if len(marks) != dims:
            raise ConfigError(f"need {dims} mark densities (or a {dims} x {dims} matrix)")
        if isinstance(marks[0], (list, tuple)):
            marks = tuple(tuple(row)[j] for j, row in enumerate(marks))
        object.__setattr__(self, "marks", marks)
        for row in kernels:
            for k in row:
                if np.any(np.asarray(k.terms(np.ones(1))[1]) <= 0):
                    raise ConfigError("kernel decay rates must be positive")

    @property
    def dims(self) -> int:
        return len(self.mu)


# ---------------------------------------------------------------------------
# intensity engines
# ---------------------------------------------------------------------------


class _SpecEngine:
    """Running history for a closed-form spec, one flat entry per exponential term.

    Terms drop out once negligible.
    """

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.mu = np.asarray(spec.mu)
        self.tk = np.empty(0)
        self.target = np.empty(0, dtype=np.int64)
        self.c = np.empty(0)
        self.r = np.empty(0)

    def add(self, d, t, m):
        parts = [(target, *self.spec.kernels[target][d].terms(np.asarray(m)))
                 for target in range(self.spec.dims)]
        self.tk = np.concatenate([self.tk, np.full(sum(len(c) for _, c, _ in parts), t)])
        self.target = np.concatenate([self.target] + [np.full(len(c), k) for k, c, _ in parts])
        self.c = np.concatenate([self.c] + [c for _, c, _ in parts])
        self.r = np.concatenate([self.r] + [r for _, _, r in parts])

    def prune(self, t):
        tol = self.spec.cutoff * max(1.0, float(self.mu.sum()))
        keep = np.abs(self.c) * np.exp(-self.r * np.maximum(t - self.tk, 0.0)) > tol
        if not keep.all():
            self.tk, self.target, self.c, self.r = (self.tk[keep], self.target[keep],
                                                    self.c[keep], self.r[keep])

    def pre(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lag = s[:, None] - self.tk
        vals = np.where(lag > 0, self.c * np.exp(-self.r * np.maximum(lag, 0.0)), 0.0)
        onehot = np.arange(len(self.mu)) == self.target[:, None]
        return self.mu + vals @ onehot

    @property
    def clamp(self):
        return self.spec.nonlinear

    def sample_mark(self, d, u):
        return sample_mark(self.spec.marks[d], u)


class _ModelEngine:
    """History-driven intensities of a fitted network model, in raw units."""

    def __init__(self, model: HawkesModel, mark_densities):
        self.model = model
        self.tr = model.transform
        self.marks = mark_densities
        self.times, self.dims, self.mvals = [], [], []

    def add(self, d, t, m):
        self.times.append(t * self.tr.time_scale)
        self.dims.append(d)
        self.mvals.append(m * self.tr.mark_scale[d])

    def prune(self, t):
        w = self.model.window
        if w is None:
            return
        cut = t * self.tr.time_scale - w
        i = 0
        while i < len(self.times) and self.times[i] < cut:
            i += 1
        if i:
            del self.times[:i], self.dims[:i], self.mvals[:i]

    def pre(self, s):
        ts = np.atleast_1d(s) * self.tr.time_scale
        return pre_intensity_scaled(self.model, ts, np.asarray(self.times),
                                    np.asarray(self.dims, dtype=np.int64),
                                    np.asarray(self.mvals)) * self.tr.time_scale

    @property
    def clamp(self):
        return self.model.kind is ModelKind.NONLINEAR_NNNH

    def sample_mark(self, d, u):
        return sample_mark(self.marks[d], u)


# ---------------------------------------------------------------------------
# thinning
# ---------------------------------------------------------------------------


@dataclass
class ThinningConfig:
    kappa: float = 1.2
    grid: int = 64
    lookahead: float = 10.0  # multiples of the mean interarrival
    max_retries: int = 20
    max_events: int = 10_000_000


@dataclass
class SimulationStats:
    candidates: int = 0
    accepted: int = 0
    bound_violations: int = 0
    segments: int = 0
    diagnostics: list = field(default_factory=list)


def _intensities(engine, s):
    lam = engine.pre(s)
    if engine.clamp:
        return np.maximum(lam, 0.0)
    if np.any(lam < 0):
        raise SimulationError(f"linear process has negative intensity {lam.min():.6g} at {s}")
    return lam


def _thin(engine, dims, start, horizon, rng, config: ThinningConfig, stats_out=None):
    st = stats_out if stats_out is not None else SimulationStats()
    out_t, out_d, out_m = [], [], []
    base = float(np.sum(_intensities(engine, np.array([start]))[0]))
    mean_ia = 1.0 / base if base > 0 else (horizon - start)
    t = start
    while t < horizon:
        n_new = len(out_t)
        if n_new >= 10:
            mean_ia = (t - start) / n_new
        seg_end = min(t + config.lookahead * mean_ia, horizon)
        if not seg_end > t:
            seg_end = horizon
        grid = np.linspace(t, seg_end, config.grid)
        grid[0] = np.nextafter(t, np.inf)  # right limit: include an event accepted at t
        bound = config.kappa * float(np.max(_intensities(engine, grid).sum(axis=1)))
        st.segments += 1
        if bound <= 0:
            t = seg_end
            engine.prune(t)
            continue
        retries = 0
        s = t
        while True:
            s += rng.exponential(1.0 / bound)
            if s >= seg_end:
                t = seg_end
                break
            st.candidates += 1
            lam = _intensities(engine, np.array([s]))[0]
            total = float(lam.sum())
            if total > bound:
                st.bound_violations += 1
                retries += 1
                if retries > config.max_retries:
                    raise SimulationError(
                        f"intensity {total:.6g} exceeded the bound {bound:.6g} at t={s:.6g} "
                        f"after {config.max_retries} enlargements (segment [{t:.6g}, {seg_end:.6g}])")
                bound *= 2.0
                s = t
                continue
            if rng.uniform() * bound <= total:
                assert total <= bound
                d = int(rng.choice(dims, p=lam / total))
                u = rng.uniform()
                while u <= 0.0:
                    u = rng.uniform()
                m = float(engine.sample_mark(d, u))
                out_t.append(s)
                out_d.append(d)
                out_m.append(m)
                engine.add(d, s, m)
                st.accepted += 1
                t = s
                if len(out_t) > config.max_events:
                    raise SimulationError(f"more than {config.max_events} events; process may be explosive")
                break
        engine.prune(t)
    return np.asarray(out_t), np.asarray(out_d, dtype=np.int64), np.asarray(out_m)


def _prime(engine, history: EventSequence | None):
    if history is None:
        return
    for t, d, m in zip(history.times, history.event_dims, history.marks):
        engine.add(int(d), float(t), float(m))


def simulate(spec: GeneratorSpec | HawkesModel, horizon: float, seed: int = 0,
             history: EventSequence | None = None, start: float | None = None,
             mark_densities=None, config: ThinningConfig | None = None,
             stats_out: SimulationStats | None = None) -> EventSequence:
    """Simulate on ``[start, horizon)``; ``start`` defaults to the history's horizon or 0.

    The returned sequence holds only the newly generated events.
    """
    if not horizon > 0:
        raise PreconditionError("horizon must be positive")
    config = config or ThinningConfig()
    if isinstance(spec, HawkesModel):
        dens = mark_densities if mark_densities is not None else spec.mark_densities
        if dens is None:
            raise PreconditionError("simulating a fitted model needs mark densities")
        engine = _ModelEngine(spec, tuple(dens))
        dims = spec.dims
    else:
        engine = _SpecEngine(spec)
        dims = spec.dims
    if history is not None and history.dims != dims:
        raise PreconditionError("history dimension does not match the process")
    if start is None:
        start = history.horizon if history is not None else 0.0
    if history is not None and len(history) and history.times[-1] > start:
        raise PreconditionError("history extends past the simulation start")
    if not horizon > start:
        raise PreconditionError("horizon must exceed the start time")
    _prime(engine, history)
    engine.prune(float(start))
    rng = np.random.default_rng(seed)
    t, d, m = _thin(engine, dims, float(start), float(horizon), rng, config, stats_out)
    return EventSequence.from_arrays(t, d, m, horizon=float(horizon), dims=dims)


# ---------------------------------------------------------------------------
# true-process compensator
# ---------------------------------------------------------------------------


def _history_terms(spec: GeneratorSpec, times, event_dims, marks, d: int, a: float, b: float):
    """Exponential terms (t_k, c, r) acting on dimension d, pruned once negligible at ``a``."""
    hist = np.flatnonzero(times < b)
    ts, cs, rs = [], [], []
    for j in range(spec.dims):
        sel = hist[event_dims[hist] == j]
        if not len(sel):
            continue
        c, r = spec.kernels[d][j].terms(marks[sel])
        lag = np.maximum(a - times[sel], 0.0)[:, None]
        live = np.any(np.abs(c) * np.exp(-r * lag) > spec.cutoff * max(spec.mu[d], 1e-300), axis=1)
        for k in range(c.shape[1]):
            ts.append(times[sel][live])
            cs.append(c[live, k])
            rs.append(r[live, k])
    if not ts:
        return np.empty(0), np.empty(0), np.empty(0)
    return np.concatenate(ts), np.concatenate(cs), np.concatenate(rs)


def spec_compensator(spec: GeneratorSpec, times, event_dims, marks, d: int, a: float,
                     b: float) -> float:
    """int_a^b lambda_d(s) ds under the true spec, given history events strictly before each s.

    History events inside ``(a, b)`` switch on at their own times.  A clamped
    intensity is integrated exactly over the pieces where it is positive;
    the crossings are bracketed on a 64-point grid per piece and refined by
    Brent's method.
    """
    times = np.asarray(times, dtype=float)
    event_dims = np.asarray(event_dims)
    marks = np.asarray(marks, dtype=float)
    tk, c, r = _history_terms(spec, times, event_dims, marks, d, a, b)
    mu = spec.mu[d]

    def integral(lo, hi, on):
        act = on & (tk < hi)
        e0 = np.exp(-r[act] * np.maximum(lo - tk[act], 0.0))
        e1 = np.exp(-r[act] * (hi - tk[act]))
        return mu * (hi - lo) + float(np.sum(c[act] / r[act] * (e0 - e1)))

    if not spec.nonlinear:
        return float(integral(a, b, np.ones(len(tk), dtype=bool)))
    cuts = sorted({a, b, *(float(x) for x in tk if a < x < b)})
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        on = tk <= lo
        f = lambda s: mu + float(np.sum(c[on] * np.exp(-r[on] * (s - tk[on]))))
        grid = np.linspace(lo, hi, 65)
        vals = np.array([f(x) for x in grid])
        pts = [lo]
        for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
            pts.append(optimize.brentq(f, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15))
        pts.append(hi)
        for x, y in zip(pts, pts[1:]):
            if y > x and f(0.5 * (x + y)) > 0:
                total += integral(x, y, on)
    return float(total)


def spec_interval_compensators(spec: GeneratorSpec, seq: EventSequence, start: float = 0.0):
    """int of lambda_{d_n} between consecutive same-dimension events, under the true spec."""
    times, dims, marks = seq.times, seq.event_dims, seq.marks
    out = np.empty(len(seq))
    last = {}
    for n, d in enumerate(dims):
        a = times[last[d]] if d in last else float(start)
        out[n] = spec_compensator(spec, times[:n], dims[:n], marks[:n], int(d), a, times[n])
        last[d] = n
    return out


def branching_matrix(spec: GeneratorSpec, n_mc: int = 200_000, seed: int = 0) -> np.ndarray:
    """E_m[int_0^inf phi_dj(t, m) dt] by Monte Carlo over the source marks."""
    rng = np.random.default_rng(seed)
    out = np.zeros((spec.dims, spec.dims))
    for j in range(spec.dims):
        m = np.asarray(sample_mark(spec.marks[j], rng.uniform(1e-12, 1 - 1e-12, n_mc)))
        for d in range(spec.dims):
            c, r = spec.kernels[d][j].terms(m)
            out[d, j] = float(np.mean(np.sum(c / r, axis=-1)))
    return out


# ready-made processes used by the synthetic experiments
def coupled_1d_spec() -> GeneratorSpec:
    return GeneratorSpec((0.7,), ((ExpTimesMark(1.0, 1.0, 5.0),),), (LogNormal(0.0, 0.5),))


def decoupled_1d_spec() -> GeneratorSpec:
    return GeneratorSpec((0.9,), ((LogMarkTimesExp(-0.4, 2.0),),), (LogNormal(0.5, 1.0),),
                         nonlinear=True)


def decoupled_2d_spec() -> GeneratorSpec:
    kernels = ((ExpTimesMark(1.0, 2.0), ExpTimesMark(1.0, 50.0)),
               (ExpTimesMark(1.0, 4.5), ExpTimesMark(1.0, 3.0)))
    marks = ((Exponential(2.5), Exponential(6.0)), (Exponential(3.0), Exponential(1.5)))
    return GeneratorSpec((0.3, 0.3), kernels, marks)


__all__ = [
    "LogNormal", "Exponential", "ExpTimesMark", "LogMarkTimesExp", "ExpSum", "GeneratorSpec",
    "ThinningConfig", "SimulationStats", "simulate", "sample_mark", "mark_cdf", "kernel_value",
    "kernel_integral", "spec_compensator", "spec_interval_compensators", "branching_matrix", "coupled_1d_spec",
    "decoupled_1d_spec", "decoupled_2d_spec",
]
