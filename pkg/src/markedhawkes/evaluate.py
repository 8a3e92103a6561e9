"""Calibration diagnostics, kernel surfaces and simulation-based forecasts."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NonFiniteError, PreconditionError, SimulationError
from .integrate import integrated_ground_intensity, interval_compensators
from .model import EventSequence, HawkesModel, KernelNet, eval_kernel
from .simulate import (GeneratorSpec, ThinningConfig, kernel_value, simulate, spec_compensator,
                       spec_interval_compensators)


@dataclass(frozen=True)
class QqCurve:
    levels: np.ndarray
    coverage: np.ndarray

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.coverage - self.levels)))

    def rows(self):
        return list(zip(self.levels.tolist(), self.coverage.tolist()))


@dataclass(frozen=True)
class KernelGrid:
    t: np.ndarray
    m: np.ndarray
    values: np.ndarray  # shape (len(t), len(m))

    def __post_init__(self):
        for name in ("t", "m"):
            ax = getattr(self, name)
            if ax.ndim != 1 or np.any(np.diff(ax) <= 0):
                raise PreconditionError(f"{name} axis must be strictly increasing")
        if self.values.shape != (len(self.t), len(self.m)):
            raise PreconditionError("grid values do not match the axes")

    def abs_error(self, other: "KernelGrid") -> "KernelGrid":
        if not (np.array_equal(self.t, other.t) and np.array_equal(self.m, other.m)):
            raise PreconditionError("grids are on different axes")
        return KernelGrid(self.t, self.m, np.abs(self.values - other.values))

    def rows(self):
        tt, mm = np.meshgrid(self.t, self.m, indexing="ij")
        return list(zip(tt.ravel().tolist(), mm.ravel().tolist(), self.values.ravel().tolist()))


# ---------------------------------------------------------------------------
# PIT and QQ
# ---------------------------------------------------------------------------


def compensators(source, seq: EventSequence, idx=None, start: float = 0.0) -> np.ndarray:
    """Interval compensators between same-dimension events (raw data, any source)."""
    if isinstance(source, GeneratorSpec):
        comp = spec_interval_compensators(source, seq, start)
        return comp if idx is None else comp[np.asarray(idx)]
    return interval_compensators(source, seq, idx, start)


def pit_values(source, seq: EventSequence, idx=None, start: float = 0.0) -> np.ndarray:
    """u_n = 1 - exp(-int_{t_{n-1}^d}^{t_n^d} lambda_d) for the selected events.

    ``seq`` carries the full history; ``idx`` picks the events to score.
    """
    comp = compensators(source, seq, idx, start)
    bad = np.flatnonzero(~np.isfinite(comp))
    if len(bad):
        sel = np.arange(len(seq)) if idx is None else np.asarray(idx)
        n = int(sel[bad[0]])
        raise NonFiniteError(f"non-finite compensator on the interval ending at event {n} "
                             f"(dim {int(seq.event_dims[n])}, t={seq.times[n]:.17g})")
    return -np.expm1(-comp)


def qq_curve(u, grid_size: int = 99) -> QqCurve:
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise PreconditionError("no PIT values")
    if np.any((u < 0) | (u > 1)):
        raise PreconditionError("PIT values must lie in [0, 1]")
    levels = np.arange(1, grid_size + 1) / (grid_size + 1)
    cov = np.searchsorted(np.sort(u), levels, side="right") / u.size
    return QqCurve(levels, cov)


def qq_pairs(u, reference: str = "uniform") -> tuple[np.ndarray, np.ndarray]:
    """(theoretical, empirical) sorted quantile pairs on uniform or unit-exponential axes."""
    u = np.sort(np.asarray(u, dtype=float).ravel())
    if u.size == 0:
        raise PreconditionError("no PIT values")
    p = (np.arange(1, u.size + 1) - 0.5) / u.size
    if reference == "uniform":
        return p, u
    if reference == "exponential":
        with np.errstate(divide="ignore"):
            return -np.log1p(-p), -np.log1p(-u)
    raise PreconditionError(f"unknown reference distribution {reference!r}")


def ks_uniform(u):
    return stats.kstest(np.asarray(u, dtype=float), "uniform")


# ---------------------------------------------------------------------------
# kernel surfaces
# ---------------------------------------------------------------------------


def decay_scale(kernel, median_mark: float) -> float:
    """Slowest e-folding time of a closed-form kernel at a typical mark."""
    _, rates = kernel.terms(np.asarray(median_mark))
    return float(1.0 / np.min(rates))


def default_ranges(marks, decay: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """t in [0, 4 decay scales], m between the 1st and 99th mark percentiles."""
    lo, hi = np.percentile(np.asarray(marks, dtype=float), [1, 99])
    if not hi > lo:
        hi = lo + max(abs(lo), 1.0) * 1e-6
    return (0.0, 4.0 * decay), (float(lo), float(hi))


def kernel_grid(source, t_range, m_range, resolution=(100, 100), d: int = 0,
                j: int = 0) -> KernelGrid:
    """Evaluate one kernel on a regular grid.

    ``source`` may be a fitted :class:`HawkesModel` (raw units, entry
    ``[d, j]``), a bare :class:`KernelNet`, a closed-form kernel or a
    :class:`GeneratorSpec`.
    """
    nt, nm = (resolution, resolution) if np.isscalar(resolution) else resolution
    if not (t_range[1] > t_range[0] and m_range[1] > m_range[0]):
        raise PreconditionError("grid ranges must be non-degenerate")
    if nt < 2 or nm < 2:
        raise PreconditionError("grid resolution must be at least 2 x 2")
    t = np.linspace(t_range[0], t_range[1], int(nt))
    m = np.linspace(m_range[0], m_range[1], int(nm))
    tt, mm = np.meshgrid(t, m, indexing="ij")
    if isinstance(source, HawkesModel):
        vals = source.kernel_value(d, j, tt, mm)
    elif isinstance(source, KernelNet):
        vals = eval_kernel(source, tt, mm)
    elif isinstance(source, GeneratorSpec):
        vals = kernel_value(source.kernels[d][j], tt, mm)
    else:
        vals = kernel_value(source, tt, mm)
    return KernelGrid(t, m, np.asarray(vals, dtype=float).reshape(tt.shape))


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class Prediction:
    start: float
    delta: float
    next_time: np.ndarray  # (n_sims, D); inf when nothing happens within delta
    counts: np.ndarray  # (n_sims, D)
    p_any_analytic: float

    @property
    def dims(self) -> int:
        return self.counts.shape[1]

    @property
    def p_any(self) -> float:
        return float(np.mean(self.counts.sum(axis=1) > 0))

    def p_any_dim(self, d: int) -> float:
        return float(np.mean(self.counts[:, d] > 0))

    def rows(self, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)):
        """(dimension, quantity, statistic, value) records; dimension 'all' pools every dim."""
        out = [("all", "p_any", "analytic", self.p_any_analytic),
               ("all", "p_any", "empirical", self.p_any)]
        cols = [("all", self.counts.sum(axis=1), self.next_time.min(axis=1))]
        cols += [(str(d), self.counts[:, d], self.next_time[:, d]) for d in range(self.dims)]
        for label, cnt, nxt in cols:
            if label != "all":
                out.append((label, "p_any", "empirical", float(np.mean(cnt > 0))))
            out.append((label, "count", "mean", float(np.mean(cnt))))
            for q in quantiles:
                out.append((label, "count", f"q{q:g}", float(np.quantile(cnt, q))))
            srt = np.sort(nxt)
            for q in quantiles:
                # inf marks censoring at delta; order statistics stay well defined
                k = min(int(math.ceil(q * len(srt))) - 1, len(srt) - 1)
                out.append((label, "next_time", f"q{q:g}", float(srt[max(k, 0)])))
        return out


def _analytic_p_any(source, history: EventSequence, start: float, delta: float) -> float:
    """1 - exp(-int_start^{start+delta} total intensity): exact, since nothing new happens first."""
    end = start + delta
    if isinstance(source, GeneratorSpec):
        comp = sum(spec_compensator(source, history.times, history.event_dims, history.marks,
                                    d, start, end) for d in range(source.dims))
    else:
        seq = history.with_horizon(max(history.horizon, end))
        comp = sum(integrated_ground_intensity(source, d, seq, end, start)
                   for d in range(source.dims))
    return float(-np.expm1(-comp))


def predict(source: HawkesModel | GeneratorSpec, history: EventSequence, delta: float,
            n_sims: int = 1000, seed: int = 0, threads: int = 1, mark_densities=None,
            config: ThinningConfig | None = None) -> Prediction:
    """Forecast the next ``delta`` time units after ``history.horizon`` by repeated thinning."""
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    if n_sims < 1:
        raise PreconditionError("need at least one simulation")
    start = float(history.horizon)
    children = np.random.SeedSequence(seed).spawn(n_sims)

    def run(i):
        try:
            seq = simulate(source, start + delta, seed=children[i], history=history, start=start,
                           mark_densities=mark_densities, config=config)
        except SimulationError as exc:
            raise SimulationError(f"simulation run {i}: {exc}") from exc
        nxt = np.full(history.dims, np.inf)
        for d in range(history.dims):
            td = seq.dim_times(d)
            if len(td):
                nxt[d] = td[0] - start
        return nxt, seq.counts()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(n_sims)))
    else:
        results = [run(i) for i in range(n_sims)]
    nxt = np.array([r[0] for r in results])
    cnt = np.array([r[1] for r in results])
    return Prediction(start, float(delta), nxt, cnt, _analytic_p_any(source, history, start, delta))
