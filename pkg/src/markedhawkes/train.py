"""Maximum-likelihood fitting of network kernels with mini-batch Adam."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import (
    ConfigError,
    LogOfNonPositiveError,
    NonFiniteError,
    NumericOverflowError,
    PreconditionError,
)
from .integrate import _Prepared, integrated_ground_intensity, integrated_ground_intensity_grad
from .model import EventSequence, HawkesModel, ModelKind, Params, apply_scaling

log = logging.getLogger(__name__)

DEFAULT_RATES = {
    # (output layer, hidden layer)
    ModelKind.LINEAR_SNH: (2e-2, 2e-3),
    ModelKind.NONLINEAR_NNNH: (5e-3, 5e-4),
}
OUTPUT_PARAMS = ("a3", "b2")
HIDDEN_PARAMS = ("a1", "a2", "b1")


@dataclass(frozen=True)
class FitConfig:
    neurons: int = 64
    batch_size: int = 100
    lr_output: float | None = None
    lr_hidden: float | None = None
    lr_mu: float = 1e-3
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    patience: int = 10
    max_epochs: int = 1000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    window: float | None = None  # kernel support cut-off, scaled time units
    log_floor: float = 1e-10  # clamped models only
    mu_floor: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(x) for x in self.split))
        if len(self.split) != 3 or any(x < 0 for x in self.split):
            raise ConfigError(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(self.split)}")
        if self.neurons < 1:
            raise ConfigError("neurons must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        for name in ("lr_output", "lr_hidden", "lr_mu"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.window is not None and not self.window > 0:
            raise ConfigError("window must be positive")

    def learning_rates(self, kind: ModelKind) -> dict[str, float]:
        out, hidden = DEFAULT_RATES[ModelKind(kind)]
        out = self.lr_output if self.lr_output is not None else out
        hidden = self.lr_hidden if self.lr_hidden is not None else hidden
        rates = {"mu": self.lr_mu}
        rates.update({k: out for k in OUTPUT_PARAMS})
        rates.update({k: hidden for k in HIDDEN_PARAMS})
        return rates


@dataclass
class TraceRecord:
    epoch: int
    train_ll: float
    valid_ll: float
    wall_time: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    clamped_events: int = 0
    n_train: int = 0
    n_valid: int = 0
    n_test: int = 0

    @property
    def best_valid_ll(self) -> float:
        return max(r.valid_ll for r in self.records)

    @property
    def epochs(self) -> int:
        return self.records[-1].epoch if self.records else 0

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_valid_ll": self.best_valid_ll if self.records else None,
            "epochs": self.epochs,
            "stop_reason": self.stop_reason,
            "clamped_events": self.clamped_events,
            "n_train": self.n_train,
            "n_valid": self.n_valid,
            "n_test": self.n_test,
        }


class Adam:
    """Adam ascent step with one learning rate per parameter name."""

    def __init__(self, rates: dict[str, float], beta1=0.9, beta2=0.999, eps=1e-8):
        self.rates = dict(rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        """In-place update of ``params`` towards larger objective."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p = getattr(params, name)
            p += (self.rates[name] / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class EarlyStopping:
    """Tracks the best validation score; stops after ``patience`` non-improving evaluations."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        if value > self.best:
            self.best, self.best_epoch, self.stale = value, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

INIT_RANGES = {
    ModelKind.LINEAR_SNH: {"a1": (-0.5, 0.5), "a2": (-0.2, 0.2), "a3": (-1.0, 0.0),
                           "b1": (0.0, 0.03), "b2": (-0.1, 0.0)},
    ModelKind.NONLINEAR_NNNH: {"a1": (-0.7, 0.0), "a2": (-0.2, 0.2), "a3": (0.0, 1.0),
                               "b1": (0.0, 0.25), "b2": (0.0, 0.0)},
}


def init_model(kind: ModelKind | str, dims: int, neurons: int, seed: int = 0,
               window: float | None = None) -> HawkesModel:
    kind = ModelKind(kind)
    if dims < 1 or neurons < 1:
        raise ConfigError("dims and neurons must be >= 1")
    rng = np.random.default_rng(seed)
    ranges = INIT_RANGES[kind]
    shape = (dims, dims, neurons)
    draw = {k: rng.uniform(lo, hi, size=shape) for k, (lo, hi) in ranges.items() if k != "b2"}
    lo, hi = ranges["b2"]
    b2 = rng.uniform(lo, hi, size=(dims, dims)) if hi > lo else np.full((dims, dims), lo)
    return HawkesModel(np.ones(dims), draw["a1"], draw["a2"], draw["b1"], draw["a3"], b2,
                       kind=kind, window=window)


# ---------------------------------------------------------------------------
# likelihood and gradients
# ---------------------------------------------------------------------------


class _Objective:
    """Per-event likelihood terms of one (already scaled) sequence."""

    def __init__(self, model: HawkesModel, seq: EventSequence, floor: float = 1e-10):
        self.prep = _Prepared(model, seq)
        self.prev = self.prep.prev_times(0.0)
        self.floor = floor

    def _run(self, params: Params, idx, want_grad: bool, weight: float = 1.0):
        p = self.prep
        arrays = tuple(np.ascontiguousarray(getattr(params, k), dtype=float)
                       for k in ("mu", "a1", "a2", "b1", "a3", "b2"))
        grads = tuple(np.zeros_like(a) for a in arrays)
        lam, comp, status, clamped = _core.event_terms(
            p.nonlinear, np.asarray(idx, dtype=np.int64), self.prev, p.times, p.dims, p.marks,
            *arrays, p.window, self.floor, want_grad, weight, *grads)
        bad = np.flatnonzero(status != _core.STATUS_OK)
        if len(bad):
            n = int(np.asarray(idx)[bad[0]])
            if status[bad[0]] == _core.STATUS_NONPOSITIVE:
                raise LogOfNonPositiveError(f"intensity {lam[bad[0]]:.6g} <= 0 at event {n}")
            raise NumericOverflowError(f"kernel exponent overflow at event {n}")
        loglam = np.log(np.maximum(lam, self.floor)) if p.nonlinear else np.log(lam)
        return loglam - comp, Params(*grads), int(clamped.sum())

    def values(self, params: Params, idx) -> tuple[np.ndarray, int]:
        terms, _, clamped = self._run(params, idx, False)
        return terms, clamped

    def gradient(self, params: Params, idx, weight: float = 1.0) -> tuple[float, Params, int]:
        terms, grads, clamped = self._run(params, idx, True, weight)
        return float(terms.sum()), grads, clamped


def _unscaled(model: HawkesModel) -> HawkesModel:
    return model.replace(scaling=None)


def _scaled_seq(model: HawkesModel, seq: EventSequence) -> EventSequence:
    return model.transform.apply(seq)


def event_log_likelihood(model: HawkesModel, seq: EventSequence, n: int) -> float:
    """log lambda_d(t_n) - int_{t_{n-1}^d}^{t_n} lambda_d, in the model's scaled units."""
    obj = _Objective(_unscaled(model), _scaled_seq(model, seq))
    return float(obj.values(model.params, [n])[0][0])


def event_gradient(model: HawkesModel, seq: EventSequence, n: int) -> Params:
    """Exact gradient of one event's likelihood contribution w.r.t. the stored parameters.

    Only row ``d = dim(n)`` of every kernel array and ``mu[d]`` can be
    non-zero.  Breakpoints are held fixed during differentiation; the
    integrand is continuous at each of them, so no boundary terms arise.
    """
    if not 0 <= n < len(seq):
        raise PreconditionError(f"event index {n} outside the sequence")
    obj = _Objective(_unscaled(model), _scaled_seq(model, seq))
    return obj.gradient(model.params, [n])[1]


def _interval_events(seq: EventSequence, interval) -> tuple[float, float, np.ndarray]:
    a, b = (0.0, seq.horizon) if interval is None else (float(interval[0]), float(interval[1]))
    if b < a:
        raise PreconditionError("interval end precedes its start")
    idx = np.flatnonzero((seq.times >= a) & (seq.times <= b))
    return a, b, idx


def log_likelihood_ground(model: HawkesModel, seq: EventSequence, interval=None) -> float:
    """sum_d [ sum_{t_n in interval} log lambda_d(t_n) - int_interval lambda_d ], raw units.

    Events inside the interval condition on the full history before them.
    """
    a, b, idx = _interval_events(seq, interval)
    obj = _Objective(_unscaled(model), _scaled_seq(model, seq))
    lam = obj.prep
    lam_vals, _, status, _ = _core.event_terms(
        lam.nonlinear, idx.astype(np.int64), obj.prev, lam.times, lam.dims, lam.marks,
        *lam.arrays, lam.window, obj.floor, False, 0.0, *lam.grad_buffers())
    for r in np.flatnonzero(status != _core.STATUS_OK):
        if status[r] == _core.STATUS_NONPOSITIVE:
            raise LogOfNonPositiveError(f"intensity {lam_vals[r]:.6g} <= 0 at event {int(idx[r])}")
        raise NumericOverflowError(f"kernel exponent overflow at event {int(idx[r])}")
    if lam.nonlinear:
        lam_vals = np.maximum(lam_vals, obj.floor)
    ts = model.transform.time_scale
    total = float(np.sum(np.log(lam_vals * ts)))
    for d in range(model.dims):
        total -= integrated_ground_intensity(model, d, seq, b, a)
    return total


def log_likelihood_ground_grad(model: HawkesModel, seq: EventSequence, d: int,
                               interval=None) -> tuple[float, Params]:
    """Dimension-``d`` part of the log-likelihood and its gradient.

    The compensator comes from the pooled-grid integral over the whole
    interval rather than from per-event pieces, so summing per-event
    gradients against this one is a real consistency check.
    """
    a, b, idx = _interval_events(seq, interval)
    idx = idx[seq.event_dims[idx] == d]
    prep = _Prepared(_unscaled(model), _scaled_seq(model, seq))
    gmu, ga1, ga2, gb1, ga3, gb2 = prep.grad_buffers()
    ts = model.transform.time_scale
    total = 0.0
    for n in idx:
        lmu, la1, la2, lb1, la3, lb2 = prep.grad_buffers()
        lam = _core.pre_intensity_at(prep.times[n], n, d, prep.times, prep.dims, prep.marks,
                                     *prep.arrays, prep.window, not prep.nonlinear, 1.0, True,
                                     lmu, la1, la2, lb1, la3, lb2)
        if prep.nonlinear and lam <= 1e-10:
            total += math.log(1e-10 * ts)
            continue
        if not lam > 0:
            raise LogOfNonPositiveError(f"intensity {lam:.6g} <= 0 at event {int(n)}")
        total += math.log(lam * ts)
        for acc, part in zip((gmu, ga1, ga2, gb1, ga3, gb2), (lmu, la1, la2, lb1, la3, lb2)):
            acc += part / lam
    comp, cgrad = integrated_ground_intensity_grad(model, d, seq, b, a)
    grad = Params(gmu, ga1, ga2, gb1, ga3, gb2) + cgrad.scaled(-1.0)
    return total - comp, grad


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def split_indices(n: int, fractions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chronological train / validation / test index ranges."""
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) <= 0:
        raise ConfigError(
            f"split {fractions} of {n} events leaves an empty partition "
            f"({n_train}/{n_valid}/{n_test})")
    idx = np.arange(n)
    return idx[:n_train], idx[n_train:n_train + n_valid], idx[n_train + n_valid:]


def fit(seq: EventSequence, kind: ModelKind | str, config: FitConfig | None = None,
        progress=None) -> tuple[HawkesModel, TrainTrace]:
    """Fit mu and every kernel network by maximizing the ground-intensity likelihood.

    ``progress`` (optional) is called with each :class:`TraceRecord`.
    """
    config = config or FitConfig()
    kind = ModelKind(kind)
    counts = seq.counts()
    if np.any(counts < 10):
        raise PreconditionError(f"need >= 10 events per dimension, got {counts.tolist()}")
    scaled, transform = apply_scaling(seq)
    train_idx, valid_idx, test_idx = split_indices(len(scaled), config.split)

    model = init_model(kind, seq.dims, config.neurons, config.seed, window=config.window)
    objective = _Objective(model, scaled, config.log_floor)
    params = model.params
    adam = Adam(config.learning_rates(kind), config.adam_beta1, config.adam_beta2,
                config.adam_eps)
    rng = np.random.default_rng(config.seed)
    trace = TrainTrace(n_train=len(train_idx), n_valid=len(valid_idx), n_test=len(test_idx))
    stopper = EarlyStopping(config.patience)
    best = params.copy()
    t0 = time.perf_counter()

    def evaluate(epoch: int) -> TraceRecord:
        both = np.concatenate([train_idx, valid_idx])
        terms, clamped = objective.values(params, both)
        rec = TraceRecord(epoch, float(terms[:len(train_idx)].sum()),
                          float(terms[len(train_idx):].sum()), time.perf_counter() - t0)
        trace.records.append(rec)
        trace.clamped_events = clamped
        if progress is not None:
            progress(rec)
        if not (math.isfinite(rec.train_ll) and math.isfinite(rec.valid_ll)):
            trace.stop_reason = "non-finite likelihood"
            err = NonFiniteError(f"non-finite log-likelihood at epoch {epoch}")
            err.trace = trace
            raise err
        return rec

    stopper.update(0, evaluate(0).valid_ll)
    trace.stop_reason = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads, _ = objective.gradient(params, batch, 1.0 / len(batch))
            adam.step(params, grads)
            np.maximum(params.mu, config.mu_floor, out=params.mu)
        rec = evaluate(epoch)
        if stopper.update(epoch, rec.valid_ll):
            best = params.copy()
        elif stopper.should_stop:
            trace.stop_reason = "patience"
            break
    trace.best_epoch = stopper.best_epoch
    if trace.clamped_events:
        log.info("%d events sit where the clamped intensity is below the log floor",
                 trace.clamped_events)
    fitted = HawkesModel.from_params(best, kind, scaling=transform, window=config.window)
    return fitted, trace
