"""Model data types and pointwise evaluation.

A fitted model lives in *scaled* units (times multiplied by ``N / T_max``,
marks divided by their per-dimension mean).  Every user-facing evaluation in
this module accepts raw units and converts through the model's
:class:`ScalingTransform`; the stored network parameters are never rescaled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DegenerateScalingError,
    InvalidModelError,
    PreconditionError,
    ValidationError,
)

if TYPE_CHECKING:  # pragma: no cover
    from .marks import GmmDensity


class Link(str, enum.Enum):
    EXPONENTIAL = "exponential"
    IDENTITY = "identity"


class ModelKind(str, enum.Enum):
    LINEAR_SNH = "snh"
    NONLINEAR_NNNH = "nnnh"

    @property
    def link(self) -> Link:
        return Link.EXPONENTIAL if self is ModelKind.LINEAR_SNH else Link.IDENTITY


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkedEvent:
    dim: int
    time: float
    mark: float


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Pooled, time-ordered marked events over ``dims`` dimensions.

    Events sharing a timestamp across dimensions are ordered by dimension
    index.  Two events of the same dimension at the same time are rejected.
    """

    times: np.ndarray
    event_dims: np.ndarray
    marks: np.ndarray
    horizon: float
    dims: int

    def __post_init__(self):
        times = _frozen(self.times)
        event_dims = _frozen(self.event_dims, dtype=np.int64)
        marks = _frozen(self.marks)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "event_dims", event_dims)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dims", int(self.dims))

        if not (times.ndim == event_dims.ndim == marks.ndim == 1):
            raise ValidationError("times, dims and marks must be 1-d")
        if not (len(times) == len(event_dims) == len(marks)):
            raise ValidationError("times, dims and marks differ in length")
        if self.dims < 1:
            raise ValidationError(f"dims must be >= 1, got {self.dims}")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(marks)):
            raise ValidationError("non-finite event time or mark")
        if len(times) == 0:
            return
        if times[0] < 0:
            raise ValidationError("event times must be >= 0")
        if np.any(event_dims < 0) or np.any(event_dims >= self.dims):
            bad = int(np.flatnonzero((event_dims < 0) | (event_dims >= self.dims))[0])
            raise ValidationError(f"event {bad} has dimension {event_dims[bad]} outside [0, {self.dims})")
        if not times[-1] < self.horizon:
            raise ValidationError(f"event time {times[-1]} is not below the horizon {self.horizon}")
        dt = np.diff(times)
        order_bad = (dt < 0) | ((dt == 0) & (np.diff(event_dims) <= 0))
        if np.any(order_bad):
            i = int(np.flatnonzero(order_bad)[0]) + 1
            if dt[i - 1] == 0 and event_dims[i] == event_dims[i - 1]:
                raise ValidationError(
                    f"duplicate time {times[i]} in dimension {event_dims[i]} (events {i - 1}, {i})")
            raise ValidationError(f"events {i - 1} and {i} are out of order")

    @classmethod
    def from_arrays(cls, times, event_dims, marks, horizon: float | None = None,
                    dims: int | None = None, sort: bool = True) -> "EventSequence":
        times = np.asarray(times, dtype=float)
        event_dims = np.asarray(event_dims, dtype=np.int64)
        marks = np.asarray(marks, dtype=float)
        if sort and len(times):
            order = np.lexsort((event_dims, times))
            times, event_dims, marks = times[order], event_dims[order], marks[order]
        if dims is None:
            dims = int(event_dims.max()) + 1 if len(event_dims) else 1
        if horizon is None:
            horizon = float(np.nextafter(times.max(), np.inf)) if len(times) else 1.0
        return cls(times, event_dims, marks, horizon, dims)

    @classmethod
    def from_events(cls, events: Iterable[MarkedEvent], horizon: float | None = None,
                    dims: int | None = None) -> "EventSequence":
        events = list(events)
        return cls.from_arrays([e.time for e in events], [e.dim for e in events],
                               [e.mark for e in events], horizon, dims)

    @property
    def events(self) -> list[MarkedEvent]:
        return [MarkedEvent(int(d), float(t), float(m))
                for t, d, m in zip(self.times, self.event_dims, self.marks)]

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[MarkedEvent]:
        return iter(self.events)

    def counts(self) -> np.ndarray:
        return np.bincount(self.event_dims, minlength=self.dims)

    def dim_times(self, d: int) -> np.ndarray:
        return self.times[self.event_dims == d]

    def dim_marks(self, d: int) -> np.ndarray:
        return self.marks[self.event_dims == d]

    def head(self, n: int, horizon: float | None = None) -> "EventSequence":
        """The first ``n`` events; horizon defaults to just past the last kept event."""
        times = self.times[:n]
        if horizon is None:
            horizon = self.horizon if n >= len(self) else float(self.times[n])
            if 0 < n < len(self) and times[-1] == horizon:
                horizon = float(np.nextafter(horizon, np.inf))
        return EventSequence(times, self.event_dims[:n], self.marks[:n], horizon, self.dims)

    def before(self, t: float) -> "EventSequence":
        """History strictly before ``t`` (the H_{t-} of the process)."""
        n = int(np.searchsorted(self.times, t, side="left"))
        return EventSequence(self.times[:n], self.event_dims[:n], self.marks[:n], t, self.dims)

    def with_horizon(self, horizon: float) -> "EventSequence":
        return replace(self, horizon=horizon)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingTransform:
    time_scale: float
    mark_scale: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "time_scale", float(self.time_scale))
        object.__setattr__(self, "mark_scale", tuple(float(x) for x in self.mark_scale))
        if not (np.isfinite(self.time_scale) and self.time_scale > 0):
            raise DegenerateScalingError(f"time scale must be positive, got {self.time_scale}")
        if not all(np.isfinite(x) and x > 0 for x in self.mark_scale):
            raise DegenerateScalingError(f"mark scales must be positive, got {self.mark_scale}")

    @classmethod
    def identity(cls, dims: int) -> "ScalingTransform":
        return cls(1.0, (1.0,) * dims)

    def scale_marks(self, marks, event_dims) -> np.ndarray:
        return np.asarray(marks, dtype=float) * np.asarray(self.mark_scale)[np.asarray(event_dims)]

    def apply(self, seq: EventSequence) -> EventSequence:
        return EventSequence(seq.times * self.time_scale, seq.event_dims,
                             self.scale_marks(seq.marks, seq.event_dims),
                             seq.horizon * self.time_scale, seq.dims)

    def invert(self, seq: EventSequence) -> EventSequence:
        inv = np.asarray(self.mark_scale)[seq.event_dims]
        return EventSequence(seq.times / self.time_scale, seq.event_dims, seq.marks / inv,
                             seq.horizon / self.time_scale, seq.dims)


def apply_scaling(seq: EventSequence) -> tuple[EventSequence, ScalingTransform]:
    """Scale times by N/T_max and each dimension's marks by 1/(mean mark)."""
    if len(seq) == 0:
        raise PreconditionError("cannot scale an empty sequence")
    t_max = float(seq.times.max())
    if t_max <= 0:
        raise DegenerateScalingError("latest event time is 0; time scale undefined")
    mark_scale = []
    for d in range(seq.dims):
        marks = seq.dim_marks(d)
        mean = float(marks.mean()) if len(marks) else 0.0
        if len(marks) == 0 or mean == 0 or not np.isfinite(mean):
            raise DegenerateScalingError(f"dimension {d} has mean mark {mean}; cannot scale")
        mark_scale.append(1.0 / mean)
    transform = ScalingTransform(len(seq) / t_max, tuple(mark_scale))
    return transform.apply(seq), transform


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelNet:
    """One-hidden-layer ReLU network phi(t, m) with an exponential or identity output."""

    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    a3: np.ndarray
    b2: float
    link: Link = Link.EXPONENTIAL

    def __post_init__(self):
        vecs = {}
        for name in ("a1", "a2", "b1", "a3"):
            v = _frozen(np.atleast_1d(getattr(self, name)))
            if v.ndim != 1:
                raise InvalidModelError(f"{name} must be a vector")
            vecs[name] = v
            object.__setattr__(self, name, v)
        object.__setattr__(self, "b2", float(self.b2))
        object.__setattr__(self, "link", Link(self.link))
        p = len(vecs["a1"])
        if p < 1 or any(len(v) != p for v in vecs.values()):
            raise InvalidModelError("a1, a2, b1, a3 must share one length >= 1")
        if not all(np.all(np.isfinite(v)) for v in vecs.values()) or not np.isfinite(self.b2):
            raise InvalidModelError("kernel network has non-finite parameters")

    @property
    def p(self) -> int:
        return len(self.a1)

    def hidden(self, t, m) -> np.ndarray:
        """Hidden pre-activations, shape ``broadcast(t, m) + (p,)``."""
        t = np.asarray(t, dtype=float)[..., None]
        m = np.asarray(m, dtype=float)[..., None]
        return self.a1 * t + self.a2 * m + self.b1

    def __call__(self, t, m):
        return eval_kernel(self, t, m)


def eval_kernel(net: KernelNet, t, m):
    """phi(t, m) = link(b2 + sum_i a3_i relu(a1_i t + a2_i m + b1_i)); broadcasts over t, m."""
    if np.any(np.asarray(t) < 0):
        raise PreconditionError("kernel evaluated at negative elapsed time")
    z = np.maximum(net.hidden(t, m), 0.0) @ net.a3 + net.b2
    out = np.exp(z) if net.link is Link.EXPONENTIAL else z
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

PARAM_NAMES = ("mu", "a1", "a2", "b1", "a3", "b2")


@dataclass
class Params:
    """Mutable bundle of model parameters (or of gradients with the same layout).

    ``a1, a2, b1, a3`` have shape (D, D, P) with entry ``[d, j]`` belonging
    to kernel phi_dj; ``b2`` is (D, D) and ``mu`` is (D,).
    """

    mu: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    a3: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros(cls, dims: int, p: int) -> "Params":
        return cls(np.zeros(dims), *(np.zeros((dims, dims, p)) for _ in range(4)),
                   np.zeros((dims, dims)))

    def copy(self) -> "Params":
        return Params(*(np.array(getattr(self, k), dtype=float) for k in PARAM_NAMES))

    def items(self):
        return ((k, getattr(self, k)) for k in PARAM_NAMES)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, k)) for k in PARAM_NAMES])

    def unflat(self, vec) -> "Params":
        vec = np.asarray(vec, dtype=float)
        out, i = [], 0
        for k in PARAM_NAMES:
            shape = np.shape(getattr(self, k))
            n = int(np.prod(shape))
            out.append(vec[i:i + n].reshape(shape))
            i += n
        return Params(*out)

    def __add__(self, other: "Params") -> "Params":
        return Params(*(getattr(self, k) + getattr(other, k) for k in PARAM_NAMES))

    def scaled(self, c: float) -> "Params":
        return Params(*(getattr(self, k) * c for k in PARAM_NAMES))


@dataclass(frozen=True, eq=False)
class HawkesModel:
    """D-dimensional marked Hawkes model with network kernels.

    ``window`` (model time units) truncates each kernel's support to
    ``[0, window]``; ``None`` keeps the full history.
    """

    mu: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    a3: np.ndarray
    b2: np.ndarray
    kind: ModelKind = ModelKind.LINEAR_SNH
    scaling: ScalingTransform | None = None
    window: float | None = None
    mark_densities: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        mu = _frozen(np.atleast_1d(self.mu))
        object.__setattr__(self, "mu", mu)
        dims = len(mu)
        for name in ("a1", "a2", "b1", "a3"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 3 or arr.shape[:2] != (dims, dims):
                raise InvalidModelError(f"{name} must have shape (D, D, P) with D={dims}")
            object.__setattr__(self, name, arr)
        b2 = _frozen(self.b2)
        if b2.shape != (dims, dims):
            raise InvalidModelError(f"b2 must have shape ({dims}, {dims})")
        object.__setattr__(self, "b2", b2)
        if len({getattr(self, k).shape for k in ("a1", "a2", "b1", "a3")}) != 1 or self.a1.shape[2] < 1:
            raise InvalidModelError("a1, a2, b1, a3 must share one shape with P >= 1")
        for k in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, k))):
                raise InvalidModelError(f"parameter {k} is not finite")
        if np.any(mu < 0):
            raise InvalidModelError("base intensities must be >= 0")
        if self.scaling is not None and len(self.scaling.mark_scale) != dims:
            raise InvalidModelError("scaling transform dimension does not match the model")
        if self.window is not None:
            object.__setattr__(self, "window", float(self.window))
            if not self.window > 0:
                raise InvalidModelError("window must be positive")
        if self.mark_densities is not None:
            object.__setattr__(self, "mark_densities", tuple(self.mark_densities))
            if len(self.mark_densities) != dims:
                raise InvalidModelError("need one mark density per dimension")

    @classmethod
    def from_params(cls, params: Params, kind: ModelKind | str, **kwargs) -> "HawkesModel":
        return cls(params.mu, params.a1, params.a2, params.b1, params.a3, params.b2,
                   kind=ModelKind(kind), **kwargs)

    @classmethod
    def from_kernels(cls, mu: Sequence[float], kernels: Sequence[Sequence[KernelNet]],
                     kind: ModelKind | str | None = None, **kwargs) -> "HawkesModel":
        dims = len(mu)
        nets = [[kernels[d][j] for j in range(dims)] for d in range(dims)]
        links = {net.link for row in nets for net in row}
        if len(links) != 1:
            raise InvalidModelError("all kernels must share one output link")
        link = links.pop()
        if kind is None:
            kind = ModelKind.LINEAR_SNH if link is Link.EXPONENTIAL else ModelKind.NONLINEAR_NNNH
        kind = ModelKind(kind)
        if kind.link is not link:
            raise InvalidModelError(f"{kind.value} models need {kind.link.value} kernels")
        stack = lambda name: np.array([[getattr(n, name) for n in row] for row in nets])
        return cls(np.asarray(mu, dtype=float), stack("a1"), stack("a2"), stack("b1"),
                   stack("a3"), stack("b2"), kind=kind, **kwargs)

    @property
    def dims(self) -> int:
        return len(self.mu)

    @property
    def p(self) -> int:
        return self.a1.shape[2]

    @property
    def link(self) -> Link:
        return self.kind.link

    @property
    def transform(self) -> ScalingTransform:
        return self.scaling if self.scaling is not None else ScalingTransform.identity(self.dims)

    @property
    def params(self) -> Params:
        return Params(*(np.array(getattr(self, k)) for k in PARAM_NAMES))

    def with_params(self, params: Params) -> "HawkesModel":
        return replace(self, **{k: getattr(params, k) for k in PARAM_NAMES})

    def replace(self, **changes) -> "HawkesModel":
        return replace(self, **changes)

    def kernel(self, d: int, j: int) -> KernelNet:
        return KernelNet(self.a1[d, j], self.a2[d, j], self.b1[d, j], self.a3[d, j],
                         self.b2[d, j], self.link)

    @property
    def kernels(self) -> tuple[tuple[KernelNet, ...], ...]:
        return tuple(tuple(self.kernel(d, j) for j in range(self.dims)) for d in range(self.dims))

    @property
    def base_intensity(self) -> np.ndarray:
        """mu in raw (event-time) units."""
        return self.mu * self.transform.time_scale

    def kernel_value(self, d: int, j: int, t, m):
        """phi_dj at raw elapsed time ``t`` and raw mark ``m``, in raw intensity units."""
        tr = self.transform
        t = np.asarray(t, dtype=float)
        ts = t * tr.time_scale
        val = eval_kernel(self.kernel(d, j), ts, np.asarray(m, dtype=float) * tr.mark_scale[j])
        if self.window is not None:
            val = np.where(ts <= self.window, val, 0.0)
        val = np.asarray(val) * tr.time_scale
        return float(val) if val.ndim == 0 else val


def _scaled_arrays(model: HawkesModel, seq: EventSequence):
    tr = model.transform
    return (seq.times * tr.time_scale, seq.event_dims,
            tr.scale_marks(seq.marks, seq.event_dims))


def pre_intensity_scaled(model: HawkesModel, s, times, event_dims, marks,
                         inclusive: bool = False) -> np.ndarray:
    """Pre-clamp intensity mu_d + sum phi_dj for query times ``s`` (scaled units).

    Returns shape (len(s), D).  History events count when ``t_k < s`` (or
    ``t_k <= s`` with ``inclusive``) and ``s - t_k`` lies inside the window.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.tile(model.mu, (len(s), 1))
    if len(times) == 0:
        return out
    lag = s[:, None] - np.asarray(times)[None, :]
    valid = lag >= 0 if inclusive else lag > 0
    if model.window is not None:
        valid &= lag <= model.window
    if not valid.any():
        return out
    lag = np.where(valid, lag, 0.0)
    event_dims = np.asarray(event_dims)
    for j in range(model.dims):
        cols = np.flatnonzero(event_dims == j)
        if len(cols) == 0:
            continue
        lj, vj = lag[:, cols], valid[:, cols]
        mj = np.asarray(marks)[cols]
        for d in range(model.dims):
            # (Q, K, P) hidden activations
            z = (model.a1[d, j] * lj[..., None] + model.a2[d, j] * mj[None, :, None]
                 + model.b1[d, j])
            val = np.maximum(z, 0.0) @ model.a3[d, j] + model.b2[d, j]
            if model.link is Link.EXPONENTIAL:
                val = np.exp(val)
            out[:, d] += np.where(vj, val, 0.0).sum(axis=1)
    return out


def eval_ground_intensity(model: HawkesModel, d: int, t: float, history: EventSequence) -> float:
    """lambda^g_d(t | H_{t-}) in raw units; events at exactly ``t`` are excluded."""
    if t < 0:
        raise PreconditionError("intensity requested at negative time")
    if len(history) and history.times[-1] > t:
        raise PreconditionError(
            f"history contains an event at {history.times[-1]} after the query time {t}")
    if not 0 <= d < model.dims:
        raise PreconditionError(f"dimension {d} outside [0, {model.dims})")
    ts, dims, ms = _scaled_arrays(model, history)
    pre = pre_intensity_scaled(model, t * model.transform.time_scale, ts, dims, ms)[0, d]
    if model.kind is ModelKind.NONLINEAR_NNNH:
        pre = max(pre, 0.0)
    return float(pre * model.transform.time_scale)


__all__ = [
    "Link", "ModelKind", "MarkedEvent", "EventSequence", "ScalingTransform", "KernelNet",
    "Params", "HawkesModel", "eval_kernel", "eval_ground_intensity", "apply_scaling",
    "pre_intensity_scaled", "PARAM_NAMES",
]
